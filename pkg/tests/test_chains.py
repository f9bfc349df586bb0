import json
from fractions import Fraction

import numpy as np
import pytest

from ergoverify import chains as ch
from ergoverify.chains import FiniteChain

HALF = np.full((2, 2), 0.5)


def power_oracle(P, n=4096):
    return np.linalg.matrix_power(np.asarray(P, float), n)


def stable_random_chain(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.05, 1.0, (n, n))
    return FiniteChain(P / P.sum(axis=1, keepdims=True), name=f"stable-{seed}")


# construction ---------------------------------------------------------------------------


def test_rejects_bad_matrices():
    with pytest.raises(ValueError, match="sum to 1"):
        FiniteChain(np.array([[0.5, 0.4], [0.5, 0.5]]))
    with pytest.raises(ValueError, match="nonnegative"):
        FiniteChain(np.array([[1.5, -0.5], [0.5, 0.5]]))
    with pytest.raises(ValueError, match="square"):
        FiniteChain(np.ones((2, 3)) / 3)
    with pytest.raises(ValueError, match="symmetric"):
        FiniteChain(HALF, rho=np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_json_round_trip():
    chain = ch.grid_kernel_lab(ch.AR1Kernel(), 8)
    back = FiniteChain.from_json(json.loads(json.dumps(chain.to_json())))
    assert np.array_equal(back.Pf, chain.Pf)
    assert np.array_equal(back.metric("d"), chain.metric("d"))
    assert np.array_equal(back.metric("rho"), chain.metric("rho"))


def test_class_structure():
    chain = ch.two_absorbing()
    assert sorted(map(tuple, chain.closed_classes)) == [(0,), (3,)]
    assert len(chain.classes) == 3
    assert ch.two_cycle().periods == [2]
    P = np.zeros((6, 6))
    for i in range(6):
        P[i, (i + 1) % 6] = 1.0
    P[0] = [0, 0.5, 0, 0.5, 0, 0]
    assert FiniteChain(P).periods == [2]


# invariant measures ---------------------------------------------------------------------------


def test_identity_has_both_point_masses():
    mus = ch.invariant_measures(ch.identity_chain())
    assert sorted(map(tuple, mus)) == [(0.0, 1.0), (1.0, 0.0)]


def test_two_cycle_invariant_measure():
    (pi,) = ch.invariant_measures(ch.two_cycle())
    assert np.array_equal(pi, [0.5, 0.5])


@pytest.mark.parametrize("seed", range(5))
def test_invariant_measure_matches_power_iteration(seed):
    chain = stable_random_chain(3, seed)
    (pi,) = ch.invariant_measures(chain)
    assert np.max(np.abs(pi @ chain.Pf - pi)) < 1e-12
    assert np.max(np.abs(power_oracle(chain.Pf)[0] - pi)) < 1e-10


def test_battery_measures_are_invariant():
    for chain in ch.random_battery(200, seed=4):
        for pi in ch.invariant_measures(chain):
            assert abs(pi.sum() - 1) < 1e-12
            assert np.max(np.abs(pi @ chain.Pf - pi)) < 1e-12


# liminf and condition (C) ---------------------------------------------------------------------


def test_liminf_sees_alternation():
    assert ch.liminf_hitting(ch.two_cycle(), 0, [True, False]) == 0.0
    assert ch.liminf_hitting(ch.identity_chain(), 0, [True, False]) == 1.0
    assert ch.liminf_hitting(ch.identity_chain(), 0, [False, True]) == 0.0
    with pytest.raises(ValueError):
        ch.liminf_hitting(ch.two_cycle(), 0, [False, False])


def test_liminf_of_aperiodic_chain_is_stationary_mass():
    chain = stable_random_chain(4, 11)
    (pi,) = ch.invariant_measures(chain)
    ball = np.array([True, False, True, False])
    for x in range(4):
        assert ch.liminf_hitting(chain, x, ball) == pytest.approx(pi[ball].sum(), abs=1e-10)


def test_condition_c_examples():
    ident = ch.condition_C_exact(ch.identity_chain(), 0, 0.5)
    assert ident.value == 0.0 and ident.witness == 1 and not ident.holds
    half = ch.condition_C_exact(FiniteChain(HALF), 0, 0.5)
    assert half.value == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(half.per_state, 0.5)
    assert ch.condition_C_exact(ch.two_cycle(), 0, 0.5).value == 0.0
    with pytest.raises(ValueError):
        ch.condition_C_exact(ch.two_cycle(), 0, 0.0)


# stability and the equivalence ------------------------------------------------------------------


def test_stability_examples():
    assert not ch.asymptotic_stability_exact(ch.identity_chain()).stable
    cyc = ch.asymptotic_stability_exact(ch.two_cycle())
    assert not cyc.stable and "period 2" in cyc.reason
    pos = ch.positive_chain(4, seed=3)
    verdict = ch.asymptotic_stability_exact(pos)
    assert verdict.stable
    assert np.max(np.abs(verdict.mu - power_oracle(pos.Pf)[0])) < 1e-10


def test_canonical_battery_pattern():
    rows = ch.theorem4_consistency(ch.canonical_chains())
    assert [(r.stable, r.condition_C > 0) for r in rows] == [(False, False), (False, False), (True, True), (False, False)]


def test_single_state_chain():
    (row,) = ch.theorem4_consistency([FiniteChain(np.ones((1, 1)))])
    assert row.stable and row.condition_C == 1.0 and row.consistent


def test_random_battery_is_consistent():
    rows = ch.theorem4_consistency(ch.random_battery(300, seed=1))
    assert all(r.consistent for r in rows)
    assert 0 < sum(r.stable for r in rows) < len(rows)


def test_inconsistency_halts_with_diagnostic(monkeypatch):
    monkeypatch.setattr(ch, "asymptotic_stability_exact", lambda c: ch.StabilityVerdict(True, None, "forced"))
    with pytest.raises(AssertionError, match="inconsistent chain 'identity'"):
        ch.theorem4_consistency([ch.identity_chain()])


# decomposition ---------------------------------------------------------------------------------


def test_hand_decomposition_is_exact():
    P = np.array([[Fraction(1, 2)] * 2] * 2, dtype=object)
    chain = FiniteChain(P)
    tr = ch.measure_decomposition(chain, 0, 1, 0, 0.5, Fraction(2, 5), 1)
    assert tr.times == [1]
    assert list(tr.nus[1][0]) == [1, 0]
    assert list(tr.mus[1][0]) == [Fraction(1, 6), Fraction(5, 6)]
    assert tr.reconstruction_error == 0.0
    assert tr.residual_mass == Fraction(3, 5)


def test_alpha_equal_to_ball_mass():
    tr = ch.measure_decomposition(FiniteChain(HALF), 0, 1, 0, 0.5, 0.5, 2)
    assert tr.probabilities_ok() and tr.supports_ok()
    assert tr.mus[1][0][0] == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_random_decomposition_reconstructs(seed):
    chain = stable_random_chain(5, seed)
    tr = ch.measure_decomposition(chain, 0, 4, 2, 0.5, 0.1, 4, which="rho", f_sup=1.0, eps=2.0)
    assert tr.reconstruction_error < 1e-12
    assert tr.supports_ok() and tr.probabilities_ok()
    assert tr.residual_mass == pytest.approx(0.9**4)
    assert tr.stop_rule


def test_unreachable_ball_is_an_error():
    with pytest.raises(ch.DecompositionError, match="alpha exceeds achievable ball mass"):
        ch.measure_decomposition(ch.identity_chain(), 0, 1, 0, 0.5, 0.3, 1, horizon=50)
    with pytest.raises(ch.DecompositionError):
        ch.measure_decomposition(FiniteChain(HALF), 0, 1, 0, 0.5, 1.0, 1)


# Lyapunov plus irreducibility ------------------------------------------------------------------------


def test_constant_lyapunov_reduces_to_irreducibility():
    chain = ch.positive_chain(3, seed=2)
    rep = ch.prop_lbc_exact(chain, np.zeros(3), lambda t: 0.0 if t else 1.0, 0.0, 0, 0.5, 1.0, 1)
    assert rep.premises and rep.conclusion
    assert rep.p == pytest.approx(chain.Pf[:, 0].min())


def test_birth_death_battery():
    cases = ch.birth_death_battery(seed=0, count=24)
    assert all(c.report.premises for c in cases)
    assert all(c.report.conclusion for c in cases)


def test_transient_escape_fails_lyapunov_premise():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
    V = np.array([0.0, 1.0, 2.0])
    rep = ch.prop_lbc_exact(FiniteChain(P), V, lambda t: 0.5**t, 0.5, 0, 0.5, 2.0, 3)
    assert rep.message == "Lyapunov premise fails"
    assert rep.conclusion is None and not rep.premises


def test_radius_premise():
    chain = ch.birth_death_chain(4, 0.2, 0.5)
    V = np.arange(4.0)
    C = ch.fit_geometric_lyapunov(chain, V, 0.9)
    rep = ch.prop_lbc_exact(chain, V, lambda t: 0.9**t, C, 0, 0.5, C, 8)
    assert C > 0 and not rep.radius_premise and rep.conclusion is None


# grid lab ---------------------------------------------------------------------------------------------


def test_degenerate_kernel_is_identity():
    chain = ch.grid_kernel_lab(ch.AR1Kernel(contraction=1.0, noise=0.0), 16)
    assert np.array_equal(chain.Pf, np.eye(16))


def test_ar1_grid_is_stable_and_continuous():
    chain = ch.grid_kernel_lab(ch.AR1Kernel(contraction=0.5), 64)
    verdict = ch.asymptotic_stability_exact(chain)
    assert verdict.stable
    assert ch.condition_C_exact(chain, 32, 0.5).holds
    prof = ch.continuity_profile(chain, 32, [8, 4, 2, 1], 5, 30)
    assert np.all(np.diff(prof["D"]) <= 0) and prof["D"][-1] > 0
    dprof = ch.continuity_profile(chain, 32, [8, 4, 2, 1], 5, 30, which="d")
    assert np.all(np.diff(dprof["D"]) <= 0)


def test_grid_refinement_changes_little():
    (pi64,) = ch.invariant_measures(ch.grid_kernel_lab(ch.AR1Kernel(), 64))
    (pi128,) = ch.invariant_measures(ch.grid_kernel_lab(ch.AR1Kernel(), 128))
    assert ch.total_variation(pi64, ch.coarse_grain(pi128, 2)) < 0.02


def test_grid_metrics_agree_on_stability():
    chain = ch.grid_kernel_lab(ch.AR1Kernel(contraction=0.8), 32)
    rho = ch.theorem4_consistency([chain], which="rho")[0]
    d = ch.theorem4_consistency([chain], which="d")[0]
    assert rho.stable == d.stable and rho.consistent and d.consistent


def test_kernel_normalization_guard():
    with pytest.raises(ValueError, match="normalization"):
        ch.grid_kernel_lab(ch.AR1Kernel(noise=30.0, images=0), 16)


def test_dictionary_lipschitz_budget():
    chain = ch.grid_kernel_lab(ch.AR1Kernel(), 32)
    for which in ("rho", "d"):
        F, lips = ch.lipschitz_dictionary(chain, which=which)
        m = chain.metric(which)
        off = ~np.eye(32, dtype=bool)
        ratio = np.abs(F[:, :, None] - F[:, None, :])[:, off] / m[off]
        assert np.all(ratio <= lips[:, None] * (1 + 1e-12)) and np.all(np.abs(F) <= 1)


def test_write_jsonl(tmp_path):
    rows = ch.theorem4_consistency(ch.canonical_chains())
    ch.write_jsonl(tmp_path / "rows.jsonl", rows)
    lines = (tmp_path / "rows.jsonl").read_text().splitlines()
    assert [json.loads(x)["name"] for x in lines] == ["identity", "two-cycle", "positive", "two-absorbing"]
