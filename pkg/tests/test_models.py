import json

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from ergoverify import models as md
from ergoverify import presets
from ergoverify import spectral as sp
from ergoverify.models import ChannelBasis, NoiseFamily
from ergoverify.spectral import ModeSet, SpectralState


def ns_with(L, B0, c_d, nu=1.0, cutoff=4, rank=None):
    basis = ChannelBasis(ModeSet(2, cutoff))
    noise = NoiseFamily.decaying("saturated", basis, B0, lipschitz=L, floor=0.5)
    return md.NSModelSpec(nu, noise, rank=rank, c_d=c_d)


# channel basis -------------------------------------------------------------------


def test_channel_basis_is_orthonormal():
    basis = ChannelBasis(ModeSet(2, 3))
    fields = basis.synthesize(np.eye(basis.size))
    gram = sp.inner_array(fields[:, None], fields[None, :], basis.modes)
    assert np.max(np.abs(gram - np.eye(basis.size))) < 1e-14
    assert all(SpectralState(basis.modes, f).is_divergence_free() for f in fields)


def test_channel_analysis_inverts_synthesis(rng):
    for basis in (ChannelBasis(ModeSet(2, 3)), ChannelBasis(ModeSet(2, 3), solenoidal=False)):
        x = rng.standard_normal(basis.size)
        assert np.max(np.abs(basis.analyze(basis.synthesize(x)) - x)) < 1e-13


# noise families -------------------------------------------------------------------


def test_additive_noise_ignores_state(rng):
    basis = ChannelBasis(ModeSet(2, 3))
    fam = NoiseFamily.decaying("additive", basis, 0.7)
    u = SpectralState(basis.modes, sp.random_field_array(basis.modes, rng))
    assert np.array_equal(md.sigma_eval(fam, u), md.sigma_eval(fam, SpectralState.zeros(basis.modes)))


def test_saturated_noise_at_zero_is_bare_amplitude():
    basis = ChannelBasis(ModeSet(2, 3))
    fam = NoiseFamily.decaying("saturated", basis, 0.5, lipschitz=0.25, floor=0.5)
    fields = md.sigma_eval(fam, SpectralState.zeros(basis.modes))
    assert np.array_equal(fields, basis.synthesize(np.diag(fam.amplitudes)))


def test_decaying_family_hits_declared_constants():
    basis = ChannelBasis(ModeSet(2, 4))
    fam = NoiseFamily.decaying("saturated", basis, 0.5, lipschitz=0.25, floor=0.5)
    assert fam.bound(0.0) == pytest.approx(0.5, rel=1e-12)
    assert fam.lipschitz() == pytest.approx(0.25, rel=1e-12)


@pytest.mark.parametrize("name", ["ns_desk", "ev_desk", "lagrangian_desk"])
def test_declared_constants_pass_sampling_audit(name):
    audit = md.audit_noise_constants(presets.preset(name), samples=1000, seed=3)
    for key, ratio in audit.items():
        assert ratio <= 1 + md.AUDIT_SLACK, key


def test_pseudo_inverse_of_zero_is_zero(ns_model, rng):
    u = ns_model.random_state(rng)
    assert not np.any(ns_model.pseudo_inverse(u, np.zeros_like(u)))


def test_pseudo_inverse_is_division_by_amplitude():
    basis = ChannelBasis(ModeSet(2, 3))
    amps = np.full(basis.size, 0.5)
    amps[0] = 0.2
    fam = NoiseFamily("additive", basis, amps)
    e1 = np.zeros(basis.size)
    e1[0] = 1.0
    u = SpectralState.zeros(basis.modes)
    w = SpectralState(basis.modes, basis.synthesize(3.0 * e1))
    beta = md.sigma_pseudo_inverse(fam, u, w, rank=4)
    assert beta[0] == pytest.approx(3.0 / 0.2, rel=1e-13)
    assert np.all(beta[1:] == 0) or np.max(np.abs(beta[1:])) < 1e-13


def test_pseudo_inverse_round_trip(ns_model, rng):
    u = ns_model.random_state(rng, radius=2.0)
    w = ns_model.project_low_array(ns_model.random_state(rng))
    beta = ns_model.pseudo_inverse(u, w)
    back = ns_model.synthesize(ns_model.amplitudes(u) * beta)
    assert np.max(np.abs(back - w)) < 1e-12


def test_range_condition_violation():
    basis = ChannelBasis(ModeSet(2, 3))
    amps = np.ones(basis.size)
    amps[1] = 0.0
    fam = NoiseFamily("additive", basis, amps)
    z = SpectralState.zeros(basis.modes)
    with pytest.raises(md.RangeConditionError, match="range condition violated"):
        md.sigma_pseudo_inverse(fam, z, z, rank=1)


def test_pseudo_inverse_bound(ns_model, rng):
    for _ in range(20):
        u = ns_model.random_state(rng, radius=rng.uniform(0.1, 50))
        w = ns_model.project_low_array(ns_model.random_state(rng))
        beta = ns_model.pseudo_inverse(u, w)
        assert np.linalg.norm(beta) <= ns_model.C0 * ns_model.norm_array(w, 0.0) * (1 + 1e-12)


# hypothesis checks -----------------------------------------------------------------


def test_h3_trivial_without_noise():
    basis = ChannelBasis(ModeSet(2, 3))
    spec = md.NSModelSpec(1.0, NoiseFamily("additive", basis, np.zeros(basis.size)), c_d=1.0)
    check = md.check_H3(spec, rank=1)
    assert check.threshold == 0.0 and check.holds
    assert spec.rank == 1


def test_h3_threshold_and_smallest_passing_level():
    spec = ns_with(L=1.0, B0=1.0, c_d=1.0)
    check = md.check_H3(spec)
    assert check.threshold == pytest.approx(2.0, rel=1e-12)
    assert spec.level == 4.0
    assert spec.rank == 9
    assert not md.check_H3(spec, rank=5).holds


def test_h3_margin_increases_with_rank():
    spec = ns_with(L=1.0, B0=1.0, c_d=1.0)
    margins = [md.check_H3(spec, rank=n).margin for n in range(1, spec.modes.size + 1)]
    assert np.all(np.diff(margins) >= 0)
    assert margins[-1] > margins[0]


def test_ev3_threshold_and_smallest_passing_level():
    basis = ChannelBasis(ModeSet(2, 4))
    noise = NoiseFamily.decaying("saturated", basis, 2.0, decay=2.0, bound_exponent=1.0, lipschitz=0.25, floor=0.5, norm_exponent=-1.0)
    spec = md.EVModelSpec(1.0, 2.0, noise, c_ev=1.0, c_t=1.0)
    assert spec.B0 == pytest.approx(2.0, rel=1e-12)
    assert md.check_EV3(spec).threshold == pytest.approx(2.0, rel=1e-12)
    assert spec.level == 4.0
    assert not md.check_EV3(spec, rank=5).holds  # 2^{2/3} < 2


def test_ev3_trivial_without_noise():
    basis = ChannelBasis(ModeSet(2, 3))
    spec = md.EVModelSpec(1.0, 2.0, NoiseFamily("additive", basis, np.zeros(basis.size)), c_t=1.0)
    assert md.check_EV3(spec, rank=1).holds


def test_ev_rejects_small_regularization():
    basis = ChannelBasis(ModeSet(2, 3))
    with pytest.raises(ValueError, match="regularization exponent out of range"):
        md.EVModelSpec(1.0, 0.5, NoiseFamily("additive", basis, np.zeros(basis.size)), c_t=1.0)


def test_lagrangian_constant_multiplier_audit():
    spec = md.LagrangianModelSpec(ModeSet(2, 3), q_min=1.0, q_max=1.0)
    rep = md.check_L_hypotheses(spec, samples=200, seed=1)
    assert rep["cutoff_exact"] and rep["q_bounds_hold"]
    assert rep["q_sampled_min"] == rep["q_sampled_max"] == 1.0
    assert rep["K_audit"] == 0.0


def test_lagrangian_hypotheses_on_desk(lag_model):
    rep = md.check_L_hypotheses(lag_model, samples=1000, seed=2)
    assert lag_model.gamma_star == 1.0
    assert rep["cutoff_exact"] and rep["q_bounds_hold"] and rep["K_audit_holds"]
    assert rep["coupling_condition"]


def test_truncated_l2_integral_matches_quadrature(lag_model):
    rates, kabs = lag_model.rates, lag_model.modes.kabs
    f = lambda t: np.max(kabs * np.exp(-rates * t))  # noqa: E731
    breaks = np.linspace(0, 5, 200)
    ref = sum(integrate.quad(f, a, b, epsabs=1e-13)[0] for a, b in zip(breaks[:-1], breaks[1:]))
    ref += integrate.quad(f, 5, np.inf)[0]
    assert md._l2_integral(rates, kabs) == pytest.approx(ref, rel=1e-8)


# drifts ------------------------------------------------------------------------------


@pytest.mark.parametrize("fixture", ["ns_model", "ev_model", "lag_model"])
def test_drift_of_zero_is_zero(fixture, request):
    model = request.getfixturevalue(fixture)
    assert not np.any(md.drift_eval(model, model.zero_state()).coeffs)


def test_ns_energy_identity(ns_model, rng):
    for _ in range(5):
        u = ns_model.as_state(ns_model.random_state(rng, radius=3.0))
        lhs = sp.inner(md.drift_eval(ns_model, u), u)
        assert lhs == pytest.approx(-ns_model.nu * sp.sobolev_norm(u, 1) ** 2, rel=1e-10)


def test_ev_without_nonlinearity_is_pure_damping(rng):
    spec = presets.desk_ev(nonlinear=False)
    u = spec.as_state(spec.random_state(rng))
    assert np.array_equal(md.drift_eval(spec, u).coeffs, -spec.nu * u.coeffs)


def test_ev_drift_preserves_incompressibility(ev_model, rng):
    u = ev_model.as_state(ev_model.random_state(rng, radius=2.0))
    assert md.drift_eval(ev_model, u).is_divergence_free(1e-12)


def test_lagrangian_drift_is_real(lag_model, rng):
    u = lag_model.as_state(lag_model.random_state(rng, radius=2.0))
    out = md.drift_eval(lag_model, u)
    assert sp.reality_defect(out.coeffs, lag_model.modes) < 1e-12


# configuration ---------------------------------------------------------------------------


def test_model_config_round_trip(tmp_path):
    rec = {"schema": "ergoverify-model-v1", "kind": "ns2d", "cutoff": 3, "nu": 1.0, "c_d": 0.2, "noise": {"kind": "saturated", "total": 0.5, "lipschitz": 0.25}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(rec))
    spec = md.load_model(path)
    assert isinstance(spec, md.NSModelSpec)
    assert spec.B0 == pytest.approx(0.5) and spec.L == pytest.approx(0.25)


def test_model_config_rejects_unknown_fields():
    rec = {"schema": "ergoverify-model-v1", "kind": "ns2d", "viscosity": 1.0}
    with pytest.raises(ValidationError):
        md.model_from_config(rec)


def test_model_config_requires_schema():
    with pytest.raises(ValueError, match="schema"):
        md.model_from_config({"kind": "scalar"})


def test_missing_model_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        md.load_model(tmp_path / "nope.json")
