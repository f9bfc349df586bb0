import csv
import math

import numpy as np
import pytest

from ergoverify import coupling as cp
from ergoverify import models as md
from ergoverify import presets
from ergoverify import sde
from ergoverify import spectral as sp
from ergoverify.coupling import ControlSpec
from ergoverify.models import ChannelBasis, NoiseFamily
from ergoverify.sde import NoiseStream, TimeGrid
from ergoverify.spectral import ModeSet, SpectralState


def lowest_mode_state(model, c):
    coords = np.zeros(model.channels)
    coords[0] = c
    return model.synthesize(coords)


def run_pair(model, x, y, T=1.0, dt=1e-2, paths=4, gain=None, seed=0, stride=10):
    control = ControlSpec.for_model(model, gain)
    return sde.coupled_integrate(model, x, y, control, TimeGrid.span(T, dt), NoiseStream(seed, 0, model.channels), paths=paths, stride=stride)


@pytest.fixture(scope="module")
def ns_pair():
    model = presets.desk_ns()
    rng = np.random.default_rng(2)
    x = model.random_state(rng, radius=1.0)
    y = x + model.random_state(rng, radius=0.1)
    return run_pair(model, x, y, T=2.0, paths=32)


# control term -------------------------------------------------------------------


@pytest.mark.parametrize("form", ["linear-nudge", "nudge-plus-nonlinearity"])
def test_control_vanishes_on_equal_states(form, rng):
    modes = ModeSet(2, 3)
    u = SpectralState(modes, sp.random_field_array(modes, rng))
    w = cp.control_term(ControlSpec("test", 2, 0.7, form), u, u)
    assert not np.any(w.coeffs)


def test_control_ignores_high_modes(rng):
    modes = ModeSet(2, 3)
    v = sp.project_high(SpectralState(modes, sp.random_field_array(modes, rng)), 5)
    u = SpectralState(modes, sp.random_field_array(modes, rng))
    w = cp.control_term(ControlSpec("test", 5, 2.0), u + v, u)
    assert not np.any(w.coeffs)


def test_nonlinear_form_without_nonlinearity_is_linear_nudge(rng):
    modes = ModeSet(2, 3)
    u, ut = (SpectralState(modes, sp.random_field_array(modes, rng)) for _ in range(2))
    a = cp.control_term(ControlSpec("test", 3, 1.3, "nudge-plus-nonlinearity"), u, ut, nonlinearity=np.zeros_like)
    b = cp.control_term(ControlSpec("test", 3, 1.3), u, ut)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_control_lives_on_low_modes(lag_model, rng):
    control = ControlSpec.for_model(lag_model)
    u, ut = (lag_model.as_state(lag_model.random_state(rng, radius=2.0)) for _ in range(2))
    w = cp.control_term(control, u, ut, lag_model.explicit)
    assert not np.any(lag_model.project_high_array(w.coeffs))
    assert np.any(w.coeffs)


def test_control_rank_beyond_truncation(rng):
    modes = ModeSet(2, 2)
    u = SpectralState(modes, sp.random_field_array(modes, rng))
    with pytest.raises(sp.ProjectionRankError):
        cp.control_term(ControlSpec("test", modes.size + 1, 1.0), u, u)


def test_mismatched_controls(ns_model, ev_model):
    with pytest.raises(cp.ControlMismatchError):
        cp.check_control(ev_model, ControlSpec.for_model(ns_model))
    with pytest.raises(cp.ControlMismatchError, match="rank"):
        cp.check_control(ns_model, ControlSpec("ns2d", ns_model.rank + 1, 1.0))
    with pytest.raises(cp.ControlMismatchError):
        ControlSpec.for_model(presets.ou())
    with pytest.raises(ValueError, match="form"):
        ControlSpec("lagrangian", 1, 1.0, "linear-nudge")
    with pytest.raises(ValueError, match="gain"):
        ControlSpec("ns2d", 1, 0.0)


# girsanov shift -------------------------------------------------------------------


def test_shift_vanishes_with_v(ns_model, rng):
    u = ns_model.as_state(ns_model.random_state(rng))
    assert not np.any(cp.girsanov_shift(ns_model, ControlSpec.for_model(ns_model), u, u))


def test_shift_is_gain_times_offset_over_amplitude():
    basis = ChannelBasis(ModeSet(2, 3))
    amps = np.full(basis.size, 0.4)
    amps[0] = 0.25
    model = md.NSModelSpec(1.0, NoiseFamily("additive", basis, amps), rank=1, c_d=0.1)
    g, c = 0.8, 1.5
    u = model.as_state(lowest_mode_state(model, c))
    beta = cp.girsanov_shift(model, ControlSpec("ns2d", 1, g), u, model.as_state(model.zero_state()))
    assert beta[0] == pytest.approx(g * c / 0.25, rel=1e-13)
    assert np.max(np.abs(beta[1:])) < 1e-13


@pytest.mark.parametrize("name", ["ns_desk", "ev_desk", "lagrangian_desk"])
def test_shift_bound_audit_on_paths(name):
    model = presets.preset(name)
    rng = np.random.default_rng(5)
    x = model.random_state(rng, radius=1.0)
    ct = run_pair(model, x, x + model.random_state(rng, radius=0.5), T=0.5, paths=8)
    assert ct.shift_tracked
    assert cp.shift_audit(ct)["pass"], cp.shift_audit(ct)


# coupled integration ----------------------------------------------------------------


def test_equal_starts_never_separate(ns_model, rng):
    x = ns_model.random_state(rng)
    ct = run_pair(ns_model, x, x, paths=4)
    assert not np.any(ct.v_norm) and not np.any(ct.cost)
    assert cp.coupling_collapse_stats(ct, 1e-12).fraction == 1.0
    assert cp.tv_surrogate(ct).pinsker == 0.0 and cp.tv_surrogate(ct).moment == 0.0
    rep = cp.weighted_decay_check(ct)
    assert rep.passed and not np.any(rep.mean)


def test_linear_contraction_rate_is_exact():
    model = presets.linear_ns(cutoff=3)
    g, c = 0.7, 0.3
    ct = run_pair(model, lowest_mode_state(model, c), model.zero_state(), T=2.0, dt=1e-3, paths=1, gain=g, stride=100)
    exact = c * np.exp(-(model.nu + g) * ct.times)
    assert np.max(np.abs(ct.v_norm[:, 0] - exact)) < 1e-8
    stat = cp.weighted_decay_check(ct).mean
    closed = c**2 * np.exp((model.nu * model.level - 2 * model.nu - 2 * g) * ct.times)
    assert np.max(np.abs(stat - closed)) < 1e-8


def test_collapse_time_for_linear_contraction():
    model = presets.linear_ns(cutoff=3)
    g, c, eps = 1.0, 1.0, 1e-2
    ct = run_pair(model, lowest_mode_state(model, c), model.zero_state(), T=4.0, paths=2, gain=g)
    crossing = math.log(c / eps) / (model.nu + g)
    assert cp.coupling_collapse_stats(ct, eps, T=crossing - 0.2).fraction == 0.0
    assert cp.coupling_collapse_stats(ct, eps, T=crossing + 0.2).fraction == 1.0


def test_cost_is_nondecreasing(ns_pair):
    assert np.all(ns_pair.cost[0] == 0)
    assert np.all(np.diff(ns_pair.cost, axis=0) >= 0)


def test_desk_ns_weighted_decay(ns_pair):
    rep = cp.weighted_decay_check(ns_pair)
    assert rep.passed and not rep.flags
    with pytest.raises(ValueError):
        cp.weighted_decay_check(ns_pair, p=0.5)


def test_out_of_range_runs_are_flagged():
    model = presets.desk_ns(rank=1, c_d=5.0)
    assert not model.hypotheses_hold
    rng = np.random.default_rng(0)
    x = model.random_state(rng)
    ct = run_pair(model, x, x + model.random_state(rng, radius=0.1), T=0.2, paths=2)
    assert "out of hypothesis range" in cp.coupling_collapse_stats(ct).flags
    assert "out of hypothesis range" in cp.weighted_decay_check(ct).flags


def test_coupled_csv_and_summary(ns_pair, tmp_path):
    path = ns_pair.to_csv(tmp_path / "pair.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == ns_pair.paths * len(ns_pair.times)
    summary = cp.coupled_summary(ns_pair, seed=3)
    out = cp.write_summary(tmp_path / "s.json", summary)
    assert out.exists() and summary["seed"] == 3 and summary["model"] == "ns2d"


# total variation ---------------------------------------------------------------------


def test_pinsker_value():
    assert cp.tv_surrogate(np.full(10, 2.0)).pinsker == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert cp.tv_surrogate(np.zeros(5)).pinsker == 0.0
    with pytest.raises(ValueError):
        cp.tv_surrogate(np.ones(3), delta=0.0)


@pytest.mark.parametrize("c", [0.1, 0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("T", [0.1, 0.5, 1.0, 5.0, 20.0])
def test_pinsker_dominates_gaussian_drift_tv(c, T):
    assert cp.pinsker_from_cost(c * c * T) >= cp.gaussian_drift_tv(c, T)
