"""Campaign runner: ``ergoverify run | list-probes | report``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import traceback
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from . import chains as cl
from . import coupling as cp
from . import models as md
from . import presets
from . import sde
from . import verifiers as vf

CAMPAIGN_SCHEMA = "ergoverify-campaign-v1"
MANIFEST_SCHEMA = "ergoverify-manifest-v1"
LONG_HEADER = ["probe", "x", "t", "value", "lo", "hi"]


class CampaignError(Exception):
    """Configuration problem; reported as JSON on stderr with exit status 2."""


# ----------------------------------------------------------------------------
# configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


StateSpec = Union[float, list, dict, None]


class ModelRef(_Strict):
    preset: str | None = None
    params: dict = Field(default_factory=dict)
    file: str | None = None
    inline: dict | None = None


class ProbeEntry(_Strict):
    name: str
    params: dict = Field(default_factory=dict)
    asserted: bool | None = None


class CampaignConfig(_Strict):
    schema_: Literal["ergoverify-campaign-v1"] = Field(alias="schema")
    name: str
    kind: Literal["simulate", "couple", "verify", "chainlab"]
    model: ModelRef | None = None
    seed: int
    probes: list[ProbeEntry] = Field(default_factory=list)
    output: str | None = None
    threads: int | None = Field(None, ge=1)


def resolve_state(model, spec: StateSpec):
    """Initial data from a config entry.

    A number is a scalar state; {"zero": true} the zero state;
    {"random": seed, "radius": r, "slope": s} a seeded random field with the
    given state norm; {"coeffs": [[re, im], ...]} explicit coefficients.
    """
    if spec is None:
        spec = {"random": 0, "radius": 1.0}
    if isinstance(spec, (int, float)):
        return model.as_array(float(spec))
    if isinstance(spec, list):
        return model.as_array(np.asarray(spec, dtype=float))
    if spec.get("zero"):
        return model.as_array(model.zero_state())
    if "coeffs" in spec:
        c = np.asarray(spec["coeffs"], dtype=float)
        return model.as_array((c[..., 0] + 1j * c[..., 1]).reshape(model.state_shape))
    if "random" in spec:
        rng = np.random.default_rng(int(spec["random"]))
        kw = {"radius": spec.get("radius")}
        if "slope" in spec:
            kw["slope"] = spec["slope"]
        return model.as_array(model.random_state(rng, **kw))
    raise CampaignError(f"unrecognised state specification {spec!r}")


def load_campaign_model(ref: ModelRef | None, base: Path):
    if ref is None:
        return None
    chosen = [k for k in ("preset", "file", "inline") if getattr(ref, k) is not None]
    if len(chosen) != 1:
        raise CampaignError("model reference needs exactly one of preset, file or inline")
    if ref.preset is not None:
        try:
            return presets.preset(ref.preset, **ref.params)
        except KeyError as exc:
            raise CampaignError(str(exc.args[0])) from None
    if ref.file is not None:
        path = Path(ref.file)
        path = path if path.is_absolute() else base / path
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
    try:
        return md.load_model(path) if ref.file is not None else md.model_from_config(ref.inline)
    except (ValidationError, ValueError) as exc:
        raise CampaignError(f"invalid model: {exc}") from None


# ----------------------------------------------------------------------------
# probes


@dataclass
class Context:
    model: Any
    seed: int
    out: Path
    prefix: str
    threads: int | None
    reports: dict
    cache: dict

    def path(self, suffix: str) -> Path:
        return self.out / f"{self.prefix}_{suffix}"


@dataclass(frozen=True)
class Probe:
    name: str
    paper_ref: str
    params: type
    run: Callable
    needs_model: bool = True
    asserted: bool = True


REGISTRY: dict[str, Probe] = {}


def probe(name: str, paper_ref: str, params: type, needs_model: bool = True, asserted: bool = True):
    def wrap(fn):
        REGISTRY[name] = Probe(name, paper_ref, params, fn, needs_model, asserted)
        return fn

    return wrap


class TrajectoryParams(_Strict):
    x0: StateSpec = None
    T: float = 1.0
    dt: float = 1e-2
    paths: int = 16
    n_out: int = 10


@probe("trajectory", "du = (A u + B(u, u)) dt + sigma(u) dW, exponential Euler", TrajectoryParams, asserted=False)
def _trajectory(ctx: Context, p: TrajectoryParams):
    grid, stride = vf.output_grid(p.T, p.dt, p.n_out)
    tr = sde.integrate(ctx.model, resolve_state(ctx.model, p.x0), grid, sde.NoiseStream(ctx.seed, 0, ctx.model.channels), p.paths, stride, threads=ctx.threads)
    files = [tr.to_csv(ctx.path("trajectory.csv"))[0]]
    mean, se = sde.mean_and_se(tr.records["abs_u"], axis=1)
    curves = [(0, float(t), float(m), float(m - 3 * s), float(m + 3 * s)) for t, m, s in zip(tr.times, mean, se)]
    rep = vf.VerdictReport("trajectory", REGISTRY["trajectory"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, float(mean[-1]), (float(mean[-1] - 3 * se[-1]), float(mean[-1] + 3 * se[-1])), True, [], {"times": tr.times}, curves, asserted=False)
    return rep, files


class ConvergenceParams(_Strict):
    x0: StateSpec = None
    T: float = 1.0
    dt: float = 1e-2
    paths: int = 32
    functional: str = "abs_u"
    tolerance: float = 0.05


@probe("convergence", "step-halving self-check of the exponential Euler scheme", ConvergenceParams)
def _convergence(ctx: Context, p: ConvergenceParams):
    grid = sde.TimeGrid.span(p.T, p.dt)
    res = sde.convergence_check(ctx.model, resolve_state(ctx.model, p.x0), grid, sde.NoiseStream(ctx.seed, 0, ctx.model.channels), p.paths, p.functional, p.tolerance)
    rep = vf.VerdictReport("convergence", REGISTRY["convergence"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, res["relative_drift"], (0.0, res["relative_drift"]), res["pass"], [], res, [(0, p.T, res["coarse"], res["coarse"], res["coarse"]), (1, p.T, res["fine"], res["fine"], res["fine"])])
    return rep, []


class TailParams(_Strict):
    kappas: list[float] = [0.5, 1.0, 2.0]
    R_points: int = 8
    R_max_quantile: float = 0.02
    paths: int = 100_000
    horizon_scale: float = 40.0
    steps: int = 400
    require_tight: bool = True


@probe("martingale_tail", "P(sup_t (M_t - kappa <M>_t) >= R) <= exp(-2 kappa R)", TailParams, needs_model=False)
def _tail(ctx: Context, p: TailParams):
    rows, curves, ok, tight, flags, worst = [], [], True, True, [], -np.inf
    for i, kappa in enumerate(p.kappas):
        R_max = -np.log(p.R_max_quantile) / (2 * kappa)
        grid = np.linspace(0.0, R_max, p.R_points)
        horizon = p.horizon_scale / kappa**2
        rep = sde.martingale_tail_probe(kappa, grid, p.paths, horizon, ctx.seed + i, horizon / p.steps, len(p.kappas) * p.R_points)
        rows.append(rep.to_json())
        ok &= rep.passed
        tight &= rep.tight
        flags += [f"kappa={kappa}: {f}" for f in rep.flags]
        for r in rep.rows:
            worst = max(worst, r.lo_family - r.bound)
            curves.append((kappa, r.R, r.estimate, r.lo, r.hi))
    passed = ok and (tight or not p.require_tight) and not flags
    out = ctx.path("martingale_tail.json")
    out.write_text(json.dumps(rows, indent=1))
    rep = vf.VerdictReport("martingale_tail", REGISTRY["martingale_tail"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, float(worst), (float(worst), float(worst)), passed, flags, {"bound_ok": ok, "tight": tight}, curves)
    return rep, [out]


class HypothesisParams(_Strict):
    audit_samples: int = 1000


@probe("hypotheses", "noise bound, Lipschitz and pseudo-inverse constants; spectral threshold on the control rank", HypothesisParams)
def _hypotheses(ctx: Context, p: HypothesisParams):
    m = ctx.model
    data = {"hypotheses": m.hypotheses(), "hold": bool(m.hypotheses_hold)}
    ok = bool(m.hypotheses_hold)
    if hasattr(m, "modes"):
        audit = md.audit_noise_constants(m, p.audit_samples, ctx.seed)
        data["audit"] = audit
        ok &= all(v <= 1 + md.AUDIT_SLACK for v in audit.values())
    est = float(max(data.get("audit", {"x": 0.0}).values()))
    rep = vf.VerdictReport("hypotheses", REGISTRY["hypotheses"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed, "model": m.kind}, est, (est, est), ok, [] if ok else ["hypotheses fail"], data)
    return rep, []


class CouplingParams(_Strict):
    x: StateSpec = None
    distance: float = 0.1
    direction_seed: int = 1
    T: float = 20.0
    dt: float = 1e-2
    paths: int = 256
    n_out: int = 20
    gain: float | None = None
    p: float = 1.0
    threshold: float = 1e-3
    min_fraction: float = 0.95
    delta: float = 1.0


def _coupled(ctx: Context, p: CouplingParams) -> sde.CoupledTrajectory:
    keys = ("x", "distance", "direction_seed", "T", "dt", "paths", "n_out", "gain")
    key = vf.digest({k: getattr(p, k) for k in keys} | {"seed": ctx.seed})
    if key not in ctx.cache:
        m = ctx.model
        x = resolve_state(m, p.x)
        w = m.random_state(np.random.default_rng(p.direction_seed))
        y = x - w * (p.distance / m.metric_array(w[None])[0])
        grid, stride = vf.output_grid(p.T, p.dt, p.n_out)
        control = cp.ControlSpec.for_model(m, p.gain)
        ctx.cache[key] = sde.coupled_integrate(m, x, y, control, grid, sde.NoiseStream(ctx.seed, 0, m.channels), p.paths, stride, threads=ctx.threads)
    return ctx.cache[key]


@probe("coupling_decay", "E[|v_t|^2 exp(h_1(t))] <= |x - y|^2 for the nudged coupling", CouplingParams)
def _coupling_decay(ctx: Context, p: CouplingParams):
    ct = _coupled(ctx, p)
    rep = cp.weighted_decay_check(ct, p.p)
    out = ct.to_csv(ctx.path("coupled.csv"), p.p)
    curves = [(p.distance, float(t), float(m), float(m - 3 * s), float(m + 3 * s)) for t, m, s in zip(rep.times, rep.mean, rep.se)]
    i = int(np.argmax(rep.mean - rep.initial))
    v = vf.VerdictReport("coupling_decay", REGISTRY["coupling_decay"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, float(rep.mean[i]), (float(rep.mean[i] - 3 * rep.se[i]), float(rep.mean[i] + 3 * rep.se[i])), rep.passed, rep.flags, rep.to_json(), curves)
    return v, [out]


@probe("coupling_collapse", "|u_t - u~_t| -> 0 almost surely", CouplingParams)
def _coupling_collapse(ctx: Context, p: CouplingParams):
    ct = _coupled(ctx, p)
    rep = cp.coupling_collapse_stats(ct, p.threshold)
    curves = [(lvl, float(t), float(q), float(q), float(q)) for lvl, row in zip(rep.quantile_levels, rep.quantiles) for t, q in zip(ct.times, row)]
    lo, hi = vf._wilson(int(round(rep.fraction * ct.paths)), ct.paths)
    passed = rep.fraction >= p.min_fraction
    v = vf.VerdictReport("coupling_collapse", REGISTRY["coupling_collapse"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, rep.fraction, (lo, hi), passed, rep.flags, rep.to_json(), curves, asserted=not rep.flags)
    return v, []


@probe("tv_surrogate", "d_TV <= sqrt(KL/2) with KL = E int |beta|^2 / 2", CouplingParams, asserted=False)
def _tv(ctx: Context, p: CouplingParams):
    ct = _coupled(ctx, p)
    rep = cp.tv_surrogate(ct, p.delta)
    out = cp.write_summary(ctx.path("coupled_summary.json"), cp.coupled_summary(ct, p.p, p.threshold, p.delta, seed=ctx.seed, params=p.model_dump()))
    mean, se = sde.mean_and_se(ct.cost, axis=1)
    curves = [(0, float(t), float(m), float(m - 3 * s), float(m + 3 * s)) for t, m, s in zip(ct.times, mean, se)]
    v = vf.VerdictReport("tv_surrogate", REGISTRY["tv_surrogate"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, rep.pinsker, rep.pinsker_ci, True, [], rep.to_json(), curves, asserted=False)
    return v, [out]


@probe("shift_bound", "|beta_t| <= gain C0 |P_N v_t| (composite form for transport)", CouplingParams)
def _shift(ctx: Context, p: CouplingParams):
    ct = _coupled(ctx, p)
    audit = cp.shift_audit(ct)
    flags = [] if ct.shift_tracked else ["noise cannot absorb the control; shift not tracked"]
    v = vf.VerdictReport("shift_bound", REGISTRY["shift_bound"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, audit["max_ratio"], (0.0, audit["max_ratio"]), audit["pass"] and ct.shift_tracked, flags, audit)
    return v, []


class LyapunovParams(_Strict):
    x0s: list[StateSpec] = [{"zero": True}, {"random": 0, "radius": 2.0}]
    horizon: float = 5.0
    paths: int = 256
    dt: float = 1e-2
    n_out: int = 20
    R: float | None = None


@probe("lyapunov", "E V(u_t) <= exp(-decay t) V(x) + C", LyapunovParams)
def _lyapunov(ctx: Context, p: LyapunovParams):
    x0s = [resolve_state(ctx.model, s) for s in p.x0s]
    return vf.lyapunov_verify(ctx.model, x0s, p.horizon, p.paths, ctx.seed, p.dt, p.n_out, p.R, ctx.threads), []


class DictionaryParams(_Strict):
    size: int = 8
    seed: int = 0
    scales: list[float] = [0.5, 1.0, 2.0]


class ContinuityParams(_Strict):
    z: StateSpec = None
    radii: list[float] = [1.0, 0.3, 0.1]
    dictionary: DictionaryParams = DictionaryParams()
    T_tail: float = 5.0
    T_end: float = 8.0
    paths: int = 64
    n_directions: int = 2
    dt: float = 1e-2
    n_out: int = 8


@probe("eventual_continuity", "limsup_{x->z} limsup_t |P_t f(x) - P_t f(z)| = 0", ContinuityParams)
def _continuity(ctx: Context, p: ContinuityParams):
    fd = vf.TestFunctionDictionary(ctx.model, p.dictionary.size, p.dictionary.seed, tuple(p.dictionary.scales))
    z = resolve_state(ctx.model, p.z)
    return vf.eventual_continuity_probe(ctx.model, z, p.radii, fd, p.T_tail, p.T_end, p.paths, ctx.seed, None, p.n_directions, p.dt, p.n_out, ctx.threads), []


class ConditionCParams(_Strict):
    z: StateSpec = None
    eps: float = 1.0
    x0s: list[StateSpec] = [{"zero": True}, {"random": 0, "radius": 5.0}]
    T_tail: float = 5.0
    T_end: float = 10.0
    paths: int = 1000
    dt: float = 1e-2
    n_out: int = 2


@probe("condition_C", "inf_x liminf_t P_t(x, B(z, eps)) > 0", ConditionCParams)
def _condition_c(ctx: Context, p: ConditionCParams):
    z = resolve_state(ctx.model, p.z if p.z is not None else {"zero": True})
    x0s = [resolve_state(ctx.model, s) for s in p.x0s]
    return vf.lower_bound_probe(ctx.model, z, p.eps, x0s, p.T_tail, p.T_end, p.paths, ctx.seed, p.dt, p.n_out, ctx.threads), []


class IrreducibilityParams(_Strict):
    z: StateSpec = None
    eps: float = 1.0
    R: float = 4.0
    samples: int = 6
    T: float | None = None
    paths: int = 500
    dt: float = 1e-2


@probe("uniform_irreducibility", "inf_{V(x) <= R} P_T(x, B(z, eps)) > 0", IrreducibilityParams)
def _irreducibility(ctx: Context, p: IrreducibilityParams):
    z = resolve_state(ctx.model, p.z if p.z is not None else {"zero": True})
    return vf.uniform_irreducibility_probe(ctx.model, z, p.eps, p.R, None, p.T, p.paths, ctx.seed, p.samples, p.dt, ctx.threads), []


class StabilityParams(_Strict):
    x: StateSpec = None
    y: StateSpec = None
    dictionary: DictionaryParams = DictionaryParams()
    T_end: float = 8.0
    paths: int = 256
    dt: float = 1e-2
    n_out: int = 20
    floor: float | None = None


@probe("stability_distance", "<f, P_t mu> -> <f, mu_*> for bounded Lipschitz f", StabilityParams)
def _stability(ctx: Context, p: StabilityParams):
    fd = vf.TestFunctionDictionary(ctx.model, p.dictionary.size, p.dictionary.seed, tuple(p.dictionary.scales))
    x = resolve_state(ctx.model, p.x)
    y = resolve_state(ctx.model, p.y if p.y is not None else {"zero": True})
    return vf.stability_distance(ctx.model, x, y, fd, p.T_end, p.paths, ctx.seed, p.dt, p.n_out, p.floor, ctx.threads), []


class LbcParams(_Strict):
    x0: StateSpec = None
    t: float = 20.0


@probe("prop_lbc_composition", "P_t(x, {V <= R}) >= 1 - P_t V(x)/R composed with irreducibility gives liminf >= p/2", LbcParams)
def _lbc(ctx: Context, p: LbcParams):
    x0 = resolve_state(ctx.model, p.x0)
    V0 = float(ctx.model.lyapunov_array(np.asarray(x0)[None])[0])
    r = ctx.reports
    return vf.prop_lbc_composition(r.get("lyapunov"), r.get("uniform_irreducibility"), r.get("condition_C"), V0, p.t), []


class Theorem4Params(_Strict):
    count: int = 1000
    max_states: int = 7
    eps: float = 0.5


@probe("chain_theorem4", "asymptotic stability <=> condition (C) on finite chains", Theorem4Params, needs_model=False)
def _theorem4(ctx: Context, p: Theorem4Params):
    battery = cl.canonical_chains() + cl.random_battery(p.count, ctx.seed, p.max_states)
    rows = cl.theorem4_consistency(battery, p.eps, halt=False)
    bad = [r.name for r in rows if not r.consistent]
    out = ctx.path("theorem4.jsonl")
    cl.write_jsonl(out, rows)
    curves = [(i, 0.0, r.condition_C, r.condition_C, r.condition_C) for i, r in enumerate(rows)]
    rep = vf.VerdictReport("chain_theorem4", REGISTRY["chain_theorem4"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, float(len(bad)), (0.0, float(len(bad))), not bad, [f"inconsistent: {b}" for b in bad], {"chains": len(rows), "stable": sum(r.stable for r in rows)}, curves)
    return rep, [out]


class DecompositionParams(_Strict):
    count: int = 100
    k_max: int = 6
    max_states: int = 7
    delta: float = 0.5


def hand_decomposition() -> cl.DecompositionTrace:
    half = Fraction(1, 2)
    chain = cl.FiniteChain(np.array([[half, half], [half, half]], dtype=object), name="hand")
    return cl.measure_decomposition(chain, 0, 1, 0, 0.5, Fraction(2, 5), 1)


def stable_decomposition_battery(count: int, seed: int, k_max: int = 6, max_states: int = 7, delta: float = 0.5):
    rng = np.random.default_rng([seed, 0xDEC])
    out = []
    while len(out) < count:
        ch = cl.random_chain(rng, max_states, name=f"stable-{len(out)}")
        verdict = cl.asymptotic_stability_exact(ch)
        if ch.n < 2 or not verdict.stable:
            continue
        z = int(np.argmax(verdict.mu))
        ball = ch.ball(z, delta, "d")
        mass = min(cl.liminf_hitting(ch, x, ball) for x in range(ch.n))
        k = int(rng.integers(1, k_max + 1))
        x1, x2 = (int(i) for i in rng.choice(ch.n, 2, replace=False))
        out.append((ch, cl.measure_decomposition(ch, x1, x2, z, delta, 0.5 * mass, k)))
    return out


@probe("chain_decomposition", "mixture identity P^{t_1+...+t_k} delta_x = sum alpha (1-alpha)^{i-1} nu_i P^{...} + (1-alpha)^k mu_k", DecompositionParams, needs_model=False)
def _decomposition(ctx: Context, p: DecompositionParams):
    hand = hand_decomposition()
    hand_ok = list(hand.mus[1][0]) == [Fraction(1, 6), Fraction(5, 6)] and hand.reconstruction_error == 0
    traces = stable_decomposition_battery(p.count, ctx.seed, p.k_max, p.max_states, p.delta)
    errs = [t.reconstruction_error for _, t in traces]
    supp = all(t.supports_ok() and t.probabilities_ok() for _, t in traces)
    worst = float(max(errs))
    out = ctx.path("decomposition.jsonl")
    cl.write_jsonl(out, [{"chain": c.name, "k": t.k, "times": t.times, "alpha": float(t.alpha), "error": t.reconstruction_error} for c, t in traces])
    rep = vf.VerdictReport("chain_decomposition", REGISTRY["chain_decomposition"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, worst, (0.0, worst), hand_ok and supp and worst <= 1e-12, [], {"hand_mu": [str(f) for f in hand.mus[1][0]], "supports_ok": supp, "traces": len(traces)}, [(i, 0.0, e, e, e) for i, e in enumerate(errs)])
    return rep, [out]


class ChainLbcParams(_Strict):
    count: int = 24


@probe("chain_prop_lbc", "Lyapunov premise plus irreducibility on {V <= R} implies condition (C) >= p/2", ChainLbcParams, needs_model=False)
def _chain_lbc(ctx: Context, p: ChainLbcParams):
    cases = cl.birth_death_battery(ctx.seed, p.count)
    verified = [c for c in cases if c.report.premises]
    ok = all(c.report.conclusion for c in verified)
    out = ctx.path("prop_lbc.jsonl")
    cl.write_jsonl(out, cases)
    slack = min((c.report.condition_C - c.report.bound for c in verified), default=0.0)
    curves = [(i, 0.0, c.report.condition_C if c.report.condition_C is not None else 0.0, c.report.bound, c.report.bound) for i, c in enumerate(cases)]
    rep = vf.VerdictReport("chain_prop_lbc", REGISTRY["chain_prop_lbc"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, float(slack), (float(slack), float(slack)), ok, [], {"cases": len(cases), "premises_verified": len(verified)}, curves)
    return rep, [out]


class GridParams(_Strict):
    contraction: float = 0.5
    noise: float = 1.0
    half_width: float = 4.0
    size: int = 64
    refine: int = 2
    offsets: list[int] = [1, 2, 4, 8]
    n_tail: int = 5
    n_end: int = 20
    eps: float = 0.5


@probe("grid_kernel", "eventual continuity and stability on a discretised AR(1) kernel", GridParams, needs_model=False)
def _grid(ctx: Context, p: GridParams):
    kernel = cl.AR1Kernel(p.contraction, p.noise, p.half_width)
    g = cl.grid_kernel_lab(kernel, p.size)
    fine = cl.grid_kernel_lab(kernel, p.size * p.refine)
    tv = cl.total_variation(cl.invariant_measures(g)[0], cl.coarse_grain(cl.invariant_measures(fine)[0], p.refine))
    z = p.size // 2 - max(p.offsets) // 2
    profiles = {w: cl.continuity_profile(g, z, p.offsets, p.n_tail, p.n_end, w) for w in ("rho", "d")}
    stable = cl.asymptotic_stability_exact(g).stable
    cmid = cl.condition_C_exact(g, p.size // 2, p.eps).value
    cmid_d = cl.condition_C_exact(g, p.size // 2, float(np.min(g.d[p.size // 2][g.d[p.size // 2] > 0])) * 1.5, "d").value
    increasing = all(np.all(np.diff(pr["D"]) >= 0) for pr in profiles.values())
    ok = stable and cmid > 0 and cmid_d > 0 and tv < 0.02 and increasing
    curves = [(w, d, v, v, v) for w, pr in profiles.items() for d, v in zip(pr["distance"], pr["D"])]
    rep = vf.VerdictReport("grid_kernel", REGISTRY["grid_kernel"].paper_ref, {"params": p.model_dump(), "seed": ctx.seed}, tv, (tv, tv), ok, ["grid proxy: eventual continuity tested at grid resolution"], {"tv_refinement": tv, "stable": stable, "condition_C_rho": cmid, "condition_C_d": cmid_d, "profiles": profiles}, curves)
    return rep, []


# ----------------------------------------------------------------------------
# campaign execution


def _write_curves(path: Path, name: str, curves) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_HEADER)
        for row in curves:
            w.writerow([name] + [repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        if not curves:
            w.writerow([name, "", "", "", "", ""])
    return path


def run_campaign(config_path, out: str | Path | None = None, seed_override: int | None = None, threads: int | None = None) -> tuple[dict, int]:
    """Execute probes in order; returns (manifest, exit status)."""
    config_path = Path(config_path)
    if not config_path.exists():
        raise FileNotFoundError(f"campaign config not found: {config_path}")
    raw = json.loads(config_path.read_text())
    if raw.get("schema") != CAMPAIGN_SCHEMA:
        raise CampaignError(f"campaign must declare schema {CAMPAIGN_SCHEMA!r}")
    try:
        cfg = CampaignConfig.model_validate(raw)
    except ValidationError as exc:
        raise CampaignError(f"invalid campaign: {exc}") from None
    unknown = [p.name for p in cfg.probes if p.name not in REGISTRY]
    if unknown:
        raise CampaignError(f"unknown probes: {unknown}")
    params = []
    for entry in cfg.probes:
        try:
            params.append(REGISTRY[entry.name].params.model_validate(entry.params))
        except ValidationError as exc:
            raise CampaignError(f"invalid parameters for {entry.name}: {exc}") from None
    if cfg.kind != "chainlab" and any(REGISTRY[e.name].needs_model for e in cfg.probes) and cfg.model is None:
        raise CampaignError("model-based probes need a model reference")
    seed = cfg.seed if seed_override is None else seed_override
    threads = threads if threads is not None else cfg.threads
    effective = cfg.model_dump(by_alias=True, exclude={"output", "threads"}) | {"seed": seed}
    if out is not None:
        out_dir = Path(out)
    else:
        out_dir = Path(cfg.output) if cfg.output else Path("runs") / cfg.name
        if not out_dir.is_absolute():
            out_dir = config_path.parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_campaign_model(cfg.model, config_path.parent)
    ctx = Context(model, seed, out_dir, "", threads, {}, {})
    verdicts, artifacts = [], []
    start = time.perf_counter()
    exit_status = 0
    for i, (entry, prm) in enumerate(zip(cfg.probes, params)):
        spec = REGISTRY[entry.name]
        ctx.prefix = f"{i:02d}_{entry.name}"
        rep, files = spec.run(ctx, prm)
        if entry.asserted is not None:
            rep.asserted = entry.asserted
        elif not spec.asserted:
            rep.asserted = False
        ctx.reports[entry.name] = rep
        curve = _write_curves(ctx.path("curves.csv"), entry.name, rep.curves)
        record = rep.to_json()
        record["curves"] = curve.name
        record["artifacts"] = [Path(f).name for f in files]
        verdicts.append(record)
        artifacts += [curve.name] + record["artifacts"]
        if rep.asserted and not rep.passed:
            exit_status = 1
    if verdicts:
        with (out_dir / "verdicts.jsonl").open("w") as fh:
            for v in verdicts:
                fh.write(json.dumps(v, sort_keys=True) + "\n")
        artifacts.append("verdicts.jsonl")
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "campaign": cfg.name,
        "kind": cfg.kind,
        "seed": seed,
        "config_digest": vf.digest(effective),
        "tool_version": __version__,
        "verdicts": [{k: v[k] for k in ("probe", "paper_ref", "config_digest", "estimate", "CI", "pass", "asserted", "flags", "curves", "artifacts")} for v in verdicts],
        "verdict_digest": vf.digest([{k: v[k] for k in ("probe", "config_digest", "estimate", "CI", "pass", "flags")} for v in verdicts]),
        "wall_clock_seconds": time.perf_counter() - start,
        "artifacts": artifacts,
        "exit_status": exit_status,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest | {"path": str(out_dir / "manifest.json")}, exit_status


def list_probes() -> list[tuple[str, str]]:
    return sorted((name, p.paper_ref) for name, p in REGISTRY.items())


def emit_report(manifest_path, figures: bool = False) -> list[Path]:
    """summary.txt and a long-format CSV next to the manifest; PNGs only with ``figures``."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    missing = [a for a in manifest["artifacts"] if not (base / a).exists() or (base / a).stat().st_size == 0]
    if missing:
        raise FileNotFoundError(f"missing artifacts: {missing}")
    lines = [
        f"campaign: {manifest['campaign']} ({manifest['kind']})",
        f"config digest: {manifest['config_digest']}",
        f"verdict digest: {manifest['verdict_digest']}",
        f"seed: {manifest['seed']}  tool version: {manifest['tool_version']}",
        "",
    ]
    if not manifest["verdicts"]:
        lines.append("no probes")
    for v in manifest["verdicts"]:
        status = "PASS" if v["pass"] else "FAIL"
        role = "" if v["asserted"] else " (report only)"
        lo, hi = v["CI"]
        lines.append(f"{status} {v['probe']}{role}: estimate {v['estimate']:.6g} CI [{lo:.6g}, {hi:.6g}]")
        lines.append(f"     tests: {v['paper_ref']}")
        for f in v["flags"]:
            lines.append(f"     flag: {f}")
    failed = [v["probe"] for v in manifest["verdicts"] if v["asserted"] and not v["pass"]]
    lines += ["", f"asserted failures: {', '.join(failed) if failed else 'none'}"]
    summary = base / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    long_csv = base / "report_long.csv"
    with long_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_HEADER)
        for v in manifest["verdicts"]:
            with (base / v["curves"]).open() as src:
                rows = list(csv.reader(src))[1:]
            w.writerows(r for r in rows if any(r[1:]))
    out = [summary, long_csv]
    if figures:
        out += _render_figures(base, manifest)
    return out


def _render_figures(base: Path, manifest: dict) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for v in manifest["verdicts"]:
        with (base / v["curves"]).open() as src:
            rows = [r for r in list(csv.reader(src))[1:] if any(r[1:])]
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        groups: dict[str, list] = {}
        for r in rows:
            groups.setdefault(r[1], []).append([float(c) for c in r[2:]])
        for label, pts in groups.items():
            a = np.array(sorted(pts))
            ax.plot(a[:, 0], a[:, 1], marker=".", label=label)
            ax.fill_between(a[:, 0], a[:, 2], a[:, 3], alpha=0.2)
        ax.set_title(f"{v['probe']}: {'pass' if v['pass'] else 'fail'}")
        ax.set_xlabel("t")
        if len(groups) <= 10:
            ax.legend(fontsize="small", title="x")
        target = base / v["curves"].replace("_curves.csv", ".png")
        fig.tight_layout()
        fig.savefig(target, dpi=100)
        plt.close(fig)
        paths.append(target)
    return paths


# ----------------------------------------------------------------------------
# entry point


def _error(kind: str, message: str, status: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergoverify", description="Verify ergodicity criteria on truncated stochastic PDEs and finite chains.")
    sub = parser.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="execute a campaign")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path)
    run.add_argument("--seed-override", type=int)
    run.add_argument("--threads", type=int)
    sub.add_parser("list-probes", help="print the probe registry")
    rep = sub.add_parser("report", help="summarise a finished run")
    rep.add_argument("--out", required=True, type=Path, help="run directory or manifest path")
    rep.add_argument("--figures", action="store_true", help="also render PNG figures")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "list-probes":
        rows = list_probes()
        width = max(len(n) for n, _ in rows)
        for name, ref in rows:
            print(f"{name:<{width}}  {ref}")
        return 0
    if args.verb == "report":
        try:
            for p in emit_report(args.out, args.figures):
                print(p)
        except (FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
            return _error(type(exc).__name__, str(exc), 2)
        return 0
    try:
        manifest, status = run_campaign(args.config, args.out, args.seed_override, args.threads)
    except (CampaignError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except Exception as exc:  # a probe crashed
        return _error(type(exc).__name__, f"{exc}\n{traceback.format_exc(limit=3)}", 3)
    print(json.dumps({"manifest": manifest["path"], "verdict_digest": manifest["verdict_digest"], "exit_status": status}))
    return status


if __name__ == "__main__":
    sys.exit(main())
