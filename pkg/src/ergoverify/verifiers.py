"""Monte Carlo probes for Lyapunov structure, eventual continuity, condition (C),
uniform irreducibility and asymptotic stability of simulated models.

Every probe returns a ``VerdictReport``.  Tail limits over continuous time are
replaced by max/min over the recorded output times in [T_tail, T_end], and
every statistical comparison uses a 3 standard error margin.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .sde import NoiseStream, TimeGrid, integrate, mean_and_se

SE_MULT = 3.0


def digest(obj) -> str:
    """sha256 of the canonical JSON encoding."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return [[float(z.real), float(z.imag)] for z in x.ravel()]
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if hasattr(x, "to_json"):
        return x.to_json()
    raise TypeError(f"cannot encode {type(x).__name__}")


@dataclass
class EnsembleEstimate:
    estimate: float
    se: float
    paths: int
    window: tuple[float, float]

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        if self.window[0] > self.window[1]:
            raise ValueError("empty tail window")

    def to_json(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "paths": self.paths, "window": list(self.window)}


@dataclass
class VerdictReport:
    probe: str
    paper_ref: str
    config: dict
    estimate: float
    ci: tuple[float, float]
    passed: bool
    flags: list[str] = field(default_factory=list)
    data: dict = field(default_factory=dict)
    curves: list[tuple] = field(default_factory=list)
    asserted: bool = True

    @property
    def config_digest(self) -> str:
        return digest(self.config)

    def to_json(self) -> dict:
        return {
            "probe": self.probe,
            "paper_ref": self.paper_ref,
            "config_digest": self.config_digest,
            "estimate": _jsonable(self.estimate) if isinstance(self.estimate, np.generic) else self.estimate,
            "CI": [float(self.ci[0]), float(self.ci[1])],
            "pass": bool(self.passed),
            "asserted": self.asserted,
            "flags": list(self.flags),
            "data": json.loads(json.dumps(self.data, default=_jsonable)),
        }


# ----------------------------------------------------------------------------
# test functions


@dataclass(frozen=True, eq=False)
class TestFunctionDictionary:
    """f_i(u) = tanh(c_i <u, w_i>_r) with |w_i|_r = 1, so |f_i| <= 1 and Lip(f_i) = c_i.

    Directions are drawn once from ``seed``; r defaults to the model's metric
    exponent, so EV dictionaries are Lipschitz in H^{-gamma/2}.
    """

    __test__ = False

    model: object
    size: int = 8
    seed: int = 0
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    exponent: float | None = None

    @property
    def r(self) -> float:
        return self.model.metric_exponent if self.exponent is None else self.exponent

    @property
    def directions(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0xD1C7])
        ws = []
        for _ in range(self.size):
            w = self.model.random_state(rng)
            ws.append(w / self.model.norm_array(w, self.r))
        return np.stack(ws)

    @property
    def lipschitz(self) -> np.ndarray:
        return np.array([self.scales[i % len(self.scales)] for i in range(self.size)], dtype=float)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Batch (P, *shape) -> values (size, P)."""
        ws = self._dirs
        lip = self.lipschitz
        return np.stack([np.tanh(lip[i] * self.model.pairing_array(x, ws[i], self.r)) for i in range(self.size)])

    @property
    def _dirs(self) -> np.ndarray:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = self.directions
            object.__setattr__(self, "_cache", cache)
        return cache

    def functionals(self) -> dict:
        return {f"f{i}": (lambda x, i=i: self.evaluate(x)[i]) for i in range(self.size)}

    def audit(self, samples: int = 1000, seed: int = 1) -> dict:
        """Largest sampled |f(x) - f(y)| / (Lip |x - y|_r) and sup |f|."""
        rng = np.random.default_rng(seed)
        x = np.stack([self.model.random_state(rng, radius=rng.uniform(0.1, 3)) for _ in range(samples)])
        y = x + np.stack([self.model.random_state(rng, radius=rng.uniform(1e-3, 1)) for _ in range(samples)])
        fx, fy = self.evaluate(x), self.evaluate(y)
        dist = self.model.norm_array(x - y, self.r)
        ratio = np.abs(fx - fy) / (self.lipschitz[:, None] * dist)
        return {"max_ratio": float(ratio.max()), "sup_abs": float(max(np.abs(fx).max(), np.abs(fy).max()))}

    def to_json(self) -> dict:
        return {"size": self.size, "seed": self.seed, "scales": list(self.scales), "exponent": self.r}


# ----------------------------------------------------------------------------
# ensemble plumbing


def output_grid(T_end: float, dt: float, n_out: int) -> tuple[TimeGrid, int]:
    """Grid ending exactly at T_end with ``n_out`` equally spaced outputs and step <= dt."""
    sub = max(1, math.ceil(T_end / (n_out * dt) - 1e-9))
    return TimeGrid(0.0, T_end / (n_out * sub), n_out * sub), sub


def _window(times: np.ndarray, T_tail: float, T_end: float) -> np.ndarray:
    eps = 1e-9 * max(1.0, T_end)
    idx = np.flatnonzero((times >= T_tail - eps) & (times <= T_end + eps))
    if idx.size == 0:
        raise ValueError(f"no output times in [{T_tail}, {T_end}]")
    return idx


def _ensemble(model, x0, T_end, dt, n_out, paths, noise, extra, threads=None):
    grid, stride = output_grid(T_end, dt, n_out)
    return integrate(model, x0, grid, noise, paths=paths, stride=stride, extra=extra, threads=threads)


def _wilson(count: int, n: int) -> tuple[float, float]:
    lo, hi = proportion_confint(count, n, alpha=0.05, method="wilson")
    return float(lo), float(hi)


def _state_json(model, x) -> list:
    return _jsonable(np.asarray(model.as_array(x)))


# ----------------------------------------------------------------------------
# probes


def lyapunov_verify(
    model,
    x0s: Sequence,
    horizon: float,
    paths: int = 256,
    seed: int = 0,
    dt: float = 1e-2,
    n_out: int = 20,
    R: float | None = None,
    threads: int | None = None,
) -> VerdictReport:
    """Ensemble mean of the Lyapunov functional against the model's closed-form bound.

    Also fits C in E V(u_t) <= h(t) V(x) + C with h(t) = exp(-decay t) and,
    when R is given, checks the Markov step freq(V <= R) >= 1 - (h V + C)/R.
    """
    decay = model.lyapunov_decay
    rows, curves, fits, markov = [], [], [], []
    ok = True
    worst = -np.inf
    for i, x0 in enumerate(x0s):
        noise = NoiseStream(seed, i, model.channels)
        tr = _ensemble(model, x0, horizon, dt, n_out, paths, noise, {"V": model.lyapunov_array}, threads)
        V = tr.records["V"]
        mean, se = mean_and_se(V, axis=1)
        v0 = float(model.lyapunov_array(model.as_array(x0)[None])[0])
        bound = model.lyapunov_bound(tr.times, v0)
        excess = (mean - bound) / np.maximum(se, 1e-300)
        hold = bool(np.all(mean <= bound + SE_MULT * se + 1e-12 * np.maximum(bound, 1)))
        ok &= hold
        worst = max(worst, float(np.max(np.where(se > 0, excess, np.where(mean > bound, np.inf, -np.inf)))))
        h = np.exp(-decay * tr.times)
        fits.append(float(np.max(mean + SE_MULT * se - h * v0)))
        rows.append({"x0_index": i, "V0": v0, "hold": hold, "max_mean_minus_bound": float(np.max(mean - bound))})
        for t, m, s in zip(tr.times, mean, se):
            curves.append((i, float(t), float(m), float(m - SE_MULT * s), float(m + SE_MULT * s)))
        if R is not None:
            freq = np.mean(V <= R, axis=1)
            fse = np.sqrt(freq * (1 - freq) / paths)
            markov.append((tr.times, freq, fse, v0))
    C_fit = max(0.0, max(fits))
    data = {"rows": rows, "h_rate": decay, "C_fit": C_fit, "times": tr.times}
    flags = []
    if R is not None:
        viol = 0
        for times, freq, fse, v0 in markov:
            rhs = 1 - (np.exp(-decay * times) * v0 + C_fit) / R
            viol += int(np.sum(freq < rhs - SE_MULT * fse - 1e-12))
        data["markov_violations"] = viol
        data["R"] = R
        if viol:
            flags.append("Markov-Chebyshev step violated")
            ok = False
    config = {"model": model.kind, "x0s": [_state_json(model, x) for x in x0s], "horizon": horizon, "paths": paths, "seed": seed, "dt": dt, "n_out": n_out, "R": R}
    return VerdictReport(
        "lyapunov",
        "E V(u_t) <= exp(-decay t) V(x) + C for the energy functional",
        config,
        worst,
        (C_fit, C_fit),
        ok,
        flags,
        data,
        curves,
    )


def eventual_continuity_probe(
    model,
    z,
    radii: Sequence[float],
    fdict: TestFunctionDictionary,
    T_tail: float,
    T_end: float,
    paths: int = 128,
    seed: int = 0,
    directions: Sequence | None = None,
    n_directions: int = 2,
    dt: float = 1e-2,
    n_out: int = 20,
    threads: int | None = None,
) -> VerdictReport:
    """D(r) = max_f max_{t in window} |E f(u_t^{z + r d}) - E f(u_t^z)| with common random numbers."""
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii) or radii != sorted(radii, reverse=True):
        raise ValueError("radii must be nonnegative and descending")
    z = model.as_array(z)
    if directions is None:
        rng = np.random.default_rng([seed, 0xEC])
        directions = [model.random_state(rng) for _ in range(n_directions)]
    directions = [np.asarray(model.as_array(d)) for d in directions]
    directions = [d / model.metric_array(d[None])[0] for d in directions]
    noise = NoiseStream(seed, 0, model.channels)
    extra = fdict.functionals()
    base = _ensemble(model, z, T_end, dt, n_out, paths, noise, extra, threads)
    win = _window(base.times, T_tail, T_end)
    fz = np.stack([base.records[f"f{i}"] for i in range(fdict.size)])
    lip = float(fdict.lipschitz.max())
    D, S, curves = [], [], []
    for r in radii:
        best, best_se = 0.0, 0.0
        for d in directions:
            if r == 0:
                diff = np.zeros_like(fz)
            else:
                tr = _ensemble(model, z + r * d, T_end, dt, n_out, paths, noise, extra, threads)
                diff = np.stack([tr.records[f"f{i}"] for i in range(fdict.size)]) - fz
            mean, se = mean_and_se(diff, axis=2)
            gap = np.abs(mean[:, win])
            j = np.unravel_index(np.argmax(gap), gap.shape)
            if gap[j] > best or (gap[j] == best and se[:, win][j] > best_se):
                best, best_se = float(gap[j]), float(se[:, win][j])
            env = np.abs(mean).max(axis=0)
            for t, e in zip(base.times, env):
                curves.append((r, float(t), float(e), float(max(e - SE_MULT * best_se, 0.0)), float(e + SE_MULT * best_se)))
        D.append(best)
        S.append(best_se)
    D, S = np.array(D), np.array(S)
    trend = bool(np.all(np.diff(D) <= 2 * np.sqrt(S[1:] ** 2 + S[:-1] ** 2) + 1e-15))
    r_min = radii[-1]
    tol = 2 * S[-1] + 0.01 * lip * r_min
    small = bool(D[-1] <= tol)
    rate = float(np.min(model.rates)) if np.all(model.rates > 0) else 0.0
    contraction = [lip * math.exp(-rate * T_tail) * r for r in radii]
    config = {
        "model": model.kind,
        "z": _state_json(model, z),
        "radii": radii,
        "dictionary": fdict.to_json(),
        "T_tail": T_tail,
        "T_end": T_end,
        "paths": paths,
        "seed": seed,
        "directions": [_jsonable(d) for d in directions],
        "dt": dt,
        "n_out": n_out,
    }
    data = {"radii": radii, "D": D, "se": S, "tolerance": tol, "trend": trend, "contraction_bound": contraction, "lipschitz": lip}
    flags = [] if trend else ["D(r) not monotone in r"]
    return VerdictReport(
        "eventual_continuity",
        "limsup_{x->z} limsup_{t->inf} |P_t f(x) - P_t f(z)| = 0 for bounded Lipschitz f",
        config,
        float(D[-1]),
        (float(max(D[-1] - SE_MULT * S[-1], 0.0)), float(D[-1] + SE_MULT * S[-1])),
        trend and small,
        flags,
        data,
        curves,
    )


def lower_bound_probe(
    model,
    z,
    eps: float,
    x0s: Sequence,
    T_tail: float,
    T_end: float,
    paths: int = 1000,
    seed: int = 0,
    dt: float = 1e-2,
    n_out: int = 10,
    threads: int | None = None,
) -> VerdictReport:
    """inf over x0 of min over the tail window of freq(|u_t - z| < eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    z = model.as_array(z)
    dist = lambda x: model.metric_array(x - z)  # noqa: E731
    rows, curves = [], []
    for i, x0 in enumerate(x0s):
        tr = _ensemble(model, x0, T_end, dt, n_out, paths, NoiseStream(seed, i, model.channels), {"dist": dist}, threads)
        win = _window(tr.times, T_tail, T_end)
        counts = np.sum(tr.records["dist"] < eps, axis=1)
        j = win[np.argmin(counts[win])]
        lo, hi = _wilson(int(counts[j]), paths)
        p = counts[j] / paths
        rows.append({"x0_index": i, "liminf": float(p), "time": float(tr.times[j]), "lo": lo, "hi": hi, "se": math.sqrt(p * (1 - p) / paths)})
        for t, c in zip(tr.times, counts):
            a, b = _wilson(int(c), paths)
            curves.append((i, float(t), float(c / paths), a, b))
    worst = min(rows, key=lambda r: (r["liminf"], r["x0_index"]))
    config = {"model": model.kind, "z": _state_json(model, z), "eps": eps, "x0s": [_state_json(model, x) for x in x0s], "T_tail": T_tail, "T_end": T_end, "paths": paths, "seed": seed, "dt": dt, "n_out": n_out}
    return VerdictReport(
        "condition_C",
        "inf_x liminf_{t->inf} P_t(x, B(z, eps)) > 0",
        config,
        worst["liminf"],
        (worst["lo"], worst["hi"]),
        worst["lo"] > 0,
        [],
        {"rows": rows, "witness": worst["x0_index"], "se": worst["se"]},
        curves,
    )


def irreducibility_time(model, R: float, eps: float) -> float:
    """Time for deterministic decay at the slowest rate to shrink radius R + 1 to eps/2."""
    rate = float(np.min(model.rates))
    if rate <= 0:
        raise ValueError("model has no uniform dissipation; pass T explicitly")
    return math.log(2 * (R + 1) / eps) / rate


def energy_ball_samples(model, R: float, count: int, seed: int = 0) -> list:
    """States with V <= R: half on the boundary, the rest at random interior radii."""
    rng = np.random.default_rng([seed, 0x1BB])
    top = math.sqrt(R)
    out = [model.zero_state() if hasattr(model, "modes") else np.zeros(1)]
    for j in range(count - 1):
        rad = top if j % 2 == 0 else top * rng.uniform(0, 1)
        out.append(model.random_state(rng, radius=rad))
    return [model.as_array(x) for x in out]


def uniform_irreducibility_probe(
    model,
    z,
    eps: float,
    R: float,
    x0s: Sequence | None = None,
    T: float | None = None,
    paths: int = 500,
    seed: int = 0,
    samples: int = 6,
    dt: float = 1e-2,
    threads: int | None = None,
) -> VerdictReport:
    """min over x0 in {V <= R} of freq(|u_T - z| < eps)."""
    z = model.as_array(z)
    if x0s is None:
        x0s = energy_ball_samples(model, R, samples, seed)
    T = irreducibility_time(model, R, eps) if T is None else float(T)
    dist = lambda x: model.metric_array(x - z)  # noqa: E731
    rows = []
    for i, x0 in enumerate(x0s):
        tr = _ensemble(model, x0, T, dt, 1, paths, NoiseStream(seed, i, model.channels), {"dist": dist}, threads)
        c = int(np.sum(tr.records["dist"][-1] < eps))
        lo, hi = _wilson(c, paths)
        rows.append({"x0_index": i, "p": c / paths, "lo": lo, "hi": hi, "V0": float(model.lyapunov_array(np.asarray(x0)[None])[0])})
    worst = min(rows, key=lambda r: (r["p"], r["x0_index"]))
    p = worst["p"]
    config = {"model": model.kind, "z": _state_json(model, z), "eps": eps, "R": R, "T": T, "x0s": [_state_json(model, x) for x in x0s], "paths": paths, "seed": seed, "dt": dt}
    return VerdictReport(
        "uniform_irreducibility",
        "inf_{x in {V <= R}} P_T(x, B(z, eps)) > 0",
        config,
        p,
        (worst["lo"], worst["hi"]),
        worst["lo"] > 0,
        [],
        {"rows": rows, "T": T, "witness": worst["x0_index"], "se": math.sqrt(p * (1 - p) / paths)},
        [(r["x0_index"], T, r["p"], r["lo"], r["hi"]) for r in rows],
    )


def stability_distance(
    model,
    x,
    y,
    fdict: TestFunctionDictionary,
    T_end: float,
    paths: int = 256,
    seed: int = 0,
    dt: float = 1e-2,
    n_out: int = 20,
    floor: float | None = None,
    threads: int | None = None,
) -> VerdictReport:
    """Dual-Lipschitz distance max_f |E f(u_t^x) - E f(u_t^y)| between independent ensembles."""
    extra = fdict.functionals()
    tx = _ensemble(model, x, T_end, dt, n_out, paths, NoiseStream(seed, 0, model.channels), extra, threads)
    ty = _ensemble(model, y, T_end, dt, n_out, paths, NoiseStream(seed, 1, model.channels), extra, threads)
    fx = np.stack([tx.records[f"f{i}"] for i in range(fdict.size)])
    fy = np.stack([ty.records[f"f{i}"] for i in range(fdict.size)])
    mx, sx = mean_and_se(fx, axis=2)
    my, sy = mean_and_se(fy, axis=2)
    gap = np.abs(mx - my)
    pooled = np.sqrt(sx**2 + sy**2)
    k = np.argmax(gap, axis=0)
    cols = np.arange(gap.shape[1])
    d_hat, d_se = gap[k, cols], pooled[k, cols]
    floor = 0.01 * float(fdict.lipschitz.max()) if floor is None else floor
    passed = bool(d_hat[-1] <= SE_MULT * d_se[-1] + floor)
    curves = [(0, float(t), float(d), float(max(d - SE_MULT * s, 0.0)), float(d + SE_MULT * s)) for t, d, s in zip(tx.times, d_hat, d_se)]
    config = {"model": model.kind, "x": _state_json(model, x), "y": _state_json(model, y), "dictionary": fdict.to_json(), "T_end": T_end, "paths": paths, "seed": seed, "dt": dt, "n_out": n_out, "floor": floor}
    return VerdictReport(
        "stability_distance",
        "<f, P_t mu> -> <f, mu_*> for bounded Lipschitz f",
        config,
        float(d_hat[-1]),
        (float(max(d_hat[-1] - SE_MULT * d_se[-1], 0.0)), float(d_hat[-1] + SE_MULT * d_se[-1])),
        passed,
        [],
        {"times": tx.times, "d": d_hat, "se": d_se, "floor": floor},
        curves,
    )


def prop_lbc_composition(
    lyapunov: VerdictReport | None,
    irreducibility: VerdictReport | None,
    direct: VerdictReport | None,
    V0: float,
    t: float,
) -> VerdictReport:
    """Chain P_{t+T}(x, B) >= P_t(x, {V <= R}) inf_{V <= R} P_T(., B) numerically.

    Uses the fitted (h, C) of the Lyapunov report, the irreducibility estimate
    p and the directly measured liminf from the condition (C) probe.
    """
    missing = [n for n, r in (("lyapunov", lyapunov), ("irreducibility", irreducibility), ("condition_C", direct)) if r is None]
    if missing:
        raise ValueError(f"missing prerequisite reports: {', '.join(missing)}")
    R = irreducibility.config["R"]
    h = math.exp(-lyapunov.data["h_rate"] * t)
    C = lyapunov.data["C_fit"]
    markov = 1 - (h * V0 + C) / R
    p = float(irreducibility.estimate)
    p_se = irreducibility.data["se"]
    composed = p / 2
    direct_value = float(direct.estimate)
    direct_se = direct.data["se"]
    step_ok = markov >= 0.5
    consistent = composed <= direct_value + SE_MULT * math.hypot(direct_se, p_se / 2) + 1e-12
    flags = []
    if not step_ok:
        flags.append("R too small: Markov step below 1/2")
    if not consistent:
        flags.append("composed bound exceeds the direct estimate")
    config = {"lyapunov": lyapunov.config_digest, "irreducibility": irreducibility.config_digest, "condition_C": direct.config_digest, "V0": V0, "t": t}
    return VerdictReport(
        "prop_lbc_composition",
        "P_t(x, {V <= R}) >= 1 - P_t V(x)/R, then liminf P_t(x, B(z, eps)) >= p/2",
        config,
        composed,
        (max(composed - SE_MULT * p_se / 2, 0.0), composed + SE_MULT * p_se / 2),
        step_ok and consistent,
        flags,
        {"markov_step": markov, "p": p, "refined": p * markov, "direct": direct_value, "R": R, "h": h, "C": C},
    )
