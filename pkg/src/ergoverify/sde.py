"""Time integration of truncated SDEs with reproducible counter-based noise.

The scheme is exponential (Lawson) Euler: the per-mode linear damping is
applied exactly over each step while the remaining drift and the noise are
taken explicitly at the left endpoint,

    x_{n+1} = exp(-rate dt) (x_n + dt f(x_n) + sigma(x_n) dW_n).

Noise increments come from a Philox stream keyed by (seed, stream id).  The
counter encodes (path, chunk of 256 steps), so every path draws the same
numbers regardless of how the ensemble is partitioned or scheduled.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

CHUNK = 256
PATH_BLOCK = 256
OVERFLOW = 1e12
DEFAULT_DT = 1e-3
_MASK64 = (1 << 64) - 1


class BlowUpError(FloatingPointError):
    """Raised when a state norm leaves the overflow guard."""

    def __init__(self, step: int, value: float):
        super().__init__(f"numerical blow-up at step {step}: |x| = {value:.3e} exceeds {OVERFLOW:.0e}")
        self.step = step
        self.value = value


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("ERGOVERIFY_THREADS")
    return max(1, int(env)) if env else 1


# ----------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseStream:
    """Standard Gaussian source addressed by (path, step).

    ``normals(paths, start, count)`` returns an array (len(paths), count, dim);
    integrators multiply by sqrt(dt).
    """

    seed: int
    stream_id: int = 0
    dim: int = 1

    def _chunk(self, path: int, chunk: int, kind: int = 0) -> np.ndarray:
        bitgen = np.random.Philox(key=[self.seed & _MASK64, self.stream_id & _MASK64], counter=[0, kind, chunk, path])
        gen = np.random.Generator(bitgen)
        if kind == 0:
            return gen.standard_normal((CHUNK, self.dim))
        return gen.random((CHUNK, self.dim))

    def _draw(self, paths: Iterable[int], start: int, count: int, kind: int) -> np.ndarray:
        paths = list(paths)
        out = np.empty((len(paths), count, self.dim))
        if count == 0:
            return out
        first, last = start // CHUNK, (start + count - 1) // CHUNK
        for i, p in enumerate(paths):
            block = np.concatenate([self._chunk(p, c, kind) for c in range(first, last + 1)])
            out[i] = block[start - first * CHUNK : start - first * CHUNK + count]
        return out

    def normals(self, paths: Iterable[int], start: int, count: int) -> np.ndarray:
        return self._draw(paths, start, count, 0)

    def uniforms(self, paths: Iterable[int], start: int, count: int) -> np.ndarray:
        return self._draw(paths, start, count, 1)

    def increment(self, step: int, path: int = 0, dt: float = 1.0) -> np.ndarray:
        return math.sqrt(dt) * self.normals([path], step, 1)[0, 0]

    def coarsened(self, factor: int = 2) -> "CoarseNoise":
        return CoarseNoise(self, factor)


@dataclass(frozen=True)
class CoarseNoise:
    """Increments over ``factor`` consecutive fine steps, renormalised to unit variance."""

    fine: NoiseStream
    factor: int = 2

    @property
    def dim(self) -> int:
        return self.fine.dim

    def normals(self, paths: Iterable[int], start: int, count: int) -> np.ndarray:
        z = self.fine.normals(paths, start * self.factor, count * self.factor)
        z = z.reshape(z.shape[0], count, self.factor, self.dim)
        return z.sum(axis=2) / math.sqrt(self.factor)


# ----------------------------------------------------------------------------
# grids and trajectories


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.steps < 0:
            raise ValueError("step count must be nonnegative")

    @classmethod
    def span(cls, t1: float, dt: float = DEFAULT_DT, t0: float = 0.0) -> "TimeGrid":
        steps = int(round((t1 - t0) / dt))
        if abs(t0 + steps * dt - t1) > 1e-9 * max(1.0, abs(t1)):
            raise ValueError(f"horizon {t1 - t0} is not a whole number of steps of {dt}")
        return cls(t0, dt, steps)

    @property
    def t1(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.dt / factor, self.steps * factor)


def _rate_shape(model, rates: np.ndarray) -> np.ndarray:
    extra = len(model.state_shape) - 1
    return rates.reshape(rates.shape + (1,) * extra)


def _batch(model, x0, paths: int) -> np.ndarray:
    """Broadcast one state, or stack a per-path batch, to (paths, *state_shape)."""
    a = model.as_array(x0)
    shape = tuple(model.state_shape)
    if a.shape == shape:
        return np.broadcast_to(a, (paths,) + shape).copy()
    if a.shape == (paths,) + shape:
        return np.array(a)
    raise ValueError(f"initial data of shape {a.shape} does not match {paths} paths of {shape}")


def _guard(x: np.ndarray, step: int) -> None:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if not np.isfinite(peak) or peak > OVERFLOW:
        raise BlowUpError(step, peak)


def _record_indices(steps: int, stride: int) -> np.ndarray:
    if stride < 1 or steps % stride:
        raise ValueError(f"output stride {stride} must divide the step count {steps}")
    return np.arange(0, steps + 1, stride)


def _blocks(paths: int, offset: int) -> list[np.ndarray]:
    ids = np.arange(offset, offset + paths)
    return [ids[i : i + PATH_BLOCK] for i in range(0, paths, PATH_BLOCK)]


def _run_blocks(fn, blocks, threads: int | None):
    n = thread_count(threads)
    if n == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, blocks))


@dataclass
class Trajectory:
    """Recorded functionals (n_out, paths) and optionally states (n_out, paths, *shape)."""

    model: object
    grid: TimeGrid
    stride: int
    records: dict[str, np.ndarray]
    final: np.ndarray
    states: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[:: self.stride]

    @property
    def paths(self) -> int:
        return self.final.shape[0]

    def __len__(self) -> int:
        return len(self.times)

    def state(self, index: int, path: int = 0):
        if self.states is None:
            raise ValueError("trajectory was integrated without keep_states")
        a = self.states[index, path]
        return self.model.as_state(a) if hasattr(self.model, "as_state") else a

    def recompute(self, name: str) -> np.ndarray:
        if self.states is None:
            raise ValueError("trajectory was integrated without keep_states")
        flat = self.states.reshape((-1,) + self.states.shape[2:])
        return self.model.functionals(flat)[name].reshape(self.states.shape[:2])

    def to_csv(self, path, per_path: bool = False) -> list[Path]:
        """Ensemble file with a path column, or one file per path when ``per_path``."""
        names = list(self.records)
        path = Path(path)
        if not per_path:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["path", "t"] + names)
                for p in range(self.paths):
                    for i, t in enumerate(self.times):
                        w.writerow([p, repr(float(t))] + [repr(float(self.records[n][i, p])) for n in names])
            return [path]
        out = []
        for p in range(self.paths):
            target = path.with_name(f"{path.stem}_path{p}{path.suffix or '.csv'}")
            with target.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + names)
                for i, t in enumerate(self.times):
                    w.writerow([repr(float(t))] + [repr(float(self.records[n][i, p])) for n in names])
            out.append(target)
        return out


def _measure(model, x: np.ndarray, extra: dict[str, Callable] | None) -> dict[str, np.ndarray]:
    out = model.functionals(x)
    for name, fn in (extra or {}).items():
        out[name] = np.asarray(fn(x), dtype=float)
    return out


def integrate(
    model,
    x0,
    grid: TimeGrid,
    noise,
    paths: int = 1,
    stride: int = 1,
    keep_states: bool = False,
    path_offset: int = 0,
    extra: dict[str, Callable] | None = None,
    threads: int | None = None,
) -> Trajectory:
    """Integrate ``paths`` independent copies (path ids ``path_offset + i``).

    ``x0`` is a single state or a (paths, *state_shape) batch.  ``extra``
    maps names to batched functionals recorded alongside |u| and ||u||.
    """
    if noise.dim != model.channels:
        raise ValueError(f"noise dimension {noise.dim} does not match {model.channels} channels")
    x_all = _batch(model, x0, paths)
    rec_idx = _record_indices(grid.steps, stride)
    decay = np.exp(-_rate_shape(model, model.rates) * grid.dt)
    sq = math.sqrt(grid.dt)

    def run(ids: np.ndarray):
        x = x_all[ids - path_offset].copy()
        n_out = len(rec_idx)
        recs: dict[str, np.ndarray] = {}
        states = np.empty((n_out,) + x.shape, dtype=x.dtype) if keep_states else None

        def store(j):
            for k, v in _measure(model, x, extra).items():
                recs.setdefault(k, np.empty((n_out, len(ids))))[j] = v
            if keep_states:
                states[j] = x

        store(0)
        z = None
        for n in range(grid.steps):
            if n % CHUNK == 0:
                z = noise.normals(ids, n, min(CHUNK, grid.steps - n)) * sq
            dw = z[:, n % CHUNK]
            kick = model.synthesize(model.amplitudes(x) * dw)
            x = decay * (x + grid.dt * model.explicit(x) + kick)
            _guard(x, n + 1)
            if (n + 1) % stride == 0:
                store((n + 1) // stride)
        return recs, x, states

    parts = _run_blocks(run, _blocks(paths, path_offset), threads)
    records = {k: np.concatenate([p[0][k] for p in parts], axis=1) for k in parts[0][0]}
    final = np.concatenate([p[1] for p in parts])
    states = np.concatenate([p[2] for p in parts], axis=1) if keep_states else None
    return Trajectory(model, grid, stride, records, final, states)


def first_exit_time(traj: Trajectory, functional, threshold: float, path: int = 0) -> int | Literal["never"]:
    """First grid step index at which the functional exceeds ``threshold``.

    ``functional`` is a record name or a callable on a batch of states.
    """
    if callable(functional):
        if traj.states is None:
            raise ValueError("callable functionals need recorded states")
        values = np.asarray(functional(traj.states[:, path]))
    else:
        values = traj.records[functional][:, path]
    hits = np.flatnonzero(values > threshold)
    return int(hits[0]) * traj.stride if hits.size else "never"


def convergence_check(
    model, x0, grid: TimeGrid, noise: NoiseStream, paths: int = 64, functional: str = "abs_u", tolerance: float = 0.05
) -> dict:
    """Compare the final ensemble mean at dt against dt/2 on the same Brownian paths."""
    coarse = integrate(model, x0, grid, noise.coarsened(2), paths=paths, stride=grid.steps or 1)
    fine = integrate(model, x0, grid.refined(2), noise, paths=paths, stride=2 * grid.steps or 1)
    a = float(np.mean(coarse.records[functional][-1]))
    b = float(np.mean(fine.records[functional][-1]))
    drift = abs(a - b) / max(abs(b), 1e-300)
    return {"functional": functional, "coarse": a, "fine": b, "relative_drift": drift, "tolerance": tolerance, "pass": drift < tolerance}


# ----------------------------------------------------------------------------
# coupled integration


@dataclass
class CoupledTrajectory:
    """Paired run with u, the nudged copy u - v, and the Girsanov cost G."""

    model: object
    control: object
    grid: TimeGrid
    stride: int
    distance0: np.ndarray
    v_norm: np.ndarray
    cost: np.ndarray
    weight_integral: np.ndarray
    u_records: dict[str, np.ndarray]
    shift_ratio_max: np.ndarray
    final_u: np.ndarray
    final_v: np.ndarray
    states: tuple[np.ndarray, np.ndarray] | None = None
    shift_tracked: bool = True

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[:: self.stride]

    @property
    def paths(self) -> int:
        return self.v_norm.shape[1]

    def h(self, p: float = 1.0) -> np.ndarray:
        a, c = self.model.decay_weight(p)
        return a * self.times[:, None] - c * self.weight_integral

    def weighted(self, p: float = 1.0) -> np.ndarray:
        return self.v_norm ** (2 * p) * np.exp(p * self.h(p))

    def to_csv(self, path, p: float = 1.0) -> Path:
        path = Path(path)
        h = self.h(p)
        stat = self.weighted(p)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t", "v_abs", "v_abs_sq", "G_t", "h_p", "weighted"])
            for j in range(self.paths):
                for i, t in enumerate(self.times):
                    v = float(self.v_norm[i, j])
                    w.writerow([j, repr(float(t)), repr(v), repr(v * v), repr(float(self.cost[i, j])), repr(float(h[i, j])), repr(float(stat[i, j]))])
        return path


def coupled_integrate(
    model,
    x,
    y,
    control,
    grid: TimeGrid,
    noise,
    paths: int = 1,
    stride: int = 1,
    keep_states: bool = False,
    path_offset: int = 0,
    threads: int | None = None,
) -> CoupledTrajectory:
    """Run u from x and the controlled copy from y on the same increments.

    The difference v = u - u~ is integrated directly; its linear part
    includes the nudge gain on the controlled modes, so pure linear dynamics
    are reproduced exactly and x = y gives v identically zero.
    """
    from .coupling import check_control, shift_bound

    check_control(model, control)
    if noise.dim != model.channels:
        raise ValueError(f"noise dimension {noise.dim} does not match {model.channels} channels")
    xs = _batch(model, x, paths)
    ys = _batch(model, y, paths)
    rec_idx = _record_indices(grid.steps, stride)
    low = _rate_shape(model, model.low_mask.astype(float))
    rates = _rate_shape(model, model.rates)
    decay_u = np.exp(-rates * grid.dt)
    decay_v = np.exp(-(rates + control.gain * low) * grid.dt)
    nonlinear_form = control.form == "nudge-plus-nonlinearity"
    # a noiseless or degenerate family cannot absorb the control; skip the shift accounting
    tracked = bool(np.all(model.noise.amplitudes[model.low_channels] > 0))
    sq = math.sqrt(grid.dt)
    dt = grid.dt

    def run(ids: np.ndarray):
        u = xs[ids - path_offset].copy()
        v = u - ys[ids - path_offset]
        n_out = len(rec_idx)
        k = len(ids)
        vn = np.empty((n_out, k))
        cost = np.empty((n_out, k))
        wint = np.empty((n_out, k))
        urec: dict[str, np.ndarray] = {}
        su = np.empty((n_out,) + u.shape, dtype=u.dtype) if keep_states else None
        sv = np.empty((n_out,) + u.shape, dtype=u.dtype) if keep_states else None
        g = np.zeros(k)
        integral = np.zeros(k)
        w_prev = model.weight_integrand(u)
        ratio = np.zeros(k)

        def store(j):
            vn[j] = model.metric_array(v)
            cost[j] = g
            wint[j] = integral
            for name, val in model.functionals(u).items():
                urec.setdefault(name, np.empty((n_out, k)))[j] = val
            if keep_states:
                su[j], sv[j] = u, v

        store(0)
        z = None
        for n in range(grid.steps):
            if n % CHUNK == 0:
                z = noise.normals(ids, n, min(CHUNK, grid.steps - n)) * sq
            dw = z[:, n % CHUNK]
            ut = u - v
            fu = model.explicit(u)
            ft = model.explicit(ut)
            au = model.amplitudes(u)
            at = model.amplitudes(ut)
            nudge = control.gain * model.project_low_array(v)
            extra = model.project_low_array(fu - ft) if nonlinear_form else 0.0
            if tracked:
                beta = model.pseudo_inverse(ut, nudge + extra)
                b2 = np.sum(beta**2, axis=-1)
                bound = shift_bound(model, control, u, v)
                with np.errstate(divide="ignore", invalid="ignore"):
                    r = np.where(bound > 0, np.sqrt(b2) / bound, np.where(b2 > 0, np.inf, 0.0))
                ratio = np.maximum(ratio, r)
                g = g + b2 * dt
            u = decay_u * (u + dt * fu + model.synthesize(au * dw))
            v = decay_v * (v + dt * (fu - ft - extra) + model.synthesize((au - at) * dw))
            _guard(u, n + 1)
            _guard(v, n + 1)
            w_next = model.weight_integrand(u)
            integral = integral + 0.5 * dt * (w_prev + w_next)
            w_prev = w_next
            if (n + 1) % stride == 0:
                store((n + 1) // stride)
        return vn, cost, wint, urec, ratio, u, v, su, sv

    parts = _run_blocks(run, _blocks(paths, path_offset), threads)
    urecs = {name: np.concatenate([p[3][name] for p in parts], axis=1) for name in parts[0][3]}
    states = None
    if keep_states:
        states = (np.concatenate([p[7] for p in parts], axis=1), np.concatenate([p[8] for p in parts], axis=1))
    return CoupledTrajectory(
        model=model,
        control=control,
        grid=grid,
        stride=stride,
        distance0=model.metric_array(xs - ys),
        v_norm=np.concatenate([p[0] for p in parts], axis=1),
        cost=np.concatenate([p[1] for p in parts], axis=1),
        weight_integral=np.concatenate([p[2] for p in parts], axis=1),
        u_records=urecs,
        shift_ratio_max=np.concatenate([p[4] for p in parts]),
        final_u=np.concatenate([p[5] for p in parts]),
        final_v=np.concatenate([p[6] for p in parts]),
        states=states,
        shift_tracked=tracked,
    )


# ----------------------------------------------------------------------------
# martingale tail probe


@dataclass
class MartingaleRecord:
    """A Brownian martingale M with <M>_t = t and the running sup of M - kappa <M>."""

    kappa: float
    times: np.ndarray
    M: np.ndarray
    qv: np.ndarray
    xi: np.ndarray

    def check(self) -> bool:
        return bool(self.M[0] == 0 and np.all(np.diff(self.qv) >= 0) and np.all(np.diff(self.xi) >= 0))


def martingale_record(kappa: float, grid: TimeGrid, noise: NoiseStream, path: int = 0) -> MartingaleRecord:
    z = noise.normals([path], 0, grid.steps)[0, :, 0] * math.sqrt(grid.dt)
    M = np.concatenate([[0.0], np.cumsum(z)])
    qv = grid.times - grid.t0
    xi = np.maximum.accumulate(M - kappa * qv)
    return MartingaleRecord(kappa, grid.times, M, qv, xi)


@dataclass
class TailRow:
    R: float
    bound: float
    exact: float
    estimate: float
    lo: float
    hi: float
    se_exact: float
    lo_family: float

    @property
    def bound_ok(self) -> bool:
        return self.bound >= self.lo_family

    @property
    def tight(self) -> bool:
        return abs(self.estimate - self.exact) <= 3 * self.se_exact + 1e-15

    def to_json(self) -> dict:
        return {**self.__dict__, "bound_ok": self.bound_ok, "tight": self.tight}


@dataclass
class TailReport:
    kappa: float
    paths: int
    horizon: float
    dt: float
    rows: list[TailRow]
    late_fraction: float
    saturated: bool

    @property
    def flags(self) -> list[str]:
        return [] if self.saturated else ["horizon too short: supremum still growing in the last decile"]

    @property
    def passed(self) -> bool:
        return all(r.bound_ok for r in self.rows)

    @property
    def tight(self) -> bool:
        return all(r.tight for r in self.rows)

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "paths": self.paths,
            "horizon": self.horizon,
            "dt": self.dt,
            "late_fraction": self.late_fraction,
            "saturated": self.saturated,
            "flags": self.flags,
            "pass": self.passed,
            "tight": self.tight,
            "rows": [r.to_json() for r in self.rows],
        }


def drifted_brownian_sup(
    kappa: float, paths: int, horizon: float, dt: float, seed: int, block: int = 8192
) -> tuple[np.ndarray, np.ndarray]:
    """Exact samples of sup_{t<=horizon}(B_t - kappa t) and the step holding each sup.

    Between grid points the path is a Brownian bridge, whose maximum is drawn
    exactly from its closed-form law, so the only approximation is the finite
    horizon.
    """
    steps = int(round(horizon / dt))
    gauss = NoiseStream(seed, 0, 1)
    unif = NoiseStream(seed, 1, 1)
    sup = np.empty(paths)
    where = np.empty(paths, dtype=int)
    sq = math.sqrt(dt)
    for b0 in range(0, paths, block):
        ids = range(b0, min(paths, b0 + block))
        z = gauss.normals(ids, 0, steps)[..., 0]
        u = unif.uniforms(ids, 0, steps)[..., 0]
        path = np.cumsum(sq * z - kappa * dt, axis=1)
        left = np.concatenate([np.zeros((len(ids), 1)), path[:, :-1]], axis=1)
        gap = path - left
        peak = 0.5 * (left + path + np.sqrt(gap**2 - 2 * dt * np.log1p(-u)))
        sup[b0 : b0 + len(ids)] = np.maximum(peak.max(axis=1), 0.0)
        where[b0 : b0 + len(ids)] = peak.argmax(axis=1)
    return sup, where


def martingale_tail_probe(
    kappa: float,
    R_grid: Iterable[float],
    paths: int = 100_000,
    horizon: float | None = None,
    seed: int = 0,
    dt: float | None = None,
    family_size: int | None = None,
) -> TailReport:
    """Estimate P(sup_t (M_t - kappa <M>_t) >= R) for Brownian M with Wilson intervals.

    Rows carry 95% intervals. The bound is asserted against a Bonferroni
    lower end over ``family_size`` comparisons (default: the R grid), since
    the bound is attained exactly and per-row tests would false-alarm.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    horizon = float(horizon if horizon is not None else 40.0 / kappa**2)
    if dt is None:
        dt = horizon / 400
    steps = int(round(horizon / dt))
    sup, where = drifted_brownian_sup(kappa, paths, horizon, dt, seed)
    late = float(np.mean(where >= 0.9 * steps))
    R_grid = [float(R) for R in R_grid]
    family = max(1, family_size or len(R_grid))
    rows = []
    for R in R_grid:
        hits = int(np.sum(sup >= R))
        lo, hi = proportion_confint(hits, paths, alpha=0.05, method="wilson")
        lo_fam, _ = proportion_confint(hits, paths, alpha=0.05 / family, method="wilson")
        exact = math.exp(-2 * kappa * R)
        se = math.sqrt(exact * (1 - exact) / paths)
        rows.append(TailRow(R, exact, exact, hits / paths, float(lo), float(hi), se, float(lo_fam)))
    return TailReport(kappa, paths, horizon, dt, rows, late, late <= 0.01)


# ----------------------------------------------------------------------------
# small statistical helpers shared by the verifiers


def mean_and_se(values: np.ndarray, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    se = values.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def noise_correlation(a: NoiseStream, b: NoiseStream, n: int, path: int = 0) -> float:
    x = a.normals([path], 0, n)[0, :, 0]
    y = b.normals([path], 0, n)[0, :, 0]
    return float(stats.pearsonr(x, y)[0])
