"""Exact finite-state Markov chain laboratory.

Invariant measures, tail liminf of ball-hitting probabilities, condition (C),
asymptotic stability, the measure-decomposition recursion and the
Lyapunov-plus-irreducibility implication, all computed with dense linear
algebra (or exact rationals where requested).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.stats import norm

ROW_TOL = 1e-12
LIMIT_TOL = 1e-12
MAX_STEPS = 10**6


class ConvergenceError(RuntimeError):
    pass


def _as_matrix(P) -> np.ndarray:
    a = np.asarray(P)
    if a.dtype == object:
        return a
    return np.asarray(a, dtype=float)


def _is_exact(a: np.ndarray) -> bool:
    return a.dtype == object


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Row-stochastic P over states with coordinates and two metrics.

    ``rho`` defaults to Euclidean distance between coordinates; ``d`` to rho.
    Object arrays of ``Fraction`` are accepted for exact arithmetic.
    """

    P: np.ndarray
    coords: np.ndarray | None = None
    rho: np.ndarray | None = None
    d: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        P = _as_matrix(self.P)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValueError("transition matrix must be square and nonempty")
        Pf = P.astype(float)
        if np.any(Pf < 0):
            raise ValueError("transition probabilities must be nonnegative")
        sums = P.sum(axis=1)
        bad = [i for i, s in enumerate(sums) if (s != 1 if _is_exact(P) else abs(s - 1) > ROW_TOL)]
        if bad:
            raise ValueError(f"rows {bad} do not sum to 1")
        n = P.shape[0]
        coords = np.arange(n, dtype=float)[:, None] if self.coords is None else np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[0] != n:
            raise ValueError("one coordinate per state required")
        rho = np.linalg.norm(coords[:, None] - coords[None], axis=-1) if self.rho is None else np.asarray(self.rho, float)
        d = rho if self.d is None else np.asarray(self.d, float)
        for m, label in ((rho, "rho"), (d, "d")):
            if m.shape != (n, n) or not np.allclose(m, m.T, rtol=0, atol=0):
                raise ValueError(f"metric {label} must be a symmetric {n}x{n} matrix")
            off = ~np.eye(n, dtype=bool)
            if np.any(np.diag(m) != 0) or np.any(m[off] <= 0):
                raise ValueError(f"metric {label} must vanish exactly on the diagonal only")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @cached_property
    def Pf(self) -> np.ndarray:
        return self.P.astype(float)

    def metric(self, which: str = "rho") -> np.ndarray:
        if which not in ("rho", "d"):
            raise ValueError("metric selector must be 'rho' or 'd'")
        return self.rho if which == "rho" else self.d

    def ball(self, z: int, eps: float, which: str = "rho") -> np.ndarray:
        return self.metric(which)[z] < eps

    # class structure

    @cached_property
    def _components(self) -> tuple[int, np.ndarray]:
        return connected_components(self.Pf > 0, directed=True, connection="strong")

    @cached_property
    def classes(self) -> list[np.ndarray]:
        k, labels = self._components
        return [np.flatnonzero(labels == c) for c in range(k)]

    @cached_property
    def closed_classes(self) -> list[np.ndarray]:
        adj = self.Pf > 0
        out = []
        for c in self.classes:
            inside = np.zeros(self.n, dtype=bool)
            inside[c] = True
            if not np.any(adj[c][:, ~inside]):
                out.append(c)
        return out

    def period(self, cls: np.ndarray) -> int:
        """gcd of level[u] + 1 - level[v] over edges u -> v inside the class."""
        sub = self.Pf[np.ix_(cls, cls)] > 0
        order, pred = breadth_first_order(sub, 0, directed=True, return_predecessors=True)
        level = np.full(len(cls), -1)
        level[0] = 0
        for v in order[1:]:
            level[v] = level[pred[v]] + 1
        g = 0
        for u, v in zip(*np.nonzero(sub)):
            g = math.gcd(g, int(level[u] + 1 - level[v]))
        return g or 1

    @cached_property
    def periods(self) -> list[int]:
        return [self.period(c) for c in self.closed_classes]

    @cached_property
    def period_lcm(self) -> int:
        return reduce(lambda a, b: a * b // math.gcd(a, b), self.periods, 1)

    @cached_property
    def limit_power(self) -> np.ndarray:
        """lim_n (P^d)^n with d the lcm of the closed-class periods, by repeated squaring."""
        Q = np.linalg.matrix_power(self.Pf, self.period_lcm)
        steps = 1
        while True:
            Q2 = Q @ Q
            steps *= 2
            if np.max(np.abs(Q2 - Q)) < LIMIT_TOL:
                return Q2
            if steps > MAX_STEPS:
                raise ConvergenceError(
                    f"power iteration did not converge after {steps} steps of P^{self.period_lcm}: "
                    f"last change {np.max(np.abs(Q2 - Q)):.3e}"
                )
            Q = Q2

    def residue_limits(self, target: np.ndarray) -> np.ndarray:
        """(d, n) array: lim_n P^{nd + r}(x, target) for each residue r."""
        ind = np.asarray(target, dtype=float)
        out = []
        vec = ind
        for r in range(self.period_lcm):
            out.append(self.limit_power @ vec)
            vec = self.Pf @ vec
        return np.array(out)

    def power(self, t: int) -> np.ndarray:
        return np.linalg.matrix_power(self.P if _is_exact(self.P) else self.Pf, t)

    def to_json(self) -> dict:
        metric = "euclidean" if self.rho is None else self.rho.tolist()
        return {"name": self.name, "states": self.coords.tolist(), "metric": metric, "d": self.d.tolist(), "P": self.Pf.tolist()}

    @classmethod
    def from_json(cls, rec: dict) -> "FiniteChain":
        rho = None if rec.get("metric", "euclidean") == "euclidean" else np.asarray(rec["metric"], float)
        d = rec.get("d")
        return cls(np.asarray(rec["P"], float), np.asarray(rec["states"], float), rho, None if d is None else np.asarray(d, float), rec.get("name", ""))


# ----------------------------------------------------------------------------
# invariant measures, liminf, condition (C), stability


def invariant_measures(chain: FiniteChain) -> list[np.ndarray]:
    """One extreme invariant probability vector per closed class."""
    out = []
    for c in chain.closed_classes:
        sub = chain.Pf[np.ix_(c, c)]
        A = sub.T - np.eye(len(c))
        A[-1] = 1.0
        b = np.zeros(len(c))
        b[-1] = 1.0
        pi_c = np.linalg.solve(A, b)
        pi_c = np.clip(pi_c, 0, None)
        pi = np.zeros(chain.n)
        pi[c] = pi_c / pi_c.sum()
        out.append(pi)
    return out


def liminf_hitting(chain: FiniteChain, x: int, ball: np.ndarray) -> float:
    ball = np.asarray(ball, dtype=bool)
    if not ball.any():
        raise ValueError("ball must be nonempty")
    return float(chain.residue_limits(ball)[:, x].min())


@dataclass
class ConditionC:
    value: float
    witness: int
    per_state: np.ndarray

    @property
    def holds(self) -> bool:
        return self.value > 0


def condition_C_exact(chain: FiniteChain, z: int, eps: float, which: str = "rho") -> ConditionC:
    if eps <= 0:
        raise ValueError("eps must be positive")
    per = chain.residue_limits(chain.ball(z, eps, which)).min(axis=0)
    per = np.where(np.abs(per) < LIMIT_TOL, 0.0, per)
    w = int(np.argmin(per))
    return ConditionC(float(per[w]), w, per)


@dataclass
class StabilityVerdict:
    stable: bool
    mu: np.ndarray | None
    reason: str


def asymptotic_stability_exact(chain: FiniteChain) -> StabilityVerdict:
    closed = chain.closed_classes
    if len(closed) != 1:
        return StabilityVerdict(False, None, f"{len(closed)} closed classes")
    if chain.periods[0] != 1:
        return StabilityVerdict(False, None, f"closed class has period {chain.periods[0]}")
    L = chain.limit_power
    if np.max(np.abs(L - L[0])) > 1e-10:
        return StabilityVerdict(False, None, "powers do not converge to a rank-one matrix")
    return StabilityVerdict(True, invariant_measures(chain)[0], "unique aperiodic closed class")


# ----------------------------------------------------------------------------
# batteries


def identity_chain(n: int = 2) -> FiniteChain:
    return FiniteChain(np.eye(n), name="identity")


def two_cycle() -> FiniteChain:
    return FiniteChain(np.array([[0.0, 1.0], [1.0, 0.0]]), name="two-cycle")


def positive_chain(n: int = 4, seed: int = 0) -> FiniteChain:
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.05, 1.0, (n, n))
    return FiniteChain(P / P.sum(axis=1, keepdims=True), name="positive")


def two_absorbing() -> FiniteChain:
    P = np.array([[1.0, 0, 0, 0], [0.3, 0.2, 0.5, 0], [0, 0.4, 0.2, 0.4], [0, 0, 0, 1.0]])
    return FiniteChain(P, name="two-absorbing")


def canonical_chains() -> list[FiniteChain]:
    return [identity_chain(), two_cycle(), positive_chain(), two_absorbing()]


def random_chain(rng: np.random.Generator, max_states: int = 7, name: str = "") -> FiniteChain:
    """Random sparse stochastic matrix; structures range from absorbing to periodic."""
    n = int(rng.integers(1, max_states + 1))
    style = rng.integers(0, 4)
    if style == 0:
        P = np.eye(n)[rng.permutation(n)]
        if rng.random() < 0.5:
            P = 0.7 * P + 0.3 * np.eye(n)[rng.permutation(n)]
    else:
        density = rng.uniform(0.15, 0.9)
        mask = rng.random((n, n)) < density
        mask[np.arange(n), rng.integers(0, n, n)] = True
        W = rng.exponential(1.0, (n, n)) * mask
        P = W / W.sum(axis=1, keepdims=True)
    return FiniteChain(P, name=name)


def random_battery(count: int, seed: int = 0, max_states: int = 7) -> list[FiniteChain]:
    rng = np.random.default_rng(seed)
    return [random_chain(rng, max_states, name=f"random-{i}") for i in range(count)]


def _resolution(chain: FiniteChain, which: str) -> float:
    m = chain.metric(which)
    off = m[~np.eye(chain.n, dtype=bool)]
    return float(off.min()) if off.size else math.inf


@dataclass
class ConsistencyRow:
    name: str
    stable: bool
    condition_C: float
    witness_z: int
    consistent: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def theorem4_consistency(chains: Iterable[FiniteChain], eps: float = 0.5, which: str = "rho", halt: bool = True) -> list[ConsistencyRow]:
    """Check stability <=> (exists z with condition (C) > 0) on every chain.

    eps is capped at half the smallest positive distance, so balls are
    singletons and eventual continuity is vacuous.
    """
    rows = []
    for ch in chains:
        e = min(eps, _resolution(ch, which) / 2)
        verdict = asymptotic_stability_exact(ch)
        best, wz = -1.0, 0
        for z in range(ch.n):
            c = condition_C_exact(ch, z, e, which)
            if c.value > best:
                best, wz = c.value, z
        row = ConsistencyRow(ch.name, verdict.stable, best, wz, verdict.stable == (best > 0))
        rows.append(row)
        if halt and not row.consistent:
            raise AssertionError(
                f"inconsistent chain {ch.name!r}: stable={verdict.stable} ({verdict.reason}), "
                f"max condition C={best} at z={wz}\nP=\n{ch.Pf}"
            )
    return rows


# ----------------------------------------------------------------------------
# measure decomposition


class DecompositionError(ValueError):
    pass


@dataclass
class DecompositionTrace:
    alpha: object
    delta: float
    k: int
    times: list[int]
    nus: dict[int, list[np.ndarray]]
    mus: dict[int, list[np.ndarray]]
    reconstruction_error: float
    ball: np.ndarray
    stop_rule: bool | None = None

    @property
    def residual_mass(self) -> object:
        return (1 - self.alpha) ** self.k

    def supports_ok(self) -> bool:
        return all(np.all(nu[~self.ball] == 0) for seq in self.nus.values() for nu in seq)

    def probabilities_ok(self, tol: float = 1e-12) -> bool:
        vecs = [v for seq in list(self.nus.values()) + list(self.mus.values()) for v in seq]
        return all(abs(float(v.sum()) - 1) <= tol and np.all(v.astype(float) >= -tol) for v in vecs)


def measure_decomposition(
    chain: FiniteChain,
    x1: int,
    x2: int,
    z: int,
    delta: float,
    alpha,
    k: int,
    which: str = "d",
    f_sup: float | None = None,
    eps: float | None = None,
    horizon: int = 10_000,
) -> DecompositionTrace:
    """Split P^{t_1+...+t_k} delta_{x_j} into ball-supported pieces nu_i and a remainder mu_k.

    Each t_i is the smallest step count at which both current measures put
    mass at least alpha (up to 1e-12) on B_d(z, delta).  Fraction matrices
    and a Fraction alpha give exact arithmetic.
    """
    exact = _is_exact(chain.P)
    P = chain.P if exact else chain.Pf
    ball = chain.ball(z, delta, which)
    if not 0 < alpha < 1:
        raise DecompositionError("alpha must lie in (0, 1)")
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0

    def delta_vec(i):
        v = np.array([zero] * chain.n, dtype=object) if exact else np.zeros(chain.n)
        v[i] = one
        return v

    starts = {1: delta_vec(x1), 2: delta_vec(x2)}
    current = dict(starts)
    nus = {1: [], 2: []}
    mus = {1: [], 2: []}
    times = []
    tol = 0 if exact else 1e-12
    for _ in range(k):
        pushed = {j: current[j] for j in current}
        t = 0
        while True:
            t += 1
            pushed = {j: pushed[j].dot(P) for j in pushed}
            if all(pushed[j][ball].sum() >= alpha - tol for j in pushed):
                break
            if t >= horizon:
                raise DecompositionError(f"alpha exceeds achievable ball mass within {horizon} steps")
        times.append(t)
        for j in (1, 2):
            mass = pushed[j][ball].sum()
            nu = pushed[j] * 0
            nu[ball] = pushed[j][ball] / mass
            mu = (pushed[j] - alpha * nu) / (1 - alpha)
            if not exact:
                mu = np.where(np.abs(mu) < 1e-15, 0.0, mu)
                mu = np.clip(mu, 0, None)
                mu = mu / mu.sum()
            nus[j].append(nu)
            mus[j].append(mu)
            current[j] = mu
    err = 0.0
    total = sum(times)
    for j in (1, 2):
        lhs = starts[j].dot(chain.power(total))
        rhs = (one - alpha) ** k * mus[j][-1]
        for i in range(k):
            rest = sum(times[i + 1 :])
            rhs = rhs + alpha * (one - alpha) ** i * nus[j][i].dot(chain.power(rest))
        err = max(err, float(np.max(np.abs((lhs - rhs).astype(float)))))
    stop = None
    if f_sup is not None and eps is not None:
        stop = bool(2 * float((1 - alpha) ** k) * f_sup < eps)
    return DecompositionTrace(alpha, delta, k, times, nus, mus, err, ball, stop)


# ----------------------------------------------------------------------------
# Lyapunov + irreducibility => condition (C)


class PremiseError(ValueError):
    pass


@dataclass
class LbcReport:
    lyapunov_premise: bool
    irreducibility_premise: bool
    radius_premise: bool
    p: float
    bound: float
    condition_C: float | None
    message: str

    @property
    def premises(self) -> bool:
        return self.lyapunov_premise and self.irreducibility_premise and self.radius_premise

    @property
    def conclusion(self) -> bool | None:
        return None if self.condition_C is None else self.condition_C >= self.bound - 1e-12

    def to_json(self) -> dict:
        return {**self.__dict__, "premises": self.premises, "conclusion": self.conclusion}


def prop_lbc_exact(
    chain: FiniteChain,
    V: np.ndarray,
    h: Callable[[float], float],
    C: float,
    z: int,
    eps: float,
    R: float,
    T: int,
    t_grid: Sequence[int] = range(0, 101),
    which: str = "rho",
) -> LbcReport:
    """Verify P^t V <= h(t) V + C on t_grid, irreducibility on {V <= R} at time T and R >= 2C;
    then assert condition (C) >= p/2."""
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("V must be nonnegative")
    P = chain.Pf
    PtV = V.copy()
    lyap_ok = True
    last = 0
    for t in sorted(t_grid):
        while last < t:
            PtV = P @ PtV
            last += 1
        if np.any(PtV > h(t) * V + C + 1e-12):
            lyap_ok = False
            break
    lyap_ok = lyap_ok and abs(h(10**6)) < 1e-9
    if not lyap_ok:
        return LbcReport(False, False, R >= 2 * C, 0.0, 0.0, None, "Lyapunov premise fails")
    level = V <= R
    ball = chain.ball(z, eps, which)
    hit = np.linalg.matrix_power(P, T) @ ball.astype(float)
    p = float(hit[level].min()) if level.any() else 0.0
    irr = p > 0
    radius = R >= 2 * C
    if not (irr and radius):
        msg = "irreducibility premise fails" if not irr else "radius premise fails: R < 2C"
        return LbcReport(True, irr, radius, p, p / 2, None, msg)
    value = condition_C_exact(chain, z, eps, which).value
    rep = LbcReport(True, True, True, p, p / 2, value, "premises verified")
    if not rep.conclusion:
        raise AssertionError(f"premises hold but condition (C) = {value} < p/2 = {p / 2} on chain {chain.name!r}")
    return rep


def birth_death_chain(n: int, up: float, down: float, name: str = "") -> FiniteChain:
    """Reflecting walk on {0, ..., n-1}."""
    P = np.zeros((n, n))
    for i in range(n):
        u = up if i < n - 1 else 0.0
        d = down if i > 0 else 0.0
        if i < n - 1:
            P[i, i + 1] = u
        if i > 0:
            P[i, i - 1] = d
        P[i, i] = 1 - u - d
    return FiniteChain(P, name=name or f"birth-death(n={n},up={up},down={down})")


def fit_geometric_lyapunov(chain: FiniteChain, V: np.ndarray, rho: float, t_max: int = 400) -> float:
    """Smallest C with P^t V <= rho^t V + C for t = 0..t_max."""
    PtV = np.asarray(V, float).copy()
    C = 0.0
    for t in range(t_max + 1):
        C = max(C, float(np.max(PtV - rho**t * V)))
        PtV = chain.Pf @ PtV
    return C


@dataclass
class BirthDeathCase:
    chain: FiniteChain
    rho: float
    C: float
    R: float
    T: int
    report: LbcReport

    def to_json(self) -> dict:
        return {"chain": self.chain.name, "rho": self.rho, "C": self.C, "R": self.R, "T": self.T, **self.report.to_json()}


def birth_death_battery(seed: int = 0, count: int = 24) -> list[BirthDeathCase]:
    """Reflecting walks with V(i) = i, geometric h fitted exactly, z = 0 and eps below the lattice step."""
    rng = np.random.default_rng(seed)
    out = []
    t_max = 400
    for i in range(count):
        n = int(rng.integers(3, 13))
        down = float(rng.uniform(0.2, 0.6))
        up = float(rng.uniform(0.0, min(down, 1 - down)))
        ch = birth_death_chain(n, up, down, name=f"bd-{i}")
        V = np.arange(n, dtype=float)
        rho = float(rng.uniform(0.8, 0.99))
        C = fit_geometric_lyapunov(ch, V, rho, t_max)
        R = float(max(2 * C, 1.0) * rng.choice([1.0, 1.5, 3.0]))
        T = int(rng.integers(n, 3 * n + 1))
        rep = prop_lbc_exact(ch, V, lambda t, r=rho: r**t, C, 0, 0.5, R, T, range(0, t_max + 1))
        out.append(BirthDeathCase(ch, rho, C, R, T, rep))
    return out


# ----------------------------------------------------------------------------
# grid kernel lab


@dataclass(frozen=True)
class AR1Kernel:
    """X' = contraction X + noise xi on [-half_width, half_width] with reflecting walls."""

    contraction: float = 0.5
    noise: float = 1.0
    half_width: float = 4.0
    images: int = 3


def _reflect(y: np.ndarray, L: float) -> np.ndarray:
    period = 4 * L
    y = np.mod(y + L, period)
    return np.where(y <= 2 * L, y, period - y) - L


def grid_kernel_lab(kernel: AR1Kernel, size: int, norm_tol: float = 1e-9) -> FiniteChain:
    """Cell-centred discretization; the coarse metric d = |arctan x - arctan y|."""
    L = kernel.half_width
    edges = np.linspace(-L, L, size + 1)
    centres = 0.5 * (edges[1:] + edges[:-1])
    mean = kernel.contraction * centres
    if kernel.noise == 0:
        target = np.clip(np.searchsorted(edges, _reflect(mean, L), side="right") - 1, 0, size - 1)
        P = np.zeros((size, size))
        P[np.arange(size), target] = 1.0
    else:
        P = np.zeros((size, size))
        for m in range(-kernel.images, kernel.images + 1):
            shift = 4 * L * m
            for lo, hi in ((edges[:-1] + shift, edges[1:] + shift), (2 * L - edges[1:] + shift, 2 * L - edges[:-1] + shift)):
                a = (lo[None, :] - mean[:, None]) / kernel.noise
                b = (hi[None, :] - mean[:, None]) / kernel.noise
                P += norm.cdf(b) - norm.cdf(a)
        sums = P.sum(axis=1)
        if np.max(np.abs(sums - 1)) > norm_tol:
            raise ValueError(f"kernel rows fail normalization: max defect {np.max(np.abs(sums - 1)):.2e}")
        P = P / sums[:, None]
    at = np.arctan(centres)
    d = np.abs(at[:, None] - at[None, :])
    return FiniteChain(P, centres, None, d, name=f"ar1-grid-{size}")


def coarse_grain(pi: np.ndarray, factor: int) -> np.ndarray:
    return pi.reshape(-1, factor).sum(axis=1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def lipschitz_dictionary(chain: FiniteChain, count: int = 6, seed: int = 0, which: str = "rho") -> tuple[np.ndarray, np.ndarray]:
    """tanh(c (x - w)) on state coordinates (Lipschitz c in rho); for ``d``, tanh(c (arctan x - w))."""
    rng = np.random.default_rng([seed, 0x6A1D])
    x = chain.coords[:, 0]
    base = x if which == "rho" else np.arctan(x)
    span = float(base.max() - base.min()) or 1.0
    cs = rng.uniform(0.5, 2.0, count)
    ws = rng.uniform(base.min(), base.max(), count)
    F = np.tanh(cs[:, None] * (base[None, :] - ws[:, None]) * (2.0 / span if which == "d" else 1.0))
    lips = cs * (2.0 / span if which == "d" else 1.0)
    return F, lips


def continuity_profile(
    chain: FiniteChain, z: int, offsets: Sequence[int], n_tail: int, n_end: int, which: str = "rho", count: int = 6, seed: int = 0
) -> dict:
    """sup_{n in [n_tail, n_end]} max_f |P^n f(z + offset) - P^n f(z)| per grid offset."""
    F, lips = lipschitz_dictionary(chain, count, seed, which)
    Pn = np.linalg.matrix_power(chain.Pf, n_tail)
    vals = {int(o): 0.0 for o in offsets}
    for n in range(n_tail, n_end + 1):
        G = F @ Pn.T
        for o in offsets:
            x = z + int(o)
            vals[int(o)] = max(vals[int(o)], float(np.max(np.abs(G[:, x] - G[:, z]))))
        Pn = Pn @ chain.Pf
    dist = {int(o): float(chain.metric(which)[z, z + int(o)]) for o in offsets}
    return {"offsets": [int(o) for o in offsets], "distance": [dist[int(o)] for o in offsets], "D": [vals[int(o)] for o in offsets], "lipschitz": float(lips.max())}


def write_jsonl(path, rows: Iterable) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_json() if hasattr(r, "to_json") else r, sort_keys=True, default=float) + "\n")
