"""Truncated Fourier fields on the periodic torus.

Fields are stored as complex coefficients û(k) over the retained lattice
0 < |k|_inf <= M, one column per field component, with the convention
u(x) = sum_k û(k) exp(i k.x). The module provides:

- ``ModeSet`` and ``SpectralState`` with JSON round-trips
- weighted Sobolev norms ``sum |k|^{2r} |û(k)|^2`` and inner products
- eigenvalue-level projections (ties kept together) and fractional powers
- the Leray-projected convective term, computed pseudo-spectrally on a
  grid fine enough that the Galerkin truncation is alias-free
- the transport term ``psi(0).grad(phi)`` and empirical trilinear constants

Array-level kernels (suffix ``_array``) accept any number of leading batch
axes and are what the integrators call; the ``SpectralState`` wrappers are
for single fields.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft

ORDERING = "lex-|k|2"
REALITY_TOL = 1e-12
CD_SAFETY = 1.5
CD_FLOOR = 0.1


class ProjectionRankError(ValueError):
    """Requested rank exceeds the number of retained modes."""

    def __init__(self, rank: int, size: int):
        super().__init__(f"projection rank beyond truncation: N={rank} > {size} retained modes")


@dataclass(frozen=True)
class ModeSet:
    """Retained wavevectors ``0 < |k|_inf <= cutoff`` ordered by (|k|^2, k1, k2)."""

    dim: int
    cutoff: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be a positive integer, got {self.cutoff}")

    @cached_property
    def wavevectors(self) -> np.ndarray:
        span = range(-self.cutoff, self.cutoff + 1)
        pts = [k for k in itertools.product(span, repeat=self.dim) if any(k)]
        pts.sort(key=lambda k: (sum(c * c for c in k), *k))
        out = np.array(pts, dtype=np.int64).reshape(len(pts), self.dim)
        out.flags.writeable = False
        return out

    @property
    def size(self) -> int:
        return len(self.wavevectors)

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 per mode as floats."""
        return np.sum(self.wavevectors.astype(float) ** 2, axis=1)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def conj_index(self) -> np.ndarray:
        lookup = {tuple(k): i for i, k in enumerate(self.wavevectors)}
        return np.array([lookup[tuple(-k)] for k in self.wavevectors])

    @cached_property
    def positive(self) -> np.ndarray:
        """Indices of one representative per pair {k, -k} (first nonzero entry > 0)."""
        kv = self.wavevectors
        first = np.where(kv[:, 0] != 0, kv[:, 0], kv[:, -1])
        return np.flatnonzero(first > 0)

    def weight(self, r: float) -> np.ndarray:
        """Sobolev weight |k|^{2r} per mode."""
        return self.k2**r

    @cached_property
    def spectrum(self) -> np.ndarray:
        """Ascending |k|^2 with multiplicity (already the enumeration order)."""
        return self.k2.copy()

    def low_mask(self, rank: int) -> np.ndarray:
        """Modes whose |k|^2 does not exceed the rank-th eigenvalue level."""
        return self.k2 <= eigenvalue_level(rank, self)

    @cached_property
    def grid(self) -> "_Grid":
        return _Grid(self)

    def to_json(self) -> dict:
        return {"dim": self.dim, "cutoff": self.cutoff, "ordering": ORDERING}


def eigenvalue_level(rank: int, modes: ModeSet, power: float = 2.0) -> float:
    """The rank-th entry (1-based) of the sorted |k|^power list with multiplicity."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > modes.size:
        raise ProjectionRankError(rank, modes.size)
    values = modes.k2 if power == 2 else modes.kabs**power
    return float(np.sort(values)[rank - 1])


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Complex coefficients ``coeffs[mode, component]`` on a ``ModeSet``."""

    modes: ModeSet
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] != self.modes.size:
            raise ValueError(
                f"coefficients must have shape ({self.modes.size}, ncomp), got {np.shape(self.coeffs)}"
            )
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        if self.real:
            err = reality_defect(c, self.modes)
            if err > REALITY_TOL * max(1.0, float(np.max(np.abs(c), initial=0.0))):
                raise ValueError(f"reality constraint violated by {err:.3e}")

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def zeros(cls, modes: ModeSet, ncomp: int = 2) -> "SpectralState":
        return cls(modes, np.zeros((modes.size, ncomp), dtype=complex))

    def replace(self, coeffs: np.ndarray) -> "SpectralState":
        return SpectralState(self.modes, coeffs, self.real)

    def __add__(self, other: "SpectralState") -> "SpectralState":
        return self.replace(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralState") -> "SpectralState":
        return self.replace(self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralState":
        return self.replace(self.coeffs * scalar)

    __rmul__ = __mul__

    def divergence(self) -> np.ndarray:
        """k . û(k) per mode (2D fields only)."""
        if self.ncomp != self.modes.dim:
            raise ValueError("divergence needs one component per spatial dimension")
        return np.sum(self.modes.wavevectors * self.coeffs, axis=1)

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.divergence()), initial=0.0) <= tol * max(1.0, np.abs(self.coeffs).max(initial=0.0)))

    def to_json(self) -> dict:
        return {
            **self.modes.to_json(),
            "components": self.ncomp,
            "real": self.real,
            "coeffs": [[float(z.real), float(z.imag)] for z in self.coeffs.ravel()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, record: dict) -> "SpectralState":
        if record.get("ordering", ORDERING) != ORDERING:
            raise ValueError(f"unsupported mode ordering {record['ordering']!r}")
        modes = ModeSet(int(record["dim"]), int(record["cutoff"]))
        pairs = np.asarray(record["coeffs"], dtype=float).reshape(-1, 2)
        flat = pairs[:, 0] + 1j * pairs[:, 1]
        ncomp = int(record.get("components", len(flat) // modes.size))
        return cls(modes, flat.reshape(modes.size, ncomp), bool(record.get("real", True)))

    @classmethod
    def loads(cls, text: str) -> "SpectralState":
        return cls.from_json(json.loads(text))


def reality_defect(coeffs: np.ndarray, modes: ModeSet) -> float:
    """max |c(-k) - conj(c(k))| over the last two (mode, component) axes."""
    c = np.asarray(coeffs)
    return float(np.max(np.abs(c[..., modes.conj_index, :] - np.conj(c)), initial=0.0))


# ----------------------------------------------------------------------------
# norms, inner products, projections


def inner_array(a: np.ndarray, b: np.ndarray, modes: ModeSet, r: float = 0.0) -> np.ndarray:
    """Real part of sum |k|^{2r} a(k).conj(b(k)) over the trailing (mode, component) axes."""
    w = modes.weight(r)[:, None]
    return np.sum(w * (a * np.conj(b)).real, axis=(-2, -1))


def norm_array(a: np.ndarray, modes: ModeSet, r: float = 0.0) -> np.ndarray:
    w = modes.weight(r)[:, None]
    return np.sqrt(np.sum(w * (a.real**2 + a.imag**2), axis=(-2, -1)))


def inner(u: SpectralState, v: SpectralState, r: float = 0.0) -> float:
    return float(inner_array(u.coeffs, v.coeffs, u.modes, r))


def sobolev_norm(state: SpectralState, r: float = 0.0) -> float:
    """sqrt(sum_k |k|^{2r} |û(k)|^2); r=0 is the energy norm, r=1 the enstrophy norm."""
    return float(norm_array(state.coeffs, state.modes, r))


def project_low(state: SpectralState, rank: int) -> SpectralState:
    """Keep modes at or below the rank-th eigenvalue level."""
    mask = state.modes.low_mask(rank)
    return state.replace(np.where(mask[:, None], state.coeffs, 0))


def project_high(state: SpectralState, rank: int) -> SpectralState:
    mask = state.modes.low_mask(rank)
    return state.replace(np.where(mask[:, None], 0, state.coeffs))


def fractional_laplacian_array(a: np.ndarray, modes: ModeSet, s: float) -> np.ndarray:
    return a * (modes.kabs**s)[:, None]


def fractional_laplacian(state: SpectralState, s: float) -> SpectralState:
    """Multiply each coefficient by |k|^s."""
    return state.replace(fractional_laplacian_array(state.coeffs, state.modes, s))


def leray_array(a: np.ndarray, modes: ModeSet) -> np.ndarray:
    """Remove the component of each coefficient parallel to k."""
    k = modes.wavevectors.astype(float)
    par = np.sum(a * k, axis=-1, keepdims=True) / modes.k2[:, None]
    return a - par * k


# ----------------------------------------------------------------------------
# pseudo-spectral products


class _Grid:
    """Real-FFT layout for a 2D mode set on an n x n grid with n > 3M (alias-free quadratic products)."""

    def __init__(self, modes: ModeSet):
        if modes.dim != 2:
            raise ValueError("the convective term is implemented for 2D fields only")
        self.modes = modes
        self.n = scipy.fft.next_fast_len(3 * modes.cutoff + 1)
        kv = modes.wavevectors
        self.put = np.flatnonzero(kv[:, 1] >= 0)
        self.put_rows = kv[self.put, 0] % self.n
        self.put_cols = kv[self.put, 1]
        sign = np.where(kv[:, 1] >= 0, 1, -1)
        self.read_rows = (sign * kv[:, 0]) % self.n
        self.read_cols = sign * kv[:, 1]
        self.read_conj = sign < 0

    def to_physical(self, a: np.ndarray) -> np.ndarray:
        """(..., modes) complex -> (..., n, n) real."""
        n = self.n
        g = np.zeros(a.shape[:-1] + (n, n // 2 + 1), dtype=complex)
        g[..., self.put_rows, self.put_cols] = a[..., self.put]
        return scipy.fft.irfft2(g, s=(n, n), norm="forward")

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        """(..., n, n) real -> (..., modes) complex, truncated to the mode set."""
        g = scipy.fft.rfft2(f, norm="forward")
        out = g[..., self.read_rows, self.read_cols]
        return np.where(self.read_conj, np.conj(out), out)


def convection_array(u: np.ndarray, v: np.ndarray, modes: ModeSet) -> np.ndarray:
    """Galerkin-truncated (u.grad)v, not projected. Shapes (..., modes, 2)."""
    grid = modes.grid
    k1, k2 = modes.wavevectors.T.astype(float)
    v1, v2 = v[..., 0], v[..., 1]
    fields = np.stack([u[..., 0], u[..., 1], 1j * k1 * v1, 1j * k2 * v1, 1j * k1 * v2, 1j * k2 * v2], axis=-2)
    p = grid.to_physical(fields)
    conv = np.stack(
        [p[..., 0, :, :] * p[..., 2, :, :] + p[..., 1, :, :] * p[..., 3, :, :],
         p[..., 0, :, :] * p[..., 4, :, :] + p[..., 1, :, :] * p[..., 5, :, :]],
        axis=-3,
    )
    return np.moveaxis(grid.to_spectral(conv), -2, -1)


def ns_bilinear_array(u: np.ndarray, v: np.ndarray, modes: ModeSet) -> np.ndarray:
    """B(u, v) = -P_L P_M (u.grad v)."""
    return -leray_array(convection_array(u, v, modes), modes)


def ns_nonlinearity_array(u: np.ndarray, modes: ModeSet) -> np.ndarray:
    """B(u, u) through the vorticity form curl(u.grad u) = u.grad(curl u); five transforms instead of eight."""
    grid = modes.grid
    k = modes.wavevectors.astype(float)
    k1, k2 = k[:, 0], k[:, 1]
    w = 1j * (k1 * u[..., 1] - k2 * u[..., 0])
    fields = np.stack([u[..., 0], u[..., 1], 1j * k1 * w, 1j * k2 * w], axis=-2)
    phys = grid.to_physical(fields)
    adv = phys[..., 0, :, :] * phys[..., 2, :, :] + phys[..., 1, :, :] * phys[..., 3, :, :]
    curl_b = -grid.to_spectral(adv)
    return np.stack([1j * k2 * curl_b, -1j * k1 * curl_b], axis=-1) / modes.k2[:, None]


def _require_divergence_free(state: SpectralState) -> None:
    if state.ncomp != 2 or state.modes.dim != 2:
        raise ValueError("the convective term needs a 2D velocity field with two components")
    if not state.is_divergence_free():
        raise ValueError("input field is not divergence-free")


def ns_nonlinearity(u: SpectralState, v: SpectralState | None = None) -> SpectralState:
    """-P_L P_M(u.grad v), with v defaulting to u; both inputs must be divergence-free."""
    _require_divergence_free(u)
    if v is None:
        return u.replace(ns_nonlinearity_array(u.coeffs, u.modes))
    _require_divergence_free(v)
    return u.replace(ns_bilinear_array(u.coeffs, v.coeffs, u.modes))


def point_value_array(a: np.ndarray) -> np.ndarray:
    """Field value at the origin, sum_k û(k); shape (..., comp)."""
    return np.sum(a, axis=-2).real


def transport_array(psi: np.ndarray, phi: np.ndarray, modes: ModeSet) -> np.ndarray:
    """psi(0).grad(phi): mode k of phi rotated by i (psi(0).k)."""
    rate = point_value_array(psi) @ modes.wavevectors.T.astype(float)
    return 1j * rate[..., :, None] * phi


def lagrangian_nonlinearity(u: SpectralState, v: SpectralState | None = None) -> SpectralState:
    """u(0).grad(v) with v defaulting to u."""
    other = u if v is None else v
    return u.replace(transport_array(u.coeffs, other.coeffs, u.modes))


def point_evaluation_constant(modes: ModeSet, r: float) -> float:
    """Smallest C with |u(0)| <= C ||u||_r on the truncation: sqrt(sum |k|^{-2r})."""
    return float(np.sqrt(np.sum(modes.weight(-r))))


# ----------------------------------------------------------------------------
# random fields and trilinear constants


def random_field_array(
    modes: ModeSet,
    rng: np.random.Generator,
    count: int | None = None,
    ncomp: int = 2,
    solenoidal: bool = True,
    slope: float = 0.0,
) -> np.ndarray:
    """Gaussian real fields with spectrum |k|^{-slope}; divergence-free 2D if ``solenoidal``."""
    batch = () if count is None else (count,)
    pos = modes.positive
    kv = modes.wavevectors[pos].astype(float)
    amp = modes.kabs[pos] ** (-slope)
    if solenoidal:
        perp = np.stack([-kv[:, 1], kv[:, 0]], axis=1) / modes.kabs[pos][:, None]
        z = rng.standard_normal(batch + (len(pos), 2)) @ np.array([1, 1j]) / np.sqrt(2)
        half = (amp * z)[..., None] * perp
    else:
        z = rng.standard_normal(batch + (len(pos), ncomp, 2)) @ np.array([1, 1j]) / np.sqrt(2)
        half = amp[:, None] * z
    out = np.zeros(batch + (modes.size, half.shape[-1]), dtype=complex)
    out[..., pos, :] = half
    out[..., modes.conj_index[pos], :] = np.conj(half)
    return out


def random_state(modes: ModeSet, seed: int, **kwargs) -> SpectralState:
    return SpectralState(modes, random_field_array(modes, np.random.default_rng(seed), **kwargs))


@dataclass(frozen=True)
class TrilinearCalibration:
    estimate: float
    max_ratio: float
    samples_used: int
    ratios: np.ndarray = field(repr=False)


def _calibrate(ratio_fn, modes, samples, seed, pairs, slopes=(0.0, 1.0, 2.0)) -> TrilinearCalibration:
    if samples < 1 and not pairs:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    us, vs = [], []
    if pairs:
        for u, v in pairs:
            us.append(np.asarray(getattr(u, "coeffs", u)))
            vs.append(np.asarray(getattr(v, "coeffs", v)))
    else:
        for _ in range(samples):
            su, sv = rng.choice(slopes, size=2)
            us.append(random_field_array(modes, rng, slope=su))
            vs.append(random_field_array(modes, rng, slope=sv))
    num, den = ratio_fn(np.array(us), np.array(vs))
    ok = den > 1e-300
    if not np.any(ok):
        raise ValueError("all calibration samples were degenerate (zero denominators)")
    ratios = np.abs(num[ok]) / den[ok]
    top = float(ratios.max())
    return TrilinearCalibration(max(CD_SAFETY * top, CD_FLOOR), top, int(ok.sum()), ratios)


def calibrate_CD(modes: ModeSet, samples: int, seed: int, pairs=None) -> float:
    """Empirical max of |<v.grad u, v>| / (|v| ||v|| ||u||) over random fields, times 1.5, floored at 0.1.

    ``pairs`` replaces the random draw with explicit (u, v) fields.
    """
    return calibrate_trilinear(modes, samples, seed, pairs=pairs).estimate


def calibrate_trilinear(modes: ModeSet, samples: int, seed: int, pairs=None) -> TrilinearCalibration:
    def ratio(u, v):
        num = inner_array(convection_array(v, u, modes), v, modes)
        den = norm_array(v, modes) * norm_array(v, modes, 1.0) * norm_array(u, modes, 1.0)
        return num, den

    return _calibrate(ratio, modes, samples, seed, pairs)


def calibrate_voigt_constant(modes: ModeSet, gamma: float, samples: int, seed: int, pairs=None) -> TrilinearCalibration:
    """Constant C_T with |<v_g.grad u_g, v_g>| <= C_T ||v||^2_{-g/2} ||u||_{1-g/2}, u_g = Lambda^{-g} u.

    This is the only trilinear term left after pairing the regularized
    difference equation with v in the H^{-g/2} inner product.
    """

    def ratio(u, v):
        ug = fractional_laplacian_array(u, modes, -gamma)
        vg = fractional_laplacian_array(v, modes, -gamma)
        num = inner_array(convection_array(vg, ug, modes), vg, modes)
        den = norm_array(v, modes, -gamma / 2) ** 2 * norm_array(u, modes, 1.0 - gamma / 2)
        return num, den

    return _calibrate(ratio, modes, samples, seed, pairs)
