"""Model specifications: noise families, drifts and hypothesis checks.

Three spectral models share one interface consumed by the integrator:

- ``NSModelSpec``: 2D incompressible Navier-Stokes on the torus
- ``EVModelSpec``: damped Euler-Voigt with regularization Lambda^{-gamma}
- ``LagrangianModelSpec``: linear dissipation per mode plus the transport
  term u(0).grad(u), state norm X^m

``ScalarModelSpec`` covers the one-dimensional test systems (OU process and a
noiseless double well) used as oracles by the verifiers.

Every model exposes ``rates`` (exact linear damping per mode), ``explicit``
(the rest of the drift), ``amplitudes`` (per-channel noise amplitudes) and
``synthesize`` (channel coordinates to a field).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import spectral as sp
from .spectral import ModeSet, SpectralState

MODEL_SCHEMA = "ergoverify-model-v1"
AUDIT_SLACK = 1e-6


class RangeConditionError(ValueError):
    pass


# ----------------------------------------------------------------------------
# channel bases


@dataclass(frozen=True, eq=False)
class ChannelBasis:
    """Real orthonormal basis sqrt(2)cos(k.x) n, sqrt(2)sin(k.x) n over one k per {k,-k} pair.

    ``solenoidal`` uses n = k_perp/|k| (one direction per mode, 2D velocity);
    otherwise n runs over the coordinate axes of an ``ncomp``-vector field.
    Channels are ordered by mode, then direction, then (cos, sin).
    """

    modes: ModeSet
    solenoidal: bool = True
    ncomp: int = 2

    def __post_init__(self):
        if self.solenoidal and (self.modes.dim != 2 or self.ncomp != 2):
            raise ValueError("solenoidal channels need a 2D mode set with two components")

    @property
    def ndir(self) -> int:
        return 1 if self.solenoidal else self.ncomp

    @property
    def size(self) -> int:
        return 2 * self.ndir * len(self.modes.positive)

    @cached_property
    def perp(self) -> np.ndarray:
        pos = self.modes.positive
        kv = self.modes.wavevectors[pos].astype(float)
        return np.stack([-kv[:, 1], kv[:, 0]], axis=1) / self.modes.kabs[pos][:, None]

    @cached_property
    def mode_of_channel(self) -> np.ndarray:
        return np.repeat(self.modes.positive, 2 * self.ndir)

    @cached_property
    def k2(self) -> np.ndarray:
        return self.modes.k2[self.mode_of_channel]

    def synthesize(self, x: np.ndarray) -> np.ndarray:
        """Channel coordinates (..., channels) -> coefficients (..., modes, ncomp)."""
        npos = len(self.modes.positive)
        pairs = x.reshape(x.shape[:-1] + (npos, self.ndir, 2))
        z = (pairs[..., 0] - 1j * pairs[..., 1]) / np.sqrt(2)
        half = z[..., 0, None] * self.perp if self.solenoidal else z
        out = np.zeros(x.shape[:-1] + (self.modes.size, self.ncomp), dtype=complex)
        out[..., self.modes.positive, :] = half
        out[..., self.modes.conj_index[self.modes.positive], :] = np.conj(half)
        return out

    def analyze(self, w: np.ndarray) -> np.ndarray:
        """Coefficients -> channel coordinates <w, e_j>; exact inverse of ``synthesize`` on its range."""
        half = w[..., self.modes.positive, :]
        s = np.sum(half * self.perp, axis=-1)[..., None] if self.solenoidal else half
        pairs = np.stack([np.sqrt(2) * s.real, -np.sqrt(2) * s.imag], axis=-1)
        return pairs.reshape(w.shape[:-2] + (self.size,))


# ----------------------------------------------------------------------------
# noise families


NoiseKind = Literal["additive", "saturated", "low_mode"]


@dataclass(frozen=True, eq=False)
class NoiseFamily:
    """Diagonal noise sigma(u) = sum_j a_j m_j(u) e_j on a channel basis.

    ``saturated``: m_j = floor + (1 - floor)/(1 + r/scale) on every channel;
    ``low_mode``: sqrt(q(u)) with sqrt(q) = sqrt(q_min) + (sqrt(q_max) - sqrt(q_min)) r/(scale + r)
    on channels with |k| <= low_cutoff and 1 elsewhere; ``additive``: m_j = 1.
    In both state-dependent kinds r = ||P u||_{norm_exponent}, where P keeps
    the modes with |k| <= low_cutoff.
    """

    kind: NoiseKind
    basis: ChannelBasis
    amplitudes: np.ndarray
    scale: float = 1.0
    floor: float = 0.0
    q_min: float = 1.0
    q_max: float = 1.0
    low_cutoff: float = np.inf
    norm_exponent: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float).copy()
        if a.shape != (self.basis.size,):
            raise ValueError(f"need {self.basis.size} channel amplitudes, got shape {a.shape}")
        if np.any(a < 0):
            raise ValueError("channel amplitudes must be nonnegative")
        if self.kind not in ("additive", "saturated", "low_mode"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale <= 0 or not 0 <= self.floor <= 1 or not 0 < self.q_min <= self.q_max:
            raise ValueError("invalid noise family parameters")
        a.flags.writeable = False
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def decaying(
        cls,
        kind: NoiseKind,
        basis: ChannelBasis,
        total: float,
        decay: float = 1.0,
        bound_exponent: float = 0.0,
        lipschitz: float | None = None,
        **kwargs,
    ) -> "NoiseFamily":
        """Amplitudes a_j ~ |k_j|^{-decay} scaled so sum a_j^2 |k_j|^{2 bound_exponent} = total.

        If ``lipschitz`` is given the saturation scale is solved from it.
        """
        shape = basis.k2 ** (-decay / 2)
        norm = np.sum(shape**2 * basis.k2**bound_exponent)
        amps = shape * np.sqrt(total / norm) if total > 0 else np.zeros_like(shape)
        fam = cls(kind, basis, amps, **kwargs)
        if lipschitz is not None and kind != "additive":
            slope = fam.multiplier_slope * fam.scale
            mass = np.sum(amps**2 * basis.k2**fam.norm_exponent * (slope > 0))
            scale = float(np.max(slope)) * np.sqrt(mass / lipschitz) if lipschitz > 0 else np.inf
            fam = cls(kind, basis, amps, **{**kwargs, "scale": scale})
        return fam

    @cached_property
    def low_channels(self) -> np.ndarray:
        return self.basis.k2 <= self.low_cutoff**2

    @cached_property
    def low_modes(self) -> np.ndarray:
        return self.basis.modes.k2 <= self.low_cutoff**2

    @cached_property
    def multiplier_slope(self) -> np.ndarray:
        """Lipschitz constant of each channel multiplier as a function of r."""
        if self.kind == "additive":
            return np.zeros(self.basis.size)
        if self.kind == "saturated":
            return np.full(self.basis.size, (1 - self.floor) / self.scale)
        return np.where(self.low_channels, (np.sqrt(self.q_max) - np.sqrt(self.q_min)) / self.scale, 0.0)

    @cached_property
    def multiplier_range(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.basis.size
        if self.kind == "additive":
            return np.ones(n), np.ones(n)
        if self.kind == "saturated":
            return np.full(n, self.floor), np.ones(n)
        lo = np.where(self.low_channels, np.sqrt(self.q_min), 1.0)
        hi = np.where(self.low_channels, np.sqrt(self.q_max), 1.0)
        return lo, hi

    def argument_array(self, u: np.ndarray) -> np.ndarray:
        low = np.where(self.low_modes[:, None], u, 0)
        return sp.norm_array(low, self.basis.modes, self.norm_exponent)

    def multipliers_array(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "additive":
            return np.ones(u.shape[:-2] + (self.basis.size,))
        r = self.argument_array(u)[..., None]
        if self.kind == "saturated":
            g = self.floor + (1 - self.floor) / (1 + r / self.scale)
            return np.broadcast_to(g, r.shape[:-1] + (self.basis.size,))
        sq_lo, sq_hi = np.sqrt(self.q_min), np.sqrt(self.q_max)
        low = sq_lo + (sq_hi - sq_lo) * r / (self.scale + r)
        return np.where(self.low_channels, low, 1.0)

    def amplitudes_array(self, u: np.ndarray) -> np.ndarray:
        return self.amplitudes * self.multipliers_array(u)

    # hypothesis constants, exact for the diagonal construction

    def bound(self, exponent: float = 0.0) -> float:
        """sup_u sum_j |sigma_j(u)|^2_{exponent}."""
        hi = self.multiplier_range[1]
        return float(np.sum((self.amplitudes * hi) ** 2 * self.basis.k2**exponent))

    def lipschitz(self) -> float:
        """L with |sigma(u) - sigma(v)|^2 <= L |u - v|^2, both in the norm_exponent norm."""
        return float(np.sum((self.amplitudes * self.multiplier_slope) ** 2 * self.basis.k2**self.norm_exponent))

    def pseudo_inverse_bound(self, required: np.ndarray, exponent: float = 0.0) -> float:
        """C0 with |beta| <= C0 |w|_{exponent} for w supported on the required channels."""
        lo = self.amplitudes[required] * self.multiplier_range[0][required]
        if lo.size == 0:
            return 0.0
        with np.errstate(divide="ignore"):
            return float(np.max(1.0 / (lo * self.basis.k2[required] ** (exponent / 2))))


def sigma_eval(family: NoiseFamily, u: SpectralState) -> np.ndarray:
    """Per-channel fields sigma_j(u) as an array (channels, modes, ncomp)."""
    amps = family.amplitudes_array(u.coeffs)
    return family.basis.synthesize(np.diag(amps))


def sigma_pseudo_inverse_array(family: NoiseFamily, u: np.ndarray, w: np.ndarray, required: np.ndarray) -> np.ndarray:
    amps = family.amplitudes_array(u)
    if np.any((amps == 0) & required):
        raise RangeConditionError("range condition violated: vanishing amplitude on a controlled channel")
    coords = family.basis.analyze(w)
    safe = np.where(required, amps, 1.0)
    return np.where(required, coords / safe, 0.0)


def sigma_pseudo_inverse(family: NoiseFamily, u: SpectralState, w_low: SpectralState, rank: int) -> np.ndarray:
    """Channel weights beta with sigma(u) beta = w_low for w_low in the span of the rank-N modes."""
    required = family.basis.k2 <= sp.eigenvalue_level(rank, u.modes)
    return sigma_pseudo_inverse_array(family, u.coeffs, w_low.coeffs, required)


# ----------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class HypothesisCheck:
    holds: bool
    margin: float
    threshold: float
    level: float
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "threshold": self.threshold, "level": self.level, **self.detail}


class SpectralModel:
    """Shared plumbing; subclasses set modes, noise, rank and the exponents."""

    kind: str
    modes: ModeSet
    noise: NoiseFamily
    rank: int
    nonlinear: bool
    state_exponent: float = 0.0
    metric_exponent: float = 0.0
    dtype = complex

    @property
    def basis(self) -> ChannelBasis:
        return self.noise.basis

    @property
    def channels(self) -> int:
        return self.basis.size

    @property
    def state_shape(self) -> tuple[int, int]:
        return (self.modes.size, self.basis.ncomp)

    def zero_state(self) -> SpectralState:
        return SpectralState.zeros(self.modes, self.basis.ncomp)

    def as_array(self, x) -> np.ndarray:
        if isinstance(x, SpectralState):
            if x.modes != self.modes or x.ncomp != self.basis.ncomp:
                raise ValueError("state does not live on this model's mode set")
            return np.array(x.coeffs)
        a = np.asarray(x, dtype=complex)
        if a.shape[-2:] != self.state_shape:
            raise ValueError(f"state shape {a.shape} incompatible with {self.state_shape}")
        return a

    def as_state(self, a) -> SpectralState:
        return SpectralState(self.modes, self.as_array(a))

    def norm_array(self, x: np.ndarray, r: float) -> np.ndarray:
        return sp.norm_array(x, self.modes, r)

    def metric_array(self, x: np.ndarray) -> np.ndarray:
        return self.norm_array(x, self.metric_exponent)

    def pairing_array(self, x: np.ndarray, w: np.ndarray, r: float) -> np.ndarray:
        return sp.inner_array(x, w, self.modes, r)

    def functionals(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {
            "abs_u": self.norm_array(x, self.state_exponent),
            "norm_u": self.norm_array(x, self.state_exponent + 1),
        }

    def lyapunov_array(self, x: np.ndarray) -> np.ndarray:
        return self.norm_array(x, self.state_exponent) ** 2

    @cached_property
    def low_mask(self) -> np.ndarray:
        return self.modes.low_mask(self.rank)

    @cached_property
    def low_channels(self) -> np.ndarray:
        return self.basis.k2 <= sp.eigenvalue_level(self.rank, self.modes)

    @property
    def level(self) -> float:
        return sp.eigenvalue_level(self.rank, self.modes)

    def project_low_array(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.low_mask[:, None], x, 0)

    def project_high_array(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.low_mask[:, None], 0, x)

    def amplitudes(self, x: np.ndarray) -> np.ndarray:
        return self.noise.amplitudes_array(x)

    def synthesize(self, coords: np.ndarray) -> np.ndarray:
        return self.basis.synthesize(coords)

    def pseudo_inverse(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return sigma_pseudo_inverse_array(self.noise, x, w, self.low_channels)

    def drift_array(self, x: np.ndarray) -> np.ndarray:
        return -self.rates[:, None] * x + self.explicit(x)

    def random_state(self, rng: np.random.Generator, radius: float | None = None, slope: float = 1.0) -> np.ndarray:
        """A random real state, rescaled to the given state norm when ``radius`` is set."""
        x = sp.random_field_array(
            self.modes, rng, ncomp=self.basis.ncomp, solenoidal=self.basis.solenoidal, slope=slope
        )
        if radius is not None:
            x = x * (radius / self.norm_array(x, self.state_exponent))
        return x


def drift_eval(model: SpectralModel, u: SpectralState) -> SpectralState:
    """Full drift of the model at u."""
    return u.replace(model.drift_array(model.as_array(u)))


@dataclass(frozen=True, eq=False)
class NSModelSpec(SpectralModel):
    """du = (-nu A u + B(u, u)) dt + sigma(u) dW on the 2D torus.

    ``c_d`` defaults to an empirical calibration; ``rank`` defaults to the
    smallest level passing the H3-type threshold.
    """

    nu: float
    noise: NoiseFamily
    rank: int | None = None
    c_d: float | None = None
    nonlinear: bool = True
    calibration_samples: int = 2000
    calibration_seed: int = 0
    kind: str = "ns2d"

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        if not self.basis.solenoidal:
            raise ValueError("Navier-Stokes noise must use divergence-free channels")
        if self.c_d is None:
            est = sp.calibrate_CD(self.modes, self.calibration_samples, self.calibration_seed)
            object.__setattr__(self, "c_d", est)
        if self.rank is None:
            object.__setattr__(self, "rank", smallest_passing_rank(self, check_H3))

    @property
    def modes(self) -> ModeSet:
        return self.noise.basis.modes

    @property
    def B0(self) -> float:
        return self.noise.bound(0.0)

    @property
    def L(self) -> float:
        return self.noise.lipschitz()

    @property
    def C0(self) -> float:
        return self.noise.pseudo_inverse_bound(self.low_channels, 0.0)

    @cached_property
    def rates(self) -> np.ndarray:
        return self.nu * self.modes.k2

    def explicit(self, x: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(x)
        return sp.ns_nonlinearity_array(x, self.modes)

    def default_gain(self) -> float:
        return self.nu * self.level / 2

    def lyapunov_bound(self, t: np.ndarray, v0: float) -> np.ndarray:
        return np.exp(-2 * self.nu * t) * v0 + self.B0 / (2 * self.nu)

    @property
    def lyapunov_decay(self) -> float:
        return 2 * self.nu

    def decay_weight(self, p: float = 1.0) -> tuple[float, float]:
        """(a, c) with h_p(t) = a t - c int ||u||^2 ds."""
        return self.nu * self.level - (2 * p - 1) * self.L, self.c_d**2 / self.nu

    def weight_integrand(self, x: np.ndarray) -> np.ndarray:
        return self.norm_array(x, 1.0) ** 2

    def hypotheses(self) -> dict:
        return {"H3": check_H3(self).to_json(), "c_d": self.c_d, "B0": self.B0, "L": self.L, "C0": self.C0}

    @property
    def hypotheses_hold(self) -> bool:
        return check_H3(self).holds


@dataclass(frozen=True, eq=False)
class EVModelSpec(SpectralModel):
    """du = (-nu u - P_L(u_g.grad u_g)) dt + sigma(u) dW with u_g = Lambda^{-gamma} u.

    The coupling metric is H^{-gamma/2}; the noise Lipschitz constant is
    measured there (``noise.norm_exponent`` must be -gamma/2).
    """

    nu: float
    gamma: float
    noise: NoiseFamily
    rank: int | None = None
    c_ev: float = 1.0
    c_t: float | None = None
    nonlinear: bool = True
    calibration_samples: int = 2000
    calibration_seed: int = 0
    kind: str = "euler_voigt"

    def __post_init__(self):
        if self.gamma <= 2 / 3:
            raise ValueError(f"regularization exponent out of range: gamma={self.gamma} <= 2/3")
        if self.nu <= 0:
            raise ValueError("damping must be positive")
        if not self.basis.solenoidal:
            raise ValueError("Euler-Voigt noise must use divergence-free channels")
        if self.c_t is None:
            cal = sp.calibrate_voigt_constant(self.modes, self.gamma, self.calibration_samples, self.calibration_seed)
            object.__setattr__(self, "c_t", cal.estimate)
        if self.rank is None:
            object.__setattr__(self, "rank", smallest_passing_rank(self, check_EV3))

    @property
    def modes(self) -> ModeSet:
        return self.noise.basis.modes

    @property
    def state_exponent(self) -> float:
        return -self.gamma / 2

    @property
    def metric_exponent(self) -> float:
        return -self.gamma / 2

    @property
    def B0(self) -> float:
        """Bound on ||curl sigma||^2 in H^{1-gamma/2}, i.e. sum ||sigma_j||^2 in H^{2-gamma/2}."""
        return self.noise.bound(2 - self.gamma / 2)

    @property
    def L(self) -> float:
        return self.noise.lipschitz()

    @property
    def C0(self) -> float:
        return self.noise.pseudo_inverse_bound(self.low_channels, 0.0)

    @cached_property
    def rates(self) -> np.ndarray:
        return np.full(self.modes.size, self.nu)

    def regularized(self, x: np.ndarray) -> np.ndarray:
        return sp.fractional_laplacian_array(x, self.modes, -self.gamma)

    def explicit(self, x: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(x)
        return sp.ns_nonlinearity_array(self.regularized(x), self.modes)

    def default_gain(self) -> float:
        return 0.5 * self.nu * self.level ** (self.gamma / 2 - 1 / 3)

    def lyapunov_bound(self, t: np.ndarray, v0: float) -> np.ndarray:
        return np.exp(-2 * self.nu * t) * v0 + self.B0 / (2 * self.nu)

    @property
    def lyapunov_decay(self) -> float:
        return 2 * self.nu

    def decay_weight(self, p: float = 1.0) -> tuple[float, float]:
        return self.nu - (2 * p - 1) * self.L, self.c_t**2 / self.nu

    def weight_integrand(self, x: np.ndarray) -> np.ndarray:
        # ||curl u||_{-gamma/2} = ||u||_{1-gamma/2}
        return self.norm_array(x, 1 - self.gamma / 2) ** 2

    def hypotheses(self) -> dict:
        return {"EV3": check_EV3(self).to_json(), "c_t": self.c_t, "c_ev": self.c_ev, "B0": self.B0, "L": self.L, "C0": self.C0}

    @property
    def hypotheses_hold(self) -> bool:
        return check_EV3(self).holds


@dataclass(frozen=True, eq=False)
class LagrangianModelSpec(SpectralModel):
    """du = (A u + u(0).grad u) dt + Q^{1/2}(u) dW in X^m, A = -gamma(k) per mode.

    gamma(k) = rate_scale |k|^rate_power and Tr E(k) = ncomp trace_scale |k|^{-trace_power}.
    The noise multiplier sqrt(q) varies only on modes |k| <= low_cutoff.
    """

    modes: ModeSet
    sobolev: float = 2.5
    rate_scale: float = 1.0
    rate_power: float = 2.0
    trace_scale: float = 1e-3
    trace_power: float = 8.0
    q_min: float = 0.5
    q_max: float = 1.5
    q_scale: float = 1.0
    low_cutoff: float = 1.0
    rank: int | None = None
    gain: float | None = None
    alpha_exp: float = 0.5
    nonlinear: bool = True
    kind: str = "lagrangian"

    def __post_init__(self):
        if self.sobolev <= self.modes.dim / 2 + 1:
            raise ValueError(f"Sobolev index must exceed d/2 + 1 = {self.modes.dim / 2 + 1}")
        if self.rank is None:
            above = np.flatnonzero(np.sort(self.modes.k2) > self.low_cutoff**2)
            object.__setattr__(self, "rank", int(above[0]) if above.size else self.modes.size)
        if self.gain is None:
            object.__setattr__(self, "gain", self.suggested_gain())

    @property
    def state_exponent(self) -> float:
        return self.sobolev

    @property
    def metric_exponent(self) -> float:
        return self.sobolev

    @cached_property
    def noise(self) -> NoiseFamily:
        basis = ChannelBasis(self.modes, solenoidal=False, ncomp=self.modes.dim)
        gam = self.rate_scale * basis.k2 ** (self.rate_power / 2)
        e = self.trace_scale * basis.k2 ** (-self.trace_power / 2)
        return NoiseFamily(
            "low_mode",
            basis,
            np.sqrt(gam * e),
            scale=self.q_scale,
            q_min=self.q_min,
            q_max=self.q_max,
            low_cutoff=self.low_cutoff,
            norm_exponent=self.sobolev,
        )

    @cached_property
    def rates(self) -> np.ndarray:
        return self.rate_scale * self.modes.kabs**self.rate_power

    @property
    def gamma_star(self) -> float:
        return float(self.rates.min())

    @cached_property
    def traces(self) -> np.ndarray:
        return self.modes.dim * self.trace_scale * self.modes.k2 ** (-self.trace_power / 2)

    @property
    def K(self) -> float:
        return (np.sqrt(self.q_max) - np.sqrt(self.q_min)) / self.q_scale

    @property
    def low_trace(self) -> float:
        """||Q|| restricted to the multiplicative modes: sum |k|^{2m} gamma(k) Tr E(k)."""
        low = self.modes.k2 <= self.low_cutoff**2
        return float(np.sum((self.modes.weight(self.sobolev) * self.rates * self.traces)[low]))

    def suggested_gain(self) -> float:
        g = 28 * self.K**2 * self.low_trace
        return g if g > 0 else self.gamma_star

    @property
    def triple_norm(self) -> float:
        """Truncated sum gamma^alpha |k|^{2(m+1)} Tr E."""
        return float(np.sum(self.rates**self.alpha_exp * self.modes.weight(self.sobolev + 1) * self.traces))

    @property
    def lyapunov_constant(self) -> float:
        """C with the stationary part bounded by C |||E|||."""
        return float(self.q_max / 2 * np.max(1.0 / (self.rates**self.alpha_exp * self.modes.k2)))

    @property
    def embedding(self) -> float:
        return sp.point_evaluation_constant(self.modes, self.sobolev)

    @property
    def bilinear_constant(self) -> float:
        """C N in the composite shift bound: |P_N B(a, b)| <= C N |a| |b|."""
        return self.embedding * float(np.max(self.modes.kabs[self.low_mask]))

    @property
    def C0(self) -> float:
        return self.noise.pseudo_inverse_bound(self.low_channels, self.sobolev)

    @property
    def L(self) -> float:
        return self.noise.lipschitz()

    def explicit(self, x: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(x)
        return sp.transport_array(x, x, self.modes)

    def default_gain(self) -> float:
        return float(self.gain)

    def lyapunov_bound(self, t: np.ndarray, v0: float) -> np.ndarray:
        return np.exp(-2 * self.gamma_star * t) * v0 + self.lyapunov_constant * self.triple_norm

    @property
    def lyapunov_decay(self) -> float:
        return 2 * self.gamma_star

    def decay_weight(self, p: float = 1.0) -> tuple[float, float]:
        # d|v|^2 <= (-2 gamma_* + 2 C_emb ||Q_N u||_{m+1}) |v|^2 once 2 lambda >= K^2 ||Q||
        return 2 * self.gamma_star * p, 2 * self.embedding * p

    def weight_integrand(self, x: np.ndarray) -> np.ndarray:
        return self.norm_array(self.project_high_array(x), self.sobolev + 1)

    def hypotheses(self) -> dict:
        return check_L_hypotheses(self, samples=200, seed=0)

    @property
    def hypotheses_hold(self) -> bool:
        return self.coupling_condition()

    def coupling_condition(self) -> bool:
        covered = np.all(self.low_mask[self.modes.k2 <= self.low_cutoff**2])
        return bool(covered and 2 * self.gain >= self.K**2 * self.low_trace)


@dataclass(frozen=True, eq=False)
class ScalarModelSpec:
    """dX = drift(X) dt + sqrt(B0) dW on the real line.

    ``ou``: drift -nu X (handled exactly); ``double_well``: drift X - X^3.
    """

    shape_kind: Literal["ou", "double_well"] = "ou"
    nu: float = 1.0
    B0: float = 2.0
    kind: str = "scalar"
    dtype = float
    state_shape = (1,)
    channels = 1
    state_exponent = 0.0
    metric_exponent = 0.0
    nonlinear = True

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([self.nu if self.shape_kind == "ou" else 0.0])

    def explicit(self, x: np.ndarray) -> np.ndarray:
        if self.shape_kind == "ou":
            return np.zeros_like(x)
        return x - x**3

    def drift_array(self, x: np.ndarray) -> np.ndarray:
        return -self.rates * x + self.explicit(x)

    def amplitudes(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[:-1] + (1,), np.sqrt(self.B0))

    def synthesize(self, coords: np.ndarray) -> np.ndarray:
        return coords

    def as_array(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=float)
        if a.ndim == 0:
            return a.reshape(1)
        return a if a.shape[-1] == 1 else a[..., None]

    def zero_state(self) -> np.ndarray:
        return np.zeros(1)

    def norm_array(self, x: np.ndarray, r: float = 0.0) -> np.ndarray:
        return np.abs(x[..., 0])

    def metric_array(self, x: np.ndarray) -> np.ndarray:
        return np.abs(x[..., 0])

    def pairing_array(self, x: np.ndarray, w: np.ndarray, r: float = 0.0) -> np.ndarray:
        return np.sum(x * w, axis=-1)

    def functionals(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {"abs_u": np.abs(x[..., 0]), "norm_u": np.abs(x[..., 0])}

    def lyapunov_array(self, x: np.ndarray) -> np.ndarray:
        return x[..., 0] ** 2

    def lyapunov_bound(self, t: np.ndarray, v0: float) -> np.ndarray:
        return np.exp(-2 * self.nu * t) * v0 + self.B0 / (2 * self.nu) * (1 - np.exp(-2 * self.nu * t))

    @property
    def lyapunov_decay(self) -> float:
        return 2 * self.nu

    def random_state(self, rng: np.random.Generator, radius: float | None = None, slope: float = 0.0) -> np.ndarray:
        x = rng.standard_normal(1)
        return x if radius is None else np.sign(x) * radius

    def hypotheses(self) -> dict:
        return {}

    hypotheses_hold = True


ModelSpec = Union[NSModelSpec, EVModelSpec, LagrangianModelSpec, ScalarModelSpec]


# ----------------------------------------------------------------------------
# hypothesis checks


def smallest_passing_rank(spec, check) -> int:
    """Smallest rank whose eigenvalue level passes ``check``; the top level if none does."""
    for level_rank in _level_starts(spec.modes):
        if check(spec, rank=level_rank).holds:
            return level_rank
    return spec.modes.size


def _level_starts(modes: ModeSet) -> list[int]:
    k2 = np.sort(modes.k2)
    return [i + 1 for i in range(len(k2)) if i == 0 or k2[i] != k2[i - 1]]


def h3_threshold(nu: float, L: float, B0: float, c_d: float) -> float:
    return L / nu + c_d**2 * B0 / nu**3


def check_H3(spec: NSModelSpec, rank: int | None = None) -> HypothesisCheck:
    """lambda_N > L/nu + C_D^2 B0 / nu^3."""
    rank = spec.rank if rank is None else rank
    lam = sp.eigenvalue_level(rank, spec.modes)
    thr = h3_threshold(spec.nu, spec.noise.lipschitz(), spec.noise.bound(0.0), spec.c_d)
    return HypothesisCheck(lam > thr, lam - thr, thr, lam, {"rank": rank})


def check_EV3(spec: EVModelSpec, rank: int | None = None) -> HypothesisCheck:
    """lambda_N^{gamma/2 - 1/3} > C_EV B0 / nu^3."""
    if spec.gamma <= 2 / 3:
        raise ValueError(f"regularization exponent out of range: gamma={spec.gamma} <= 2/3")
    rank = spec.rank if rank is None else rank
    lam = sp.eigenvalue_level(rank, spec.modes)
    lhs = lam ** (spec.gamma / 2 - 1 / 3)
    thr = spec.c_ev * spec.noise.bound(2 - spec.gamma / 2) / spec.nu**3
    return HypothesisCheck(lhs > thr, lhs - thr, thr, lam, {"rank": rank, "c_ev": spec.c_ev, "lhs": lhs})


def _l2_integral(rates: np.ndarray, kabs: np.ndarray) -> float:
    """Exact integral of t -> max_k |k| exp(-rate_k t) over [0, inf).

    The log of the integrand is the upper envelope of lines log|k| - rate_k t,
    so the integral is a finite sum of exponential pieces.
    """
    lines = sorted(set(zip(np.round(rates, 15), np.log(kabs))), key=lambda p: (-p[1], p[0]))
    slope, icpt = lines[0]
    t, total = 0.0, 0.0
    while True:
        cross = [((icpt - c) / (slope - g), g, c) for g, c in lines if g < slope]
        cross = [x for x in cross if x[0] > t]
        if not cross:
            return total + np.exp(icpt - slope * t) / slope
        t_next, g, c = min(cross)
        total += np.exp(icpt) * (np.exp(-slope * t) - np.exp(-slope * t_next)) / slope
        t, slope, icpt = t_next, g, c


def check_L_hypotheses(spec: LagrangianModelSpec, samples: int = 1000, seed: int = 0) -> dict:
    """Constructional and sampled audits of the Lagrangian hypotheses (report only)."""
    rng = np.random.default_rng(seed)
    noise = spec.noise
    radii = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=samples))
    xs = np.array([spec.random_state(rng, radius=r) for r in radii])
    ys = np.array([spec.random_state(rng, radius=r) for r in radii[::-1]])
    mx, my = noise.multipliers_array(xs), noise.multipliers_array(ys)
    high = ~noise.low_channels
    cutoff_exact = bool(np.all(mx[:, high] == 1.0) and np.all(my[:, high] == 1.0))
    q = mx[:, noise.low_channels] ** 2
    q_lo = float(q.min()) if q.size else 1.0
    q_hi = float(q.max()) if q.size else 1.0
    dist = spec.norm_array(xs - ys, spec.sobolev)
    ratios = np.max(np.abs(mx - my), axis=1) / dist
    k_audit = float(ratios.max())
    return {
        "cutoff_exact": cutoff_exact,
        "q_sampled_min": q_lo,
        "q_sampled_max": q_hi,
        "q_bounds_hold": bool(spec.q_min - 1e-12 <= q_lo and q_hi <= spec.q_max + 1e-12),
        "K": spec.K,
        "K_audit": k_audit,
        "K_audit_holds": bool(k_audit <= spec.K * (1 + AUDIT_SLACK) + 1e-15),
        "gamma_star": spec.gamma_star,
        "triple_norm_truncated": spec.triple_norm,
        "l2_integral_truncated": _l2_integral(spec.rates, spec.modes.kabs),
        "gain": spec.gain,
        "coupling_condition": spec.coupling_condition(),
    }


def audit_noise_constants(spec, samples: int = 1000, seed: int = 0) -> dict:
    """Largest sampled ratios against the declared B0 (state norm), L and C0; each must be <= 1."""
    rng = np.random.default_rng(seed)
    noise = spec.noise
    s = noise.norm_exponent
    radii = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=samples))
    xs = np.array([spec.random_state(rng, radius=r) for r in radii])
    ys = xs + np.array([spec.random_state(rng, radius=r) for r in rng.exponential(1.0, samples)])
    ax, ay = noise.amplitudes_array(xs), noise.amplitudes_array(ys)
    w2 = noise.basis.k2**s
    bound_ratio = np.sum(ax**2 * w2, axis=1) / noise.bound(s)
    lip = noise.lipschitz()
    dist2 = spec.norm_array(xs - ys, s) ** 2
    lip_ratio = np.sum((ax - ay) ** 2 * w2, axis=1) / (lip * dist2) if lip > 0 else np.sum((ax - ay) ** 2, axis=1)
    w = spec.project_low_array(np.array([spec.random_state(rng, radius=r) for r in radii]))
    beta = spec.pseudo_inverse(xs, w)
    exp_c0 = spec.state_exponent if spec.kind == "lagrangian" else 0.0
    c0_ratio = np.linalg.norm(beta, axis=1) / (spec.C0 * spec.norm_array(w, exp_c0))
    return {
        "bound_ratio": float(bound_ratio.max()),
        "lipschitz_ratio": float(lip_ratio.max()),
        "pseudo_inverse_ratio": float(c0_ratio.max()),
    }


# ----------------------------------------------------------------------------
# JSON configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseConfig(_Strict):
    kind: Literal["additive", "saturated"] = "saturated"
    total: float = Field(0.5, ge=0)
    decay: float = 1.0
    lipschitz: float | None = Field(None, ge=0)
    scale: float = Field(1.0, gt=0)
    floor: float = Field(0.5, ge=0, le=1)
    low_cutoff: float | None = None


class _FlowConfig(_Strict):
    schema_: Literal["ergoverify-model-v1"] = Field(MODEL_SCHEMA, alias="schema")
    cutoff: int = Field(4, ge=1)
    nu: float = Field(1.0, gt=0)
    rank: int | None = None
    nonlinear: bool = True
    calibration_samples: int = 2000
    calibration_seed: int = 0
    noise: NoiseConfig = NoiseConfig()


class NSConfig(_FlowConfig):
    kind: Literal["ns2d"]
    c_d: float | None = None


class EVConfig(_FlowConfig):
    kind: Literal["euler_voigt"]
    gamma: float = 2.0
    c_ev: float = 1.0
    c_t: float | None = None


class LagrangianConfig(_Strict):
    schema_: Literal["ergoverify-model-v1"] = Field(MODEL_SCHEMA, alias="schema")
    kind: Literal["lagrangian"]
    dim: int = 2
    cutoff: int = 3
    sobolev: float = 2.5
    rate_scale: float = 1.0
    rate_power: float = 2.0
    trace_scale: float = 1e-3
    trace_power: float = 8.0
    q_min: float = 0.5
    q_max: float = 1.5
    q_scale: float = 1.0
    low_cutoff: float = 1.0
    rank: int | None = None
    gain: float | None = None
    alpha_exp: float = 0.5
    nonlinear: bool = True


class ScalarConfig(_Strict):
    schema_: Literal["ergoverify-model-v1"] = Field(MODEL_SCHEMA, alias="schema")
    kind: Literal["scalar"]
    drift: Literal["ou", "double_well"] = "ou"
    nu: float = 1.0
    B0: float = Field(2.0, ge=0)


class _ModelFile(BaseModel):
    model: Union[NSConfig, EVConfig, LagrangianConfig, ScalarConfig] = Field(discriminator="kind")


def _noise_from_config(cfg: NoiseConfig, modes: ModeSet, bound_exponent: float, norm_exponent: float) -> NoiseFamily:
    basis = ChannelBasis(modes)
    extra = {"norm_exponent": norm_exponent}
    if cfg.kind == "saturated":
        extra.update(floor=cfg.floor, scale=cfg.scale)
        if cfg.low_cutoff is not None:
            extra["low_cutoff"] = cfg.low_cutoff
    return NoiseFamily.decaying(cfg.kind, basis, cfg.total, cfg.decay, bound_exponent, cfg.lipschitz, **extra)


def model_from_config(record: dict):
    """Build a model spec from an ``ergoverify-model-v1`` record; unknown fields are rejected."""
    if record.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"model config must declare schema {MODEL_SCHEMA!r}")
    cfg = _ModelFile.model_validate({"model": record}).model
    if isinstance(cfg, EVConfig):
        modes = ModeSet(2, cfg.cutoff)
        noise = _noise_from_config(cfg.noise, modes, 2 - cfg.gamma / 2, -cfg.gamma / 2)
        return EVModelSpec(
            cfg.nu, cfg.gamma, noise, cfg.rank, cfg.c_ev, cfg.c_t, cfg.nonlinear,
            cfg.calibration_samples, cfg.calibration_seed,
        )
    if isinstance(cfg, NSConfig):
        modes = ModeSet(2, cfg.cutoff)
        noise = _noise_from_config(cfg.noise, modes, 0.0, 0.0)
        return NSModelSpec(cfg.nu, noise, cfg.rank, cfg.c_d, cfg.nonlinear, cfg.calibration_samples, cfg.calibration_seed)
    if isinstance(cfg, LagrangianConfig):
        fields = cfg.model_dump(exclude={"schema_", "kind", "dim", "cutoff"})
        return LagrangianModelSpec(ModeSet(cfg.dim, cfg.cutoff), **fields)
    return ScalarModelSpec(cfg.drift, cfg.nu, cfg.B0)


def load_model(source) -> object:
    """Model spec from a dict or a JSON file path."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        source = json.loads(path.read_text())
    return model_from_config(dict(source))
