"""Generalized coupling: nudging controls, Girsanov shifts and decay diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from scipy.stats import norm

from . import spectral as sp
from .sde import CoupledTrajectory, mean_and_se

ControlForm = Literal["linear-nudge", "nudge-plus-nonlinearity"]
_FORMS = {"ns2d": "linear-nudge", "euler_voigt": "linear-nudge", "lagrangian": "nudge-plus-nonlinearity"}


class ControlMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ControlSpec:
    kind: str
    rank: int
    gain: float
    form: ControlForm = "linear-nudge"

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("control gain must be positive")
        if self.rank < 1:
            raise ValueError("control rank must be at least 1")
        if self.form not in ("linear-nudge", "nudge-plus-nonlinearity"):
            raise ValueError(f"unknown control form {self.form!r}")
        expected = _FORMS.get(self.kind)
        if expected is not None and expected != self.form:
            raise ValueError(f"{self.kind} coupling uses the {expected} form")

    @classmethod
    def for_model(cls, model, gain: float | None = None) -> "ControlSpec":
        """Default control: the model's rank with its suggested gain."""
        if model.kind not in _FORMS:
            raise ControlMismatchError(f"no coupling control defined for model kind {model.kind!r}")
        return cls(model.kind, int(model.rank), float(gain if gain is not None else model.default_gain()), _FORMS[model.kind])

    def to_json(self) -> dict:
        return dict(kind=self.kind, rank=self.rank, gain=self.gain, form=self.form)


def check_control(model, control: ControlSpec) -> None:
    if getattr(model, "kind", None) not in _FORMS:
        raise ControlMismatchError(f"model kind {getattr(model, 'kind', None)!r} does not support coupling")
    if control.kind != model.kind:
        raise ControlMismatchError(f"control for {control.kind} applied to a {model.kind} model")
    if control.rank != model.rank:
        raise ControlMismatchError(f"control rank {control.rank} differs from model rank {model.rank}")
    if control.rank > model.modes.size:
        raise sp.ProjectionRankError(control.rank, model.modes.size)


def control_term(
    control: ControlSpec,
    u: sp.SpectralState,
    ut: sp.SpectralState,
    nonlinearity: Callable[[np.ndarray], np.ndarray] | None = None,
) -> sp.SpectralState:
    """Control drift on the rank-N modes.

    ``nonlinearity`` overrides B in the nudge-plus-nonlinearity form; by
    default it is the transport term u(0).grad u.
    """
    if u.modes != ut.modes:
        raise ValueError("states live on different mode sets")
    if control.rank > u.modes.size:
        raise sp.ProjectionRankError(control.rank, u.modes.size)
    mask = u.modes.low_mask(control.rank)[:, None]
    w = control.gain * (u.coeffs - ut.coeffs)
    if control.form == "nudge-plus-nonlinearity":
        B = nonlinearity or (lambda x: sp.transport_array(x, x, u.modes))
        w = w + B(u.coeffs) - B(ut.coeffs)
    return u.replace(np.where(mask, w, 0))


def girsanov_shift(model, control: ControlSpec, u: sp.SpectralState, ut: sp.SpectralState) -> np.ndarray:
    """Channel weights beta with sigma(u~) beta = control term."""
    check_control(model, control)
    nonlin = model.explicit if control.form == "nudge-plus-nonlinearity" else None
    w = control_term(control, u, ut, nonlin)
    return model.pseudo_inverse(model.as_array(ut), w.coeffs)


def shift_bound(model, control: ControlSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pathwise bound on |beta|: gain C0 |P_N v| for the linear nudge, the composite form otherwise."""
    low = model.project_low_array(v)
    if control.form == "linear-nudge":
        return control.gain * model.C0 * model.norm_array(low, 0.0)
    m = model.sobolev
    nu, nv = model.norm_array(u, m), model.norm_array(v, m)
    cn = model.bilinear_constant
    return model.C0 * (control.gain * model.norm_array(low, m) + cn * (2 * nu * nv + nv**2))


# ----------------------------------------------------------------------------
# reports


def _hypothesis_flags(model) -> list[str]:
    return [] if model.hypotheses_hold else ["out of hypothesis range"]


@dataclass
class DecayReport:
    p: float
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    initial: float
    flags: list[str]

    @property
    def passed(self) -> bool:
        return bool(np.all(self.mean <= self.initial + 3 * self.se + 1e-12 * max(self.initial, 1.0)))

    @property
    def worst_excess(self) -> float:
        return float(np.max((self.mean - self.initial) / np.maximum(self.se, 1e-300)))

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "initial": self.initial,
            "max_mean": float(self.mean.max()),
            "pass": self.passed,
            "flags": self.flags,
            "times": self.times.tolist(),
            "mean": self.mean.tolist(),
            "se": self.se.tolist(),
        }


def weighted_decay_check(ct: CoupledTrajectory, p: float = 1.0) -> DecayReport:
    """Ensemble mean of |v_t|^{2p} exp(p h_p(t)) against |x - y|^{2p} + 3 s.e."""
    if p < 1:
        raise ValueError("p must be at least 1")
    stat = ct.weighted(p)
    mean, se = mean_and_se(stat, axis=1)
    initial = float(np.mean(ct.distance0 ** (2 * p)))
    flags = _hypothesis_flags(ct.model)
    if not np.all(np.isfinite(stat)):
        flags.append("non-finite weighted statistic")
    return DecayReport(p, ct.times, mean, se, initial, flags)


@dataclass
class CollapseReport:
    threshold: float
    time: float
    fraction: float
    quantile_levels: tuple[float, ...]
    quantiles: np.ndarray
    median_path: int
    flags: list[str]

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "time": self.time,
            "fraction": self.fraction,
            "median_path": self.median_path,
            "quantile_levels": list(self.quantile_levels),
            "flags": self.flags,
        }


def coupling_collapse_stats(
    ct: CoupledTrajectory, threshold: float = 1e-3, T: float | None = None, levels=(0.05, 0.25, 0.5, 0.75, 0.95)
) -> CollapseReport:
    """Fraction of paths with |v_T| below ``threshold`` plus quantile curves of |v_t|."""
    if ct.paths == 0:
        raise ValueError("empty ensemble")
    times = ct.times
    i = len(times) - 1 if T is None else int(np.searchsorted(times, T + 1e-9 * max(1.0, T)) - 1)
    i = max(i, 0)
    final = ct.v_norm[i]
    frac = float(np.mean(final < threshold))
    q = np.quantile(ct.v_norm, levels, axis=1)
    median = int(np.argsort(final, kind="stable")[(ct.paths - 1) // 2])
    return CollapseReport(threshold, float(times[i]), frac, tuple(levels), q, median, _hypothesis_flags(ct.model))


@dataclass
class TVBoundReport:
    pinsker: float
    pinsker_ci: tuple[float, float]
    moment: float
    delta: float
    paths: int
    mean_cost: float

    def to_json(self) -> dict:
        return {**self.__dict__, "pinsker_ci": list(self.pinsker_ci)}


def pinsker_from_cost(mean_cost: float) -> float:
    """d_TV <= sqrt(KL / 2) with KL = E int |beta|^2 / 2."""
    return min(1.0, math.sqrt(max(mean_cost, 0.0) / 4))


def tv_surrogate(ct: CoupledTrajectory | np.ndarray, delta: float = 1.0) -> TVBoundReport:
    """Pinsker bound and the delta-moment (E G_T^delta)^{1/(1+delta)} from the final Girsanov costs."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    g = np.asarray(ct.cost[-1] if isinstance(ct, CoupledTrajectory) else ct, dtype=float)
    m, se = mean_and_se(g) if g.size > 1 else (float(g.mean()), 0.0)
    m, se = float(m), float(se)
    ci = (pinsker_from_cost(m - 1.96 * se), pinsker_from_cost(m + 1.96 * se))
    moment = float(np.mean(g**delta) ** (1 / (1 + delta)))
    return TVBoundReport(pinsker_from_cost(m), ci, moment, delta, int(g.size), m)


def gaussian_drift_tv(c: float, T: float) -> float:
    """Exact total variation between Brownian laws on [0, T] differing by constant drift c."""
    return float(2 * norm.cdf(abs(c) * math.sqrt(T) / 2) - 1)


def shift_audit(ct: CoupledTrajectory) -> dict:
    worst = float(np.max(ct.shift_ratio_max)) if ct.shift_ratio_max.size else 0.0
    return {"max_ratio": worst, "pass": worst <= 1 + 1e-10, "form": ct.control.form}


def coupled_summary(ct: CoupledTrajectory, p: float = 1.0, threshold: float = 1e-3, delta: float = 1.0, **context) -> dict:
    return {
        "model": ct.model.kind,
        "control": ct.control.to_json(),
        "paths": ct.paths,
        "dt": ct.grid.dt,
        "steps": ct.grid.steps,
        "decay": weighted_decay_check(ct, p).to_json(),
        "collapse": coupling_collapse_stats(ct, threshold).to_json(),
        "tv": tv_surrogate(ct, delta).to_json(),
        "shift_audit": shift_audit(ct),
        **context,
    }


def write_summary(path, summary: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return path
