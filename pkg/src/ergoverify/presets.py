"""Desk-scale model instances used by the campaigns, tests and acceptance suite."""

from __future__ import annotations

from .models import ChannelBasis, EVModelSpec, LagrangianModelSpec, NoiseFamily, NSModelSpec, ScalarModelSpec
from .spectral import ModeSet


def desk_ns(cutoff: int = 4, nu: float = 1.0, B0: float = 0.5, L: float = 0.25, floor: float = 0.5, **kw) -> NSModelSpec:
    """Saturated multiplicative noise on every mode of the |k|_inf <= cutoff truncation."""
    basis = ChannelBasis(ModeSet(2, cutoff))
    noise = NoiseFamily.decaying("saturated", basis, B0, decay=1.0, lipschitz=L, floor=floor)
    return NSModelSpec(nu, noise, **kw)


def desk_ev(cutoff: int = 4, nu: float = 1.0, gamma: float = 2.0, B0: float = 0.5, L: float = 0.25, floor: float = 0.5, **kw) -> EVModelSpec:
    """Euler-Voigt instance; the noise bound is set in the H^{2-gamma/2} sense and L in H^{-gamma/2}."""
    basis = ChannelBasis(ModeSet(2, cutoff))
    noise = NoiseFamily.decaying(
        "saturated", basis, B0, decay=2.0, bound_exponent=2 - gamma / 2, lipschitz=L, floor=floor, norm_exponent=-gamma / 2
    )
    return EVModelSpec(nu, gamma, noise, **kw)


def desk_lagrangian(cutoff: int = 3, **kw) -> LagrangianModelSpec:
    return LagrangianModelSpec(ModeSet(2, cutoff), **kw)


def linear_ns(cutoff: int = 4, nu: float = 1.0) -> NSModelSpec:
    """Noiseless Stokes flow: pure per-mode contraction."""
    basis = ChannelBasis(ModeSet(2, cutoff))
    noise = NoiseFamily("additive", basis, [0.0] * basis.size)
    return NSModelSpec(nu, noise, rank=1, c_d=0.0, nonlinear=False)


def additive_ns(cutoff: int = 4, nu: float = 1.0, B0: float = 0.5, nonlinear: bool = True, **kw) -> NSModelSpec:
    basis = ChannelBasis(ModeSet(2, cutoff))
    noise = NoiseFamily.decaying("additive", basis, B0, decay=1.0)
    return NSModelSpec(nu, noise, nonlinear=nonlinear, **kw)


def ou(nu: float = 1.0, B0: float = 2.0) -> ScalarModelSpec:
    return ScalarModelSpec("ou", nu, B0)


def double_well() -> ScalarModelSpec:
    """Two stable equilibria at +-1 and no noise."""
    return ScalarModelSpec("double_well", 1.0, 0.0)


PRESETS = {
    "ns_desk": desk_ns,
    "ev_desk": desk_ev,
    "lagrangian_desk": desk_lagrangian,
    "ns_linear": linear_ns,
    "ns_additive": additive_ns,
    "ou": ou,
    "double_well": double_well,
}


def preset(name: str, **kw):
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
