"""Suspension parameters, Snell refraction and phototaxis response curves."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

WATER_INDEX = 1.333
_XI_SCALE = 3.8


class TaxisKind(str, enum.Enum):
    GC13 = "GC13"
    GC19 = "GC19"
    NONE = "NONE"  # T == 0, degenerate case used for checks


class TopBoundary(str, enum.Enum):
    RIGID = "rigid"
    STRESS_FREE = "stress_free"


@dataclass(frozen=True)
class TaxisFunction:
    """T(G) = 0.8 sin(3 pi Xi / 2) - 0.1 sin(pi Xi / 2), Xi = (G/3.8) exp(c (3.8 - G))."""

    critical_intensity: float
    shading_rate: float
    null: bool = False

    def xi(self, G):
        G = np.asarray(G, dtype=float)
        return G / _XI_SCALE * np.exp(self.shading_rate * (_XI_SCALE - G))

    def __call__(self, G):
        return taxis_value(self, G)

    def slope(self, G):
        return taxis_slope(self, G)

    @cached_property
    def root(self) -> float:
        """Actual zero of T near the nominal critical intensity."""
        if self.null:
            return float("nan")
        lo, hi = 0.5 * self.critical_intensity, 1.5 * self.critical_intensity
        return brentq(lambda g: float(taxis_value(self, g)), lo, hi, xtol=1e-14, rtol=1e-15)


GC13 = TaxisFunction(critical_intensity=1.3, shading_rate=0.252)
GC19 = TaxisFunction(critical_intensity=1.9, shading_rate=0.135)
NO_TAXIS = TaxisFunction(critical_intensity=float("nan"), shading_rate=0.0, null=True)

_TAXIS = {TaxisKind.GC13: GC13, TaxisKind.GC19: GC19, TaxisKind.NONE: NO_TAXIS}


def taxis_value(f: TaxisFunction, G):
    if f.null:
        return np.zeros_like(np.asarray(G, dtype=float))
    xi = f.xi(G)
    return 0.8 * np.sin(1.5 * np.pi * xi) - 0.1 * np.sin(0.5 * np.pi * xi)


def taxis_slope(f: TaxisFunction, G):
    """Analytic dT/dG."""
    G = np.asarray(G, dtype=float)
    if f.null:
        return np.zeros_like(G)
    xi = f.xi(G)
    dxi = xi * (1.0 / np.where(G == 0, 1.0, G) - f.shading_rate)
    # G -> 0: Xi ~ G e^{3.8c}/3.8, so dXi/dG stays finite
    dxi = np.where(G == 0, np.exp(f.shading_rate * _XI_SCALE) / _XI_SCALE, dxi)
    dT = 0.8 * 1.5 * np.pi * np.cos(1.5 * np.pi * xi) - 0.1 * 0.5 * np.pi * np.cos(0.5 * np.pi * xi)
    return dT * dxi


def refraction_angle(theta_i_deg: float, n0: float = WATER_INDEX) -> float:
    """Refracted angle (radians) from Snell's law, sin(theta_i) = n0 sin(theta_0)."""
    if not 0.0 <= theta_i_deg < 90.0:
        raise ValueError(f"incidence angle must lie in [0, 90) degrees, got {theta_i_deg}")
    if n0 <= 1.0:
        raise ValueError("refractive index must exceed 1")
    return float(np.arcsin(np.sin(np.radians(theta_i_deg)) / n0))


@dataclass(frozen=True)
class SuspensionParams:
    """Nondimensional control parameters of the suspension.

    ``incidence_deg`` is the angle of incidence in air, in degrees.
    """

    schmidt: float = 20.0
    swim_speed: float = 15.0
    extinction: float = 0.5
    albedo: float = 0.4
    diffuse_mag: float = 0.26
    collimated_mag: float = 1.0
    incidence_deg: float = 0.0
    refractive_index: float = WATER_INDEX
    taxis_kind: TaxisKind = TaxisKind.GC13
    top_bc: TopBoundary = TopBoundary.RIGID
    bottom_bc: str = field(default="rigid", repr=False)

    def __post_init__(self):
        object.__setattr__(self, "taxis_kind", TaxisKind(self.taxis_kind))
        object.__setattr__(self, "top_bc", TopBoundary(self.top_bc))
        if not 0.0 <= self.albedo <= 1.0:
            raise ValueError(f"albedo must lie in [0, 1], got {self.albedo}")
        if self.extinction <= 0:
            raise ValueError("extinction must be positive")
        if self.swim_speed < 0:
            raise ValueError("swim speed must be non-negative")
        if not 0.0 <= self.incidence_deg <= 80.0:
            raise ValueError(f"incidence angle must lie in [0, 80] degrees, got {self.incidence_deg}")
        if self.refractive_index <= 1.0:
            raise ValueError("refractive index must exceed 1")
        if self.diffuse_mag < 0 or self.collimated_mag < 0:
            raise ValueError("irradiation magnitudes must be non-negative")
        if self.bottom_bc != "rigid":
            raise ValueError("only a rigid bottom boundary is supported")

    @property
    def theta0(self) -> float:
        return refraction_angle(self.incidence_deg, self.refractive_index)

    @property
    def mu0(self) -> float:
        """cos(theta_0) of the refracted beam."""
        return float(np.cos(self.theta0))

    @property
    def taxis(self) -> TaxisFunction:
        return _TAXIS[self.taxis_kind]

    def with_(self, **changes) -> "SuspensionParams":
        return replace(self, **changes)
