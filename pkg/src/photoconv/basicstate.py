"""Equilibrium concentration profile of a phototactic suspension.

In equilibrium the swimming flux balances diffusion,

    dn/dz = V_c T(G(tau)) n,     dtau/dz = -kappa n,

with tau = 0 at the top (z = 1). Because the mean concentration is one the
optical depth at the bottom is exactly kappa, so the radiation problem lives
on a fixed interval and no outer iteration is needed: we shoot on the top
concentration until tau(0) = kappa.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .finitediff import diff_matrix
from .photomodel import SuspensionParams
from .radiative import ConvergenceError, RadiationField, flux_at

log = logging.getLogger(__name__)

DEFAULT_N_Z = 151
DEFAULT_SUBSTEPS = 8
_SCAN = np.geomspace(1e-4, 50.0, 48)


class ShootingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BasicState:
    """Converged basic state sampled on a uniform z grid.

    ``tau_of``/``n_of`` are dense cubic-Hermite interpolants built from the
    integrator's substeps; use them for off-grid quadrature.
    """

    params: SuspensionParams
    field: RadiationField
    z_grid: np.ndarray
    n_s: np.ndarray
    tau: np.ndarray
    G_s: np.ndarray
    G_coll: np.ndarray
    G_diff: np.ndarray
    dG_dz: np.ndarray
    q_s: np.ndarray
    T_s: np.ndarray
    dT_dG: np.ndarray
    sublayer_z: tuple
    n_top: float
    tau_of: Callable = field(repr=False)
    n_of: Callable = field(repr=False)
    mass: float = 1.0

    @property
    def n_z(self) -> int:
        return self.z_grid.size

    def residual(self, z=None) -> float:
        """Sup-norm of dn/dz - V_c T(G) n, with G re-evaluated from the field.

        By default checks the output grid. Passing ``z`` probes the dense
        interpolant between integrator nodes instead; expect larger values
        within a few cells of the top where dG/dz is log-singular when
        diffuse light is present.
        """
        z = self.z_grid if z is None else np.asarray(z, dtype=float)
        n = self.n_of(z)
        T = self.params.taxis(self.G_at(z))
        return float(np.max(np.abs(self.n_of(z, 1) - self.params.swim_speed * T * n)))

    def G_at(self, z):
        return self.field.total(self.tau_of(z))


def _rhs_factory(params: SuspensionParams, field: RadiationField):
    taxis = params.taxis
    vc, kappa = params.swim_speed, params.extinction

    def rhs(n, tau):
        G = field.total(tau)
        return vc * taxis(G) * n, -kappa * n

    return rhs


def _integrate(rhs, n_top, n_steps, keep=False):
    """Classical RK4 from z = 1 down to z = 0 for an array of top values."""
    h = -1.0 / n_steps
    n = np.array(n_top, dtype=float)
    tau = np.zeros_like(n)
    if keep:
        ns, taus, dns, dtaus = [n.copy()], [tau.copy()], [], []
    for _ in range(n_steps):
        k1n, k1t = rhs(n, tau)
        if keep:
            dns.append(k1n)
            dtaus.append(k1t)
        k2n, k2t = rhs(n + 0.5 * h * k1n, tau + 0.5 * h * k1t)
        k3n, k3t = rhs(n + 0.5 * h * k2n, tau + 0.5 * h * k2t)
        k4n, k4t = rhs(n + h * k3n, tau + h * k3t)
        n = n + h / 6.0 * (k1n + 2 * k2n + 2 * k3n + k4n)
        tau = tau + h / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
        if keep:
            ns.append(n.copy())
            taus.append(tau.copy())
    if keep:
        k1n, k1t = rhs(n, tau)
        dns.append(k1n)
        dtaus.append(k1t)
        return np.array(ns), np.array(taus), np.array(dns), np.array(dtaus)
    return n, tau


def solve_basic_state(params: SuspensionParams, field: RadiationField,
                      n_z: int = DEFAULT_N_Z, substeps: int = DEFAULT_SUBSTEPS,
                      tol: float = 1e-12, with_flux: bool = True) -> BasicState:
    """Shoot on n_s(1) so that the optical depth reaches kappa at the bottom.

    Raises
    ------
    ShootingError
        If no sign change of tau(0) - kappa is found over the scanned bracket.
    """
    if n_z < 65:
        raise ValueError("n_z must be at least 65")
    kappa = params.extinction
    rhs = _rhs_factory(params, field)
    n_steps = (n_z - 1) * substeps

    if params.swim_speed == 0 or params.taxis.null:
        n_top = 1.0
    else:
        n_top = _shoot(rhs, kappa, n_steps, _top_estimate(params, field), tol)

    ns, taus, dns, dtaus = _integrate(rhs, np.array([n_top]), n_steps, keep=True)
    ns, taus, dns, dtaus = ns[:, 0], taus[:, 0], dns[:, 0], dtaus[:, 0]
    # integrator runs from z = 1 downward; flip to ascending z
    z_fine = np.linspace(1.0, 0.0, n_steps + 1)[::-1]
    ns, taus, dns, dtaus = ns[::-1], taus[::-1], dns[::-1], dtaus[::-1]
    n_of = CubicHermiteSpline(z_fine, ns, dns)
    tau_of = CubicHermiteSpline(z_fine, taus, dtaus)
    mass = float(n_of.integrate(0.0, 1.0))
    if abs(taus[0] - kappa) > 1e-8 * max(1.0, kappa):
        raise ConvergenceError(f"shooting left tau(0) - kappa = {taus[0] - kappa:.3e}")

    z = np.linspace(0.0, 1.0, n_z)
    sel = np.arange(0, n_steps + 1, substeps)
    n_s, tau = ns[sel], taus[sel]
    G = field.total(tau)
    Gc = field.collimated(tau)
    taxis = params.taxis
    h = z[1] - z[0]
    q = flux_at(field, tau) if with_flux else np.full_like(tau, np.nan)
    state = BasicState(
        params=params, field=field, z_grid=z, n_s=n_s, tau=tau, G_s=G, G_coll=Gc,
        G_diff=field.diffuse(tau), dG_dz=diff_matrix(n_z, 1, h) @ G, q_s=q, T_s=taxis(G),
        dT_dG=taxis.slope(G), sublayer_z=(), n_top=float(n_top),
        tau_of=tau_of, n_of=n_of, mass=mass)
    return _with_sublayer(state)


def _with_sublayer(state: BasicState) -> BasicState:
    from dataclasses import replace
    if state.params.taxis.null:
        return state
    return replace(state, sublayer_z=tuple(find_sublayer(state)))



def _top_estimate(params, field, n_fine=4001):
    """Top concentration from the depth form n(tau) = n_top - (V_c/kappa) int_0^tau T.

    Used only as a starting guess for the shooting iteration.
    """
    kappa, vc = params.extinction, params.swim_speed
    t = np.linspace(0.0, kappa, n_fine)
    T = params.taxis(field.total(t))
    drift = vc / kappa * np.concatenate([[0.0], np.cumsum(0.5 * (T[1:] + T[:-1]) * np.diff(t))])
    floor = drift.max()

    def height_left(nt):
        return 1.0 - np.trapezoid(1.0 / (nt - drift), t) / kappa

    lo = floor + 1e-12 * max(1.0, abs(floor))
    hi = max(floor, 0.0) + 2.0
    while height_left(hi) < 0:
        hi *= 2.0
    try:
        return brentq(height_left, lo, hi, xtol=1e-10)
    except ValueError:
        return None


def _shoot(rhs, kappa, n_steps, guess, tol):
    """Secant refinement from ``guess``; bracketing scan plus Brent as fallback."""

    def miss(values):
        return _integrate(rhs, np.asarray(values, dtype=float), n_steps)[1] - kappa

    if guess is not None and guess > 0:
        x = np.array([guess, guess * (1 + 1e-4)])
        fx = miss(x)
        x0, x1, f0, f1 = x[0], x[1], fx[0], fx[1]
        for _ in range(12):
            if f1 == f0:
                break
            x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
            if not x2 > 0:
                break
            x0, f0, x1 = x1, f1, x2
            f1 = float(miss([x1])[0])
            if abs(x1 - x0) <= tol * max(1.0, abs(x1)) or abs(f1) < 1e-14:
                return float(x1)
        log.info("secant shooting failed from %.6g, falling back to a bracket scan", guess)
    vals = miss(_SCAN)
    sign = np.nonzero(np.diff(np.sign(vals)))[0]
    if sign.size == 0:
        raise ShootingError(
            f"no bracket for n_s(1) in [{_SCAN[0]:.0e}, {_SCAN[-1]:.0f}]: "
            f"tau(0) - kappa ranges {vals.min():.3e} .. {vals.max():.3e}")
    i = sign[0]
    return brentq(lambda nt: float(miss([nt])[0]), _SCAN[i], _SCAN[i + 1],
                  xtol=tol, rtol=4 * np.finfo(float).eps)

def level_crossings(func, z_grid, level, xtol=1e-12):
    """Heights where ``func(z) - level`` changes sign, refined by Brent's method."""
    vals = np.asarray(func(z_grid), dtype=float) - level
    out = []
    for i in range(len(z_grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            out.append(float(z_grid[i]))
        elif a * b < 0:
            out.append(brentq(lambda x: float(func(np.array([x]))[0]) - level,
                              z_grid[i], z_grid[i + 1], xtol=xtol))
    if vals[-1] == 0.0:
        out.append(float(z_grid[-1]))
    return out


def find_sublayer(state: BasicState, level: float | None = None) -> list:
    """Heights at which G_s equals the taxis root (the sublayer location)."""
    if level is None:
        level = state.params.taxis.root
    zz = np.linspace(0.0, 1.0, 4 * (state.n_z - 1) + 1)
    return level_crossings(state.G_at, zz, level)


def local_maxima(values) -> list:
    """Indices of strict interior local maxima (plus a maximum at either end)."""
    v = np.asarray(values)
    idx = [i for i in range(1, v.size - 1) if v[i] > v[i - 1] and v[i] >= v[i + 1]]
    if v[-1] > v[-2]:
        idx.append(v.size - 1)
    if v[0] > v[1]:
        idx.insert(0, 0)
    return idx
