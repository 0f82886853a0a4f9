"""Basic-state radiation in a uniform-extinction slab.

The total intensity, scaled on the collimated magnitude, solves

    Lam(tau) = (omega/2) int_0^kappa Lam(t) E1(|tau - t|) dt
               + exp(-tau/mu0) + 2 (I_D/I_t) E2(tau)

on ``0 <= tau <= kappa``. It is discretised by product integration: Lam is
interpolated by piecewise quadratics on a uniform grid (panels of two cells)
and the weakly singular E1 kernel is integrated against that interpolant in
closed form wherever it is near the target point, so the log singularity is
carried analytically rather than sampled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from math import factorial

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammainc, xlogy

from .photomodel import SuspensionParams
from .specfun import QuadratureRule, expn, expn_moment_antiderivative, gauss_rule

log = logging.getLogger(__name__)

DEFAULT_N_TAU = 201
DEFAULT_N_MU = 32
_GL_FAR = gauss_rule(10, 0.0, 2.0)


class ConvergenceError(RuntimeError):
    pass


# -- product-integration weights on a uniform quadratic-panel grid ----------

def _basis_taylor(c):
    """Taylor coefficients of the 3 local quadratic basis functions about s=c.

    Returns an array (..., 3 basis, 3 powers) so that
    ``L_k(c + x) = sum_p out[..., k, p] * x**p``.
    """
    c = np.asarray(c, dtype=float)
    out = np.empty(c.shape + (3, 3))
    # L0 = (s-1)(s-2)/2, L1 = -s(s-2), L2 = s(s-1)/2
    out[..., 0, 0] = 0.5 * (c - 1) * (c - 2)
    out[..., 0, 1] = c - 1.5
    out[..., 0, 2] = 0.5
    out[..., 1, 0] = -c * (c - 2)
    out[..., 1, 1] = -2 * c + 2
    out[..., 1, 2] = -1.0
    out[..., 2, 0] = 0.5 * c * (c - 1)
    out[..., 2, 1] = c - 0.5
    out[..., 2, 2] = 0.5
    return out


def _check_grid(nodes):
    n = len(nodes) - 1
    if n < 2 or n % 2:
        raise ValueError("product integration needs an odd number of nodes (even cell count)")
    h = (nodes[-1] - nodes[0]) / n
    return n, h


def expn_weights(n_order, targets, nodes, side="both"):
    """Weights ``W`` with ``W @ f ~ int f(t) E_n(|x - t|) dt`` over the grid.

    ``side`` restricts the integral to ``t < x`` ("below") or ``t > x``
    ("above"). ``f`` is taken piecewise quadratic on panels of two cells.
    """
    nodes = np.asarray(nodes, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    ncell, h = _check_grid(nodes)
    npan = ncell // 2
    a = nodes[0] + 2 * h * np.arange(npan)
    b = a + 2 * h
    W = np.zeros((targets.size, nodes.size))

    # distance from each target to each panel
    dist = np.maximum(a[None, :] - targets[:, None], targets[:, None] - b[None, :])
    near = dist < h  # includes panels containing the target

    # far panels: Gauss-Legendre (the kernel is analytic there)
    s_q = _GL_FAR.nodes
    basis_q = np.stack([0.5 * (s_q - 1) * (s_q - 2), -s_q * (s_q - 2), 0.5 * s_q * (s_q - 1)])
    tq = a[:, None] + h * s_q[None, :]  # (npan, q)
    diff = targets[:, None, None] - tq[None, :, :]
    keep = np.ones_like(diff, dtype=bool)
    if side == "below":
        keep = diff > 0
    elif side == "above":
        keep = diff < 0
    far = ~near
    kern = np.zeros_like(diff)
    mask = far[:, :, None] & keep
    kern[mask] = expn(n_order, np.abs(diff[mask]))
    contrib = h * np.einsum("tpq,q,kq->tpk", kern, _GL_FAR.weights, basis_q)
    for k in range(3):
        np.add.at(W, (slice(None), 2 * np.arange(npan) + k), contrib[:, :, k])

    # near panels: closed-form moments of E_n times polynomials
    ti, pi = np.nonzero(near)
    if ti.size:
        t = targets[ti]
        pa, pb = a[pi], b[pi]
        c = (t - pa) / h
        coef = _basis_taylor(c)  # (m, 3, 3) in powers of x = (t'-t)/h
        acc = np.zeros((ti.size, 3))

        def pieces(u0, u1, sign):
            # int over t' = t + sign*u, u in [u0, u1]
            res = np.zeros((ti.size, 3))
            ok = u1 > u0
            if not np.any(ok):
                return res
            for p in range(3):
                m1 = expn_moment_antiderivative(n_order, p, u1[ok])
                m0 = expn_moment_antiderivative(n_order, p, u0[ok])
                mom = (m1 - m0) * (sign / h) ** p
                res[ok] += coef[ok][:, :, p] * mom[:, None]
            return res

        # part of panel above the target
        if side in ("both", "above"):
            lo = np.maximum(pa, t) - t
            hi = pb - t
            acc += pieces(np.maximum(lo, 0.0), np.maximum(hi, 0.0), +1.0)
        if side in ("both", "below"):
            lo = t - np.minimum(pb, t)
            hi = t - pa
            acc += pieces(np.maximum(lo, 0.0), np.maximum(hi, 0.0), -1.0)
        for k in range(3):
            np.add.at(W, (ti, 2 * pi + k), acc[:, k])
    return W


def _exp_moments(V, m, pmax=2):
    """int_0^V exp(-v/m) v**p dv / m for p = 0..pmax (regularised gamma form)."""
    x = V / m
    return np.stack([m ** p * factorial(p) * gammainc(p + 1, x) for p in range(pmax + 1)], axis=-1)


def attenuation_weights(targets, nodes, mu, direction):
    """Weights for the formal solution of the transfer equation along one ray.

    Returns ``W`` with ``W @ S ~ int S(t) exp(-|x - t|/mu) dt / mu`` where the
    integral runs over ``t < x`` for ``direction == "down"`` (light moving to
    larger optical depth) and over ``t > x`` for ``"up"``.
    """
    nodes = np.asarray(nodes, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    ncell, h = _check_grid(nodes)
    npan = ncell // 2
    a = nodes[0] + 2 * h * np.arange(npan)
    b = a + 2 * h
    W = np.zeros((targets.size, nodes.size))
    t = targets[:, None]
    if direction == "down":
        # panels below t in depth: t' in [a, min(b, t)], distance measured from t
        vlo = np.clip(t - np.minimum(b, t), 0.0, None)
        vhi = np.clip(t - a, 0.0, None)
        sign = -1.0
    elif direction == "up":
        vlo = np.clip(np.maximum(a, t) - t, 0.0, None)
        vhi = np.clip(b - t, 0.0, None)
        sign = 1.0
    else:
        raise ValueError(direction)
    c = (t - a) / h  # target position in local panel coordinate
    coef = _basis_taylor(c)  # (T, P, 3, 3)
    # moments int_{vlo}^{vhi} exp(-v/mu) v^p dv / mu, computed as shifted integrals
    damp = np.exp(-vlo / mu)
    span = vhi - vlo
    mom_shift = _exp_moments(span, mu)  # moments in w = v - vlo
    # v^p = (w + vlo)^p expanded
    mom = np.empty_like(mom_shift)
    mom[..., 0] = mom_shift[..., 0]
    mom[..., 1] = mom_shift[..., 1] + vlo * mom_shift[..., 0]
    mom[..., 2] = mom_shift[..., 2] + 2 * vlo * mom_shift[..., 1] + vlo ** 2 * mom_shift[..., 0]
    mom = mom * damp[..., None]
    scale = (sign / h) ** np.arange(3)
    contrib = np.einsum("tpkj,tpj->tpk", coef, mom * scale)
    contrib[span <= 0] = 0.0
    for k in range(3):
        np.add.at(W, (slice(None), 2 * np.arange(npan) + k), contrib[:, :, k])
    return W


# -- the radiation field ------------------------------------------------------

@dataclass(frozen=True)
class RadiationField:
    """Radiation in the uniform-thickness optical-depth coordinate.

    ``lam`` holds total intensity over the collimated magnitude at
    ``tau_grid``. ``g_coll``, ``g_diff`` and ``flux_mag`` are dimensionless
    intensities (already multiplied by ``I_t``); the flux points along -z.
    """

    tau_grid: np.ndarray
    lam: np.ndarray
    omega: float
    kappa: float
    mu0: float
    collimated_mag: float
    diffuse_mag: float
    residual: float
    g_coll: np.ndarray
    g_diff: np.ndarray
    flux_mag: np.ndarray | None = None
    flux_horizontal: float | None = None

    @property
    def diffuse_ratio(self):
        return self.diffuse_mag / self.collimated_mag

    def source_term(self, tau):
        tau = np.asarray(tau, dtype=float)
        term = np.exp(-tau / self.mu0)
        if self.diffuse_ratio:
            term = term + 2.0 * self.diffuse_ratio * expn(2, tau)
        return term

    def lam_at(self, tau):
        """Nystrom interpolation: re-apply the integral operator at ``tau``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        out = self.source_term(tau)
        if self.omega:
            out = out + 0.5 * self.omega * expn_weights(1, tau, self.tau_grid) @ self.lam
        return out

    @cached_property
    def _edge_coeffs(self):
        # E2(t) = t*log(t) + entire, and the scattering integral behaves like
        # -(omega/2) Lam(end) * d*log(d) at distance d from either face
        half = 0.5 * self.omega
        return 2.0 * self.diffuse_ratio - half * self.lam[0], -half * self.lam[-1]

    def _edge_part(self, tau):
        tau = np.asarray(tau, dtype=float)
        top, bottom = self._edge_coeffs
        d = self.kappa - tau
        return top * xlogy(tau, tau) + bottom * xlogy(d, d)

    @cached_property
    def spline(self) -> CubicSpline:
        """Cubic spline of the smooth remainder of Lam on a refined table."""
        fine = np.linspace(0.0, self.kappa, 4 * (len(self.tau_grid) - 1) + 1)
        return CubicSpline(fine, self.lam_at(fine) - self._edge_part(fine), bc_type="not-a-knot")

    def lam_fast(self, tau):
        """Lam at ``tau`` from the spline table (clamped to [0, kappa])."""
        tau = np.clip(np.asarray(tau, dtype=float), 0.0, self.kappa)
        return self.spline(tau) + self._edge_part(tau)

    def total(self, tau):
        """G_s at optical depth ``tau`` (spline; clamps outside [0, kappa])."""
        return self.collimated_mag * self.lam_fast(tau)

    def collimated(self, tau):
        return self.collimated_mag * np.exp(-np.asarray(tau, dtype=float) / self.mu0)

    def diffuse(self, tau):
        if not (self.omega or self.diffuse_mag):
            return np.zeros_like(np.asarray(tau, dtype=float))
        return self.total(tau) - self.collimated(tau)

    def diffuse_intensity(self, tau, mu_nodes):
        """Basic diffuse radiance I_s^d at depths ``tau`` for directions ``mu_nodes``.

        ``mu_nodes`` are direction cosines with respect to +z (upward). The
        result has shape (len(tau), len(mu_nodes)).
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        mu_nodes = np.atleast_1d(np.asarray(mu_nodes, dtype=float))
        src = self.omega * self.collimated_mag * self.lam / (4.0 * np.pi)
        out = np.zeros((tau.size, mu_nodes.size))
        for j, mu in enumerate(mu_nodes):
            m = abs(mu)
            if mu < 0:  # travelling down, towards larger tau
                val = self.diffuse_mag / np.pi * np.exp(-tau / m)
                if self.omega:
                    val = val + attenuation_weights(tau, self.tau_grid, m, "down") @ src
            else:
                val = np.zeros_like(tau)
                if self.omega:
                    val = attenuation_weights(tau, self.tau_grid, m, "up") @ src
            out[:, j] = val
        return out

    def flux_oracle(self, tau):
        """Net downward diffuse flux from exponential-integral moments (angle-exact)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        f = 2.0 * self.diffuse_mag * expn(3, tau)
        if self.omega:
            lam = self.collimated_mag * self.lam
            below = expn_weights(2, tau, self.tau_grid, side="below") @ lam
            above = expn_weights(2, tau, self.tau_grid, side="above") @ lam
            f = f + 0.5 * self.omega * (below - above)
        return f


def _lambda_system(params: SuspensionParams, theta0: float, n_tau: int):
    kappa = params.extinction
    tau = np.linspace(0.0, kappa, n_tau)
    W = expn_weights(1, tau, tau)
    rhs = np.exp(-tau / np.cos(theta0))
    if params.diffuse_mag:
        rhs = rhs + 2.0 * params.diffuse_mag / params.collimated_mag * expn(2, tau)
    return tau, W, rhs


def solve_lambda(params: SuspensionParams, theta0: float | None = None,
                 n_tau: int = DEFAULT_N_TAU, method: str = "direct",
                 tol: float = 1e-9, maxiter: int = 20000) -> RadiationField:
    """Solve the Fredholm equation for the scaled total intensity Lam(tau).

    ``method="direct"`` solves the dense system (I - omega/2 K) Lam = rhs;
    ``method="iterate"`` runs the fixed-point (source) iteration instead.
    """
    if n_tau < 33 or n_tau % 2 == 0:
        raise ValueError("n_tau must be odd and >= 33")
    if params.collimated_mag <= 0:
        raise ValueError("collimated magnitude must be positive (intensities are scaled on it)")
    if theta0 is None:
        theta0 = params.theta0
    omega = params.albedo
    tau, W, rhs = _lambda_system(params, theta0, n_tau)
    K = 0.5 * omega * W
    if method == "direct":
        lam = np.linalg.solve(np.eye(n_tau) - K, rhs)
    elif method == "iterate":
        lam = rhs.copy()
        for it in range(maxiter):
            new = K @ lam + rhs
            step = np.max(np.abs(new - lam))
            lam = new
            if step < 0.1 * tol:
                break
        else:
            raise ConvergenceError(f"source iteration stalled, last step {step:.3e}")
    else:
        raise ValueError(f"unknown method {method!r}")
    residual = float(np.max(np.abs(lam - K @ lam - rhs)))
    if residual > tol:
        raise ConvergenceError(f"Fredholm residual {residual:.3e} above {tol:.1e}")
    mu0 = float(np.cos(theta0))
    It = params.collimated_mag
    g_coll = It * np.exp(-tau / mu0)
    return RadiationField(tau_grid=tau, lam=lam, omega=omega, kappa=params.extinction,
                          mu0=mu0, collimated_mag=It, diffuse_mag=params.diffuse_mag,
                          residual=residual, g_coll=g_coll, g_diff=It * lam - g_coll)


_MU_BREAKS = (0.0, 0.005, 0.05, 0.3, 1.0)


def hemisphere_rule(n_mu: int = DEFAULT_N_MU) -> QuadratureRule:
    """Composite Gauss rule in mu on (0, 1), graded towards grazing directions.

    The radiance entering from the top, exp(-tau/mu), varies on the scale
    mu ~ tau near the surface, so panels shrink towards mu = 0. ``n_mu`` is
    split evenly across the panels.
    """
    npan = len(_MU_BREAKS) - 1
    if n_mu % npan or n_mu < 2 * npan:
        raise ValueError(f"n_mu must be a multiple of {npan} and at least {2 * npan}")
    rules = [gauss_rule(n_mu // npan, lo, hi) for lo, hi in zip(_MU_BREAKS[:-1], _MU_BREAKS[1:])]
    return QuadratureRule(np.concatenate([r.nodes for r in rules]),
                          np.concatenate([r.weights for r in rules]), (0.0, 1.0))


def diffuse_moments(field: RadiationField, tau, n_mu: int = DEFAULT_N_MU, n_phi: int = 8):
    """Angular moments of the basic diffuse radiance at depths ``tau``.

    Returns (G_d, q_z, q_x, q_y) with q_z positive upward.
    """
    rule = hemisphere_rule(n_mu)
    mus = np.concatenate([rule.nodes, -rule.nodes])
    w = np.concatenate([rule.weights, rule.weights])
    I = field.diffuse_intensity(tau, mus)
    g = 2 * np.pi * I @ w
    qz = 2 * np.pi * I @ (w * mus)
    # the radiance carries no phi dependence; trapezoid in phi of cos/sin
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1 - mus ** 2)
    qx = (I @ (w * sin_t)) * np.sum(np.cos(phi)) * 2 * np.pi / n_phi
    qy = (I @ (w * sin_t)) * np.sum(np.sin(phi)) * 2 * np.pi / n_phi
    return g, qz, qx, qy


def diffuse_flux(field: RadiationField, params: SuspensionParams | None = None,
                 theta0: float | None = None, n_mu: int = DEFAULT_N_MU) -> RadiationField:
    """Populate the flux magnitude from the reconstructed diffuse radiance.

    ``q_s = -(q_z^c + q_z^d)``, the downward net flux, so the total flux is
    ``-q_s z_hat``.
    """
    tau = field.tau_grid
    _, qz, qx, qy = diffuse_moments(field, tau, n_mu)
    qc = field.mu0 * field.collimated_mag * np.exp(-tau / field.mu0)
    flux = qc - qz
    horiz = float(max(np.max(np.abs(qx)), np.max(np.abs(qy))))
    if horiz > 1e-10:
        raise ConvergenceError(f"horizontal basic flux {horiz:.2e} should vanish")
    return replace(field, flux_mag=flux, flux_horizontal=horiz)


def flux_at(field: RadiationField, tau, n_mu: int = DEFAULT_N_MU):
    """Downward net flux magnitude q_s at arbitrary optical depths."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    _, qz, _, _ = diffuse_moments(field, tau, n_mu)
    return field.mu0 * field.collimated_mag * np.exp(-tau / field.mu0) - qz


def uniform_intensity(params: SuspensionParams, z, theta0: float | None = None,
                      n_tau: int = DEFAULT_N_TAU, field: RadiationField | None = None):
    """Total intensity G_s(z) in a uniform suspension (n == 1)."""
    if field is None:
        field = solve_lambda(params, theta0, n_tau)
    z = np.asarray(z, dtype=float)
    if np.any((z < 0) | (z > 1)):
        raise ValueError("z must lie in [0, 1]")
    return params.collimated_mag * field.lam_at(params.extinction * (1.0 - z)).reshape(z.shape)
