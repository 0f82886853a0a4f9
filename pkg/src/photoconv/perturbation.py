"""Perturbed radiation and the coefficient functions of the linearised cell equation.

A normal-mode disturbance n1 = Theta(z) exp(gamma t + i k x) changes the
optical depth above every point, which perturbs the collimated beam in closed
form, and it changes the scattering source and the extinction of the basic
diffuse field, which perturbs the diffuse radiance Psi(z, s).

With the horizontal wavevector along x the azimuthal integration of the
transfer equation's formal solution is done exactly,

    int_0^{2pi} exp(-i a cos(phi)) dphi          = 2 pi J0(a),
    int_0^{2pi} cos(phi) exp(-i a cos(phi)) dphi = -2 pi i J1(a),

with a = k tan(theta) |z - z'|, leaving a polar-angle quadrature and a
depth integral. Every map from Theta to a radiation moment is linear and real
apart from the horizontal flux, which is -i times a real map. The module
therefore works with real matrices throughout and returns
``P = -1j * p_real``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import j0, j1

from .basicstate import BasicState
from .finitediff import diff_matrix
from .radiative import ConvergenceError, hemisphere_rule
from .specfun import gauss_rule

log = logging.getLogger(__name__)

DEFAULT_N_NU = 16
DEFAULT_CELL_POINTS = 8
_ADJ_POINTS = 10


# -- interpolation helpers on the uniform z grid ------------------------------

def _stencil_start(cell, n_nodes):
    return np.clip(cell - 1, 0, n_nodes - 4)


def lagrange_rows(z, n_nodes):
    """Cubic Lagrange weights (4 nearest nodes) on a uniform grid over [0, 1].

    Returns ``(start, weights)``: ``weights[:, m]`` multiplies node ``start + m``.
    """
    z = np.asarray(z, dtype=float)
    N = n_nodes - 1
    cell = np.clip(np.floor(z * N).astype(int), 0, N - 1)
    start = _stencil_start(cell, n_nodes)
    x = z * N - start  # local coordinate, nodes at 0, 1, 2, 3
    w = np.empty(z.shape + (4,))
    w[..., 0] = -(x - 1) * (x - 2) * (x - 3) / 6.0
    w[..., 1] = x * (x - 2) * (x - 3) / 2.0
    w[..., 2] = -x * (x - 1) * (x - 3) / 2.0
    w[..., 3] = x * (x - 1) * (x - 2) / 6.0
    return start, w


def interpolation_matrix(z, n_nodes):
    """Dense matrix evaluating the cubic interpolant at points ``z``."""
    start, w = lagrange_rows(z, n_nodes)
    M = np.zeros((np.size(z), n_nodes))
    rows = np.arange(np.size(z))
    for m in range(4):
        np.add.at(M, (rows, start.ravel() + m), w.reshape(-1, 4)[:, m])
    return M


def cumulative_from_top(n_nodes):
    """Matrix J with (J f)_i = int_1^{z_i} f dz for the cubic interpolant of f."""
    N = n_nodes - 1
    h = 1.0 / N
    g = gauss_rule(4, 0.0, 1.0)
    Q = np.zeros((N, n_nodes))  # cell integrals
    for c in range(N):
        zq = (c + g.nodes) * h
        Q[c] = h * g.weights @ interpolation_matrix(zq, n_nodes)
    J = np.zeros((n_nodes, n_nodes))
    # int_1^{z_i} = -(sum of cells i .. N-1)
    J[:-1] = -np.cumsum(Q[::-1], axis=0)[::-1]
    return J


# -- k-independent transport geometry ----------------------------------------

@dataclass
class TransportGeometry:
    """Kernel pieces that depend on the basic state and angles but not on k.

    Far cells use Gauss points in z; the cell adjacent to each target uses
    Gauss points in s = 1 - exp(-dtau/nu), which integrates the attenuation
    exactly and copes with grazing directions.
    """

    state: BasicState
    nu: np.ndarray  # (M,) positive direction cosines
    w_nu: np.ndarray
    cell_points: int

    def __post_init__(self):
        st = self.state
        N = st.n_z - 1
        self.N = N
        h = 1.0 / N
        z = st.z_grid
        g = gauss_rule(self.cell_points, 0.0, 1.0)
        self.gl_x = g.nodes
        cells = np.repeat(np.arange(N), g.nodes.size)
        xq = np.tile(g.nodes, N)
        zq = (cells + xq) * h
        wq = np.tile(g.weights, N) * h
        self.zq, self.cells_q = zq, cells
        tau_q = st.tau_of(zq)
        self.Lq = interpolation_matrix(zq, N + 1) * wq[:, None]  # weights folded in
        p = st.params
        fld = st.field
        self.n_q = st.n_of(zq)
        self.G_q = fld.total(tau_q)
        self.Gc_q = fld.collimated(tau_q)
        mus = np.concatenate([self.nu, -self.nu])
        Iq = fld.diffuse_intensity(tau_q, mus)  # (Q, 2M)
        I_up, I_dn = Iq[:, : self.nu.size], Iq[:, self.nu.size:]

        # side masks: upward light reaches z_i from cells c <= i-2 (far part)
        i_idx = np.arange(N + 1)[:, None]
        up = cells[None, :] <= i_idx - 2
        dn = cells[None, :] >= i_idx + 1
        dtau = np.abs(st.tau[:, None] - tau_q[None, :])
        # distance index for Bessel lookup: |z_i - z_q| / h = |i - c - x|
        rel = i_idx - cells[None, :]  # in [-N+1, N]
        self._gather = (rel + N) * g.nodes.size + np.tile(np.arange(g.nodes.size), N)[None, :]
        self._dist_table = np.abs((np.arange(-N, N + 1)[:, None] - g.nodes[None, :])).ravel() * h
        self.far_mask = up | dn
        M = self.nu.size
        self.E_iso = np.empty((M, N + 1, zq.size))
        self.E_ani = np.empty((M, N + 1, zq.size))
        kappa = p.extinction
        for m, nu in enumerate(self.nu):
            e = np.where(self.far_mask, np.exp(-dtau / nu) / nu, 0.0)
            self.E_iso[m] = e
            self.E_ani[m] = e * kappa * np.where(up, I_up[None, :, m], I_dn[None, :, m])

        # adjacent cells via the exponential map
        gs = gauss_rule(_ADJ_POINTS, 0.0, 1.0)
        adj = []
        for side in (+1, -1):  # +1: upward light from the cell below
            if side > 0:
                tgt = np.arange(1, N + 1)
                edge_tau = st.tau[tgt - 1]
            else:
                tgt = np.arange(0, N)
                edge_tau = st.tau[tgt + 1]
            U = np.abs(edge_tau - st.tau[tgt])  # optical thickness of the cell
            sb = -np.expm1(-U[None, :] / self.nu[:, None])  # (M, T)
            s = sb[:, :, None] * gs.nodes[None, None, :]
            ws = sb[:, :, None] * gs.weights[None, None, :]
            u = -self.nu[:, None, None] * np.log1p(-s)
            tau_p = st.tau[tgt][None, :, None] + side * u
            z_p = _z_of_tau(st, tau_p, tgt, side, N)
            n_p = st.n_of(z_p)
            adj.append(dict(tgt=tgt, z=z_p, tau=tau_p, w=ws / (kappa * n_p), n=n_p,
                            dz=np.abs(z_p - z[tgt][None, :, None]), side=side))
        # basic fields at adjacent points; the diffuse radiance there is
        # interpolated from nodal values (cubic), the rest is exact
        I_nodes = fld.diffuse_intensity(st.tau, mus)
        for a in adj:
            a["G"] = fld.total(a["tau"])
            a["Gc"] = fld.collimated(a["tau"])
            col = slice(0, M) if a["side"] > 0 else slice(M, 2 * M)
            start, lw = lagrange_rows(a["z"], N + 1)
            a["start"], a["lw"] = start, lw
            In = I_nodes[:, col]  # (N+1, M)
            idx = start[..., None] + np.arange(4)
            vals = In[idx, np.arange(M)[:, None, None, None]]  # (M, T, P, 4)
            a["I"] = np.sum(vals * lw, axis=-1)
        self.adj = adj
        self.I_nodes = I_nodes

    @cached_property
    def tan_theta(self):
        return np.sqrt(1.0 - self.nu ** 2) / self.nu

    @cached_property
    def sin_theta(self):
        return np.sqrt(1.0 - self.nu ** 2)


def _z_of_tau(st: BasicState, tau_p, tgt, side, N):
    """Invert tau(z) inside the cell adjacent to each target (Newton, cubic Hermite)."""
    z = st.z_grid
    lo = z[tgt - 1] if side > 0 else z[tgt]
    hi = z[tgt] if side > 0 else z[tgt + 1]
    lo = np.broadcast_to(lo[None, :, None], tau_p.shape)
    hi = np.broadcast_to(hi[None, :, None], tau_p.shape)
    t_lo, t_hi = st.tau_of(lo), st.tau_of(hi)
    # linear start, then safeguarded Newton with dtau/dz = -kappa n
    x = lo + (tau_p - t_lo) / (t_hi - t_lo) * (hi - lo)
    kappa = st.params.extinction
    for _ in range(30):
        f = st.tau_of(x) - tau_p
        dx = f / (kappa * st.n_of(x))
        x = np.clip(x + dx, lo, hi)
        if np.max(np.abs(dx)) < 1e-15:
            break
    return x


def transport_geometry(state: BasicState, n_nu: int = DEFAULT_N_NU,
                       cell_points: int = DEFAULT_CELL_POINTS) -> TransportGeometry:
    rule = hemisphere_rule(n_nu)
    return TransportGeometry(state, np.asarray(rule.nodes), np.asarray(rule.weights), cell_points)


# -- per-wavenumber transport operators ---------------------------------------

@dataclass(frozen=True)
class TransportOperators:
    """Real matrices mapping nodal source data to angular moments.

    ``g_src``/``p_src`` act on an isotropic source sampled at nodes; the
    ``*_ext`` matrices give the extinction term -kappa I_s^d Theta.
    """

    k: float
    g_src_n: np.ndarray   # source a*n*X   (X nodal) -> moment G
    g_src_G: np.ndarray   # source a*G*X
    g_src_Gc: np.ndarray  # source a*n*(kappa/mu0)*Gc*X
    g_ext: np.ndarray     # -kappa I X
    p_src_n: np.ndarray
    p_src_G: np.ndarray
    p_src_Gc: np.ndarray
    p_ext: np.ndarray


def transport_operators(geo: TransportGeometry, k: float) -> TransportOperators:
    st = geo.state
    p = st.params
    N = geo.N
    a_src = p.albedo * p.extinction / (4.0 * np.pi)
    c_coll = p.extinction / p.mu0
    M = geo.nu.size
    two_pi = 2.0 * np.pi
    # Bessel factors from the distance table
    arg = k * geo.tan_theta[:, None] * geo._dist_table[None, :]
    B0 = two_pi * j0(arg)
    B1 = two_pi * geo.sin_theta[:, None] * j1(arg)
    Kg = np.zeros((N + 1, geo.zq.size))
    Kp = np.zeros_like(Kg)
    Ag = np.zeros_like(Kg)
    Ap = np.zeros_like(Kg)
    for m in range(M):
        b0 = B0[m][geo._gather]
        b1 = B1[m][geo._gather]
        w = geo.w_nu[m]
        Kg += w * b0 * geo.E_iso[m]
        Kp += w * b1 * geo.E_iso[m]
        Ag += w * b0 * geo.E_ani[m]
        Ap += w * b1 * geo.E_ani[m]
    L = geo.Lq
    out = {
        "g_src_n": Kg @ (a_src * geo.n_q[:, None] * L),
        "g_src_G": Kg @ (a_src * geo.G_q[:, None] * L),
        "g_src_Gc": Kg @ (a_src * c_coll * geo.n_q[:, None] * geo.Gc_q[:, None] * L),
        "g_ext": -(Ag @ L),
        "p_src_n": Kp @ (a_src * geo.n_q[:, None] * L),
        "p_src_G": Kp @ (a_src * geo.G_q[:, None] * L),
        "p_src_Gc": Kp @ (a_src * c_coll * geo.n_q[:, None] * geo.Gc_q[:, None] * L),
        "p_ext": -(Ap @ L),
    }
    # adjacent cells
    kappa = p.extinction
    for a in geo.adj:
        argp = k * geo.tan_theta[:, None, None] * a["dz"]
        wb0 = geo.w_nu[:, None, None] * two_pi * j0(argp) * a["w"]
        wb1 = geo.w_nu[:, None, None] * two_pi * geo.sin_theta[:, None, None] * j1(argp) * a["w"]
        rows = np.broadcast_to(a["tgt"][None, :, None], a["w"].shape)
        coeffs = {
            "n": a_src * a["n"],
            "G": a_src * a["G"],
            "Gc": a_src * c_coll * a["n"] * a["Gc"],
            "ext": -kappa * a["I"],
        }
        for name, cf in coeffs.items():
            for kind, wb in (("g", wb0), ("p", wb1)):
                key = f"{kind}_src_{name}" if name != "ext" else f"{kind}_ext"
                val = wb * cf
                for mm in range(4):
                    np.add.at(out[key], (rows.ravel(), (a["start"] + mm).ravel()),
                              (val * a["lw"][..., mm]).ravel())
    return TransportOperators(k=float(k), **out)


# -- public data types ---------------------------------------------------------

@dataclass(frozen=True)
class PerturbedRadiation:
    """Perturbed intensity moments for one disturbance profile Theta."""

    g_coll_pert: np.ndarray
    g_diff_pert: np.ndarray
    flux_x: np.ndarray  # complex, P
    flux_y: np.ndarray  # complex, Q
    iterations: int = 0

    @property
    def total(self):
        return self.g_coll_pert + self.g_diff_pert


@dataclass(frozen=True)
class CouplingMatrices:
    """Linear maps from (Theta, Phi) nodal values to radiation moments.

    Phi is the running integral int_1^z Theta. The horizontal flux is
    ``P = -1j * (p_theta @ Theta + p_phi @ Phi)``.
    """

    k: float
    gc_phi: np.ndarray       # diagonal map Phi -> G^c perturbation
    gd_theta: np.ndarray
    gd_phi: np.ndarray
    p_theta: np.ndarray
    p_phi: np.ndarray
    cumulative: np.ndarray   # Phi = cumulative @ Theta

    def apply(self, theta) -> PerturbedRadiation:
        theta = np.asarray(theta)
        phi = self.cumulative @ theta
        gc = self.gc_phi @ phi
        gd = self.gd_theta @ theta + self.gd_phi @ phi
        P = -1j * (self.p_theta @ theta + self.p_phi @ phi)
        return PerturbedRadiation(gc, gd, P, np.zeros_like(P))


def perturbed_collimated(state: BasicState, theta, cumulative=None):
    """Collimated perturbation (kappa/mu0) G_s^c(z) int_1^z Theta."""
    p = state.params
    if cumulative is None:
        cumulative = cumulative_from_top(state.n_z)
    phi = cumulative @ np.asarray(theta)
    return p.extinction / p.mu0 * state.G_coll * phi


def radiation_coupling_matrices(state: BasicState, k: float,
                                geometry: TransportGeometry | None = None,
                                n_nu: int = DEFAULT_N_NU) -> CouplingMatrices:
    """Matrices of the perturbed-radiation response to unit Theta and Phi vectors."""
    if geometry is None:
        geometry = transport_geometry(state, n_nu)
    p = state.params
    n1 = state.n_z
    J = cumulative_from_top(n1)
    gc_phi = np.diag(p.extinction / p.mu0 * state.G_coll)
    if p.albedo == 0 and p.diffuse_mag == 0:
        Z = np.zeros((n1, n1))
        return CouplingMatrices(float(k), gc_phi, Z, Z.copy(), Z.copy(), Z.copy(), J)
    ops = transport_operators(geometry, k)
    lhs = np.eye(n1) - ops.g_src_n
    gd_theta = np.linalg.solve(lhs, ops.g_src_G + ops.g_ext)
    gd_phi = np.linalg.solve(lhs, ops.g_src_Gc)
    p_theta = ops.p_src_n @ gd_theta + ops.p_src_G + ops.p_ext
    p_phi = ops.p_src_n @ gd_phi + ops.p_src_Gc
    return CouplingMatrices(float(k), gc_phi, gd_theta, gd_phi, p_theta, p_phi, J)


def solve_perturbed_rte(state: BasicState, theta, k: float,
                        geometry: TransportGeometry | None = None,
                        n_nu: int = DEFAULT_N_NU, tol: float = 1e-12,
                        maxiter: int = 5000, relax: float | None = None) -> PerturbedRadiation:
    """Source iteration for the perturbed diffuse radiance.

    The scattering source is rebuilt from the latest G^d estimate until
    successive iterates differ by less than ``tol`` (sup norm).
    """
    if geometry is None:
        geometry = transport_geometry(state, n_nu)
    p = state.params
    theta = np.asarray(theta, dtype=float)
    J = cumulative_from_top(state.n_z)
    phi = J @ theta
    gc = p.extinction / p.mu0 * state.G_coll * phi
    if p.albedo == 0 and p.diffuse_mag == 0:
        z = np.zeros_like(theta)
        return PerturbedRadiation(gc, z, z.astype(complex), z.astype(complex), 0)
    ops = transport_operators(geometry, k)
    if relax is None:
        relax = 0.5 if p.albedo >= 0.9 else 1.0
    fixed_g = ops.g_src_Gc @ phi + (ops.g_src_G + ops.g_ext) @ theta
    gd = np.zeros_like(theta)
    for it in range(1, maxiter + 1):
        new = ops.g_src_n @ gd + fixed_g
        new = relax * new + (1 - relax) * gd
        step = np.max(np.abs(new - gd))
        gd = new
        if step < tol:
            break
    else:
        raise ConvergenceError(f"perturbed source iteration stalled at {step:.3e}")
    p_real = ops.p_src_n @ gd + ops.p_src_Gc @ phi + (ops.p_src_G + ops.p_ext) @ theta
    P = -1j * p_real
    return PerturbedRadiation(gc, gd, P, np.zeros_like(P), it)


# -- coefficient functions ------------------------------------------------------

@dataclass(frozen=True)
class GammaCoefficients:
    """Coefficient functions of the linearised cell-conservation equation.

    ``gamma1`` and ``gamma2`` are profiles; the scattering part ``gamma0`` is
    an operator on the disturbance, ``gamma0 = g0_theta @ Theta + g0_phi @ Phi``
    (already real: the i k P term contributes -V_c n T k p_real / q_s).
    """

    gamma1: np.ndarray
    gamma2: np.ndarray
    g0_theta: np.ndarray
    g0_phi: np.ndarray

    def gamma0(self, theta, cumulative):
        return self.g0_theta @ theta + self.g0_phi @ (cumulative @ theta)


def gamma_coefficients(state: BasicState, coupling: CouplingMatrices) -> GammaCoefficients:
    p = state.params
    vc = p.swim_speed
    h = state.z_grid[1] - state.z_grid[0]
    D = diff_matrix(state.n_z, 1, h)
    c = p.extinction / p.mu0
    nTp = state.n_s * state.dT_dG
    gamma1 = c * vc * (D @ (nTp * state.G_coll))
    gamma2 = 2 * c * vc * nTp * state.G_coll + vc * state.dT_dG * (D @ state.G_diff)
    if np.any(state.q_s <= 0):
        raise ValueError("basic flux magnitude must be positive")
    flux_fac = vc * state.n_s * state.T_s * coupling.k / state.q_s
    g0_theta = vc * D @ (nTp[:, None] * coupling.gd_theta) - flux_fac[:, None] * coupling.p_theta
    g0_phi = vc * D @ (nTp[:, None] * coupling.gd_phi) - flux_fac[:, None] * coupling.p_phi
    return GammaCoefficients(gamma1, gamma2, g0_theta, g0_phi)
