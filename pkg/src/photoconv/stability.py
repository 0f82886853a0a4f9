"""Linear stability of the basic state: operator, spectrum, neutral curves.

Unknowns are the vertical velocity W and the running integral Phi of the
concentration disturbance, sampled at every node of a uniform z grid.
Velocity rows carry

    gamma/S_c (D^2 - k^2) W = (D^2 - k^2)^2 W + R k^2 D Phi,

cell rows carry

    gamma D Phi = -[Gamma0 + Gamma1 Phi + (k^2 + Gamma2) D Phi
                    + V_c T_s D^2 Phi - D^3 Phi + (D n_s) W],

so the problem is a generalised eigenproblem A x = gamma B x with R entering
A linearly. Boundary rows have zero B entries. Every matrix is real.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import eig, lu_factor, lu_solve, null_space
from scipy.optimize import brentq, minimize_scalar

from .basicstate import BasicState
from .finitediff import diff_matrix
from .perturbation import (CouplingMatrices, TransportGeometry, gamma_coefficients,
                           radiation_coupling_matrices, transport_geometry)
from .photomodel import TopBoundary

log = logging.getLogger(__name__)

R_BRACKET = (1.0, 5000.0)
R_PANELS = 12
_GAMMA_CAP = 1e6  # eigenvalues beyond this magnitude are discretisation artefacts


class PhiAnchor(str, enum.Enum):
    TOP = "top"        # Phi(1) = 0, from Phi = int_1^z Theta
    BOTTOM = "bottom"  # Phi(0) = 0


class Branch(str, enum.Enum):
    STATIONARY = "stationary"
    OSCILLATORY = "oscillatory"


class NeutralPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellCoefficients:
    """Everything model-specific in the cell-conservation rows.

    ``gamma0`` acts on Phi (the Theta dependence is folded in through D Phi),
    ``light_map`` maps Phi to the total intensity perturbation used in the
    no-flux wall condition.
    """

    swim_speed: float
    T_s: np.ndarray
    n_s: np.ndarray
    dT_dG: np.ndarray
    dn_dz: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma0: np.ndarray
    light_map: np.ndarray


def full_model_coefficients(state: BasicState, coupling: CouplingMatrices) -> CellCoefficients:
    """Coefficients of the scattering model (diffuse perturbation included)."""
    gam = gamma_coefficients(state, coupling)
    D1 = diff_matrix(state.n_z, 1, state.z_grid[1] - state.z_grid[0])
    gamma0 = gam.g0_theta @ D1 + gam.g0_phi
    light = coupling.gc_phi + coupling.gd_theta @ D1 + coupling.gd_phi
    vc = state.params.swim_speed
    return CellCoefficients(vc, state.T_s, state.n_s, state.dT_dG, vc * state.T_s * state.n_s,
                            gam.gamma1, gam.gamma2, gamma0, light)


@dataclass(frozen=True)
class LinearPencil:
    """A(R) = A0 + R A1 and B for one wavenumber.

    Boundary rows (zero rows of B) are eliminated through a null-space basis
    Z of the constraints, which leaves the standard problem
    (M0 + R M1) y = gamma y with x = Z y.
    """

    k: float
    z_grid: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    B: np.ndarray
    schmidt: float

    @property
    def n_z(self):
        return self.z_grid.size

    def A(self, R: float) -> np.ndarray:
        return self.A0 + R * self.A1

    @cached_property
    def reduced(self):
        bc = np.all(self.B == 0.0, axis=1)
        if np.any(self.A1[bc] != 0.0):
            raise ValueError("boundary rows must not depend on R")
        Z = null_space(self.A0[bc])
        rows = ~bc
        Bz = self.B[rows] @ Z
        lu = lu_factor(Bz)
        M0 = lu_solve(lu, self.A0[rows] @ Z)
        M1 = lu_solve(lu, self.A1[rows] @ Z)
        return Z, M0, M1

    def spectrum(self, R: float, vectors: bool = False):
        """Eigenvalues (and full-space eigenvectors) sorted by real part, descending."""
        Z, M0, M1 = self.reduced
        M = M0 + R * M1
        if vectors:
            g, y = np.linalg.eig(M)
        else:
            g = np.linalg.eigvals(M)
        keep = np.abs(g) < _GAMMA_CAP
        idx = np.nonzero(keep)[0]
        idx = idx[np.argsort(-g[idx].real, kind="stable")]
        if vectors:
            return g[idx], Z @ y[:, idx]
        return g[idx]


@dataclass(frozen=True)
class StabilityOperator:
    z_grid: np.ndarray
    k: float
    R: float
    A: np.ndarray
    B: np.ndarray

    @property
    def size(self):
        return self.A.shape[0]


def assemble_pencil(coef: CellCoefficients, z_grid, k: float, schmidt: float,
                    top_bc: TopBoundary = TopBoundary.RIGID,
                    phi_anchor: PhiAnchor = PhiAnchor.TOP,
                    cell_bc: str = "no_flux") -> LinearPencil:
    """Finite-difference pencil for the coupled velocity/concentration system.

    ``cell_bc="fixed"`` replaces the no-flux wall rows by Theta = D Phi = 0;
    it exists so the assembler can be checked on classical convection.
    """
    top_bc = TopBoundary(top_bc)
    phi_anchor = PhiAnchor(phi_anchor)
    n1 = len(z_grid)
    N = n1 - 1
    h = z_grid[1] - z_grid[0]
    D1, D2, D3, D4 = (diff_matrix(n1, m, h) for m in (1, 2, 3, 4))
    I = np.eye(n1)
    k2 = k * k
    A0 = np.zeros((2 * n1, 2 * n1))
    A1 = np.zeros_like(A0)
    B = np.zeros_like(A0)
    W, P = slice(0, n1), slice(n1, 2 * n1)

    # velocity rows: boundary rows at 0, 1, N-1, N; equation on nodes 2..N-2
    lap = D2 - k2 * I
    biharm = D4 - 2 * k2 * D2 + k2 * k2 * I
    eq = np.arange(2, N - 1)
    A0[eq, W] = biharm[eq]
    A1[eq, P] = k2 * D1[eq]
    B[eq, W] = lap[eq] / schmidt
    A0[0, 0] = 1.0
    A0[1, W] = D1[0]
    A0[N - 1, N] = 1.0
    A0[N, W] = D1[N] if top_bc is TopBoundary.RIGID else D2[N]

    # cell rows (offset n1): walls, anchor, equation elsewhere
    vc = coef.swim_speed
    op = -(coef.gamma0 + coef.gamma1[:, None] * I + (k2 + coef.gamma2)[:, None] * D1
           + vc * coef.T_s[:, None] * D2 - D3)
    coupling_w = -coef.dn_dz
    if phi_anchor is PhiAnchor.TOP:
        eq_nodes = np.arange(1, N - 1)
        anchor = N
    else:
        eq_nodes = np.arange(2, N)
        anchor = 0
    rows = n1 + eq_nodes
    A0[rows, P] = op[eq_nodes]
    A0[rows, eq_nodes] = coupling_w[eq_nodes]
    B[rows, P] = D1[eq_nodes]
    # wall conditions occupy the row of the dropped node next to each wall
    wall_rows = {0: n1 + 0, N: n1 + N - 1} if phi_anchor is PhiAnchor.TOP else {0: n1 + 1, N: n1 + N}
    for node, row in wall_rows.items():
        if cell_bc == "no_flux":
            A0[row, P] = (D2[node] - vc * coef.T_s[node] * D1[node]
                          - vc * coef.n_s[node] * coef.dT_dG[node] * coef.light_map[node])
        elif cell_bc == "fixed":
            A0[row, P] = D1[node]
        else:
            raise ValueError(f"unknown cell boundary condition {cell_bc!r}")
    arow = n1 + (N if phi_anchor is PhiAnchor.TOP else 0)
    if arow in wall_rows.values():
        raise AssertionError("row layout clash")
    A0[arow, n1 + anchor] = 1.0
    return LinearPencil(float(k), np.asarray(z_grid), A0, A1, B, schmidt)


def build_operator(state: BasicState, coupling: CouplingMatrices, k: float, R: float,
                   top_bc=None, phi_anchor: PhiAnchor = PhiAnchor.TOP) -> StabilityOperator:
    if coupling.gd_theta.shape[0] != state.n_z:
        raise ValueError("coupling matrices and basic state use different grids")
    if top_bc is None:
        top_bc = state.params.top_bc
    pen = assemble_pencil(full_model_coefficients(state, coupling), state.z_grid, k,
                          state.params.schmidt, top_bc, phi_anchor)
    return StabilityOperator(pen.z_grid, float(k), float(R), pen.A(R), pen.B)


# -- spectra --------------------------------------------------------------------

def _finite(alpha, beta, scale):
    ok = np.abs(beta) > 1e-13 * scale
    g = np.full(alpha.shape, np.nan + 0j)
    g[ok] = alpha[ok] / beta[ok]
    ok &= np.abs(g) < _GAMMA_CAP
    return ok, g


def growth_spectrum(A, B, vectors=False):
    """Finite generalised eigenvalues sorted by real part (descending)."""
    scale = max(np.abs(B).max(), 1.0)
    if vectors:
        w, vr = eig(A, B, right=True, homogeneous_eigvals=True)
    else:
        w = eig(A, B, right=False, homogeneous_eigvals=True)
    alpha, beta = w
    ok, g = _finite(alpha, beta, scale)
    idx = np.nonzero(ok)[0]
    idx = idx[np.argsort(-g[idx].real, kind="stable")]
    if vectors:
        return g[idx], vr[:, idx]
    return g[idx]


def spectrum_of(op: StabilityOperator):
    return growth_spectrum(op.A, op.B)


def leading(pencil: LinearPencil, R: float):
    g = pencil.spectrum(R)
    if g.size == 0:
        raise NeutralPointError("no finite eigenvalues")
    return g[0]


def stationary_candidates(pencil: LinearPencil, lo=R_BRACKET[0], hi=R_BRACKET[1]):
    """Real R in [lo, hi] at which gamma = 0 is an eigenvalue: M0 y = -R M1 y."""
    _, M0, M1 = pencil.reduced
    alpha, beta = eig(M0, -M1, right=False, homogeneous_eigvals=True)
    ok = np.abs(beta) > 1e-12 * max(np.abs(M1).max(), 1.0)
    r = alpha[ok] / beta[ok]
    r = r[(np.abs(r.imag) <= 1e-8 * np.abs(r)) & (r.real >= lo) & (r.real <= hi)].real
    return np.sort(r)


@dataclass(frozen=True)
class NeutralPoint:
    k: float
    R: float
    frequency: float
    branch: Branch
    growth_residual: float = 0.0


def _classify(g):
    return Branch.OSCILLATORY if abs(g.imag) > 1e-6 else Branch.STATIONARY


def neutral_R(pencil: LinearPencil, seed: float | None = None, bracket=R_BRACKET,
              panels: int = R_PANELS, rtol: float = 1e-10) -> NeutralPoint:
    """Smallest R in ``bracket`` at which the leading growth rate crosses zero.

    Stationary crossings come exactly from the pencil M0 y = -R M1 y. The
    spectrum is then probed below the first of them (log-spaced panels for a
    cold start, near ``seed`` and just below the candidate when continuing
    along a curve);
    a positive leading growth rate there means an oscillatory pair crossed
    first, and that crossing is located by Brent's method on Re(gamma).
    """
    lo, hi = bracket
    cache = {}

    def g_of(R):
        if R not in cache:
            cache[R] = leading(pencil, R)
        return cache[R]

    def f(R):
        return g_of(R).real

    cands = stationary_candidates(pencil, lo, hi)
    top = float(cands[0]) if cands.size else hi
    cold = list(np.geomspace(lo, top, panels + 1)[:-1])
    if seed is None or not cands.size:
        probes = cold
    else:
        probes = [r for r in (seed / 1.25, seed / 1.05) if lo <= r < top]
        if probes and f(probes[0]) > 0:  # the curve fell steeply: start cold
            probes = cold
    probes.append(top * (1 - 1e-7))
    if f(probes[0]) > 0:
        raise NeutralPointError(f"unstable already at R = {probes[0]:g} (k = {pencil.k:.4g})")
    hit = next((i for i, r in enumerate(probes) if f(r) > 0), None)
    if hit is None:
        if not cands.size:
            raise NeutralPointError(f"no neutral point in range [{lo:g}, {hi:g}] (k = {pencil.k:.4g})")
        gR = g_of(top)
        return NeutralPoint(float(pencil.k), top, 0.0, Branch.STATIONARY, float(gR.real))
    b = probes[hit]
    if hit > 0:
        a = probes[hit - 1]
    else:  # only the probe below the candidate was tried: walk down
        a = b
        while f(a) > 0:
            a /= 1.1
            if a < lo:
                raise NeutralPointError(f"unstable already at R = {lo:g} (k = {pencil.k:.4g})")
    R = brentq(f, a, b, xtol=1e-12, rtol=rtol)
    gR = g_of(R)
    return NeutralPoint(float(pencil.k), float(R), float(abs(gR.imag)), _classify(gR), float(gR.real))


# -- neutral curves and critical points ------------------------------------------

@dataclass
class StabilityModel:
    """Bundles the basic state with cached radiation geometry for repeated k solves."""

    state: BasicState
    phi_anchor: PhiAnchor = PhiAnchor.TOP
    top_bc: TopBoundary | None = None
    n_nu: int = 16
    model: str = "full"
    _geometry: TransportGeometry | None = field(default=None, repr=False)
    _pencils: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.top_bc is None:
            self.top_bc = self.state.params.top_bc

    @property
    def geometry(self) -> TransportGeometry:
        if self._geometry is None:
            self._geometry = transport_geometry(self.state, self.n_nu)
        return self._geometry

    def coefficients(self, k: float) -> CellCoefficients:
        if self.model == "upswim":
            from .upswim import upswim_coefficients
            return upswim_coefficients(self.state)
        p = self.state.params
        geo = None if (p.albedo == 0 and p.diffuse_mag == 0) else self.geometry
        cm = radiation_coupling_matrices(self.state, k, geo)
        return full_model_coefficients(self.state, cm)

    def pencil(self, k: float) -> LinearPencil:
        key = float(k)
        if key not in self._pencils:
            if len(self._pencils) > 64:
                self._pencils.clear()
            self._pencils[key] = assemble_pencil(self.coefficients(k), self.state.z_grid, k,
                                                 self.state.params.schmidt, self.top_bc,
                                                 self.phi_anchor)
        return self._pencils[key]

    def neutral(self, k: float, seed=None, bracket=R_BRACKET) -> NeutralPoint:
        return neutral_R(self.pencil(k), seed, bracket)


def trace_neutral_curve(model: StabilityModel, k_min: float, k_max: float, n_k: int = 40,
                        bracket=R_BRACKET, both_branches: bool = True, ks=None):
    """Neutral points over log-spaced k, continued from the previous R.

    Where the first crossing is oscillatory the stationary crossing at larger
    R is also recorded (when one exists in the bracket), so both branches are
    available. Wavenumbers where no neutral point was found are returned in
    the second list. An explicit ascending ``ks`` overrides the log-spaced grid.
    """
    if ks is None:
        if not 0 < k_min < k_max:
            raise ValueError("need 0 < k_min < k_max")
        ks = np.geomspace(k_min, k_max, n_k)
    points, gaps = [], []
    seed = None
    for k in ks:
        try:
            pt = model.neutral(k, seed, bracket)
        except NeutralPointError as exc:
            log.warning("k = %.4g: %s", k, exc)
            gaps.append(float(k))
            seed = None
            continue
        points.append(pt)
        seed = pt.R
        if both_branches and pt.branch is Branch.OSCILLATORY:
            st = _stationary_branch_point(model.pencil(k), pt.R, bracket)
            if st is not None:
                points.append(st)
    return points, gaps


def _stationary_branch_point(pencil: LinearPencil, R_from: float, bracket):
    """Lowest stationary neutral R above ``R_from`` (real eigenvalue through zero)."""
    for c in stationary_candidates(pencil, R_from, bracket[1]):
        g = pencil.spectrum(c)
        real = g[np.abs(g.imag) <= 1e-6 * np.maximum(1.0, np.abs(g))]
        if real.size and abs(real[np.argmax(real.real)].real) < 1e-6 * max(1.0, abs(g[0])):
            return NeutralPoint(pencil.k, float(c), 0.0, Branch.STATIONARY, 0.0)
    return None


def branch_junctions(model: StabilityModel, k_min: float, k_max: float, n_k: int = 24,
                     bracket=R_BRACKET, xtol: float = 1e-3) -> list:
    """Wavenumbers where the first crossing switches between stationary and oscillatory.

    The branch type of the first neutral crossing is sampled on a log grid
    and every change is bisected in log k to relative width ``xtol``.
    Wavenumbers without a neutral point in ``bracket`` are skipped.
    """
    def kind(k):
        try:
            return model.neutral(k, bracket=bracket).branch
        except NeutralPointError:
            return None

    ks = np.geomspace(k_min, k_max, n_k)
    kinds = [kind(k) for k in ks]
    found = []
    for (a, ka), (b, kb) in zip(zip(ks, kinds), zip(ks[1:], kinds[1:])):
        if ka is None or kb is None or ka is kb:
            continue
        while b / a - 1 > xtol:
            m = np.sqrt(a * b)
            km = kind(m)
            if km is None:
                break
            if km is ka:
                a = m
            else:
                b = m
        found.append(float(np.sqrt(a * b)))
    return found


@dataclass(frozen=True)
class CriticalSolution:
    k_c: float
    R_c: float
    wavelength: float
    frequency: float
    mode: int
    overstable: bool
    branch: Branch = Branch.STATIONARY
    growth: complex = 0j

    @property
    def period(self):
        return 2 * np.pi / self.frequency if self.frequency > 0 else float("inf")


def first_crossings(points):
    """Keep, per wavenumber, the point with the smallest R (the actual neutral curve)."""
    best = {}
    for p in points:
        if p.k not in best or p.R < best[p.k].R:
            best[p.k] = p
    return [best[k] for k in sorted(best)]


def find_critical(model: StabilityModel, points, xtol: float = 1e-4) -> CriticalSolution:
    """Global minimum of R(k) over the traced points.

    The discrete minimiser is refined by bounded Brent minimisation in log k
    between its neighbours (robust to kinks where two branches cross).
    """
    curve = first_crossings(points)
    if not curve:
        raise NeutralPointError("empty neutral curve")
    ks = np.array([p.k for p in curve])
    Rs = np.array([p.R for p in curve])
    i = int(np.argmin(Rs))
    lo = ks[max(i - 1, 0)]
    hi = ks[min(i + 1, len(ks) - 1)]
    cache = {}

    def Rk(logk):
        k = float(np.exp(logk))
        if k not in cache:
            try:
                cache[k] = model.neutral(k, seed=curve[i].R)
            except NeutralPointError:
                cache[k] = NeutralPoint(k, np.inf, 0.0, Branch.STATIONARY)
        return cache[k].R

    if lo < hi and 0 < i < len(ks) - 1:
        res = minimize_scalar(Rk, bounds=(np.log(lo), np.log(hi)), method="bounded",
                              options={"xatol": xtol})
        kc = float(np.exp(res.x))
        best = cache.get(kc) or model.neutral(kc, seed=curve[i].R)
    else:
        best = curve[i]
        kc = best.k
    if best.R > Rs[i]:
        best, kc = curve[i], curve[i].k
    pen = model.pencil(kc)
    g, vecs = pen.spectrum(best.R, vectors=True)
    mode = classify_mode(pen, g[0], vecs[:, 0])
    return CriticalSolution(kc, best.R, 2 * np.pi / kc, best.frequency, mode,
                            best.branch is Branch.OSCILLATORY, best.branch, complex(g[0]))


def classify_mode(pencil: LinearPencil, gamma, vec, R=None, rel_floor: float = 1e-6) -> int:
    """1 + number of sign changes of Re W after rotating the largest sample to be real."""
    n1 = pencil.n_z
    W = np.asarray(vec[:n1], dtype=complex)
    amp = np.abs(W)
    if amp.max() < 1e-12:
        log.warning("eigenvector has negligible velocity component")
        return 0
    W = W * np.exp(-1j * np.angle(W[np.argmax(amp)]))
    w = W.real[1:-1]
    w = w[np.abs(w) > rel_floor * amp.max()]
    return 1 + int(np.count_nonzero(np.diff(np.sign(w)) != 0))


def eigen_residual(A, B, gamma, vec) -> float:
    r = A @ vec - gamma * (B @ vec)
    return float(np.linalg.norm(r) / (np.linalg.norm(A, 2) * np.linalg.norm(vec)))


def eigenfunction_field(W, gamma, k: float, z_grid, n_x: int = 64, t: float = 0.0):
    """w1(x, z, t) = Re[W(z) exp(gamma t + i k x)] over one horizontal wavelength."""
    x = np.linspace(0.0, 2 * np.pi / k, n_x)
    phase = np.exp(gamma * t + 1j * k * x)
    return x, np.asarray(z_grid), np.real(np.asarray(W)[:, None] * phase[None, :])
