import logging

import numpy as np
import pytest
from scipy.linalg import svdvals

from photoconv import SuspensionParams, solve_lambda
from photoconv.basicstate import solve_basic_state
from photoconv.photomodel import TopBoundary
from photoconv.stability import (Branch, CellCoefficients, NeutralPoint, NeutralPointError, PhiAnchor,
                                 StabilityModel, assemble_pencil, branch_junctions, build_operator, classify_mode,
                                 eigen_residual, eigenfunction_field, find_critical, growth_spectrum,
                                 neutral_R, spectrum_of, trace_neutral_curve)
from photoconv.perturbation import radiation_coupling_matrices

ROW_THETA0 = dict(swim_speed=15, extinction=0.5, albedo=0.4, diffuse_mag=0.26)
ROW_OVERSTABLE = dict(swim_speed=15, extinction=1.0, albedo=0.4, diffuse_mag=0.5, incidence_deg=40)
ROW_GRAZING = dict(swim_speed=10, extinction=0.5, albedo=0.4, diffuse_mag=0.25, incidence_deg=80)
ROW_V10 = dict(swim_speed=10, extinction=0.5, albedo=0.4, diffuse_mag=0.25)


# -- classical convection through the same assembler ---------------------------------

def convection_coefficients(n):
    """Cell rows reduce to (D^2 - k^2) Theta = W: Rayleigh-Benard with unit gradient."""
    z0 = np.zeros(n)
    return CellCoefficients(0.0, z0, np.ones(n), z0, np.ones(n), z0, z0,
                            np.zeros((n, n)), np.zeros((n, n)))


def convection_pencil(k, top_bc=TopBoundary.RIGID, n=101):
    z = np.linspace(0, 1, n)
    return assemble_pencil(convection_coefficients(n), z, k, 7.0, top_bc, PhiAnchor.TOP,
                           cell_bc="fixed")


class ConvectionModel:
    def __init__(self, top_bc):
        self.top_bc = top_bc
        self._p = {}

    def pencil(self, k):
        if k not in self._p:
            self._p[k] = convection_pencil(k, self.top_bc)
        return self._p[k]

    def neutral(self, k, seed=None, bracket=(1.0, 5000.0)):
        return neutral_R(self.pencil(k), seed, bracket)


@pytest.mark.parametrize("top_bc, k, R", [(TopBoundary.RIGID, 3.117, 1707.762),
                                          (TopBoundary.STRESS_FREE, 2.682, 1100.65)])
def test_convection_thresholds(top_bc, k, R):
    pt = neutral_R(convection_pencil(k, top_bc))
    assert pt.branch is Branch.STATIONARY
    assert pt.R == pytest.approx(R, rel=2e-5)


def test_convection_critical_point():
    model = ConvectionModel(TopBoundary.RIGID)
    pts, gaps = trace_neutral_curve(model, 2.0, 5.0, 9)
    assert not gaps
    crit = find_critical(model, pts)
    assert crit.R_c == pytest.approx(1707.762, rel=2e-5)
    assert crit.k_c == pytest.approx(3.117, abs=2e-3)
    assert crit.wavelength * crit.k_c == pytest.approx(2 * np.pi, rel=1e-14)
    assert crit.mode == 1 and not crit.overstable


def test_boundary_row_count_and_structure():
    pen = convection_pencil(3.0)
    bc = np.all(pen.B == 0, axis=1)
    assert np.count_nonzero(bc) == 7  # 4 for W, 3 for Phi
    assert pen.A0.shape == pen.B.shape == (202, 202)
    # R multiplies only the buoyancy block: at R = 0 the velocity rows see no Phi
    n = pen.n_z
    assert np.all(pen.A1[:, :n] == 0) and np.all(pen.A1[n:] == 0)
    assert np.all(pen.A0[:n, n:] == 0)


def test_unknown_cell_condition():
    z = np.linspace(0, 1, 101)
    with pytest.raises(ValueError, match="cell boundary"):
        assemble_pencil(convection_coefficients(101), z, 3.0, 7.0, cell_bc="periodic")


def test_neutral_errors():
    pen = convection_pencil(3.117)
    with pytest.raises(NeutralPointError, match="no neutral point in range"):
        neutral_R(pen, bracket=(1.0, 1000.0))
    with pytest.raises(NeutralPointError, match="unstable already"):
        neutral_R(pen, bracket=(2000.0, 5000.0))
    with pytest.raises(NeutralPointError, match="empty"):
        find_critical(ConvectionModel(TopBoundary.RIGID), [])
    with pytest.raises(ValueError):
        trace_neutral_curve(ConvectionModel(TopBoundary.RIGID), 2.0, 1.0)


def test_classify_mode_trivial():
    pen = convection_pencil(3.0)
    z = pen.z_grid
    vec = np.zeros(2 * z.size, complex)
    vec[:z.size] = np.sin(np.pi * z) * np.exp(0.3j)
    assert classify_mode(pen, 0j, vec) == 1
    vec[:z.size] = -np.sin(2 * np.pi * z)
    assert classify_mode(pen, 0j, vec) == 2
    vec[:z.size] = np.sin(3 * np.pi * z) * 1j
    assert classify_mode(pen, 0j, vec) == 3


def test_classify_mode_without_velocity(caplog):
    pen = convection_pencil(3.0)
    with caplog.at_level(logging.WARNING):
        assert classify_mode(pen, 0j, np.r_[np.zeros(pen.n_z), np.ones(pen.n_z)]) == 0
    assert "negligible" in caplog.text


def test_eigenfunction_field_periodicity():
    z = np.linspace(0, 1, 41)
    W = np.sin(np.pi * z) * (1 + 0.2j * z)
    k = 2.3
    x, zz, f0 = eigenfunction_field(W, 0j, k, z, n_x=33)
    assert x[-1] == pytest.approx(2 * np.pi / k)
    assert np.max(np.abs(f0[:, 0] - f0[:, -1])) < 1e-12
    gamma = 12.07j
    period = 2 * np.pi / gamma.imag
    _, _, a = eigenfunction_field(W, gamma, k, z, t=0.1)
    _, _, b = eigenfunction_field(W, gamma, k, z, t=0.1 + period)
    assert np.max(np.abs(a - b)) < 1e-10
    # a quarter period shifts the pattern by a quarter wavelength
    _, _, c = eigenfunction_field(W, gamma, k, z, n_x=65, t=0.1 + period / 4)
    _, _, d = eigenfunction_field(W, gamma, k, z, n_x=65, t=0.1)
    assert np.max(np.abs(np.roll(d[:, :-1], -16, axis=1) - c[:, :-1])) < 1e-12


# -- suspension operators --------------------------------------------------------------

def model_for(kw, top_bc=TopBoundary.STRESS_FREE, n_z=151):
    p = SuspensionParams(**kw)
    st = solve_basic_state(p, solve_lambda(p), n_z=n_z)
    return StabilityModel(st, top_bc=top_bc)


@pytest.fixture(scope="module")
def theta0():
    return model_for(ROW_THETA0)


@pytest.fixture(scope="module")
def overstable():
    return model_for(ROW_OVERSTABLE)


def test_reduced_spectrum_matches_qz(theta0):
    k, R = 2.8, 650.0
    pen = theta0.pencil(k)
    g_red = pen.spectrum(R)
    g_qz = growth_spectrum(pen.A(R), pen.B)
    # QZ on the full pencil carries the infinite eigenvalues of the boundary
    # rows and loses digits; the two routes agree to its accuracy
    assert np.max(np.abs(g_red[:8] - g_qz[:8]) / np.abs(g_qz[:8])) < 1e-4
    A, B = pen.A(R), pen.B
    scale = 1 / np.max(np.abs(np.hstack([A, B])), axis=1)[:, None]

    def distance_to_singular(g):
        sv = svdvals((A - g * B) * scale)
        return sv[-1] / sv[0]

    for j in range(4):
        assert distance_to_singular(g_red[j]) < 1e-15
        assert distance_to_singular(g_red[j]) < distance_to_singular(g_qz[j])
    st = theta0.state
    op = build_operator(st, radiation_coupling_matrices(st, k), k, R, top_bc=theta0.top_bc)
    assert np.max(np.abs(spectrum_of(op)[:8] - g_qz[:8]) / np.abs(g_qz[:8])) < 1e-9


def test_operator_grid_mismatch(theta0):
    p = theta0.state.params
    other = solve_basic_state(p, theta0.state.field, n_z=101)
    with pytest.raises(ValueError, match="grids"):
        build_operator(theta0.state, radiation_coupling_matrices(other, 1.0), 1.0, 100.0)


def test_spectrum_is_conjugate_symmetric(overstable):
    g = overstable.pencil(2.2).spectrum(340.0)[:30]
    for x in g[np.abs(g.imag) > 1e-6]:
        assert np.min(np.abs(g - np.conj(x))) <= 1e-8 * max(1.0, abs(x))


def test_eigen_residuals(overstable):
    pen = overstable.pencil(2.2)
    R = 340.0
    g, V = pen.spectrum(R, vectors=True)
    A = pen.A(R)
    for j in range(6):
        assert eigen_residual(A, pen.B, g[j], V[:, j]) <= 1e-8


def test_neutral_point_invariants_and_transversality(theta0, overstable):
    for model, k in ((theta0, 2.843), (overstable, 2.228)):
        pt = model.neutral(k)
        pen = model.pencil(k)
        g = pen.spectrum(pt.R)[0]
        assert abs(g.real) <= 1e-6
        assert (pt.branch is Branch.STATIONARY) == (abs(g.imag) <= 1e-6)
        assert pen.spectrum(1.01 * pt.R)[0].real > 0
        up, down = pen.spectrum(1.005 * pt.R)[0].real, pen.spectrum(0.995 * pt.R)[0].real
        assert (up - down) / (0.01 * pt.R) > 0


def test_stationary_reference_point_is_nearly_neutral(theta0):
    g = theta0.pencil(2 * np.pi / 2.21).spectrum(709.69)
    assert abs(g[0].imag) == 0.0
    assert abs(g[0].real) <= 1e-3 * np.abs(g[3])


def test_overstable_reference_pair(overstable):
    g = overstable.pencil(2 * np.pi / 2.82).spectrum(329.53)
    assert g[0] == pytest.approx(np.conj(g[1]), abs=1e-8)
    assert abs(g[0].imag) == pytest.approx(12.07, rel=0.06)
    assert abs(g[0].real) <= 1e-2 * abs(g[0].imag)


@pytest.mark.parametrize("kw, wavelength, R", [(ROW_THETA0, 2.21, 709.69), (ROW_GRAZING, 3.88, 189.45)])
def test_neutral_R_at_reference_wavelengths(kw, wavelength, R):
    pt = model_for(kw).neutral(2 * np.pi / wavelength)
    assert pt.branch is Branch.STATIONARY
    assert pt.R == pytest.approx(R, rel=0.02)


def test_stationary_only_curve():
    model = model_for(ROW_V10)
    pts, gaps = trace_neutral_curve(model, 1.5, 4.0, 6)
    assert not gaps and len(pts) == 6
    assert all(p.branch is Branch.STATIONARY and p.frequency == 0.0 for p in pts)


def test_seeded_and_cold_starts_agree(theta0):
    pen = theta0.pencil(2.5)
    cold = neutral_R(pen)
    warm = neutral_R(pen, seed=cold.R * 1.1)
    assert warm.R == pytest.approx(cold.R, rel=1e-9)
    # a seed far above the curve (steep descent between wavenumbers) falls back
    far = neutral_R(pen, seed=cold.R * 2.0)
    assert far.R == pytest.approx(cold.R, rel=1e-9)
    assert isinstance(cold, NeutralPoint)


def test_rigid_top_changes_the_threshold():
    free = model_for(ROW_THETA0, n_z=101).neutral(2.843).R
    rigid = model_for(ROW_THETA0, top_bc=TopBoundary.RIGID, n_z=101).neutral(2.843).R
    assert rigid > free


# -- spectral collocation oracle ------------------------------------------------------

def chebyshev(N):
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.r_[2, np.ones(N - 1), 2] * (-1) ** np.arange(N + 1)
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1 / c) / (dX + np.eye(N + 1))
    return x, D - np.diag(D.sum(axis=1))


def spectral_growth(st, k, R, N):
    """Leading growth rate of the absorbing-suspension problem by Chebyshev collocation.

    Same equations and wall conditions as the finite-difference pencil, with
    the light perturbation (kappa/mu0) G^c Phi and coefficients evaluated from
    the basic-state interpolants rather than nodal differences.
    """
    p = st.params
    x, Dx = chebyshev(N)
    z, D = (x + 1) / 2, 2 * Dx  # node 0 is the top
    D2 = D @ D
    D3, D4 = D2 @ D, D2 @ D2
    I = np.eye(N + 1)
    n, tau = st.n_of(z), st.tau_of(z)
    G, Gc = st.field.total(tau), st.field.collimated(tau)
    T, Tp = p.taxis(G), p.taxis.slope(G)
    c, vc, k2 = p.extinction / p.mu0, p.swim_speed, k * k
    g1 = c * vc * (D @ (n * Tp * Gc))
    g2 = 2 * c * vc * n * Tp * Gc
    A = np.zeros((2 * N + 2,) * 2)
    B = np.zeros_like(A)
    W, P = slice(0, N + 1), slice(N + 1, 2 * N + 2)
    A[W, W] = D4 - 2 * k2 * D2 + k2 * k2 * I
    A[W, P] = R * k2 * D
    B[W, W] = (D2 - k2 * I) / p.schmidt
    A[P, P] = -(g1[:, None] * I + (k2 + g2)[:, None] * D + vc * T[:, None] * D2 - D3)
    A[P, W] = -np.diag(st.n_of.derivative()(z))
    B[P, P] = D
    rows = (0, 1, N - 1, N, N + 1, N + 2, 2 * N + 1)
    A[list(rows)] = 0
    B[list(rows)] = 0
    A[0, 0] = A[N, N] = 1
    A[1, W] = D2[0]  # stress-free top
    A[N - 1, W] = D[N]
    A[N + 1, N + 1] = 1  # Phi = 0 at the top
    for node, row in ((0, N + 2), (N, 2 * N + 1)):
        A[row, P] = D2[node] - vc * T[node] * D[node] - vc * n[node] * Tp[node] * c * Gc[node] * I[node]
    g = growth_spectrum(A, B)
    return g[0]


def test_finite_differences_converge_to_spectral_solution():
    p = SuspensionParams(swim_speed=15, extinction=1.0, albedo=0.0, diffuse_mag=0.0)
    f = solve_lambda(p, n_tau=401)
    k, R = 2.2281, 330.0
    st = solve_basic_state(p, f, n_z=201)
    ref = spectral_growth(st, k, R, 64)
    # collocation is limited by conditioning, far below the differences measured here
    assert spectral_growth(st, k, R, 80) == pytest.approx(ref, abs=5e-4)
    errs = {}
    for nz in (201, 401):
        s = st if nz == 201 else solve_basic_state(p, f, n_z=nz)
        g = StabilityModel(s, top_bc=TopBoundary.STRESS_FREE).pencil(k).spectrum(R)[0]
        errs[nz] = abs(g - ref)
    # fourth order: halving h cuts the error by 2^4 once resolved (3.5 allowed)
    assert errs[401] < errs[201] / 2 ** 3.5
    assert errs[401] < 2e-3 * abs(ref)


class StubBranches:
    """Neutral points whose branch type switches at k = 1.7; nothing below k = 0.5."""

    def neutral(self, k, seed=None, bracket=None):
        if k < 0.5:
            raise NeutralPointError("no neutral point in range")
        if k < 1.7:
            return NeutralPoint(k, 100.0, 3.0, Branch.OSCILLATORY)
        return NeutralPoint(k, 100.0, 0.0, Branch.STATIONARY)


def test_branch_junctions_bisects_the_switch():
    found = branch_junctions(StubBranches(), 0.3, 4.0, n_k=7, xtol=1e-6)
    assert len(found) == 1 and found[0] == pytest.approx(1.7, rel=1e-6)
    assert branch_junctions(StubBranches(), 2.0, 4.0, n_k=5) == []
