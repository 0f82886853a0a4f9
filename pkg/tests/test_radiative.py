import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from photoconv import SuspensionParams, solve_lambda, uniform_intensity
from photoconv.basicstate import level_crossings
from photoconv.radiative import (ConvergenceError, attenuation_weights, diffuse_flux,
                                 diffuse_moments, expn_weights, flux_at, hemisphere_rule)


def params(**kw):
    base = dict(extinction=0.5, albedo=0.4, diffuse_mag=0.26, incidence_deg=0.0)
    base.update(kw)
    return SuspensionParams(**base)


def gauss_nystrom_oracle(p, n=600):
    """Independent Nystrom solve: Gauss-Legendre nodes with classical singularity subtraction.

    Lam_i - (w/2)[sum_j w_j E1(|t_i - t_j|)(Lam_j - Lam_i) + Lam_i (2 - E2(t_i) - E2(k - t_i))] = f_i
    """
    kappa, om = p.extinction, p.albedo
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * kappa * (x + 1)
    w = 0.5 * kappa * w
    d = np.abs(t[:, None] - t[None, :])
    np.fill_diagonal(d, 1.0)
    K = special.expn(1, d) * w[None, :]
    np.fill_diagonal(K, 0.0)
    full = 2 - special.expn(2, t) - special.expn(2, kappa - t)
    A = np.eye(n) - 0.5 * om * (K - np.diag(K.sum(axis=1)) + np.diag(full))
    f = np.exp(-t / p.mu0) + 2 * p.diffuse_mag * special.expn(2, t)
    return t, np.linalg.solve(A, f)


def test_lambert_beer_exact():
    for th in (0.0, 40.0, 80.0):
        p = params(albedo=0.0, diffuse_mag=0.0, incidence_deg=th)
        f = solve_lambda(p)
        ref = np.exp(-f.tau_grid / p.mu0)
        assert np.max(np.abs(f.lam - ref)) <= 4 * np.finfo(float).eps
        tt = np.linspace(0, p.extinction, 37)
        assert np.max(np.abs(f.lam_at(tt) - np.exp(-tt / p.mu0))) <= 4 * np.finfo(float).eps


def test_no_scattering_with_diffuse_top():
    f = solve_lambda(params(albedo=0.0))
    assert f.lam[0] == pytest.approx(1.52, abs=1e-14)


def test_fredholm_residual():
    for p in (params(), params(albedo=1.0, extinction=1.0, diffuse_mag=0.02), params(incidence_deg=60)):
        assert solve_lambda(p).residual <= 1e-9


@pytest.mark.parametrize("kappa", [0.5, 1.0])
def test_kernel_subtraction_identity(kappa):
    tau = np.linspace(0, kappa, 201)
    targets = np.linspace(0.03, kappa - 0.03, 10)
    rows = expn_weights(1, targets, tau).sum(axis=1)
    for t, r in zip(targets, rows):
        direct = (integrate.quad(lambda s: special.expn(1, abs(t - s)), 0, t, limit=200, epsabs=1e-14)[0]
                  + integrate.quad(lambda s: special.expn(1, abs(t - s)), t, kappa, limit=200, epsabs=1e-14)[0])
        closed = 2 - special.expn(2, t) - special.expn(2, kappa - t)
        assert closed == pytest.approx(direct, abs=1e-10)
        assert r == pytest.approx(closed, abs=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_expn_weights_quadratic_density(order):
    tau = np.linspace(0, 1.0, 41)
    dens = lambda s: 1 + 2 * s - 3 * s ** 2
    for x in (0.0, 0.3333, 0.5, 1.0):
        ref = sum(integrate.quad(lambda s: dens(s) * special.expn(order, abs(x - s)), lo, hi, limit=200,
                                 epsabs=1e-14)[0] for lo, hi in ((0, x), (x, 1.0)) if hi > lo)
        got = expn_weights(order, x, tau) @ dens(tau)
        assert got[0] == pytest.approx(ref, abs=1e-11)


@pytest.mark.parametrize("direction", ["down", "up"])
def test_attenuation_weights_quadratic(direction):
    tau = np.linspace(0, 0.8, 21)
    dens = lambda s: 0.5 + s ** 2
    mu = 0.37
    for x in (0.0, 0.21, 0.8):
        lo, hi = (0, x) if direction == "down" else (x, 0.8)
        ref = integrate.quad(lambda s: dens(s) * np.exp(-abs(x - s) / mu) / mu, lo, hi, epsabs=1e-14)[0] if hi > lo else 0
        got = attenuation_weights(x, tau, mu, direction) @ dens(tau)
        assert got[0] == pytest.approx(ref, abs=1e-13)
    with pytest.raises(ValueError):
        attenuation_weights(0.1, tau, mu, "sideways")


def test_direct_and_iterative_routes_agree():
    p = params()
    a = solve_lambda(p, method="direct")
    b = solve_lambda(p, method="iterate", tol=1e-12)
    assert np.max(np.abs(a.lam - b.lam)) < 1e-11
    with pytest.raises(ValueError):
        solve_lambda(p, method="magic")
    with pytest.raises(ConvergenceError):
        solve_lambda(params(albedo=1.0), method="iterate", maxiter=3)


def test_against_independent_gauss_nystrom():
    p = params()
    t, lam_ref = gauss_nystrom_oracle(p)
    f = solve_lambda(p)
    assert np.max(np.abs(f.lam_at(t) - lam_ref)) < 2e-6


def test_grid_refinement_oracle():
    p = params()
    fine = solve_lambda(p, n_tau=2049)
    prod = solve_lambda(p)
    tt = np.linspace(0, p.extinction, 301)
    assert np.max(np.abs(prod.lam_at(tt) - fine.lam_at(tt))) < 1e-6
    half = solve_lambda(p, n_tau=401)
    assert np.max(np.abs(prod.lam_at(tt) - half.lam_at(tt))) < 1e-6


def test_shape_of_profile():
    f = solve_lambda(params())
    assert f.lam[0] >= 1.52
    assert np.all(np.diff(f.lam) < 0)


def test_fast_evaluation_matches_nystrom():
    for p in (params(), params(albedo=1.0, extinction=1.0, diffuse_mag=0.02)):
        f = solve_lambda(p)
        tt = np.concatenate([np.linspace(0, p.extinction, 513), [1e-9, p.extinction - 1e-9]])
        assert np.max(np.abs(f.lam_fast(tt) - f.lam_at(tt))) < 2e-7


TABULATED = [(0.5, 0.26, 0), (0.5, 0.26, 80), (1.0, 0.5, 0), (1.0, 0.5, 80), (0.5, 0.25, 40),
             (0.5, 0.265, 60), (1.0, 0.48, 40)]


@pytest.mark.parametrize("kappa, ID, th", TABULATED)
def test_monotone_for_tabulated_sets(kappa, ID, th):
    f = solve_lambda(params(extinction=kappa, diffuse_mag=ID, incidence_deg=th))
    assert np.all(np.diff(f.lam) < 0)


@settings(max_examples=12, deadline=None)
@given(kappa=st.floats(0.25, 1.0), omega=st.floats(0.0, 0.7), ID=st.floats(0.0, 1.0), th=st.floats(0, 80))
def test_surface_slope_follows_edge_coefficient(kappa, omega, ID, th):
    # Lam ~ Lam(0) + c0 tau log tau near the top, so the profile decreases from
    # the surface exactly when c0 = 2 I_D - omega Lam(0)/2 is positive
    f = solve_lambda(params(extinction=kappa, albedo=omega, diffuse_mag=ID, incidence_deg=th), n_tau=101)
    c0 = 2 * ID - 0.5 * omega * f.lam[0]
    # the secant slope from the surface changes by c0 log(t1/t2) between depths
    lam0 = f.lam_at(0.0)[0]
    t1, t2 = 1e-6, 1e-10
    s1, s2 = [(f.lam_at(t)[0] - lam0) / t for t in (t1, t2)]
    assert s1 - s2 == pytest.approx(c0 * np.log(t1 / t2), abs=1e-4 + 1e-3 * abs(c0))
    if c0 > 1e-3 and omega <= 0.7:
        assert np.all(np.diff(f.lam_at(np.linspace(0, kappa, 201))) < 0)


def test_no_diffuse_top_gives_subsurface_maximum():
    f = solve_lambda(params(extinction=1.0, albedo=0.5, diffuse_mag=0.0))
    assert f.lam[1] > f.lam[0]


def test_hemisphere_rule():
    r = hemisphere_rule(32)
    assert len(r) == 32 and r.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert r.integrate(lambda m: m ** 5) == pytest.approx(1 / 6, abs=1e-14)
    with pytest.raises(ValueError):
        hemisphere_rule(30)


def test_flux_matches_exponential_integral_oracle():
    p = params(extinction=1.0, albedo=0.5, diffuse_mag=0.3)
    f = solve_lambda(p)
    tau = np.linspace(0, 1.0, 21)
    q_quad = flux_at(f, tau)
    q_oracle = f.mu0 * np.exp(-tau / f.mu0) + f.flux_oracle(tau)
    assert np.max(np.abs(q_quad - q_oracle)) < 1e-7


def test_flux_no_diffuse_field():
    for th in (0, 50):
        p = params(albedo=0.0, diffuse_mag=0.0, incidence_deg=th)
        f = diffuse_flux(solve_lambda(p))
        ref = p.mu0 * np.exp(-f.tau_grid / p.mu0)
        assert np.max(np.abs(f.flux_mag - ref)) < 1e-15


@pytest.mark.parametrize("kw", [dict(), dict(albedo=1.0, extinction=1.0, diffuse_mag=0.02), dict(incidence_deg=60)])
def test_horizontal_flux_vanishes(kw):
    f = diffuse_flux(solve_lambda(params(**kw)))
    assert f.flux_horizontal < 1e-10
    assert np.all(f.flux_mag > 0)


def test_diffuse_moment_matches_intensity_difference():
    f = solve_lambda(params())
    tau = np.linspace(0.02, 0.5, 13)
    g, *_ = diffuse_moments(f, tau)
    assert np.max(np.abs(g - f.diffuse(tau))) < 1e-6


def test_uniform_intensity_examples():
    p = params()
    assert uniform_intensity(p, 1.0) == pytest.approx(solve_lambda(p).lam[0], abs=1e-14)
    with pytest.raises(ValueError):
        uniform_intensity(p, 1.2)
    q = SuspensionParams(extinction=1.0, albedo=1.0, diffuse_mag=0.02, taxis_kind="GC19")
    z = np.linspace(0, 1, 201)
    f = solve_lambda(q)
    cross = level_crossings(lambda zz: uniform_intensity(q, zz, field=f), z, 1.9)
    assert len(cross) == 2
    assert cross[0] == pytest.approx(0.65, abs=0.05)
    assert cross[1] == pytest.approx(0.95, abs=0.03)


def test_solver_argument_checks():
    with pytest.raises(ValueError):
        solve_lambda(params(), n_tau=200)
    with pytest.raises(ValueError):
        solve_lambda(params(collimated_mag=0.0))
