import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from photoconv import SuspensionParams, solve_lambda
from photoconv.basicstate import (ShootingError, _shoot, find_sublayer, level_crossings, local_maxima,
                                  solve_basic_state)

ROW1 = dict(swim_speed=15, extinction=0.5, albedo=0.4, diffuse_mag=0.26)
FIG5 = dict(swim_speed=10, extinction=1.0, albedo=1.0, diffuse_mag=0.02, taxis_kind="GC19")


@pytest.fixture(scope="module")
def row1():
    p = SuspensionParams(**ROW1)
    return solve_basic_state(p, solve_lambda(p))


def depth_form_oracle(p, field):
    """n(tau) and z(tau) from the depth form, integrated with an adaptive solver.

    n(tau) = n_top - (V_c/kappa) int_0^tau T,   z(tau) = 1 - (1/kappa) int_0^tau dt/n.
    """
    kappa, vc = p.extinction, p.swim_speed

    def run(n_top):
        rhs = lambda t, y: [-vc / kappa * p.taxis(field.total(t)), -1.0 / (kappa * y[0])]
        return solve_ivp(rhs, (0, kappa), [n_top, 1.0], rtol=1e-12, atol=1e-13, dense_output=True)

    n_top = brentq(lambda nt: run(nt).y[1, -1], 0.2, 20.0, xtol=1e-14)
    return n_top, run(n_top)


def test_invariants(row1):
    st = row1
    assert abs(st.mass - 1) < 1e-8
    assert np.trapezoid(st.n_s, st.z_grid) == pytest.approx(1.0, abs=1e-4)
    assert np.all(st.n_s > 0)
    assert st.tau[-1] == 0.0
    assert abs(st.tau[0] - 0.5) < 1e-8
    assert st.residual() <= 1e-7


def test_against_depth_form_oracle(row1):
    p = row1.params
    n_top, sol = depth_form_oracle(p, row1.field)
    assert row1.n_top == pytest.approx(n_top, rel=2e-8)
    tau = np.linspace(0, p.extinction, 41)
    n_ref, z_ref = sol.sol(tau)
    assert np.max(np.abs(row1.n_of(z_ref) - n_ref)) < 1e-8


def test_peak_at_mid_height(row1):
    i = int(np.argmax(row1.n_s))
    assert 0.4 < row1.z_grid[i] < 0.65
    assert len(row1.sublayer_z) == 1
    assert abs(row1.sublayer_z[0] - row1.z_grid[i]) < 0.05


def test_oblique_light_lifts_and_sharpens_peak(row1):
    p = SuspensionParams(**ROW1, incidence_deg=40)
    st = solve_basic_state(p, solve_lambda(p))
    assert st.z_grid[np.argmax(st.n_s)] > row1.z_grid[np.argmax(row1.n_s)]
    assert st.n_s.max() > row1.n_s.max()


def test_null_taxis_uniform():
    p = SuspensionParams(**ROW1, taxis_kind="NONE")
    st = solve_basic_state(p, solve_lambda(p))
    assert np.all(st.n_s == 1.0)
    assert st.sublayer_z == ()
    assert st.tau[0] == pytest.approx(0.5, abs=1e-12)


def test_fig5_bimodal_then_unimodal():
    p0 = SuspensionParams(**FIG5)
    s0 = solve_basic_state(p0, solve_lambda(p0))
    peaks = local_maxima(s0.n_s)
    assert len(peaks) == 2
    zp = sorted(s0.z_grid[peaks])
    assert zp[0] == pytest.approx(0.8, abs=0.06) and zp[1] >= 0.95
    p50 = SuspensionParams(**FIG5, incidence_deg=50)
    s50 = solve_basic_state(p50, solve_lambda(p50))
    peaks50 = local_maxima(s50.n_s)
    assert len(peaks50) == 1 and s50.z_grid[peaks50[0]] > 0.9
    assert abs(s0.mass - 1) < 1e-8 and abs(s50.mass - 1) < 1e-8


def test_grid_refinement(row1):
    p = row1.params
    fine = solve_basic_state(p, row1.field, n_z=301)
    assert np.max(np.abs(fine.n_s[::2] - row1.n_s)) < 1e-6


def test_sublayer_cases(row1):
    # a level below the whole profile has no crossings
    assert find_sublayer(row1, level=row1.G_s.min() - 0.1) == []
    z = np.linspace(0, 1, 11)
    assert level_crossings(lambda x: x, z, 0.35) == [pytest.approx(0.35, abs=1e-12)]


def test_local_maxima():
    assert local_maxima([0, 1, 0, 2, 3]) == [1, 4]
    assert local_maxima([3, 2, 1]) == [0]


def test_shooting_bracket_failure_reports_range():
    rhs = lambda n, tau: (np.zeros_like(n), -np.ones_like(n))  # tau(0) is always 1
    with pytest.raises(ShootingError, match="no bracket"):
        _shoot(rhs, 5.0, 16, None, 1e-12)


def test_grid_size_guard():
    p = SuspensionParams(**ROW1)
    with pytest.raises(ValueError):
        solve_basic_state(p, solve_lambda(p), n_z=33)
