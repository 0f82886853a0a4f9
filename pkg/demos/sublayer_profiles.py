"""Basic-state concentration peaks as the incidence angle grows.

Strongly scattering, weakly diffuse light (V_c 10, kappa 1, omega 1,
I_D 0.02, GC19 taxis): the profile is bimodal at normal incidence and
turns unimodal by 50 degrees.

    python demos/sublayer_profiles.py
"""

from photoconv import SuspensionParams, solve_lambda
from photoconv.basicstate import local_maxima, solve_basic_state


def main():
    for theta in range(0, 60, 10):
        p = SuspensionParams(swim_speed=10, extinction=1.0, albedo=1.0, diffuse_mag=0.02,
                             taxis_kind="GC19", incidence_deg=theta)
        st = solve_basic_state(p, solve_lambda(p))
        peaks = local_maxima(st.n_s)
        where = ", ".join(f"z={st.z_grid[i]:.3f} (n={st.n_s[i]:.2f})" for i in peaks)
        layer = ", ".join(f"{z:.3f}" for z in st.sublayer_z) or "none"
        print(f"theta_i = {theta:2d}: {len(peaks)} peak(s) at {where}; sublayer at z = {layer}")


if __name__ == "__main__":
    main()
