"""Hopf onset for V_c = 15, kappa = 1, I_D = 0.5, theta_i = 40 (stress-free top).

Traces the neutral curve, locates the critical point, and writes one period
of the vertical velocity at the velocity maximum to overstable_series.csv.

    python demos/overstable_onset.py
"""

import csv

import numpy as np

from photoconv import SuspensionParams
from photoconv.stability import classify_mode
from photoconv.tables import SweepSettings, critical_point


def main():
    params = SuspensionParams(swim_speed=15, extinction=1.0, albedo=0.4, diffuse_mag=0.5,
                              incidence_deg=40, top_bc="stress_free")
    run = critical_point(params, SweepSettings(k_min=1.0, k_max=6.0, n_k=16))
    c = run.critical
    print(f"k_c = {c.k_c:.4f}  lambda_c = {c.wavelength:.4f}  R_c = {c.R_c:.2f}")
    print(f"Im gamma = {c.frequency:.3f}  period = {c.period:.4f}  overstable = {c.overstable}")

    pencil = run.model.pencil(c.k_c)
    g, vecs = pencil.spectrum(c.R_c, vectors=True)
    print(f"mode {classify_mode(pencil, g[0], vecs[:, 0])}, leading pair {g[0]:.3e}, {g[1]:.3e}")

    n = run.state.n_z
    W = vecs[:n, 0 if g[0].imag > 0 else 1]  # the positive-frequency member of the pair
    j = int(np.argmax(np.abs(W)))
    t = np.linspace(0.0, c.period, 201)
    w = (W[j] / abs(W[j]) * np.exp(1j * c.frequency * t)).real
    with open("overstable_series.csv", "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "w1", "dw1_dt"])
        out.writerows(zip(t, w, np.gradient(w, t)))
    print(f"wrote overstable_series.csv (z = {run.state.z_grid[j]:.3f})")


if __name__ == "__main__":
    main()
