"""Up-swimming comparison model.

The basic state is shared with the scattering model, but in the perturbed
problem the diffuse intensity is frozen as a profile chi(z) = G_s^d(z) that
does not respond to the concentration. Only the attenuation of the total
intensity along the vertical carries the disturbance, so there is no
Gamma0 term and no horizontal-flux coupling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basicstate import BasicState
from .finitediff import diff_matrix
from .stability import (R_BRACKET, Branch, CellCoefficients, NeutralPoint, PhiAnchor,
                        StabilityModel, StabilityOperator, assemble_pencil, first_crossings,
                        trace_neutral_curve)

log = logging.getLogger(__name__)


def upswim_coefficients(state: BasicState, chi=None) -> CellCoefficients:
    """Cell-row coefficients with the diffuse field frozen at ``chi`` (default G_s^d).

    The intensity perturbation is (kappa/mu0) G Phi with G = G_s^c + chi, which
    yields

        Gamma1 = (kappa/mu0) V_c D(n_s G T')
        Gamma2 = 2 (kappa/mu0) V_c n_s G_s^c T' + V_c T' D chi + (kappa/mu0) V_c n_s chi T'
    """
    p = state.params
    vc = p.swim_speed
    chi = state.G_diff if chi is None else np.asarray(chi, dtype=float)
    if chi.shape != state.z_grid.shape:
        raise ValueError("chi must be sampled on the basic-state grid")
    D = diff_matrix(state.n_z, 1, state.z_grid[1] - state.z_grid[0])
    c = p.extinction / p.mu0
    nTp = state.n_s * state.dT_dG
    G = state.G_coll + chi
    gamma1 = c * vc * (D @ (nTp * G))
    gamma2 = 2 * c * vc * nTp * state.G_coll + vc * state.dT_dG * (D @ chi) + c * vc * nTp * chi
    n1 = state.n_z
    return CellCoefficients(vc, state.T_s, state.n_s, state.dT_dG, vc * state.T_s * state.n_s,
                            gamma1, gamma2, np.zeros((n1, n1)), np.diag(c * G))


@dataclass(frozen=True)
class UpswimOperator(StabilityOperator):
    """Stability matrices of the up-swimming model (same layout as the full model)."""


def build_upswim_operator(state: BasicState, k: float, R: float, top_bc=None,
                          phi_anchor: PhiAnchor = PhiAnchor.TOP, n_z: int | None = None) -> UpswimOperator:
    if n_z is not None and n_z != state.n_z:
        raise ValueError(f"basic state has {state.n_z} nodes, operator asked for {n_z}")
    if top_bc is None:
        top_bc = state.params.top_bc
    pen = assemble_pencil(upswim_coefficients(state), state.z_grid, k, state.params.schmidt,
                          top_bc, phi_anchor)
    return UpswimOperator(pen.z_grid, float(k), float(R), pen.A(R), pen.B)


@dataclass(frozen=True)
class ComparisonRow:
    k: float
    R_full: float
    branch_full: str
    R_upswim: float
    branch_upswim: str

    @property
    def rel_diff(self) -> float:
        if not (np.isfinite(self.R_full) and np.isfinite(self.R_upswim)):
            return float("nan")
        return abs(self.R_upswim - self.R_full) / abs(self.R_full)


@dataclass(frozen=True)
class ModelComparison:
    rows: tuple
    gaps: tuple = ()

    @property
    def max_divergence(self) -> ComparisonRow | None:
        ok = [r for r in self.rows if np.isfinite(r.rel_diff)]
        return max(ok, key=lambda r: r.rel_diff) if ok else None

    def divergence_band(self, fraction: float = 0.5):
        """Wavelength interval where rel_diff exceeds ``fraction`` of its maximum."""
        top = self.max_divergence
        if top is None or top.rel_diff == 0:
            return None
        lam = [2 * np.pi / r.k for r in self.rows
               if np.isfinite(r.rel_diff) and r.rel_diff >= fraction * top.rel_diff]
        return (min(lam), max(lam))

    def summary(self) -> dict:
        top = self.max_divergence
        band = self.divergence_band()
        return {
            "n_points": len(self.rows),
            "max_rel_diff": None if top is None else top.rel_diff,
            "k_at_max": None if top is None else top.k,
            "wavelength_band": band,
            "gaps": list(self.gaps),
        }


def _row(k, full: NeutralPoint | None, up: NeutralPoint | None) -> ComparisonRow:
    def unpack(p):
        return (float("nan"), "none") if p is None else (p.R, Branch(p.branch).value)
    Rf, bf = unpack(full)
    Ru, bu = unpack(up)
    return ComparisonRow(float(k), Rf, bf, Ru, bu)


def compare_models(state: BasicState, k_min: float, k_max: float, n_k: int = 40,
                   bracket=R_BRACKET, top_bc=None, phi_anchor: PhiAnchor = PhiAnchor.TOP,
                   full_model: StabilityModel | None = None) -> ModelComparison:
    """Lowest neutral R of both models on a common log-spaced k grid.

    Rows are sorted by k, so the report does not depend on sweep direction.
    """
    kw = dict(top_bc=top_bc, phi_anchor=phi_anchor)
    full = full_model or StabilityModel(state, model="full", **kw)
    up = StabilityModel(state, model="upswim", **kw)
    pts_f, gaps_f = trace_neutral_curve(full, k_min, k_max, n_k, bracket, both_branches=False)
    pts_u, gaps_u = trace_neutral_curve(up, k_min, k_max, n_k, bracket, both_branches=False)
    bf = {p.k: p for p in first_crossings(pts_f)}
    bu = {p.k: p for p in first_crossings(pts_u)}
    ks = sorted(set(bf) | set(bu) | set(gaps_f) | set(gaps_u))
    rows = tuple(_row(k, bf.get(k), bu.get(k)) for k in ks)
    return ModelComparison(rows, tuple(sorted(set(gaps_f) | set(gaps_u))))
