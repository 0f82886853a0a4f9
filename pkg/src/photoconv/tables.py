"""Reference critical-point tables and the pipeline that reproduces them.

The tables ship as ``data/tables.json``. Each row holds the suspension
parameters that vary between rows; the shared ones are under ``fixed``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .basicstate import DEFAULT_N_Z, BasicState, solve_basic_state
from .photomodel import SuspensionParams, TopBoundary
from .radiative import solve_lambda
from .stability import (R_BRACKET, CriticalSolution, StabilityModel, find_critical,
                        trace_neutral_curve)

log = logging.getLogger(__name__)

PARAM_KEYS = ("swim_speed", "albedo", "extinction", "diffuse_mag", "incidence_deg")
TOLERANCES = {"R_c": 0.03, "lambda_c": 0.04, "Im_gamma": 0.06}


@lru_cache(maxsize=1)
def load_tables() -> dict:
    text = resources.files("photoconv").joinpath("data/tables.json").read_text()
    return json.loads(text)


def table_rows(table_id) -> list:
    tables = load_tables()["tables"]
    key = str(table_id)
    if key not in tables:
        raise KeyError(f"unknown table {table_id!r}; known: {', '.join(sorted(tables))}")
    return tables[key]["rows"]


def row_params(row: dict, **overrides) -> SuspensionParams:
    fixed = dict(load_tables()["fixed"])
    fixed.update({k: row[k] for k in PARAM_KEYS})
    fixed.update(overrides)
    return SuspensionParams(**fixed)


@dataclass
class SweepSettings:
    """Numerical controls of the critical-point pipeline."""

    n_tau: int = 201
    n_z: int = DEFAULT_N_Z
    n_nu: int = 16
    k_min: float = 0.3
    k_max: float = 10.0
    n_k: int = 40
    R_bracket: tuple = R_BRACKET
    both_branches: bool = True


@dataclass
class CriticalRun:
    state: BasicState
    model: StabilityModel
    curve: list
    gaps: list
    critical: CriticalSolution
    seconds: float


def basic_state_for(params: SuspensionParams, settings: SweepSettings = SweepSettings()) -> BasicState:
    field_ = solve_lambda(params, n_tau=settings.n_tau)
    return solve_basic_state(params, field_, n_z=settings.n_z)


def critical_point(params: SuspensionParams, settings: SweepSettings = SweepSettings(),
                   top_bc=None, model: str = "full", state: BasicState | None = None) -> CriticalRun:
    """Basic state, traced neutral curve and refined critical point."""
    t0 = time.perf_counter()
    if state is None:
        state = basic_state_for(params, settings)
    sm = StabilityModel(state, top_bc=top_bc, n_nu=settings.n_nu, model=model)
    curve, gaps = trace_neutral_curve(sm, settings.k_min, settings.k_max, settings.n_k,
                                      settings.R_bracket, settings.both_branches)
    crit = find_critical(sm, curve)
    return CriticalRun(state, sm, curve, gaps, crit, time.perf_counter() - t0)


def _rel(computed, expected):
    return abs(computed - expected) / abs(expected)


@dataclass
class RowResult:
    """Computed critical point for one table row, with relative errors."""

    table: str
    index: int
    top_bc: str
    expected: dict
    k_c: float = float("nan")
    R_c: float = float("nan")
    lambda_c: float = float("nan")
    Im_gamma: float = float("nan")
    mode: int = 0
    overstable: bool = False
    seconds: float = 0.0
    error: str = ""
    errors: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.error

    def checks(self) -> dict:
        """Pass/fail per tabulated quantity at the acceptance tolerances."""
        if not self.ok:
            return {"R_c": False, "lambda_c": False, "mode": False}
        out = {
            "R_c": self.errors["R_c"] <= TOLERANCES["R_c"],
            "lambda_c": self.errors["lambda_c"] <= TOLERANCES["lambda_c"],
            "mode": self.mode == self.expected["mode"],
        }
        if self.expected["Im_gamma"] > 0:
            out["Im_gamma"] = self.errors["Im_gamma"] <= TOLERANCES["Im_gamma"]
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks().values())

    def as_record(self) -> dict:
        rec = {"table": self.table, "row": self.index, "top_bc": self.top_bc}
        rec.update({f"{k}_ref": v for k, v in self.expected.items() if k != "marker"})
        rec.update(k_c=self.k_c, R_c=self.R_c, lambda_c=self.lambda_c, Im_gamma=self.Im_gamma,
                   mode=self.mode, overstable=self.overstable)
        rec.update({f"rel_err_{k}": v for k, v in self.errors.items()})
        rec.update(seconds=self.seconds, error=self.error)
        return rec


def reproduce_row(table_id, index: int, top_bc=TopBoundary.RIGID,
                  settings: SweepSettings = SweepSettings(), state: BasicState | None = None) -> RowResult:
    """Recompute one table row. Solver failures are captured, not raised."""
    row = table_rows(table_id)[index]
    expected = {k: row[k] for k in ("lambda_c", "R_c", "Im_gamma", "mode", "marker")}
    top_bc = TopBoundary(top_bc)
    res = RowResult(str(table_id), index, top_bc.value, expected)
    t0 = time.perf_counter()
    try:
        run = critical_point(row_params(row), settings, top_bc=top_bc, state=state)
    except Exception as exc:  # per-row isolation
        log.error("table %s row %d failed: %s", table_id, index, exc)
        res.error = f"{type(exc).__name__}: {exc}"
        res.seconds = time.perf_counter() - t0
        return res
    c = run.critical
    res.k_c, res.R_c, res.lambda_c = c.k_c, c.R_c, c.wavelength
    res.Im_gamma, res.mode, res.overstable = c.frequency, c.mode, c.overstable
    res.seconds = run.seconds
    res.errors = {"R_c": _rel(c.R_c, row["R_c"]), "lambda_c": _rel(c.wavelength, row["lambda_c"])}
    if row["Im_gamma"] > 0:
        res.errors["Im_gamma"] = _rel(c.frequency, row["Im_gamma"])
    return res
