"""Command-line front end: config parsing, pipelines and file export.

Config files are flat ``key = value`` text grouped under section headers::

    [suspension]
    swim_speed = 15
    incidence_deg = 40

    [sweep]
    k_min = 1
    k_max = 6

Every key has a default; unknown sections or keys are rejected by name.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basicstate import ShootingError, level_crossings, local_maxima
from .photomodel import SuspensionParams, TaxisKind, TopBoundary
from .radiative import ConvergenceError, solve_lambda, uniform_intensity
from .stability import (Branch, NeutralPointError, StabilityModel, classify_mode,
                        eigenfunction_field, find_critical, first_crossings, trace_neutral_curve)
from .tables import SweepSettings, basic_state_for, reproduce_row, table_rows
from .upswim import ModelComparison, _row

log = logging.getLogger("photoconv")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
SOLVER_ERRORS = (ShootingError, ConvergenceError, NeutralPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------------

def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text):
    text = str(text).strip()
    return [float(v) for v in text.split(",") if v.strip()] if text else []


def _rows(text):
    text = str(text).strip().lower()
    if text in ("", "all"):
        return "all"
    return [int(v) for v in text.split(",") if v.strip()]


def _opt_float(text):
    text = str(text).strip()
    return None if text.lower() in ("", "none", "auto") else float(text)


# section -> key -> (parser, default)
SCHEMA = {
    "suspension": {
        "schmidt": (float, 20.0),
        "swim_speed": (float, 15.0),
        "extinction": (float, 0.5),
        "albedo": (float, 0.4),
        "diffuse_mag": (float, 0.26),
        "collimated_mag": (float, 1.0),
        "incidence_deg": (float, 0.0),
        "refractive_index": (float, 1.333),
        "taxis": (lambda s: TaxisKind(s.strip().upper()), TaxisKind.GC13),
        "top_bc": (lambda s: TopBoundary(s.strip().lower().replace("-", "_")), TopBoundary.RIGID),
    },
    "solver": {
        "n_tau": (int, 201),
        "n_z": (int, 151),
        "n_nu": (int, 16),
        "n_mu": (int, 32),
        "n_points": (int, 101),
    },
    "sweep": {
        "k_min": (float, 0.3),
        "k_max": (float, 10.0),
        "n_k": (int, 40),
        "R_min": (float, 1.0),
        "R_max": (float, 5000.0),
        "both_branches": (_bool, True),
        "model": (lambda s: s.strip().lower(), "full"),
    },
    "output": {
        "directory": (str, "."),
        "format": (lambda s: s.strip().lower(), "csv"),
    },
    "mode_field": {
        "k": (_opt_float, None),
        "R": (_opt_float, None),
        "times": (_float_list, []),
        "frames": (int, 6),
        "n_x": (int, 64),
        "series_points": (int, 200),
    },
    "table": {
        "id": (str, "2"),
        "rows": (_rows, "all"),
        "stress_free_fallback": (_bool, True),
    },
}


@dataclass
class RunConfig:
    params: SuspensionParams = field(default_factory=SuspensionParams)
    solver: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    mode_field: dict = field(default_factory=dict)
    table: dict = field(default_factory=dict)

    def settings(self) -> SweepSettings:
        return SweepSettings(
            n_tau=self.solver["n_tau"], n_z=self.solver["n_z"], n_nu=self.solver["n_nu"],
            k_min=self.sweep["k_min"], k_max=self.sweep["k_max"], n_k=self.sweep["n_k"],
            R_bracket=(self.sweep["R_min"], self.sweep["R_max"]),
            both_branches=self.sweep["both_branches"])


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config(text: str = "", source: str = "<config>") -> RunConfig:
    """Parse config text into a validated RunConfig.

    Raises
    ------
    ConfigError
        With the offending section/key (and line for syntax errors).
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (R_min, R)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = defaults()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: unknown key {key!r} in section [{sec}]")
            parser, _ = SCHEMA[sec][key]
            try:
                values[sec][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for [{sec}] {key} = {raw!r}: {exc}") from exc
    return _validated(values, source)


def _validated(values: dict, source: str) -> RunConfig:
    sus = dict(values["suspension"])
    sus["taxis_kind"] = sus.pop("taxis")
    try:
        params = SuspensionParams(**sus)
    except ValueError as exc:
        raise ConfigError(f"{source}: [suspension] {exc}") from exc
    sw, out, sol = values["sweep"], values["output"], values["solver"]
    if not 0 < sw["k_min"] < sw["k_max"]:
        raise ConfigError(f"{source}: [sweep] needs 0 < k_min < k_max, got {sw['k_min']}, {sw['k_max']}")
    if sw["n_k"] < 2:
        raise ConfigError(f"{source}: [sweep] n_k must be at least 2")
    if not 0 < sw["R_min"] < sw["R_max"]:
        raise ConfigError(f"{source}: [sweep] needs 0 < R_min < R_max")
    if sw["model"] not in ("full", "upswim"):
        raise ConfigError(f"{source}: [sweep] model must be 'full' or 'upswim', got {sw['model']!r}")
    if out["format"] not in ("csv", "ndjson"):
        raise ConfigError(f"{source}: [output] format must be csv or ndjson, got {out['format']!r}")
    if sol["n_z"] < 65 or sol["n_tau"] < 11 or sol["n_tau"] % 2 == 0:
        raise ConfigError(f"{source}: [solver] needs n_z >= 65 and odd n_tau >= 11")
    if values["table"]["id"] not in ("2", "3", "4"):
        raise ConfigError(f"{source}: [table] id must be 2, 3 or 4")
    return RunConfig(params, sol, sw, out, values["mode_field"], values["table"])


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


# -- output -----------------------------------------------------------------------

def fmt_value(v):
    """Text form used in CSV: 9 significant digits for reals."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.9g}"
    return "" if v is None else str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(f"{float(v):.9g}")
    return v


class Writer:
    def __init__(self, directory, fmt: str = "csv"):
        self.dir = Path(directory)
        self.fmt = fmt
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def table(self, stem: str, header, rows, comments=()) -> Path:
        """Write rows (sequences aligned with ``header``) as CSV or NDJSON."""
        header = list(header)
        if self.fmt == "csv":
            path = self.dir / f"{stem}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([fmt_value(v) for v in r])
                for c in comments:
                    fh.write(f"# {c}\n")
        else:
            path = self.dir / f"{stem}.ndjson"
            with path.open("w") as fh:
                for r in rows:
                    fh.write(json.dumps({h: _json_value(v) for h, v in zip(header, r)}) + "\n")
                for c in comments:
                    fh.write(json.dumps({"comment": c}) + "\n")
        self.written.append(path)
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.dir / name
        path.write_text(body)
        self.written.append(path)
        return path


def read_table(path) -> list:
    """Parse a file written by :class:`Writer` back into dicts of strings/values."""
    path = Path(path)
    if path.suffix == ".ndjson":
        recs = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        return [r for r in recs if "comment" not in r]
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- parallel helpers ---------------------------------------------------------------

def _chunks(values, n):
    return [c for c in np.array_split(np.asarray(values), n) if c.size]


def _trace_chunk(params, settings, ks, top_bc, model):
    state = basic_state_for(params, settings)
    sm = StabilityModel(state, top_bc=top_bc, n_nu=settings.n_nu, model=model)
    return trace_neutral_curve(sm, 0, 0, 0, settings.R_bracket, settings.both_branches, ks=ks)


def trace(cfg: RunConfig, model: str, threads: int, state=None):
    """Neutral points and gaps over the configured k grid (optionally in worker processes)."""
    s = cfg.settings()
    ks = np.geomspace(s.k_min, s.k_max, s.n_k)
    top = cfg.params.top_bc
    if threads <= 1:
        if state is None:
            state = basic_state_for(cfg.params, s)
        sm = StabilityModel(state, top_bc=top, n_nu=s.n_nu, model=model)
        pts, gaps = trace_neutral_curve(sm, 0, 0, 0, s.R_bracket, s.both_branches, ks=ks)
        return pts, gaps, sm
    points, gaps = [], []
    with ProcessPoolExecutor(threads) as pool:
        futs = [pool.submit(_trace_chunk, cfg.params, s, c, top, model) for c in _chunks(ks, threads)]
        for f in futs:
            p, g = f.result()
            points += p
            gaps += g
    if state is None:
        state = basic_state_for(cfg.params, s)
    return points, gaps, StabilityModel(state, top_bc=top, n_nu=s.n_nu, model=model)


# -- commands -----------------------------------------------------------------------

def cmd_basic_state(cfg: RunConfig, out: Writer, threads: int = 1):
    st = basic_state_for(cfg.params, cfg.settings())
    rows = zip(st.z_grid, st.n_s, st.G_s, st.G_coll, st.G_diff, st.q_s, st.T_s)
    out.table("basic_state", ["z", "n_s", "G_s", "G_s_coll", "G_s_diff", "q_s", "T_s"], rows)
    lines = [f"# heights where G_s equals the taxis root G = {fmt_value(cfg.params.taxis.root)}"]
    lines += [fmt_value(z) for z in st.sublayer_z]
    lines.append(f"# concentration maxima at z = {', '.join(fmt_value(st.z_grid[i]) for i in local_maxima(st.n_s))}")
    lines.append(f"# mass = {fmt_value(st.mass)}")
    out.text("sublayer.txt", "\n".join(lines) + "\n")
    return st


def cmd_uniform_intensity(cfg: RunConfig, out: Writer, threads: int = 1):
    p = cfg.params
    field_ = solve_lambda(p, n_tau=cfg.solver["n_tau"])
    z = np.linspace(0.0, 1.0, cfg.solver["n_points"])
    G = uniform_intensity(p, z, field=field_)
    tau = p.extinction * (1.0 - z)
    Gc = p.collimated_mag * field_.collimated(tau)
    out.table("uniform_intensity", ["z", "tau", "G_s", "G_s_coll", "G_s_diff"], zip(z, tau, G, Gc, G - Gc))
    if not p.taxis.null:
        cross = level_crossings(lambda zz: uniform_intensity(p, zz, field=field_), z, p.taxis.root)
        out.text("crossings.txt", "".join(f"{fmt_value(c)}\n" for c in cross))
    return G


def _curve_rows(points):
    return [(p.k, p.R, p.frequency, Branch(p.branch).value) for p in sorted(points, key=lambda p: (p.k, p.R))]


def cmd_neutral_curve(cfg: RunConfig, out: Writer, threads: int = 1):
    pts, gaps, _ = trace(cfg, cfg.sweep["model"], threads)
    comments = [f"gap: no neutral point in R range at k = {fmt_value(k)}" for k in gaps]
    out.table("neutral_curve", ["k", "R", "Im_gamma", "branch"], _curve_rows(pts), comments)
    return pts, gaps


def cmd_critical(cfg: RunConfig, out: Writer, threads: int = 1):
    pts, gaps, sm = trace(cfg, cfg.sweep["model"], threads)
    c = find_critical(sm, pts)
    out.table("critical", ["k_c", "R_c", "lambda_c", "Im_gamma", "mode", "overstable"],
              [(c.k_c, c.R_c, c.wavelength, c.frequency, c.mode, c.overstable)])
    return c


REPRODUCE_HEADER = ["table", "row", "top_bc", "swim_speed", "albedo", "extinction", "diffuse_mag",
                    "incidence_deg", "lambda_c_ref", "R_c_ref", "Im_gamma_ref", "mode_ref",
                    "k_c", "R_c", "lambda_c", "Im_gamma", "mode", "overstable", "rel_err_R_c",
                    "rel_err_lambda_c", "rel_err_Im_gamma", "passed", "seconds", "error"]


def _reproduce_one(table_id, index, settings, fallback):
    results = [reproduce_row(table_id, index, TopBoundary.RIGID, settings)]
    if fallback and not results[0].passed:
        results.append(reproduce_row(table_id, index, TopBoundary.STRESS_FREE, settings))
    return results


def cmd_reproduce_table(cfg: RunConfig, out: Writer, threads: int = 1, table_id=None):
    tid = str(table_id or cfg.table["id"])
    rows = table_rows(tid)
    idx = range(len(rows)) if cfg.table["rows"] == "all" else cfg.table["rows"]
    for i in idx:
        if not 0 <= i < len(rows):
            raise ConfigError(f"table {tid} has rows 0..{len(rows) - 1}, got {i}")
    s, fb = cfg.settings(), cfg.table["stress_free_fallback"]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            batches = list(pool.map(_reproduce_one, [tid] * len(idx), idx, [s] * len(idx), [fb] * len(idx)))
    else:
        batches = [_reproduce_one(tid, i, s, fb) for i in idx]
    results = [r for b in batches for r in b]
    table = []
    for r in results:
        row = rows[r.index]
        rec = r.as_record()
        rec.update({k: row[k] for k in ("swim_speed", "albedo", "extinction", "diffuse_mag", "incidence_deg")})
        rec["passed"] = r.passed
        rec.setdefault("rel_err_Im_gamma", float("nan"))
        table.append([rec.get(h, float("nan")) for h in REPRODUCE_HEADER])
    out.table(f"table{tid}", REPRODUCE_HEADER, table)
    return results


def _near_neutral(pencil, R, tol=1e-3):
    g, vecs = pencil.spectrum(R, vectors=True)
    if abs(g[0].real) > tol:
        raise NeutralPointError(f"(k, R) = ({pencil.k:.6g}, {R:.6g}) is not near-neutral: "
                                f"leading Re gamma = {g[0].real:.3e}")
    return g[0], vecs[:, 0]


def cmd_mode_field(cfg: RunConfig, out: Writer, threads: int = 1):
    mf = cfg.mode_field
    s = cfg.settings()
    state = basic_state_for(cfg.params, s)
    if mf["k"] is None:
        pts, _, sm = trace(cfg, cfg.sweep["model"], threads, state=state)
        c = find_critical(sm, pts)
        k, R = c.k_c, c.R_c
    else:
        k = mf["k"]
        sm = StabilityModel(state, top_bc=cfg.params.top_bc, n_nu=s.n_nu, model=cfg.sweep["model"])
        R = mf["R"] if mf["R"] is not None else sm.neutral(k, bracket=s.R_bracket).R
    pencil = sm.pencil(k)
    gamma, vec = _near_neutral(pencil, R)
    W = vec[:state.n_z]
    W = W / W[np.argmax(np.abs(W))]
    freq = abs(gamma.imag)
    if freq > 1e-6:
        # follow the member of the conjugate pair with positive frequency
        if gamma.imag < 0:
            gamma, W = np.conj(gamma), np.conj(W)
        period = 2 * np.pi / freq
        times = mf["times"] or list(np.arange(mf["frames"]) * period / mf["frames"])
    else:
        period = float("inf")
        times = mf["times"] or [0.0]
    gamma = 1j * gamma.imag  # evaluate on the neutral curve
    for t in times:
        x, z, w = eigenfunction_field(W, gamma, k, state.z_grid, mf["n_x"], t)
        X, Zg = np.meshgrid(x, z)
        out.table(f"w1_t{t:.6f}", ["x", "z", "w1"], zip(X.ravel(), Zg.ravel(), w.ravel()))
    if np.isfinite(period):
        # time series at the velocity maximum (x = 0) and its phase-plane orbit
        j = int(np.argmax(np.abs(W)))
        ts = np.linspace(0.0, period, mf["series_points"] + 1)
        amp = W[j] * np.exp(gamma * ts)
        out.table("w1_series", ["t", "w1", "dw1_dt"], zip(ts, amp.real, (gamma * amp).real))
    summary = {"k": k, "R": R, "Im_gamma": freq, "period": period,
               "mode": classify_mode(pencil, gamma, vec)}
    out.text("mode_summary.json", json.dumps({a: _json_value(b) for a, b in summary.items()}, indent=1) + "\n")
    return summary


def cmd_compare_upswim(cfg: RunConfig, out: Writer, threads: int = 1):
    state = basic_state_for(cfg.params, cfg.settings()) if threads <= 1 else None
    full, gf, _ = trace(cfg, "full", threads, state=state)
    up, gu, _ = trace(cfg, "upswim", threads, state=state)
    bf = {p.k: p for p in first_crossings(full)}
    bu = {p.k: p for p in first_crossings(up)}
    ks = sorted(set(bf) | set(bu) | set(gf) | set(gu))
    cmp = ModelComparison(tuple(_row(k, bf.get(k), bu.get(k)) for k in ks), tuple(sorted(set(gf) | set(gu))))
    out.table("compare_upswim", ["k", "R_full", "branch_full", "R_upswim", "branch_upswim", "rel_diff"],
              [(r.k, r.R_full, r.branch_full, r.R_upswim, r.branch_upswim, r.rel_diff) for r in cmp.rows])
    summ = cmp.summary()
    out.text("compare_summary.json", json.dumps(
        {a: (list(map(_json_value, b)) if isinstance(b, (list, tuple)) else _json_value(b))
         for a, b in summ.items()}, indent=1) + "\n")
    return cmp


COMMANDS = {
    "basic-state": cmd_basic_state,
    "uniform-intensity": cmd_uniform_intensity,
    "neutral-curve": cmd_neutral_curve,
    "critical": cmd_critical,
    "reproduce-table": cmd_reproduce_table,
    "mode-field": cmd_mode_field,
    "compare-upswim": cmd_compare_upswim,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="photoconv", description="Phototactic bioconvection: "
                                 "radiation field, basic state and linear stability.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value config file with [section] headers")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--format", choices=("csv", "ndjson"), help="output format (overrides config)")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--table", choices=("2", "3", "4"), help="table id for reproduce-table")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        ap.error("--threads must be at least 1")
    try:
        cfg = load_config(args.config)
        if args.format:
            cfg.output["format"] = args.format
        out = Writer(args.out or cfg.output["directory"], cfg.output["format"])
        kwargs = {"table_id": args.table} if args.command == "reproduce-table" else {}
        COMMANDS[args.command](cfg, out, args.threads, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for p in out.written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
