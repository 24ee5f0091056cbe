"""Command-line front end.

    hinfdamp --config run.json --out results/ [--long] [--jobs N] [--verbose] [--seed S]

The JSON config selects a builtin oscillator (``"desk"`` or ``"paper"``) or a
set of MatrixMarket files, the problem, the interpolation mode and the
tolerances; see README.md for the schema.  Outputs are ``results.csv``,
``summary.json`` and ``trace.jsonl`` in the output directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .bench import (
    NAIVE_MAX_N,
    PROBLEMS,
    SweepRow,
    desk_positions,
    desk_spec,
    naive_optimize,
    paper_spec,
    sweep_configurations,
)
from .model import ValidationError, load_matrix_market
from .optim import OptimizerConfig, Tolerances, check_mode, optimize_damping

log = logging.getLogger("hinfdamp")

__all__ = ["RunConfig", "CSV_COLUMNS", "load_config", "run", "main"]

CSV_COLUMNS = (
    "config_id", "j", "k", "problem", "mode", "g1_star", "g2_star", "hinf_value", "outer_iters",
    "rom_dim", "rel_gain_err", "rel_hinf_err", "wall_seconds", "termination_reason",
)

PAPER_J = (40, 140, 240, 340, 440, 540)
PAPER_K = (60, 160, 260, 360, 460, 560)

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3

_TOL_KEYS = ("tol_g", "tol_value", "dense_tol", "stationarity_tol", "hinf_tol")


@dataclass
class RunConfig:
    """Validated run settings; ``as_dict`` gives the resolved JSON form."""

    system: dict
    problems: list
    modes: list
    j_set: list
    k_set: list
    initial_gains: list | None = None
    heuristic_count: int = 30
    samples: int = 30
    tolerances: dict = field(default_factory=lambda: {
        "tol_g": 1e-6, "tol_value": 1e-6, "dense_tol": 1e-8, "stationarity_tol": 1e-12, "hinf_tol": 1e-8})
    max_outer_iter: int = 30
    max_inner_iter: int = 100
    oracle: bool = False
    seed: int = 0
    record_timings: bool = False
    output: str | None = None

    def as_dict(self):
        return asdict(self)

    @property
    def builtin(self):
        return self.system.get("builtin")

    @property
    def n(self):
        if self.builtin == "paper":
            return 700
        if self.builtin == "desk":
            return int(self.system.get("n", 50))
        return None

    def optimizer_config(self):
        return OptimizerConfig(
            stationarity_tol=self.tolerances["stationarity_tol"],
            max_inner_iter=self.max_inner_iter,
            dense_tol=self.tolerances["dense_tol"],
            seed=self.seed,
        )

    def termination(self):
        t = self.tolerances
        return Tolerances(tol_g=t["tol_g"], tol_value=t["tol_value"], max_outer_iter=self.max_outer_iter,
                          hinf_tol=t["hinf_tol"])


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _problem_entry(p, gains):
    if isinstance(p, str):
        key = p.lower()
        if key not in PROBLEMS:
            raise ValidationError(f"unknown problem {p!r}; use 'a', 'b' or {{\"alpha_c\": value}}")
        return key
    if isinstance(p, dict) and "alpha_c" in p:
        alpha = float(p["alpha_c"])
        if not alpha >= 0:
            raise ValidationError("alpha_c must be nonnegative")
        if gains is None:
            raise ValidationError("a custom alpha_c problem needs 'initial_gains'")
        return {"name": str(p.get("name", "custom")), "alpha_c": alpha}
    raise ValidationError(f"invalid problem entry {p!r}")


def load_config(data):
    """Validate a parsed JSON config and fill in defaults.

    Raises
    ------
    ValidationError
        On unknown keys, invalid values, or the unsupported modes ii/iv.
    """
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    known = {f for f in RunConfig.__dataclass_fields__} | {"problem", "mode"}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    system = data.get("system", {"builtin": "desk"})
    if not isinstance(system, dict):
        raise ValidationError("'system' must be an object")
    if "builtin" in system:
        if system["builtin"] not in ("desk", "paper"):
            raise ValidationError(f"unknown builtin system {system['builtin']!r}")
        if system["builtin"] == "desk":
            system = {"builtin": "desk", "n": int(system.get("n", 50))}
            if system["n"] < 4:
                raise ValidationError("desk oscillator needs n >= 4")
    elif "matrix_market" in system:
        mm = system["matrix_market"]
        missing = {"M", "K", "C_int", "B2", "E2", "H1"} - set(mm)
        if missing:
            raise ValidationError(f"matrix_market system is missing {sorted(missing)}")
    else:
        raise ValidationError("'system' needs 'builtin' or 'matrix_market'")

    gains = data.get("initial_gains")
    if gains is not None:
        gains = [[float(x) for x in _as_list(g)] for g in _as_list(gains)]
        if not gains:
            raise ValidationError("'initial_gains' must be nonempty")
        for g in gains:
            if any(not (x >= 0 and np.isfinite(x)) for x in g):
                raise ValidationError(f"initial gains must be finite and nonnegative, got {g}")

    if "problems" in data and "problem" in data:
        raise ValidationError("give either 'problem' or 'problems'")
    problems = [_problem_entry(p, gains) for p in _as_list(data.get("problems", data.get("problem", "b")))]
    if "matrix_market" in system:
        problems = [{"name": "custom", "alpha_c": None}]
        if gains is None:
            raise ValidationError("a matrix_market system needs 'initial_gains'")
    if "modes" in data and "mode" in data:
        raise ValidationError("give either 'mode' or 'modes'")
    modes = [check_mode(m) for m in _as_list(data.get("modes", data.get("mode", "iii")))]

    if system.get("builtin") == "paper":
        jd, kd = PAPER_J, PAPER_K
    else:
        jd, kd = desk_positions()
    j_set = [int(j) for j in _as_list(data.get("j_set", jd))]
    k_set = [int(k) for k in _as_list(data.get("k_set", kd))]

    tol = dict(RunConfig.__dataclass_fields__["tolerances"].default_factory())
    given = data.get("tolerances", {})
    bad = set(given) - set(_TOL_KEYS)
    if bad:
        raise ValidationError(f"unknown tolerance keys: {sorted(bad)}")
    tol.update({k: float(v) for k, v in given.items()})
    for k, v in tol.items():
        if not v > 0:
            raise ValidationError(f"tolerance {k} must be positive, got {v}")

    cfg = RunConfig(
        system=system,
        problems=problems,
        modes=modes,
        j_set=j_set,
        k_set=k_set,
        initial_gains=gains,
        heuristic_count=int(data.get("heuristic_count", 30)),
        samples=int(data.get("samples", 30)),
        tolerances=tol,
        max_outer_iter=int(data.get("max_outer_iter", 30)),
        max_inner_iter=int(data.get("max_inner_iter", 100)),
        oracle=bool(data.get("oracle", False)),
        seed=int(data.get("seed", 0)),
        record_timings=bool(data.get("record_timings", False)),
        output=data.get("output"),
    )
    if cfg.heuristic_count < 1 or cfg.samples < 2:
        raise ValidationError("heuristic_count must be >= 1 and samples >= 2")
    if cfg.max_outer_iter < 1 or cfg.max_inner_iter < 1:
        raise ValidationError("iteration limits must be at least 1")
    if gains is not None and len({len(g) for g in gains}) != 1:
        raise ValidationError("all initial gain vectors need the same length")
    return cfg


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else format(float(x), ".17g")
    return str(x)


def _row_record(row: SweepRow, record_timings):
    res = row.result
    g = list(res.g_star) if res is not None else []
    rec = {
        "config_id": row.config_id,
        "j": row.j if row.j else None,
        "k": row.k if row.k else None,
        "problem": row.problem,
        "mode": row.mode,
        "g1_star": g[0] if len(g) > 0 else None,
        "g2_star": g[1] if len(g) > 1 else None,
        "hinf_value": res.hinf_value if res is not None else None,
        "outer_iters": res.outer_iterations if res is not None else None,
        "rom_dim": res.rom_dimension_final if res is not None else None,
        "rel_gain_err": row.rel_gain_err if row.oracle is not None else None,
        "rel_hinf_err": row.rel_hinf_err if row.oracle is not None else None,
        "wall_seconds": row.wall_seconds if record_timings else None,
        "termination_reason": res.termination_reason if res is not None else "error",
    }
    return rec


def _custom_rows(cfg, long_run):
    mm = cfg.system["matrix_market"]
    sysm = load_matrix_market(**{k: mm[k] for k in ("M", "K", "C_int", "B2", "E2", "H1")})
    if cfg.oracle and sysm.n > NAIVE_MAX_N and not long_run:
        raise ValidationError(f"oracle for n = {sysm.n} > {NAIVE_MAX_N} needs --long")
    rows = []
    for cid, mode in enumerate(cfg.modes, start=1):
        row = SweepRow(cid, 0, 0, "custom", mode, None)
        try:
            t0 = time.perf_counter()
            row.result = optimize_damping(sysm, cfg.initial_gains, mode, cfg.optimizer_config(),
                                          cfg.termination(), heuristic_count=cfg.heuristic_count,
                                          samples=cfg.samples)
            row.wall_seconds = time.perf_counter() - t0
            if cfg.oracle:
                t0 = time.perf_counter()
                row.oracle = naive_optimize(sysm, cfg.initial_gains[0], cfg.optimizer_config(),
                                            allow_large=long_run)
                row.oracle_seconds = time.perf_counter() - t0
                go, gs = row.oracle.g_star, row.result.g_star
                row.rel_gain_err = float(np.linalg.norm(go - gs) / max(np.linalg.norm(go), 1e-300))
                row.rel_hinf_err = float(abs(row.oracle.hinf_value - row.result.hinf_value)
                                         / row.oracle.hinf_value)
        except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            log.exception("custom run failed")
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def execute(cfg: RunConfig, *, long_run=False, jobs=1):
    """Run every configuration of ``cfg`` and return the sweep rows."""
    if cfg.builtin is None:
        return _custom_rows(cfg, long_run)
    if cfg.n > NAIVE_MAX_N and not long_run:
        raise ValidationError(f"the n = {cfg.n} system is a long run; pass --long")
    base = paper_spec() if cfg.builtin == "paper" else desk_spec(n=cfg.n)
    problems = []
    for p in cfg.problems:
        if isinstance(p, str):
            gains = cfg.initial_gains or PROBLEMS[p]["init_gains"]
            problems.append((p, PROBLEMS[p]["alpha_c"], gains))
        else:
            problems.append((p["name"], p["alpha_c"], cfg.initial_gains))
    oracle = ("long" if long_run else True) if cfg.oracle else False
    return sweep_configurations(base, cfg.j_set, cfg.k_set, problems, cfg.modes, cfg.optimizer_config(),
                                tols=cfg.termination(), oracle=oracle, jobs=jobs,
                                heuristic_count=cfg.heuristic_count, samples=cfg.samples)


def write_outputs(out, cfg, rows, *, elapsed=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            rec = _row_record(row, cfg.record_timings)
            w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    with open(out / "trace.jsonl", "w") as fh:
        for row in rows:
            if row.result is None:
                continue
            for t in row.result.trace:
                fh.write(json.dumps({
                    "config_id": row.config_id,
                    "iteration": t.iteration,
                    "g": [float(x) for x in t.g],
                    "omega": t.omega,
                    "reduced_value": t.reduced_value,
                    "full_value": t.full_value,
                    "rom_dim": t.rom_dimension,
                    "inner_status": t.inner_status,
                    "inner_iterations": t.inner_iterations,
                    "repairs": t.repairs,
                    "note": t.note,
                }) + "\n")
    summary = {
        "config": cfg.as_dict(),
        "kernel_backend": kernels.BACKEND,
        "rows": [],
    }
    for row in rows:
        res = row.result
        entry = {"config_id": row.config_id, "j": row.j, "k": row.k, "problem": row.problem, "mode": row.mode,
                 "error": row.error}
        if res is not None:
            entry.update(g_star=[float(x) for x in res.g_star], hinf_value=res.hinf_value,
                         omega_star=res.omega_star, termination_reason=res.termination_reason,
                         outer_iterations=res.outer_iterations, rom_dim=res.rom_dimension_final,
                         factorizations=res.factorizations)
        if row.oracle is not None:
            entry.update(oracle_g_star=[float(x) for x in row.oracle.g_star],
                         oracle_hinf_value=row.oracle.hinf_value,
                         oracle_norm_evaluations=row.oracle.norm_evaluations)
        if cfg.record_timings:
            entry.update(wall_seconds=row.wall_seconds, oracle_seconds=row.oracle_seconds)
            if row.oracle is not None and row.wall_seconds > 0:
                entry["time_ratio"] = row.oracle_seconds / row.wall_seconds
        summary["rows"].append(entry)
    if cfg.record_timings and elapsed is not None:
        summary["elapsed_seconds"] = elapsed
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=False)
        fh.write("\n")


def run(config_file, out=None, *, long_run=False, jobs=1, seed=None):
    """Parse, validate and execute a config file; returns the process exit code."""
    try:
        with open(config_file) as fh:
            data = json.load(fh)
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        log.error("config is not valid JSON: %s", exc)
        return EXIT_INVALID
    try:
        if seed is not None:
            data["seed"] = int(seed)
        cfg = load_config(data)
        out = out or cfg.output or "results"
        t0 = time.perf_counter()
        rows = execute(cfg, long_run=long_run, jobs=jobs)
    except ValidationError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    try:
        write_outputs(out, cfg, rows, elapsed=time.perf_counter() - t0)
    except OSError as exc:
        log.error("cannot write results: %s", exc)
        return EXIT_IO
    failed = [r for r in rows if r.error]
    for r in failed:
        log.error("configuration %d failed: %s", r.config_id, r.error)
    return EXIT_FAILED if failed else EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="hinfdamp", description="H-infinity optimal damper gains by greedy "
                                 "parametric interpolation.")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory (default: config 'output' or ./results)")
    ap.add_argument("--long", action="store_true", help="allow n > 200 systems and full-scale oracles")
    ap.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweeps")
    ap.add_argument("--verbose", "-v", action="store_true", help="log the per-iteration trace")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_INVALID
    return run(args.config, args.out, long_run=args.long, jobs=args.jobs, seed=args.seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
