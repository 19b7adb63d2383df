"""Command-line driver.

::

    python -m ppfl simulate --config run.ini --out results/ [--seed 7]
    python -m ppfl verify-bounds --config run.ini --out results/
    python -m ppfl sweep --config run.ini --param noise --grid 0.001,0.01,0.1 --out results/

Every command writes ``manifest.json`` first (flagged incomplete) and
marks it complete only after all reports are closed. Reports are CSV files
appended row by row with floats at 17 significant digits.

Exit codes: 0 success, 1 some bound failed, 2 configuration error,
3 infeasible privacy budget.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .adversary import evaluate_toy, make_toy_instance
from .config import RunConfig, ToyConfig, load_config, write_config
from .core import FAIL, BoundReport, ConfigurationError, InfeasibleBudgetError
from .federation import run_experiment
from .protection import calibrate_noise_variance
from .suite import toy_bound_report

EXIT_OK, EXIT_BOUND_FAILURE, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

ROUNDS_HEADER = ("t", "k", "p", "sigma_eps_sq", "tv_est", "tv_stderr", "eps_u", "eps_u_stderr",
                 "eps_p", "c1t")
BOUNDS_HEADER = ("name", "t", "k", "lhs", "rhs", "stderr", "status")
SWEEP_HEADER = ("param", "value", "sigma_eps_sq", "tv", "eps_p", "eps_u", "eps_u_degradation",
                "c1", "xi", "e_var")


def fmt(value) -> str:
    """Text form of a CSV cell; floats round-trip through 17 significant digits."""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.17g}"
    return str(value)


class CsvReport:
    """Append-only CSV file with a fixed header, flushed after every row."""

    def __init__(self, path: Path, header):
        self.path = path
        self.header = tuple(header)
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.header)
        self._fh.flush()

    def append(self, *row) -> None:
        if len(row) != len(self.header):
            raise ValueError(f"{self.path.name}: expected {len(self.header)} cells, got {len(row)}")
        self._writer.writerow([fmt(v) for v in row])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class RunManifest:
    """``manifest.json``: config checksum, resolved config, status and artifact checksums."""

    def __init__(self, out_dir: Path, command: str, config_path: str, config: RunConfig,
                 messages: list[str]):
        self.path = out_dir / "manifest.json"
        raw = Path(config_path).read_bytes()
        self.data = {
            "command": command,
            "config_path": str(config_path),
            "config_sha256": hashlib.sha256(raw).hexdigest(),
            "resolved_config": write_config(config),
            "out_dir": str(out_dir),
            "status": "running",
            "incomplete": True,
            "warnings": list(messages),
            "artifacts": {},
        }
        self.write()

    def write(self) -> None:
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=_json_default) + "\n")
        tmp.replace(self.path)

    def finish(self, status: str, reports: list[Path], **extra) -> None:
        self.data.update(extra)
        self.data["status"] = status
        self.data["incomplete"] = False
        self.data["artifacts"] = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in reports}
        self.write()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _bound_rows(report: BoundReport, sink: CsvReport, start: int, prefix: str = "") -> int:
    for e in report.entries[start:]:
        sink.append(prefix + e.name, e.t, e.k, e.lhs, e.rhs, e.stderr, e.status)
    return len(report.entries)


def _round_row(sink: CsvReport, record) -> None:
    m = record.extras["measurement"]
    sink.append(record.round, record.client, m.p, m.noise_var, m.tv, m.tv_stderr, m.eps_u,
                m.eps_u_stderr, m.eps_p, m.c1t)


def _run_federation(config: RunConfig, rounds: CsvReport, bounds: CsvReport) -> BoundReport:
    seen = {"records": 0, "entries": 0}

    def on_round(state, report):
        for record in state.records[seen["records"]:]:
            _round_row(rounds, record)
        seen["records"] = len(state.records)
        seen["entries"] = _bound_rows(report, bounds, seen["entries"])

    _, report = run_experiment(config.experiment, on_round=on_round)
    return report


def _toy_instance(toy: ToyConfig):
    return make_toy_instance(np.random.default_rng(toy.seed), toy.n_points, toy.n_candidates,
                             toy.p, toy.label_noise)


def cmd_simulate(config: RunConfig, out: Path) -> tuple[int, list[Path], dict]:
    rounds = CsvReport(out / "rounds.csv", ROUNDS_HEADER)
    bounds = CsvReport(out / "bounds.csv", BOUNDS_HEADER)
    try:
        report = _run_federation(config, rounds, bounds)
    finally:
        rounds.close()
        bounds.close()
    return _status(report), [rounds.path, bounds.path], {"constants": dict(report.constants)}


def cmd_verify_bounds(config: RunConfig, out: Path) -> tuple[int, list[Path], dict]:
    rounds = CsvReport(out / "rounds.csv", ROUNDS_HEADER)
    bounds = CsvReport(out / "bounds.csv", BOUNDS_HEADER)
    try:
        toy = config.toy
        inst = _toy_instance(toy)
        toy_report, _ = toy_bound_report(inst, [r * inst.sigma_sq for r in toy.noise_ratios],
                                         gamma=config.experiment.gamma, delta=toy.delta,
                                         c6=config.experiment.c6, n_grid=toy.n_grid)
        _bound_rows(toy_report, bounds, 0, prefix="toy.")
        fed_report = _run_federation(config, rounds, bounds)
    finally:
        rounds.close()
        bounds.close()
    code = max(_status(toy_report), _status(fed_report))
    extra = {"constants": {"toy": toy_report.constants, "federation": dict(fed_report.constants)}}
    return code, [rounds.path, bounds.path], extra


def cmd_sweep(config: RunConfig, out: Path, param: str, grid: list[float]) -> tuple[int, list[Path], dict]:
    toy = config.toy
    inst = _toy_instance(toy)
    sweep = CsvReport(out / "sweep.csv", SWEEP_HEADER)
    try:
        for value in grid:
            if param == "noise":
                noise_var = value
            else:
                noise_var = calibrate_noise_variance(inst.sigma_sq, 1, value).variance
            ev = evaluate_toy(inst, noise_var, n_grid=toy.n_grid)
            sweep.append(param, value, noise_var, ev.tv, ev.eps_p, ev.eps_u, ev.eps_u_degradation,
                         ev.c1, ev.xi, ev.e_var)
    finally:
        sweep.close()
    return EXIT_OK, [sweep.path], {"toy_sigma_sq": inst.sigma_sq}


def _status(report: BoundReport) -> int:
    return EXIT_BOUND_FAILURE if any(e.status == FAIL for e in report.entries) else EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse grid {text!r}") from None
    if not values or any(not (math.isfinite(v) and v >= 0) for v in values):
        raise ConfigurationError("grid values must be finite and >= 0")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppfl", description="Privacy-preserving federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="run the federated rounds and write per-round metrics")
    sim.add_argument("--seed", type=int, default=None, help="override experiment.master_seed")
    ver = sub.add_parser("verify-bounds", help="evaluate every bound on the toy and the federated run")
    swp = sub.add_parser("sweep", help="trade-off table over noise variances or budget gaps")
    swp.add_argument("--param", choices=("noise", "budget"), required=True)
    swp.add_argument("--grid", required=True, help="comma-separated values")
    for p in (sim, ver, swp):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            config = load_config(args.config)
            if getattr(args, "seed", None) is not None:
                config = dataclasses.replace(
                    config, experiment=dataclasses.replace(config.experiment, master_seed=args.seed))
            grid = _parse_grid(args.grid) if args.command == "sweep" else None
    except (OSError, ConfigurationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    messages = [str(w.message) for w in caught]
    for msg in messages:
        print(f"warning: {msg}", file=sys.stderr)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, args.command, args.config, config, messages)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if args.command == "simulate":
                code, reports, extra = cmd_simulate(config, out)
            elif args.command == "verify-bounds":
                code, reports, extra = cmd_verify_bounds(config, out)
            else:
                code, reports, extra = cmd_sweep(config, out, args.param, grid)
    except InfeasibleBudgetError as err:
        manifest.data.update(status="infeasible-budget", error=str(err), client=err.client, round=err.round)
        manifest.write()
        print(f"infeasible budget: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigurationError as err:
        manifest.data.update(status="config-error", error=str(err))
        manifest.write()
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    manifest.finish("bound-failure" if code == EXIT_BOUND_FAILURE else "ok", reports, **extra)
    if code == EXIT_BOUND_FAILURE:
        _list_failures(out / "bounds.csv")
    return code


def _list_failures(path: Path) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["status"] == FAIL:
                print(f"FAIL {row['name']} t={row['t']} k={row['k']} lhs={row['lhs']} rhs={row['rhs']} "
                      f"stderr={row['stderr']}", file=sys.stderr)
