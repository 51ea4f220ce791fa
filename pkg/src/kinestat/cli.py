"""``kinestat`` command-line tool.

Subcommands
-----------
simulate         write a synthetic sensor log from a config
estimate         run one filter formulation over a log
benchmark        time both position/IMU formulations on the same log
compare-filters  delay and noise of the filter versus low-pass baselines
observability    rank probes
calibrate-imu    dual-IMU extrinsic calibration

Exit status is 0 on success, 1 on usage or config errors and 2 on numerical
failures (divergence, non-converging Riccati iteration, failed rank probes).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io, lti, observability, pipeline, sim
from .eskf import EskfError
from .manifold import log_so3

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit status 1."""


class NumericalFailure(Exception):
    """Computation failed or a check did not hold; maps to exit status 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here reserves 2 for numerics.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(arg: Optional[str], seed: Optional[int]) -> io.Config:
    """Config from a path, ``@name`` for a bundled file, or defaults when ``None``."""
    if arg is None:
        cfg = io.parse_config(None)
    elif arg.startswith("@"):
        cfg = io.read_config(io.packaged_config(arg[1:]))
    else:
        cfg = io.read_config(arg)
    return cfg.with_seed(seed) if seed is not None else cfg


def _emit(report: dict, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(io.report_text(report))
        return
    txt, js = io.write_report(out, report)
    print(f"wrote {txt} and {js}")


def _read_log(path: str, mode: Optional[str] = None) -> sim.SensorLog:
    return io.read_sensor_log(path, mode=mode)


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    if args.out is None:
        raise UsageError("simulate needs --out")
    log = sim.simulate(cfg.trajectory_spec(), cfg.sensor_spec())
    log.meta["config"] = cfg.model_dump(mode="json")
    p = io.write_sensor_log(log, args.out)
    print(f"wrote {p} ({len(log)} rows) and {io.meta_path(p)}")
    return EXIT_OK


def estimate_table(result: pipeline.EstimateResult) -> dict[str, np.ndarray]:
    """Per-sample estimates and 3-sigma envelopes as named columns."""
    cols: dict[str, np.ndarray] = {"t": result.t}
    for name, arr in result.states.items():
        if name == "R":
            cols["R_rotvec"] = np.array([log_so3(R) for R in arr]).reshape(-1, 3)
        else:
            cols[name] = arr
    sig3 = 3.0 * result.sigma
    for i, lab in enumerate(result.sigma_labels):
        cols["3" + lab] = sig3[:, i]
    return cols


def _table_path(out: str) -> Path:
    p = Path(out)
    return p if p.suffix == ".csv" else p.with_suffix(".csv")


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args.seed)
    log = _read_log(args.log, args.formulation)
    settings = cfg.filter_settings()
    res = pipeline.run_filter(log, args.formulation, settings)
    if res.error:
        report = {"formulation": res.formulation, "error": res.error, "samples": int(res.t.size)}
    else:
        report = pipeline.evaluate(res, log, settings)
    if args.out is not None:
        tab = io.write_table(_table_path(args.out), estimate_table(res))
        print(f"wrote {tab}")
        _emit(report, str(_table_path(args.out).with_suffix("")) + "_report")
    else:
        _emit(report, None)
    if res.error:
        print(f"error: filter diverged at t = {res.t[-1] if res.t.size else 0.0}: {res.error}",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def benchmark(log: sim.SensorLog, settings: pipeline.FilterSettings) -> dict:
    """Mean predict/update times of the state and input formulations."""
    out: dict = {}
    for f in (pipeline.STATE, pipeline.INPUT):
        r = pipeline.run_filter(log, f, settings)
        if r.error:
            raise NumericalFailure(f"{f} formulation diverged: {r.error}")
        out[f] = {k: r.timer[k] for k in ("mean_predict_ms", "mean_update_ms", "per_step_ms")}
    out["per_step_ratio_state_over_input"] = out[pipeline.STATE]["per_step_ms"] / out[pipeline.INPUT]["per_step_ms"]
    return out


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config, args.seed)
    log = _read_log(args.log, pipeline.STATE)
    _emit(benchmark(log, cfg.filter_settings()), args.out)
    return EXIT_OK


def cmd_compare_filters(args) -> int:
    cfg = load_config(args.config, args.seed)
    log = _read_log(args.log, pipeline.STATE)
    if not log.synthetic:
        raise UsageError("compare-filters needs a log with ground-truth columns")
    rep = pipeline.compare_filters(log, cfg.filter_settings(), max_lag_s=cfg.compare.max_lag_s)
    _emit(rep.as_dict(), args.out)
    return EXIT_OK


def run_probes(cfg: io.Config, mode: str, trials: int) -> list[observability.ProbeReport]:
    pc = cfg.probe_config()
    if mode == "input":
        return [observability.probe_input(pc, trials)]
    if mode == "state":
        return [observability.thin_set_probe_state_formulation(pc, trials)]
    if mode == "inter-imu":
        return [observability.thin_set_probe_inter_imu(pc, trials)]
    if mode == "lemma1":
        return [observability.lemma1_probe(trials, pc.seed, pc.rank_tol)]
    raise UsageError(f"unknown mode {mode!r}")


def cmd_observability(args) -> int:
    cfg = load_config(args.config, args.seed)
    trials = args.trials if args.trials is not None else cfg.observability.trials
    reports = run_probes(cfg, args.mode, trials)
    for r in reports:
        for line in r.lines():
            print(line)
    if args.out is not None:
        _emit({r.name: r.summary() for r in reports}, args.out)
        rows = [rec.as_row() for r in reports for rec in r.records]
        if rows:
            with open(Path(args.out).with_suffix(".trials.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


def cmd_calibrate_imu(args) -> int:
    cfg = load_config(args.config, args.seed)
    log = _read_log(args.log, pipeline.INTER_IMU)
    rep = pipeline.calibrate_imu(log, cfg.filter_settings())
    _emit(rep.as_dict(), args.out)
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_NUMERIC if rep.result.error else EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinestat", description="Error-state filtering and observability toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, log: bool = True):
        if log:
            sp.add_argument("log", help="sensor log CSV")
        sp.add_argument("--config", help="YAML config path, or @reference_uav / @reference_shake")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output path (reports get .txt and .json)")

    sp = sub.add_parser("simulate", help="write a synthetic sensor log")
    common(sp, log=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="run a filter over a log")
    common(sp)
    sp.add_argument("--formulation", choices=[pipeline.STATE, pipeline.INPUT, pipeline.INTER_IMU],
                    default=pipeline.STATE)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("benchmark", help="time both position/IMU formulations")
    common(sp)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("compare-filters", help="filter versus low-pass baselines")
    common(sp)
    sp.set_defaults(func=cmd_compare_filters)

    sp = sub.add_parser("observability", help="rank probes")
    common(sp, log=False)
    sp.add_argument("--mode", choices=["input", "state", "inter-imu", "lemma1"], required=True)
    sp.add_argument("--trials", type=int, help="trials per probe (default from config)")
    sp.set_defaults(func=cmd_observability)

    sp = sub.add_parser("calibrate-imu", help="dual-IMU extrinsic calibration")
    common(sp)
    sp.set_defaults(func=cmd_calibrate_imu)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "trials", None) is not None and args.trials < 1:
        print("kinestat: error: --trials must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, io.ConfigError, io.LogFormatError) as e:
        print(f"kinestat: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, EskfError, lti.LtiError, observability.ObservabilityError,
            FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"kinestat: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"kinestat: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
