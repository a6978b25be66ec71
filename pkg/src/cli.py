# src/cli.py
"""
Command-line surface.

    python app.py rate --override link.length_km=150
    python app.py sweep-distance --from-km 100 --to-km 240 --step-km 20 --csv out/dist.csv
    python app.py sweep-power --preset multiplexed --link-km 100 --from-dbm -40 --to-dbm -15 --step-db 1
    python app.py optimize --u 0.3 0.8 --json out/best.json
    python app.py selftest --suite all

Exit codes: 0 ok, 1 selftest failure, 2 configuration or usage error,
3 estimation failure on a single-point evaluation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import __version__
from .exporters import export_dataframe_csv, sweep_frame, to_json, write_csv, write_json
from .methodology import method_note
from .optimize import (
    EmptyBoxError,
    SearchBox,
    calibrate_raman,
    evaluate_point,
    optimize_params,
    receive_power_threshold,
    sweep_attenuation,
    sweep_distance,
    sweep_receive_power,
)
from .params import ConfigError, ProtocolParams, dump_config, load_config, replace_section
from .presets import DEFAULT_PRESET, PRESETS, preset_path
from .selftest import SUITES, run_suites
from .store import EvaluationCache

log = logging.getLogger("qkd")

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"


# -----------------------------
# Manifest
# -----------------------------
@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config: Dict[str, Any]
    seed: int
    mode: str
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    outputs: List[str] = field(default_factory=list)
    methods: Dict[str, str] = field(default_factory=dict)


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def _write_manifest(manifest: RunManifest, output: Path) -> Path:
    manifest.outputs = [str(output)]
    return write_json(asdict(manifest), manifest_path(output))


def _manifest(args: argparse.Namespace, params: Optional[ProtocolParams], methods: Sequence[str]) -> RunManifest:
    return RunManifest(
        command=args.command,
        argv=list(args.argv),
        config=dump_config(params) if params is not None else {},
        seed=getattr(args, "seed", 0),
        mode=getattr(args, "mode", "expectation"),
        methods={key: method_note(key) for key in methods},
    )


# -----------------------------
# Shared helpers
# -----------------------------
def _load(args: argparse.Namespace) -> ProtocolParams:
    path = args.config if args.config else preset_path(args.preset or DEFAULT_PRESET)
    return load_config(path, args.override)


def _cache(args: argparse.Namespace) -> EvaluationCache:
    return EvaluationCache(directory=args.cache_dir)


def _emit_json(payload: Dict[str, Any], args: argparse.Namespace, params: Optional[ProtocolParams],
               methods: Sequence[str]) -> None:
    if args.json:
        out = Path(args.json)
        payload = {**payload, "manifest": manifest_path(out).name}
        write_json(payload, out)
        _write_manifest(_manifest(args, params, methods), out)
        log.info("wrote %s", out)
    sys.stdout.write(to_json(payload))


def _emit_sweep(points, args: argparse.Namespace, params: ProtocolParams) -> int:
    frame = sweep_frame(points)
    if args.csv:
        out = Path(args.csv)
        write_csv(frame, out)
        _write_manifest(_manifest(args, params, ("secure_length_v1", "secure_length_v2",
                                                 "decoy_analytic", "decoy_lp")), out)
        log.info("wrote %d rows to %s", len(frame), out)
    else:
        sys.stdout.write(export_dataframe_csv(frame).decode())
    return EXIT_OK


# -----------------------------
# Commands
# -----------------------------
def cmd_rate(args: argparse.Namespace) -> int:
    params = _load(args)
    report = evaluate_point(params, args.mode, args.seed)
    _emit_json(report.to_dict(), args, params,
               ("secure_length_v1", "secure_length_v2", "decoy_analytic", "decoy_lp", "lambda_ec"))
    if report.failures:
        for msg in report.failures:
            log.error("estimation failed: %s", msg)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_sweep_distance(args: argparse.Namespace) -> int:
    params = _load(args)
    with _cache(args) as cache:
        points = sweep_distance(params, args.from_km, args.to_km, args.step_km, args.mode,
                                args.seed, args.workers, cache)
    return _emit_sweep(points, args, params)


def cmd_sweep_attenuation(args: argparse.Namespace) -> int:
    params = _load(args)
    with _cache(args) as cache:
        points = sweep_attenuation(params, args.from_db, args.to_db, args.step_db, args.mode,
                                   args.seed, args.workers, cache)
    return _emit_sweep(points, args, params)


def cmd_sweep_power(args: argparse.Namespace) -> int:
    params = _load(args)
    with _cache(args) as cache:
        points = sweep_receive_power(params, args.link_km, args.from_dbm, args.to_dbm,
                                     args.step_db, args.mode, args.seed, args.workers, cache)
    return _emit_sweep(points, args, params)


def _box(args: argparse.Namespace) -> SearchBox:
    defaults = SearchBox()
    ranges = {}
    for name in ("u", "v", "p_u", "p_v", "qz"):
        given = getattr(args, name)
        ranges[name] = tuple(given) if given else defaults.bounds(name)
    return SearchBox(**ranges)


def cmd_optimize(args: argparse.Namespace) -> int:
    params = _load(args)
    with _cache(args) as cache:
        result = optimize_params(params, _box(args), objective=args.objective, cache=cache)
    payload = {
        "objective": result.objective,
        "start_rate_bps": result.start_rate,
        "rate_bps": result.rate,
        "evaluations": result.evaluations,
        "params": dump_config(result.params),
        "report": result.report.to_dict(),
    }
    _emit_json(payload, args, result.params, ("secure_length_v1", "secure_length_v2"))
    return EXIT_OK


def cmd_calibrate_raman(args: argparse.Namespace) -> int:
    params = _load(args)
    calibrated = calibrate_raman(params, args.link_km, args.threshold_dbm, args.objective)
    rho = calibrated.mux.channels[0].raman_coeff_per_km_nm if calibrated.mux.channels else 0.0
    payload = {
        "raman_coeff_per_km_nm": rho,
        "anchor_km": args.link_km,
        "threshold_dbm": args.threshold_dbm,
        "params": dump_config(calibrated),
    }
    if args.check_km:
        payload["thresholds_dbm"] = {
            str(km): receive_power_threshold(replace_section(calibrated, "link", length_km=km),
                                             args.objective)
            for km in args.check_km
        }
    _emit_json(payload, args, calibrated, ("raman", "noise_model"))
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_suites(args.suite)
    failed = False
    for res in results:
        print(res.summary())
        for line in res.failures:
            print(f"  FAIL {line}")
        failed = failed or not res.ok
    return EXIT_SELFTEST if failed else EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "rate": cmd_rate,
    "sweep-distance": cmd_sweep_distance,
    "sweep-attenuation": cmd_sweep_attenuation,
    "sweep-power": cmd_sweep_power,
    "optimize": cmd_optimize,
    "calibrate-raman": cmd_calibrate_raman,
    "selftest": cmd_selftest,
}


# -----------------------------
# Parser
# -----------------------------
def _config_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON config file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="packaged config")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="section.field=value, repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("expectation", "stochastic"), default="expectation")
    p.add_argument("--cache-dir", default=None, help="persist evaluations with diskcache")


def _sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", help="output CSV (stdout when omitted)")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Finite-key decoy-state BB84 rates over long fiber links",
        # "--v" of optimize must not resolve to --verbose/--version here
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="single-point key rates as JSON")
    _config_flags(p)
    p.add_argument("--json", help="also write the report here")

    p = sub.add_parser("sweep-distance", help="rates over fiber length")
    _config_flags(p)
    _sweep_flags(p)
    p.add_argument("--from-km", type=float, required=True)
    p.add_argument("--to-km", type=float, required=True)
    p.add_argument("--step-km", type=float, required=True)

    p = sub.add_parser("sweep-attenuation", help="rates over total attenuation")
    _config_flags(p)
    _sweep_flags(p)
    p.add_argument("--from-db", type=float, required=True)
    p.add_argument("--to-db", type=float, required=True)
    p.add_argument("--step-db", type=float, required=True)

    p = sub.add_parser("sweep-power", help="rates over data-channel receive power")
    _config_flags(p)
    _sweep_flags(p)
    p.add_argument("--link-km", type=float, required=True)
    p.add_argument("--from-dbm", type=float, required=True)
    p.add_argument("--to-dbm", type=float, required=True)
    p.add_argument("--step-db", type=float, required=True)

    p = sub.add_parser("optimize", help="optimise intensities and probabilities")
    _config_flags(p)
    p.add_argument("--json", help="also write the result here")
    p.add_argument("--objective", choices=("v1", "v2"), default="v2")
    for name in ("u", "v", "p_u", "p_v", "qz"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, nargs=2,
                       metavar=("LO", "HI"))

    p = sub.add_parser("calibrate-raman", help="fit the Raman coefficient to a threshold")
    _config_flags(p)
    p.add_argument("--json", help="also write the result here")
    p.add_argument("--link-km", type=float, default=100.0)
    p.add_argument("--threshold-dbm", type=float, default=-23.0)
    p.add_argument("--objective", choices=("v1", "v2"), default="v2")
    p.add_argument("--check-km", type=float, nargs="*", default=[],
                   help="report predicted thresholds at these lengths")

    p = sub.add_parser("selftest", help="oracle suites")
    p.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            log.error("config: %s", problem)
        return EXIT_CONFIG
    except (EmptyBoxError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
