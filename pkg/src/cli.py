"""
Beacon Privacy Defense - Command Line Interface.

Usage:
    python -m src.cli generate --out data/ --seed 1
    python -m src.cli defend --dataset data/beacon.matrix --method mig --theta 0 --out runs/mig
    python -m src.cli attack --dataset data/beacon.matrix --flips runs/mig/flips.json --out runs/mig
    python -m src.cli sweep --dataset data/beacon.matrix --thetas -2,-1,0 --methods mig,rf --out runs/sweep
    python -m src.cli serve --dataset data/beacon.matrix --mode auth_online --listen 127.0.0.1:7410
    python -m src.cli verify [--direction]

Exit codes: 0 ok, 1 infeasible defense, 2 usage or configuration error,
3 internal invariant failure. Errors are written to stderr as one JSON
object; logs also go to stderr and results to stdout.
"""

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from loguru import logger

from src.api.models import ServiceConfig
from src.api.server import BeaconService
from src.api.store import SessionStore
from src.core.attack import evaluate_responses, write_report, write_roc_csv
from src.core.config import Settings, build_settings
from src.core.dataset import generate_synthetic, save_matrix
from src.core.errors import BeaconError, ConfigurationError, InfeasibleError, ParameterError
from src.core.instance import BeaconInstance, load_instance
from src.core.lrt import FlipSet
from src.core.sweep import run_sweep, write_sweep_csv
from src.core.threat_model import ThreatSpec
from src.core.verify import SUITES, direction_report, run_suites
from src.defenses.registry import DefenseRegistry
from src.utils.file_utils import RunManifest, ensure_directory, write_json
from src.utils.logging_config import add_run_context, setup_logging
from src.utils.resource_monitor import ResourceMonitor


DATASET_NAME = "beacon.matrix"
FLIPS_NAME = "flips.json"
REPORT_NAME = "attack.json"
ROC_NAME = "roc.csv"
SWEEP_NAME = "sweep.csv"
VERIFY_NAME = "verify.json"

THETA_SWEEP_METHODS = "mig,gmbc,gkc,og,omig,rf,dp"
K_SWEEP_METHODS = "mig,og,omig,rf,dp"

# flags whose values may start with "-" (e.g. --thetas -2,-1,0)
LIST_FLAGS = ("--thetas", "--ks")

# flag dest -> Settings field
SETTING_FLAGS = (
    "delta", "theta", "k", "method", "seed", "queries", "max_aaf", "threat",
    "runs", "listen", "mode", "persistence_path", "log_level", "log_format",
)


# ==========================================
# Argument Parsing
# ==========================================

def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def _join_list_flags(argv: Sequence[str]) -> List[str]:
    out: List[str] = []
    it = iter(argv)
    for token in it:
        if token in LIST_FLAGS:
            value = next(it, None)
            out.append(token if value is None else f"{token}={value}")
        else:
            out.append(token)
    return out


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subparser per command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Flat YAML experiment file")
    common.add_argument("--seed", type=int, help="Base random seed")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ERROR")
    common.add_argument("--log-format", dest="log_format", choices=["text", "json"])

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--dataset", type=Path, help="Matrix file")
    model.add_argument("--delta", type=float, help="Sequencing error rate, 0 < delta < 0.25")
    model.add_argument("--theta", type=float, help="Fixed attack threshold")
    model.add_argument("--k", type=int, help="Adaptive attack: K lowest references")
    model.add_argument("--threat", choices=["fixed", "adaptive"], help="Attacker model")
    model.add_argument("--method", help="Defense key (see `verify --list`)")
    model.add_argument("--queries", type=int, help="Query only the first N SNVs")
    model.add_argument("--max-aaf", dest="max_aaf", type=float, help="Only flip SNVs with AAF <= this")
    model.add_argument("--beacon-size", dest="beacon_size", type=int, help="First N rows are members")

    parser = argparse.ArgumentParser(prog="beacon", description="Beacon membership-privacy defenses")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="Write a synthetic matrix file")
    gen.add_argument("--beacon-size", dest="beacon_size", type=int, help="Beacon members")
    gen.add_argument("--reference-size", dest="reference_size", type=int, help="Reference individuals")
    gen.add_argument("--snvs", type=int, help="SNV count")

    sub.add_parser("defend", parents=[common, model], help="Choose flips and post-check them")

    att = sub.add_parser("attack", parents=[common, model], help="Attack defended responses")
    att.add_argument("--flips", type=Path, help="flips.json from defend (default: run --method)")
    att.add_argument("--runs", type=int, help="Clustering attack runs")

    swp = sub.add_parser("sweep", parents=[common, model], help="Defend and attack over θ or K")
    axis = swp.add_mutually_exclusive_group(required=True)
    axis.add_argument("--thetas", type=_float_list, help="Comma-separated thresholds")
    axis.add_argument("--ks", type=_int_list, help="Comma-separated adaptive K values")
    swp.add_argument("--methods", help="Comma-separated defense keys")

    srv = sub.add_parser("serve", parents=[common, model], help="Run the Beacon query service")
    srv.add_argument("--listen", help="host:port")
    srv.add_argument("--mode", choices=["batch_precomputed", "auth_online", "unauth_online"])
    srv.add_argument("--state", dest="persistence_path", type=Path, help="Commitment log directory")

    ver = sub.add_parser("verify", parents=[common], help="Run the invariant suites")
    ver.add_argument("--suites", help=f"Comma-separated subset of {','.join(SUITES)}")
    ver.add_argument("--direction", action="store_true", help="Also run the direction-of-effect report")
    ver.add_argument("--list", action="store_true", help="List defenses and suites, then exit")
    return parser


def settings_from_args(args: argparse.Namespace) -> Settings:
    """Flags over config file over environment."""
    overrides: Dict[str, Any] = {name: getattr(args, name, None) for name in SETTING_FLAGS}
    if args.command == "generate":
        overrides.update(
            beacon_size=args.beacon_size, reference_size=args.reference_size, snvs=args.snvs
        )
    return build_settings(args.config, overrides)


# ==========================================
# Helpers
# ==========================================

def _threat(instance: BeaconInstance, settings: Settings) -> ThreatSpec:
    if settings.threat == "adaptive":
        return ThreatSpec.adaptive(settings.k, instance.split.reference)
    return ThreatSpec.fixed(settings.theta)


def _load(args: argparse.Namespace, settings: Settings) -> BeaconInstance:
    if args.dataset is None:
        raise ConfigurationError("--dataset is required")
    if not args.dataset.is_file():
        raise ConfigurationError(f"dataset not found: {args.dataset}", path=str(args.dataset))
    return load_instance(
        args.dataset, settings.delta, queries=settings.queries, max_aaf=settings.max_aaf,
        beacon_size=args.beacon_size,
    )


def _read_flips(path: Path, m: int) -> FlipSet:
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
        return FlipSet.from_indices([int(j) for j in body["flipped_snvs"]], m)
    except FileNotFoundError as e:
        raise ConfigurationError(f"flips file not found: {path}", path=str(path)) from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"unreadable flips file {path}: {e}", path=str(path)) from e


def _out_dir(args: argparse.Namespace) -> Path:
    return ensure_directory(args.out or Path("."))


def _emit(body: Dict[str, Any]) -> None:
    print(json.dumps(body, sort_keys=True))


# ==========================================
# Commands
# ==========================================

def cmd_generate(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    g, f, split = generate_synthetic(
        settings.beacon_size, settings.reference_size, settings.snvs,
        settings.aaf_beta_a, settings.aaf_beta_b, seed=settings.seed,
    )
    path = save_matrix(g, f, _out_dir(args) / DATASET_NAME)
    manifest.add_outputs([path])
    _emit({"dataset": str(path), "beacon": len(split.beacon), "reference": len(split.reference), "snvs": g.n_snvs})
    return 0


def cmd_defend(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    instance = _load(args, settings)
    threat = _threat(instance, settings)
    defense = DefenseRegistry().create_from_settings(settings.method, settings)
    result = defense.run(instance, threat)

    body = result.to_dict()
    body["threat"] = {"kind": threat.kind, "theta": threat.theta, "K": threat.K}
    path = write_json(body, _out_dir(args) / FLIPS_NAME)
    manifest.add_outputs([path])
    _emit({"method": result.method, "flips": result.flip_count, "feasible": result.feasible, "output": str(path)})
    if not result.feasible:
        raise InfeasibleError(
            f"{result.method} cannot protect member {result.witness}", individual=result.witness
        )
    return 0


def cmd_attack(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    instance = _load(args, settings)
    if args.flips is not None:
        flips = _read_flips(args.flips, instance.m)
        manifest.add_inputs([args.flips])
    else:
        defense = DefenseRegistry().create_from_settings(settings.method, settings)
        flips = defense.run(instance, _threat(instance, settings)).flips

    report = evaluate_responses(
        instance, flips, settings.theta, settings.k, runs=settings.runs, seed=settings.seed
    )
    out = _out_dir(args)
    paths = [write_report(report, out / REPORT_NAME), write_roc_csv(report["roc"], out / ROC_NAME)]
    manifest.add_outputs(paths)
    _emit({
        "flips": flips.flipped_count,
        "fixed_tpr": report["fixed"]["tpr"],
        "adaptive_tpr": report["adaptive"]["tpr"],
        "auc": report["auc"],
    })
    return 0


def cmd_sweep(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    instance = _load(args, settings)
    if args.thetas is not None:
        axis, values = "theta", args.thetas
        default_methods = THETA_SWEEP_METHODS
    else:
        axis, values = "k", args.ks
        default_methods = K_SWEEP_METHODS
    if not values:
        raise ParameterError(f"--{axis}s needs at least one value")
    methods = [m.strip() for m in (args.methods or default_methods).split(",") if m.strip()]

    rows = run_sweep(instance, methods, axis, values, settings)
    path = write_sweep_csv(rows, _out_dir(args) / SWEEP_NAME, axis)
    manifest.add_outputs([path])
    _emit({"rows": len(rows), "output": str(path)})
    return 0


def cmd_serve(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    if args.dataset is None:
        raise ConfigurationError("--dataset is required")
    config = ServiceConfig.from_settings(settings, args.dataset)
    instance = _load(args, settings)
    store = SessionStore(config.persistence_path, config.snapshot_every).open()
    service = BeaconService(config, instance, store)
    service.prepare()

    async def _run() -> None:
        try:
            await service.serve_forever()
        finally:
            await service.close()

    try:
        asyncio.run(_run())
    except KeyboardInterrupt:
        logger.info("Beacon service stopped")
    return 0


def cmd_verify(args: argparse.Namespace, settings: Settings, manifest: RunManifest) -> int:
    if args.list:
        registry = DefenseRegistry()
        _emit({"defenses": registry.get_names(), "suites": list(SUITES)})
        return 0
    names = [s.strip() for s in args.suites.split(",")] if args.suites else None
    unknown = [n for n in names or () if n not in SUITES]
    if unknown:
        raise ConfigurationError(f"unknown suites: {', '.join(unknown)}")

    results = run_suites(names, seed=settings.seed)
    body: Dict[str, Any] = {"suites": [r.to_dict() for r in results]}
    ok = all(r.passed for r in results)
    if args.direction:
        report = direction_report()
        body["direction"] = report
        ok = ok and report["utility_ok"] and report["fpr_ok"]
    body["passed"] = ok

    if args.out is not None:
        manifest.add_outputs([write_json(body, _out_dir(args) / VERIFY_NAME)])
    _emit({"passed": ok, "suites": {r.name: r.passed for r in results}})
    return 0 if ok else 3


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings, RunManifest], int]] = {
    "generate": cmd_generate,
    "defend": cmd_defend,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "serve": cmd_serve,
    "verify": cmd_verify,
}


# ==========================================
# Entry Point
# ==========================================

def _fail(error: BeaconError) -> int:
    sys.stderr.write(json.dumps(error.to_dict(), sort_keys=True, default=str) + "\n")
    return error.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one CLI command.

    Returns:
        int: Process exit status.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_list_flags(argv))

    try:
        settings = settings_from_args(args)
    except BeaconError as e:
        return _fail(e)

    setup_logging(
        level=settings.log_level,
        log_format=settings.log_format,
        log_dir=settings.log_dir,
        enable_file_logging=settings.log_file_enabled,
        rotation=settings.log_rotation,
        retention=settings.log_retention,
    )
    manifest = RunManifest(
        command=args.command, argv=argv, seed=settings.seed, config=settings.get_summary()
    )
    manifest.add_inputs([getattr(args, "dataset", None), args.config])
    monitor = ResourceMonitor()
    run_id = f"{args.command}-{settings.seed}"

    with add_run_context(run_id, args.command):
        monitor.start()
        status = 0
        try:
            status = COMMANDS[args.command](args, settings, manifest)
        except BeaconError as e:
            logger.error(f"{args.command} failed: {e}")
            status = _fail(e)
        except FileNotFoundError as e:
            status = _fail(ConfigurationError(f"file not found: {e.filename}", path=e.filename))
        finally:
            manifest.timings = monitor.stop()
        if manifest.outputs:
            manifest.write(_out_dir(args))
        logger.info(f"{args.command} finished with status {status}")
    return status


if __name__ == "__main__":
    sys.exit(main())
