"""
Beacon Privacy Defense - Parameter Sweeps.

Runs defense + attack over a list of thresholds θ (fixed attacker) or
reference sizes K (adaptive attacker) and writes plot-ready CSV rows.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

from loguru import logger

from src.core.attack import privacy_fraction
from src.core.config import Settings
from src.core.errors import ConfigurationError, InfeasibleError, SizeError
from src.core.instance import BeaconInstance
from src.core.parallel_executor import SweepExecutor
from src.core.threat_model import ThreatSpec
from src.defenses.registry import DefenseRegistry


Axis = Literal["theta", "k"]

# fixed-threat methods and the variant that handles the adaptive attacker
ADAPTIVE_COUNTERPART = {"mig": "amig", "og": "oga"}


@dataclass(frozen=True)
class SweepRow:
    """One CSV row; flips is None when the defense had no solution."""

    parameter: Union[float, int]
    method: str
    flips: Optional[int]
    privacy_fraction: float


def _threat(instance: BeaconInstance, axis: Axis, value: Union[float, int]) -> ThreatSpec:
    if axis == "theta":
        return ThreatSpec.fixed(float(value))
    return ThreatSpec.adaptive(int(value), instance.split.reference)


def _method_for(axis: Axis, method: str) -> str:
    return ADAPTIVE_COUNTERPART.get(method, method) if axis == "k" else method


def run_sweep(
    instance: BeaconInstance,
    methods: Sequence[str],
    axis: Axis,
    values: Sequence[Union[float, int]],
    settings: Settings,
    registry: Optional[DefenseRegistry] = None,
) -> List[SweepRow]:
    """
    Defend and attack at every (value, method) point.

    Rows are ordered by value, then by method as given.

    Raises:
        ConfigurationError: If a method cannot handle the sweep's threat kind.
    """
    registry = registry or DefenseRegistry()
    threat_kind = "fixed" if axis == "theta" else "adaptive"
    for method in methods:
        defense = registry.get(_method_for(axis, method))
        if defense is None:
            raise ConfigurationError(f"unknown method '{method}'", method=method)
        if not defense.get_capabilities().get(threat_kind, False):
            raise ConfigurationError(f"method '{method}' does not support {threat_kind} threats", method=method)

    points: List[Tuple[Union[float, int], str]] = [(v, m) for v in values for m in methods]

    def run_point(point: Tuple[Union[float, int], str]) -> SweepRow:
        value, method = point
        threat = _threat(instance, axis, value)
        defense = registry.create_from_settings(_method_for(axis, method), settings)
        try:
            result = defense.run(instance, threat)
        except (InfeasibleError, ConfigurationError, SizeError) as e:
            logger.warning(f"sweep {axis}={value} {method}: no solution ({e.kind}): {e}")
            return SweepRow(value, method, None, privacy_fraction(instance, threat, None))
        return SweepRow(value, method, result.flip_count, privacy_fraction(instance, threat, result.flips))

    executor = SweepExecutor(max_workers=settings.sweep_workers, memory_threshold_gb=settings.memory_threshold_gb)
    return executor.execute(points, run_point, label=f"sweep[{axis}]")


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path], axis: Axis) -> Path:
    """
    Write `theta,method,flips,privacy_fraction` (or `k,...`) rows.

    Reals use 17 significant digits; a missing flip count is written as NA.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([axis, "method", "flips", "privacy_fraction"])
        for row in rows:
            parameter = format(float(row.parameter), ".17g") if axis == "theta" else str(int(row.parameter))
            writer.writerow([
                parameter,
                row.method,
                "NA" if row.flips is None else str(row.flips),
                format(row.privacy_fraction, ".17g"),
            ])
    return path
