"""
Beacon Privacy Defense - Baseline Defenses.

Random Flipping (RF) of unique alleles and a randomized-response
mechanism (DP), plus the grid calibration that picks the most useful
parameter still reaching full privacy.
"""

from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from src.core.attack import privacy_fraction
from src.core.dataset import GenotypeMatrix, ResponseVector
from src.core.errors import ParameterError
from src.core.instance import BeaconInstance
from src.core.lrt import FlipSet
from src.core.threat_model import ThreatSpec
from src.defenses.base import BaseDefense, DefenseResult, attack_margins, finalize


SeedLike = Union[int, Sequence[int], None]

RF_GRID = tuple(round(0.1 * i, 1) for i in range(11))
DP_GRID = (5.0, 2.0, 1.0, 0.5, 0.1, 0.05, 0.01)
DEFAULT_BUDGET = 50


class BaselineConfig(BaseModel):
    """Parameters of one baseline run."""

    kind: Literal["rf", "dp"] = Field(..., description="Baseline mechanism")
    p: float = Field(0.0, ge=0.0, le=1.0, description="RF flip probability")
    epsilon: float = Field(1.0, gt=0.0, description="DP privacy budget")
    seed: int = Field(0, description="Base seed; trials derive (seed, trial)")

    @model_validator(mode="after")
    def _finite_epsilon(self) -> "BaselineConfig":
        if not np.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        return self

    def parameter(self) -> float:
        """The tuned parameter: p for RF, ε for DP."""
        return self.p if self.kind == "rf" else self.epsilon


def rf_defend(
    g: GenotypeMatrix,
    beacon: Sequence[int],
    x: ResponseVector,
    p: float,
    seed: SeedLike = None,
) -> FlipSet:
    """
    Flip each unique allele with probability p.

    An SNV is unique when exactly one beacon member carries it; only
    1-responses are candidates.

    Example:
        >>> rf_defend(g, (0, 1), x, p=1.0, seed=0).indices()   # F1
        [1, 2]
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    carriers = g.dense(beacon).sum(axis=0)
    unique = np.flatnonzero((carriers == 1) & np.asarray(x, dtype=bool))
    draws = np.random.default_rng(seed).random(unique.size)
    return FlipSet.from_indices(unique[draws < p], g.n_snvs)


def dp_defend(x: ResponseVector, epsilon: float, seed: SeedLike = None) -> FlipSet:
    """
    Randomized response on 1-responses: flip each with q = 1 / (1 + e^ε).

    Raises:
        ParameterError: If ε ≤ 0.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    xs = np.asarray(x, dtype=bool)
    q = 1.0 / (1.0 + np.exp(epsilon))
    draws = np.random.default_rng(seed).random(xs.size)
    return FlipSet(((draws < q) & xs).astype(np.uint8))


def run_baseline(config: BaselineConfig, instance: BeaconInstance, trial: int = 0) -> FlipSet:
    """One seeded baseline draw; trial t uses the stream (seed, t)."""
    seed = [config.seed, trial]
    if config.kind == "rf":
        flips = rf_defend(instance.g, instance.split.beacon, instance.x, config.p, seed)
    else:
        flips = dp_defend(instance.x, config.epsilon, seed)
    if instance.allowed is not None:
        flips = FlipSet((flips.y & instance.allowed).astype(np.uint8))
    return flips


@dataclass
class CalibrationResult:
    """
    Outcome of a baseline calibration.

    Attributes:
        config: Selected configuration, or None when no grid point qualifies.
        mean_flips: Mean |F| over the selected point's trials.
        tried: Grid values examined, in order.
    """

    config: Optional[BaselineConfig]
    mean_flips: Optional[float]
    tried: List[float]

    @property
    def achievable(self) -> bool:
        return self.config is not None

    def to_dict(self):
        return {
            "achievable": self.achievable,
            "config": self.config.model_dump() if self.config else None,
            "mean_flips": self.mean_flips,
            "tried": self.tried,
        }


def calibrate_baseline(
    template: BaselineConfig,
    instance: BeaconInstance,
    threat: ThreatSpec,
    budget: int = DEFAULT_BUDGET,
    grid: Optional[Sequence[float]] = None,
) -> CalibrationResult:
    """
    Most useful grid point whose every trial reaches full privacy.

    RF scans p upward from 0, DP scans ε downward from 5; the first point
    where all `budget` trials give privacy_fraction = 1 wins.

    Args:
        template: Kind and seed to calibrate.
        instance: Problem instance.
        threat: Attacker model.
        budget: Trials per grid point.
        grid: Override the default grid (scanned in the given order).

    Returns:
        CalibrationResult: config is None if no grid point qualifies.
    """
    if budget < 1:
        raise ParameterError(f"budget must be >= 1, got {budget}")
    grid = tuple(grid) if grid is not None else (RF_GRID if template.kind == "rf" else DP_GRID)
    field_name = "p" if template.kind == "rf" else "epsilon"
    tried: List[float] = []

    for value in grid:
        tried.append(float(value))
        config = template.model_copy(update={field_name: float(value)})
        counts = []
        for trial in range(budget):
            flips = run_baseline(config, instance, trial)
            if privacy_fraction(instance, threat, flips) < 1.0:
                break
            counts.append(flips.flipped_count)
        else:
            mean = float(np.mean(counts))
            logger.info(f"calibrate {template.kind}: {field_name}={value} qualifies (mean flips {mean:.3g})")
            return CalibrationResult(config=config, mean_flips=mean, tried=tried)

    logger.warning(f"calibrate {template.kind}: no grid point reaches full privacy")
    return CalibrationResult(config=None, mean_flips=None, tried=tried)


# ==========================================
# Defense Classes
# ==========================================

class _CalibratedBaseline(BaseDefense):
    kind: str = "rf"

    def __init__(self, value: Optional[float] = None, seed: int = 0, budget: int = DEFAULT_BUDGET):
        self.value = value
        self.seed = seed
        self.budget = budget

    def _config(self, instance: BeaconInstance, threat: ThreatSpec) -> BaselineConfig:
        field_name = "p" if self.kind == "rf" else "epsilon"
        template = BaselineConfig(kind=self.kind, seed=self.seed)
        if self.value is not None:
            return template.model_copy(update={field_name: float(self.value)})
        calibration = calibrate_baseline(template, instance, threat, budget=self.budget)
        if calibration.config is not None:
            return calibration.config
        # no grid point reaches full privacy: report the strongest setting
        strongest = RF_GRID[-1] if self.kind == "rf" else DP_GRID[-1]
        return template.model_copy(update={field_name: strongest})

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        config = self._config(instance, threat)
        flips = run_baseline(config, instance, trial=0)
        margins = attack_margins(instance, threat, flips)
        return finalize(
            self.name, flips, margins, False, 1,
            picks=flips.indices(), options=config.model_dump(),
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": True, "online": False, "exact": False, "randomized": True}


class RandomFlippingDefense(_CalibratedBaseline):
    """RF baseline; p is calibrated when not given."""

    name = "rf"
    description = "Random flipping of unique alleles"
    kind = "rf"


class RandomizedResponseDefense(_CalibratedBaseline):
    """DP baseline; ε is calibrated when not given."""

    name = "dp"
    description = "Randomized response on 1-responses"
    kind = "dp"
