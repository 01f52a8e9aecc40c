"""
Beacon Privacy Defense - Base Defense Classes.

Defines the abstract base class for all defenses and the DefenseResult
dataclass every solver returns.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from src.core.errors import ConfigurationError, InvariantError
from src.core.instance import BeaconInstance
from src.core.lrt import FlipSet, score_rows
from src.core.threat_model import ThreatSpec, adaptive_threshold


MARGIN_TOLERANCE = 1e-9


@dataclass
class DefenseResult:
    """
    Result of a defense run.

    Margins are always recomputed by an independent post-check through the
    LRT core; the solver's own running sums are never reported.

    Attributes:
        flips: Chosen flip set.
        per_individual_margin: Post-flip margin per beacon member (≥ 0 is private).
        feasible: True when every margin is non-negative.
        iterations: Solver iterations (greedy picks, subsets examined, steps).
        method: Short method key.
        witness: A member that cannot be protected, when infeasible.
        picks: Flip order for greedy solvers.
        warnings: Non-fatal notes.
        options: Solver options for reproducibility.

    Example:
        >>> result = mi_greedy(params, g, beacon, None, x, theta=0.0)
        >>> result.flips.indices()
        [0]
    """

    flips: FlipSet
    per_individual_margin: np.ndarray
    feasible: bool
    iterations: int = 0
    method: str = "unknown"
    witness: Optional[int] = None
    picks: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    options: Dict[str, Any] = field(default_factory=dict)

    @property
    def flip_count(self) -> int:
        """Utility cost |F|."""
        return self.flips.flipped_count

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert result to dictionary.

        Returns:
            dict: Result as dictionary (JSON-serializable).
        """
        return {
            "method": self.method,
            "feasible": self.feasible,
            "flips": self.flip_count,
            "flipped_snvs": self.flips.indices(),
            "margins": [float(v) for v in self.per_individual_margin],
            "iterations": self.iterations,
            "witness": self.witness,
            "picks": list(self.picks),
            "warnings": list(self.warnings),
            "options": self.options,
        }


def finalize(
    method: str,
    flips: FlipSet,
    margins: np.ndarray,
    solver_feasible: bool,
    iterations: int,
    picks: Optional[List[int]] = None,
    options: Optional[Dict[str, Any]] = None,
) -> DefenseResult:
    """
    Build a DefenseResult from post-check margins.

    Raises:
        InvariantError: If the solver claims feasibility the post-check refutes.
    """
    margins = np.asarray(margins, dtype=np.float64)
    ok = _feasible(margins)
    if solver_feasible and not ok:
        worst = int(np.argmin(margins))
        raise InvariantError(
            f"{method}: solver reported feasible but member {worst} has margin {margins[worst]:.6g}"
        )
    witness = None if ok else int(np.argmin(margins))
    result = DefenseResult(
        flips=flips,
        per_individual_margin=margins,
        feasible=ok,
        iterations=iterations,
        method=method,
        witness=witness,
        picks=list(picks or []),
        options=dict(options or {}),
    )
    logger.info(
        f"{method}: flips={result.flip_count}, feasible={result.feasible}, "
        f"iterations={iterations}"
    )
    return result


def _feasible(margins: np.ndarray) -> bool:
    scale = np.maximum(1.0, np.abs(margins))
    return bool(np.all(margins >= -MARGIN_TOLERANCE * scale)) if margins.size else True


def attack_margins(instance: BeaconInstance, threat: ThreatSpec, flips: FlipSet) -> np.ndarray:
    """
    Member margins against the attacker on the published responses.

    Fixed: L_i - θ. Adaptive: L_i - θ(Q) with B̄⁽ᴷ⁾ selected afresh on the
    flipped responses.
    """
    scores = score_rows(instance.params, instance.members, instance.Q, instance.x, flips)
    if threat.is_adaptive:
        refs = instance.g.dense(threat.reference)
        return scores - adaptive_threshold(instance.params, refs, instance.Q, instance.x, flips, threat.K)
    return scores - threat.theta


def post_check(instance: BeaconInstance, result: DefenseResult, threat: ThreatSpec) -> DefenseResult:
    """
    Replace a result's margins with ones recomputed through the LRT core.

    Returns:
        DefenseResult: Copy with fresh margins, feasibility and witness.
    """
    margins = attack_margins(instance, threat, result.flips)
    ok = _feasible(margins)
    if ok != result.feasible:
        logger.warning(f"{result.method}: post-check feasibility {ok} differs from solver's {result.feasible}")
    return replace(
        result,
        per_individual_margin=margins,
        feasible=ok,
        witness=None if ok else int(np.argmin(margins)),
    )


class BaseDefense(ABC):
    """
    Abstract base class for Beacon defenses.

    All defense implementations must inherit from this class and implement
    the required abstract methods.

    Attributes:
        name: Registry key (e.g. "mig").
        version: Implementation version.
        description: Human-readable description.

    Example:
        >>> class NoDefense(BaseDefense):
        ...     name = "none"
        ...
        ...     def defend(self, instance, threat):
        ...         ...
        ...
        ...     def get_capabilities(self):
        ...         return {"fixed": True, "adaptive": False}
    """

    name: str = "base"
    version: str = "1.0.0"
    description: str = "Base Beacon defense"

    @abstractmethod
    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        """
        Choose flips for an instance under a threat model.

        Args:
            instance: Problem instance.
            threat: Attacker model.

        Returns:
            DefenseResult
        """
        raise NotImplementedError("Subclass must implement defend()")

    @abstractmethod
    def get_capabilities(self) -> Dict[str, bool]:
        """
        Threat models and settings the defense supports.

        Returns:
            dict: Keys fixed, adaptive, online, exact, randomized.
        """
        raise NotImplementedError("Subclass must implement get_capabilities()")

    def supports(self, threat: ThreatSpec) -> bool:
        """Whether the defense handles this threat kind."""
        return bool(self.get_capabilities().get(threat.kind, False))

    def check(self, instance: BeaconInstance, threat: ThreatSpec, result: DefenseResult) -> DefenseResult:
        """Independent post-check of a result (default: attacker margins)."""
        return post_check(instance, result, threat)

    def run(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        """
        Defend and post-check.

        Raises:
            ConfigurationError: If the threat kind is unsupported.
        """
        if not self.supports(threat):
            raise ConfigurationError(f"defense '{self.name}' does not support {threat.kind} threats")
        return self.check(instance, threat, self.defend(instance, threat))

    def get_info(self) -> Dict[str, Any]:
        """Defense name, version, description and capabilities."""
        return {
            "name": self.name,
            "version": self.version,
            "description": self.description,
            "capabilities": self.get_capabilities(),
        }

    def __str__(self) -> str:
        return f"{self.name} v{self.version}"

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}(name='{self.name}', version='{self.version}')>"
