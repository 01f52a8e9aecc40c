"""
Beacon Privacy Defense - Attack Evaluation.

Membership attacks against a (possibly defended) response vector:
fixed-threshold and adaptive LRT attacks, the k-means clustering attack,
and ROC curves over the attack score.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from sklearn.cluster import KMeans
from sklearn.metrics import auc, roc_curve as sk_roc_curve

from src.core.dataset import ResponseVector
from src.core.errors import DegenerateError, ParameterError
from src.core.instance import BeaconInstance
from src.core.lrt import FlipLike, LrtParams, QueryLike, flip_vector, score_rows
from src.core.threat_model import ThreatSpec, bottom_k


KMEANS_MAX_ITER = 100
DEFAULT_RUNS = 20


@dataclass(frozen=True)
class TargetPopulation:
    """
    Individuals the attacker scores, with ground-truth membership.

    Attributes:
        rows: Dense genotypes, shape (t, m).
        is_member: Beacon membership per row.
        ids: Row labels.
    """

    rows: np.ndarray
    is_member: np.ndarray
    ids: Tuple[str, ...] = ()

    @classmethod
    def from_instance(cls, instance: BeaconInstance) -> "TargetPopulation":
        """Beacon members followed by the reference population."""
        split = instance.split
        order = list(split.beacon) + list(split.reference)
        return cls(
            rows=np.vstack([instance.members, instance.references]),
            is_member=np.array([True] * len(split.beacon) + [False] * len(split.reference)),
            ids=tuple(instance.g.ids[i] for i in order),
        )


@dataclass
class AttackReport:
    """
    Outcome of one attack.

    Attributes:
        scores: LRT statistic per target.
        claims: Membership claim per target (L_i < threshold).
        tpr: Fraction of members claimed.
        fpr: Fraction of non-members claimed.
        threshold_used: θ applied.
        flips_used: Defense utility cost.
        privacy_fraction: 1 - tpr.
        kind: "fixed" or "adaptive".
    """

    scores: np.ndarray
    claims: np.ndarray
    tpr: float
    fpr: float
    threshold_used: float
    flips_used: int
    privacy_fraction: float
    kind: str = "fixed"

    def to_dict(self) -> Dict[str, Any]:
        """Flat, JSON-serializable view."""
        return {
            "kind": self.kind,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "threshold_used": self.threshold_used,
            "flips_used": self.flips_used,
            "privacy_fraction": self.privacy_fraction,
            "claimed": int(self.claims.sum()),
            "targets": int(self.claims.size),
        }


def _rate(claims: np.ndarray, mask: np.ndarray) -> float:
    return float(claims[mask].mean()) if mask.any() else 0.0


def _report(
    scores: np.ndarray, is_member: np.ndarray, threshold: float, flips_used: int, kind: str
) -> AttackReport:
    claims = scores < threshold
    tpr = _rate(claims, is_member)
    return AttackReport(
        scores=scores,
        claims=claims,
        tpr=tpr,
        fpr=_rate(claims, ~is_member),
        threshold_used=float(threshold),
        flips_used=int(flips_used),
        privacy_fraction=1.0 - tpr,
        kind=kind,
    )


def run_fixed_attack(
    params: LrtParams,
    targets: TargetPopulation,
    Q: QueryLike,
    x_after_flips: ResponseVector,
    theta: float,
    flips_used: int = 0,
) -> AttackReport:
    """
    Claim every target with L_i(Q, x') < θ.

    Args:
        params: LRT constants.
        targets: Scored population (should include every beacon member).
        Q: Queries.
        x_after_flips: Published responses.
        theta: Fixed threshold (may be -inf).
        flips_used: Utility cost to report.

    Returns:
        AttackReport
    """
    scores = score_rows(params, targets.rows, Q, x_after_flips)
    report = _report(scores, targets.is_member, theta, flips_used, "fixed")
    logger.debug(f"fixed attack: theta={theta:.6g} tpr={report.tpr:.3f} fpr={report.fpr:.3f}")
    return report


def run_adaptive_attack(
    params: LrtParams,
    targets: TargetPopulation,
    reference_rows: np.ndarray,
    Q: QueryLike,
    x_after_flips: ResponseVector,
    K: int,
    flips_used: int = 0,
) -> AttackReport:
    """
    Claim targets below θ(Q), the mean of the K lowest reference scores
    computed on the published responses.

    Raises:
        ParameterError: If K is outside [1, |reference|].
    """
    ref_scores = score_rows(params, reference_rows, Q, x_after_flips)
    if not 1 <= int(K) <= ref_scores.size:
        raise ParameterError(f"K={K} outside [1, {ref_scores.size}]")
    theta = float(np.mean(ref_scores[bottom_k(ref_scores, int(K))]))
    scores = score_rows(params, targets.rows, Q, x_after_flips)
    report = _report(scores, targets.is_member, theta, flips_used, "adaptive")
    logger.debug(f"adaptive attack: K={K} theta={theta:.6g} tpr={report.tpr:.3f}")
    return report


# ==========================================
# Clustering Attack
# ==========================================

def clustering_attack(
    scores: np.ndarray,
    ground_truth: np.ndarray,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    Two-cluster k-means on the scores; the lower cluster is claimed.

    Run 0 starts from the min and max score; later runs start from two
    seeded uniform draws in [min, max].

    Args:
        scores: LRT statistic per target.
        ground_truth: Membership per target.
        runs: Number of k-means runs averaged.
        seed: Seed for the random initializations.

    Returns:
        tuple: Mean (tpr, fpr) over runs.

    Raises:
        DegenerateError: If fewer than two distinct scores are given.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    truth = np.asarray(ground_truth, dtype=bool)
    lo, hi = float(s.min()), float(s.max())
    if np.unique(s).size < 2:
        raise DegenerateError("clustering attack needs at least two distinct scores")
    if runs < 1:
        raise ParameterError(f"runs must be >= 1, got {runs}")

    tprs: List[float] = []
    fprs: List[float] = []
    for r in range(runs):
        if r == 0:
            init = np.array([[lo], [hi]])
        else:
            init = np.sort(np.random.default_rng([seed, r]).uniform(lo, hi, size=2)).reshape(2, 1)
        km = KMeans(n_clusters=2, init=init, n_init=1, max_iter=KMEANS_MAX_ITER, algorithm="lloyd")
        labels = km.fit_predict(s)
        low = int(np.argmin(km.cluster_centers_[:, 0]))
        claims = labels == low
        tprs.append(_rate(claims, truth))
        fprs.append(_rate(claims, ~truth))
    return float(np.mean(tprs)), float(np.mean(fprs))


# ==========================================
# ROC
# ==========================================

def roc_curve(scores: np.ndarray, ground_truth: np.ndarray) -> Tuple[List[Tuple[float, float]], float]:
    """
    ROC of the attack "claim when score < t" over every threshold.

    Returns:
        tuple: ([(fpr, tpr), ...] from (0, 0) to (1, 1), AUC). A lower AUC
        means a less successful attack.

    Raises:
        DegenerateError: If ground_truth has a single class.
    """
    s = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(ground_truth, dtype=bool)
    if s.size == 0:
        raise ParameterError("roc_curve needs at least one score")
    if truth.all() or not truth.any():
        raise DegenerateError("roc_curve needs both members and non-members")
    fpr, tpr, _ = sk_roc_curve(truth, -s, drop_intermediate=False)
    points = [(float(a), float(b)) for a, b in zip(fpr, tpr)]
    return points, float(auc(fpr, tpr))


# ==========================================
# Evaluation and Output
# ==========================================

def evaluate_responses(
    instance: BeaconInstance,
    flips: FlipLike,
    theta: float,
    K: int,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
) -> Dict[str, Any]:
    """
    Fixed, adaptive and clustering attacks on the defended responses.

    Returns:
        dict: "fixed", "adaptive", "clustering", "roc" and "auc" entries.
    """
    y = flip_vector(flips, instance.m)
    x_after = (instance.x & (1 - y)).astype(np.uint8)
    flips_used = int(y.sum())
    targets = TargetPopulation.from_instance(instance)
    fixed = run_fixed_attack(instance.params, targets, instance.Q, x_after, theta, flips_used)
    adaptive = run_adaptive_attack(
        instance.params, targets, instance.references, instance.Q, x_after, K, flips_used
    )
    try:
        tpr, fpr = clustering_attack(fixed.scores, targets.is_member, runs, seed)
        clustering: Optional[Dict[str, float]] = {"tpr": tpr, "fpr": fpr, "runs": runs}
    except DegenerateError as e:
        logger.warning(f"clustering attack skipped: {e}")
        clustering = None
    points, area = roc_curve(fixed.scores, targets.is_member)
    return {
        "fixed": fixed.to_dict(),
        "adaptive": adaptive.to_dict(),
        "clustering": clustering,
        "roc": points,
        "auc": area,
    }


def write_report(report: Dict[str, Any], path: Union[str, Path]) -> Path:
    """Write an attack report as JSON (ROC points excluded)."""
    path = Path(path)
    body = {k: v for k, v in report.items() if k != "roc"}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_roc_csv(points: Sequence[Tuple[float, float]], path: Union[str, Path]) -> Path:
    """Write ROC points as `fpr,tpr` rows with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            writer.writerow([format(fpr, ".17g"), format(tpr, ".17g")])
    return path


def privacy_fraction(instance: BeaconInstance, threat: ThreatSpec, flips: FlipLike) -> float:
    """Fraction of beacon members the threat does not claim after the flips."""
    y = flip_vector(flips, instance.m)
    x_after = (instance.x & (1 - y)).astype(np.uint8)
    members = TargetPopulation(
        rows=instance.members, is_member=np.ones(instance.members.shape[0], dtype=bool)
    )
    if threat.is_adaptive:
        report = run_adaptive_attack(
            instance.params, members, instance.g.dense(threat.reference), instance.Q, x_after, threat.K
        )
    else:
        report = run_fixed_attack(instance.params, members, instance.Q, x_after, threat.theta)
    return report.privacy_fraction
