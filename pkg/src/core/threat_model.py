"""
Beacon Privacy Defense - Threat Models.

Fixed-threshold and adaptive attacks, and the quantities the defenses need
against the adaptive attacker: θ(Q), Δ_j⁽ᴷ⁾, η⁽ᴷ⁾, Δ_ij⁽ᴷ⁾, d_ij⁽ᴷ⁾ and the
flip-eligibility filter.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core.dataset import GenotypeMatrix, ResponseVector
from src.core.errors import InvariantError, ParameterError
from src.core.lrt import (
    FlipLike,
    LrtParams,
    QueryLike,
    flip_vector,
    query_indices,
    score_rows,
)


IDENTITY_RTOL = 1e-10


@dataclass(frozen=True)
class ThreatSpec:
    """
    Attacker model.

    Attributes:
        kind: "fixed" (constant θ) or "adaptive" (θ from K lowest references).
        theta: Fixed threshold (fixed kind only).
        K: Number of lowest-scoring references averaged (adaptive only).
        reference: Reference row indices (adaptive only).

    Example:
        >>> ThreatSpec.fixed(0.0).kind
        'fixed'
        >>> ThreatSpec.adaptive(K=2, reference=(2, 3)).K
        2
    """

    kind: Literal["fixed", "adaptive"]
    theta: Optional[float] = None
    K: Optional[int] = None
    reference: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind == "fixed":
            if self.theta is None:
                raise ParameterError("fixed threat requires theta")
        elif self.kind == "adaptive":
            if self.K is None or not (1 <= int(self.K) <= len(self.reference)):
                raise ParameterError(
                    f"adaptive threat requires 1 <= K <= |reference|, got K={self.K}, "
                    f"|reference|={len(self.reference)}"
                )
        else:
            raise ParameterError(f"unknown threat kind: {self.kind!r}")

    @classmethod
    def fixed(cls, theta: float) -> "ThreatSpec":
        """Fixed-threshold attack at θ."""
        return cls(kind="fixed", theta=float(theta))

    @classmethod
    def adaptive(cls, K: int, reference: Sequence[int]) -> "ThreatSpec":
        """Adaptive attack averaging the K lowest reference scores."""
        return cls(kind="adaptive", K=int(K), reference=tuple(int(r) for r in reference))

    @property
    def is_adaptive(self) -> bool:
        return self.kind == "adaptive"


# ==========================================
# Threshold Selection
# ==========================================

def bottom_k(scores: np.ndarray, K: int) -> np.ndarray:
    """
    Positions of the K lowest scores; ties go to the lower position.

    Raises:
        ParameterError: If K is outside [1, len(scores)].
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= K <= scores.size:
        raise ParameterError(f"K={K} outside [1, {scores.size}]")
    return np.argsort(scores, kind="stable")[:K]


def adaptive_threshold(
    params: LrtParams,
    reference_rows: np.ndarray,
    Q: QueryLike,
    x: ResponseVector,
    y: FlipLike,
    K: int,
) -> float:
    """
    θ(Q): mean post-flip LRT of the K lowest-scoring reference individuals.

    Args:
        params: LRT constants.
        reference_rows: Dense genotype rows of B̄.
        Q: Queries.
        x: True responses.
        y: Flips applied by the defense.
        K: Number of reference individuals averaged.

    Returns:
        float: θ(Q).
    """
    scores = score_rows(params, reference_rows, Q, x, y)
    return float(np.mean(scores[bottom_k(scores, K)]))


# ==========================================
# Adaptive Quantities
# ==========================================

@dataclass(frozen=True, eq=False)
class AdaptiveQuantities:
    """
    Linearized adaptive constraint with B̄⁽ᴷ⁾ frozen at y = 0.

    Δ_ij⁽ᴷ⁾ and d_ij⁽ᴷ⁾ are kept in factored form (member rows plus per-SNV
    reference means) and materialized per row or column on demand.

    Attributes:
        members: Beacon row indices.
        bottom_K: Reference row indices forming B̄⁽ᴷ⁾.
        K: |B̄⁽ᴷ⁾|.
        q1: Queried SNVs with a 1-response.
        member_rows: Dense member genotypes.
        eta: η_i(Q) per member.
        delta_K: Δ_j⁽ᴷ⁾ per SNV (0 outside Q₁).
        eta_K: η⁽ᴷ⁾.
        carrier_mean_K: Σ_{k∈B̄⁽ᴷ⁾} d_kj / K per SNV.
        Delta: Δ_j per SNV.
    """

    members: Tuple[int, ...]
    bottom_K: Tuple[int, ...]
    K: int
    q1: np.ndarray
    member_rows: np.ndarray
    eta: np.ndarray
    delta_K: np.ndarray
    eta_K: float
    carrier_mean_K: np.ndarray
    Delta: np.ndarray

    def delta_iK(self, cols: Optional[np.ndarray] = None) -> np.ndarray:
        """Δ_ij⁽ᴷ⁾ for all members over cols (default Q₁), shape (n, |cols|)."""
        cols = self.q1 if cols is None else np.asarray(cols, dtype=np.int64)
        return self.member_rows[:, cols] * self.Delta[cols] - self.delta_K[cols]

    def d_iK(self, cols: Optional[np.ndarray] = None) -> np.ndarray:
        """d_ij⁽ᴷ⁾ = d_ij - Σ_k d_kj / K, shape (n, |cols|)."""
        cols = np.arange(self.member_rows.shape[1]) if cols is None else np.asarray(cols, dtype=np.int64)
        return self.member_rows[:, cols] - self.carrier_mean_K[cols]

    def condition_values(self, y: FlipLike = None) -> np.ndarray:
        """Σ_{j∈Q₁} Δ_ij⁽ᴷ⁾ y_j + η_i per member."""
        yv = flip_vector(y, self.Delta.shape[0])
        sel = self.q1[yv[self.q1].astype(bool)]
        if sel.size == 0:
            return self.eta.copy()
        return self.delta_iK(sel).sum(axis=1) + self.eta

    def margins(self, y: FlipLike = None) -> np.ndarray:
        """Condition value minus η⁽ᴷ⁾; ≥ 0 means the member passes."""
        return self.condition_values(y) - self.eta_K


def adaptive_quantities(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    reference: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    K: int,
) -> AdaptiveQuantities:
    """
    Build the adaptive constraint data with B̄⁽ᴷ⁾ selected on y = 0.

    The linear form is cross-checked against direct scoring with all of Q₁
    flipped: condition - η⁽ᴷ⁾ must equal L_i - θ(Q) for the frozen B̄⁽ᴷ⁾.

    Raises:
        ParameterError: If K > |reference|.
        InvariantError: If the cross-check fails.
    """
    D_ref = g.dense(reference)
    D = g.dense(beacon)
    return adaptive_quantities_rows(params, D, D_ref, Q, x, K, beacon=beacon, reference=reference)


def adaptive_quantities_rows(
    params: LrtParams,
    D: np.ndarray,
    D_ref: np.ndarray,
    Q: QueryLike,
    x: ResponseVector,
    K: int,
    beacon: Optional[Sequence[int]] = None,
    reference: Optional[Sequence[int]] = None,
) -> AdaptiveQuantities:
    """adaptive_quantities over dense member and reference rows."""
    m = params.m
    idx = query_indices(Q, m)
    xs = np.asarray(x, dtype=bool)
    q1 = np.sort(idx[xs[idx]])
    D = np.atleast_2d(np.asarray(D, dtype=np.uint8))
    D_ref = np.atleast_2d(np.asarray(D_ref, dtype=np.uint8))
    reference = tuple(range(D_ref.shape[0])) if reference is None else tuple(int(r) for r in reference)
    beacon = tuple(range(D.shape[0])) if beacon is None else tuple(int(b) for b in beacon)

    ref_eta = score_rows(params, D_ref, idx, x)
    picked = bottom_k(ref_eta, K)
    counts = D_ref[picked].sum(axis=0).astype(np.float64)
    carrier_mean = counts / K
    delta_K = np.zeros(m, dtype=np.float64)
    delta_K[q1] = params.Delta[q1] * counts[q1] / K

    aq = AdaptiveQuantities(
        members=beacon,
        bottom_K=tuple(reference[p] for p in picked),
        K=int(K),
        q1=q1,
        member_rows=D,
        eta=score_rows(params, D, idx, x),
        delta_K=delta_K,
        eta_K=float(np.mean(ref_eta[picked])),
        carrier_mean_K=carrier_mean,
        Delta=params.Delta,
    )
    _cross_check(aq, params, D, D_ref[picked], idx, x)
    logger.debug(
        f"Adaptive quantities: K={K}, |Q1|={q1.size}, eta_K={aq.eta_K:.6g}"
    )
    return aq


def _cross_check(
    aq: AdaptiveQuantities,
    params: LrtParams,
    D: np.ndarray,
    D_bottom: np.ndarray,
    idx: np.ndarray,
    x: ResponseVector,
) -> None:
    if D.shape[0] == 0:
        return
    y = np.zeros(params.m, dtype=np.uint8)
    y[aq.q1] = 1
    direct = score_rows(params, D, idx, x, y) - float(np.mean(score_rows(params, D_bottom, idx, x, y)))
    linear = aq.margins(y)
    scale = np.maximum(1.0, np.abs(direct))
    if np.any(np.abs(direct - linear) > IDENTITY_RTOL * scale):
        raise InvariantError("adaptive linearization disagrees with direct scoring")


def frozen_adaptive_margins(
    params: LrtParams,
    D: np.ndarray,
    D_bottom: np.ndarray,
    Q: QueryLike,
    x: ResponseVector,
    y: FlipLike,
) -> np.ndarray:
    """
    L_i(Q, x, y) minus the post-flip mean of a frozen B̄⁽ᴷ⁾, by direct scoring.

    Used as the independent post-check of adaptive batch defenses.
    """
    theta = float(np.mean(score_rows(params, D_bottom, Q, x, y)))
    return score_rows(params, D, Q, x, y) - theta


def eligible_flips(aq: AdaptiveQuantities, beacon: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    SNVs in Q₁ whose flip helps no member less than B̄⁽ᴷ⁾: Δ_ij⁽ᴷ⁾ ≥ 0 ∀ i.

    Args:
        aq: Adaptive quantities.
        beacon: Optional subset of aq.members to test (default: all).

    Returns:
        np.ndarray: Eligible SNV indices, ascending.
    """
    if aq.q1.size == 0:
        return aq.q1.copy()
    rows = slice(None)
    if beacon is not None:
        pos = {b: k for k, b in enumerate(aq.members)}
        rows = [pos[int(b)] for b in beacon]
    block = aq.delta_iK()[rows]
    if block.shape[0] == 0:
        return aq.q1.copy()
    return aq.q1[np.all(block >= 0.0, axis=0)]
