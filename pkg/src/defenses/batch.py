"""
Beacon Privacy Defense - Batch Defenses.

Exact minimum-flip oracle, Greedy Min Beacon Cover (GMBC), Greedy k-Cover
(GKC), Marginal-Impact Greedy (MIG) and its adaptive-attack variant.

Every solver breaks ties toward the lowest SNV index, so results do not
depend on platform or evaluation order.
"""

import itertools
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core.dataset import GenotypeMatrix, ResponseVector
from src.core.errors import DomainError, InfeasibleError, ParameterError, SizeError
from src.core.instance import BeaconInstance, restrict_candidates
from src.core.lrt import (
    FlipSet,
    LrtParams,
    QueryLike,
    QuerySet,
    beta_expectation_lrt_params,
    fit_beta_moments,
    query_indices,
    score_rows,
    supports_of,
    theorem_delta_bound,
)
from src.core.threat_model import (
    ThreatSpec,
    adaptive_quantities_rows,
    eligible_flips,
    frozen_adaptive_margins,
)
from src.defenses.base import BaseDefense, DefenseResult, finalize


DEFAULT_MAX_EXACT = 24
COMBINATION_CHUNK = 4096


def _q1(idx: np.ndarray, x: ResponseVector) -> np.ndarray:
    return np.sort(idx[np.asarray(x, dtype=bool)[idx]])


# ==========================================
# Exact Oracle
# ==========================================

def _combination_chunks(c: int, k: int) -> Iterator[np.ndarray]:
    combos = itertools.combinations(range(c), k)
    while True:
        chunk = list(itertools.islice(combos, COMBINATION_CHUNK))
        if not chunk:
            return
        yield np.asarray(chunk, dtype=np.int64).reshape(len(chunk), k)


def min_cardinality_subset(base: np.ndarray, gains: np.ndarray) -> Tuple[Optional[np.ndarray], int]:
    """
    Smallest column subset S (lexicographically first) with base + Σ_S gains ≥ 0.

    Returns:
        tuple: (column positions or None, subsets examined)
    """
    c = gains.shape[1]
    examined = 0
    for k in range(c + 1):
        for chunk in _combination_chunks(c, k):
            total = base[:, None] + gains[:, chunk].sum(axis=2)
            ok = np.all(total >= 0.0, axis=0)
            if ok.any():
                first = int(np.argmax(ok))
                return chunk[first], examined + first + 1
            examined += chunk.shape[0]
    return None, examined


def exact_min_flips(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    threat: ThreatSpec,
    max_m: int = DEFAULT_MAX_EXACT,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Minimum-cardinality flip set by exhaustive search in increasing size.

    Fixed threat: Σ_{j∈Q₁} Δ_ij y_j + η_i ≥ θ for all members. Adaptive
    threat: Σ Δ_ij⁽ᴷ⁾ y_j + η_i ≥ η⁽ᴷ⁾ over the eligible flips, with B̄⁽ᴷ⁾
    frozen at y = 0.

    Args:
        params: LRT constants.
        g: Genotype matrix.
        beacon: Member rows.
        Q: Queries.
        x: True responses.
        threat: Fixed or adaptive attacker.
        max_m: Largest candidate count searched.
        allowed: Optional mask of flippable SNVs.

    Returns:
        DefenseResult: feasible=False when no subset satisfies every member.

    Raises:
        SizeError: If more than max_m candidate SNVs remain.
    """
    D = g.dense(beacon)
    idx = query_indices(Q, params.m)

    if threat.is_adaptive:
        D_ref = g.dense(threat.reference)
        aq = adaptive_quantities_rows(params, D, D_ref, idx, x, threat.K, beacon, threat.reference)
        cand = restrict_candidates(eligible_flips(aq), allowed)
        base = aq.eta - aq.eta_K
        gains = aq.delta_iK(cand)
        bottom = g.dense(aq.bottom_K)
        post_check = lambda y: frozen_adaptive_margins(params, D, bottom, idx, x, y)  # noqa: E731
    else:
        cand = restrict_candidates(_q1(idx, x), allowed)
        base = score_rows(params, D, idx, x) - threat.theta
        gains = D[:, cand] * params.Delta[cand]
        post_check = lambda y: score_rows(params, D, idx, x, y) - threat.theta  # noqa: E731

    if cand.size > max_m:
        raise SizeError(
            f"exact solver limited to {max_m} candidate SNVs, got {cand.size}; "
            f"use the greedy solvers (mig, gmbc, gkc) for larger instances",
            candidates=int(cand.size),
        )

    chosen, examined = min_cardinality_subset(base, gains)
    feasible = chosen is not None
    picks = cand[chosen].tolist() if feasible else cand.tolist()
    flips = FlipSet.from_indices(picks, params.m)
    logger.debug(f"exact: examined {examined} subsets over {cand.size} candidates")
    return finalize(
        "exact",
        flips,
        post_check(flips),
        feasible,
        examined,
        picks=picks,
        options={"threat": threat.kind, "max_m": max_m},
    )


# ==========================================
# Greedy Min Beacon Cover
# ==========================================

def _incidence(supports: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    universe = np.unique(np.concatenate(supports)) if supports else np.zeros(0, np.int64)
    inc = np.zeros((len(supports), universe.size), dtype=bool)
    for i, p in enumerate(supports):
        inc[i, np.searchsorted(universe, p)] = True
    return universe.astype(np.int64), inc


def _normalize_supports(
    P: Sequence[Sequence[int]], Q: QueryLike, m: Optional[int]
) -> Tuple[List[np.ndarray], int]:
    supports = [np.unique(np.asarray(list(p), dtype=np.int64)) for p in P]
    if m is None:
        tops = [int(p.max()) for p in supports if p.size]
        if Q is not None:
            q = np.asarray(Q.members if isinstance(Q, QuerySet) else Q, dtype=np.int64)
            if q.size:
                tops.append(int(q.max()))
        m = max(tops) + 1 if tops else 0
    if Q is not None:
        allowed = query_indices(Q, m)
        supports = [np.intersect1d(p, allowed) for p in supports]
    return supports, m


def _pick(counts: np.ndarray, weight: Optional[np.ndarray]) -> int:
    if weight is None:
        return int(np.argmax(counts))
    top = np.flatnonzero(counts == counts.max())
    return int(top[np.argmax(weight[top])])


def greedy_min_beacon_cover(
    P: Sequence[Sequence[int]],
    Q: QueryLike = None,
    m: Optional[int] = None,
    tiebreak: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Greedy set cover: a flip set hitting every P_i.

    Each iteration flips the SNV whose R_j = {i : j ∈ P_i} covers the most
    still-uncovered members. Margins are |F ∩ P_i| - 1.

    Args:
        P: Per-member supports P_i.
        Q: Optional candidate SNVs (supports are intersected with Q).
        m: Number of SNVs (default: inferred from P and Q).
        tiebreak: Optional per-SNV weights; among equal counts the largest
            weight wins, then the lowest index.

    Returns:
        DefenseResult

    Raises:
        InfeasibleError: If some P_i is empty.

    Example:
        >>> greedy_min_beacon_cover([[0, 2], [0, 1]], m=4).flips.indices()
        [0]
    """
    supports, m = _normalize_supports(P, Q, m)
    for i, p in enumerate(supports):
        if p.size == 0:
            raise InfeasibleError(f"member {i} has an empty support; no Beacon-Cover exists", individual=i)

    universe, inc = _incidence(supports)
    uncovered = np.ones(len(supports), dtype=bool)
    weight = None if tiebreak is None else np.asarray(tiebreak, dtype=np.float64)[universe]
    available = np.ones(universe.size, dtype=bool)
    picks: List[int] = []
    while uncovered.any():
        counts = inc[uncovered].sum(axis=0) * available
        best = _pick(counts, weight)
        picks.append(int(universe[best]))
        available[best] = False
        uncovered &= ~inc[:, best]

    margins = inc[:, ~available].sum(axis=1) - 1.0 if supports else np.zeros(0)
    return finalize("gmbc", FlipSet.from_indices(picks, m), margins, True, len(picks), picks=picks)


def gmbc_defend(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    theta: float,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Beacon-Cover defense against a fixed threshold.

    Only members with η_i < θ need covering. Privacy is verified by the
    post-check; it is guaranteed whenever theorem_delta_bound certifies δ.
    Count ties go to the larger Δ_j.
    """
    D = g.dense(beacon)
    idx = query_indices(Q, params.m)
    eta = score_rows(params, D, idx, x)
    q1 = restrict_candidates(_q1(idx, x), allowed)
    needy = np.flatnonzero(eta < theta)
    supports = supports_of(D[needy], q1, x, params.m) if needy.size else ()
    try:
        cover = greedy_min_beacon_cover(supports, m=params.m, tiebreak=params.Delta) if needy.size else None
    except InfeasibleError as e:
        witness = int(needy[e.individual])
        logger.warning(f"gmbc: member {witness} cannot be covered")
        flips = FlipSet.from_indices(q1, params.m)
        result = finalize("gmbc", flips, score_rows(params, D, idx, x, flips) - theta, False, 0)
        result.witness = witness
        result.feasible = False
        return result

    picks = cover.picks if cover is not None else []
    flips = FlipSet.from_indices(picks, params.m)
    margins = score_rows(params, D, idx, x, flips) - theta
    return finalize("gmbc", flips, margins, False, len(picks), picks=picks, options={"theta": theta})


# ==========================================
# Greedy k-Cover
# ==========================================

def k_cover_quotas(eta: np.ndarray, theta: float, A: float, B: float) -> np.ndarray:
    """k_i = max(0, ceil((θ - η_i) / (B - A)))."""
    if not B - A > 0:
        raise ParameterError("k-cover quotas need B > A")
    raw = np.ceil((theta - np.asarray(eta, dtype=np.float64)) / (B - A))
    return np.maximum(raw, 0.0).astype(np.int64)


def greedy_k_cover(
    P: Sequence[Sequence[int]],
    k: Sequence[int],
    Q: QueryLike = None,
    m: Optional[int] = None,
) -> DefenseResult:
    """
    Greedy multi-cover: flip until |F ∩ P_i| ≥ k_i for every member.

    Each iteration flips the SNV present in the most unsatisfied supports.
    Margins are |F ∩ P_i| - k_i.

    Raises:
        InfeasibleError: If some k_i > |P_i|.

    Example:
        >>> greedy_k_cover([[0, 2], [0, 1]], [2, 1], m=4).flips.indices()
        [0, 2]
    """
    supports, m = _normalize_supports(P, Q, m)
    need = np.asarray(list(k), dtype=np.int64)
    if need.shape[0] != len(supports):
        raise ParameterError(f"expected {len(supports)} quotas, got {need.shape[0]}")
    for i, (p, q) in enumerate(zip(supports, need)):
        if q > p.size:
            raise InfeasibleError(f"member {i} needs {q} flips but has only {p.size} candidates", individual=i)

    universe, inc = _incidence(supports) if any(p.size for p in supports) else (
        np.zeros(0, np.int64), np.zeros((len(supports), 0), bool)
    )
    have = np.zeros(len(supports), dtype=np.int64)
    available = np.ones(universe.size, dtype=bool)
    picks: List[int] = []
    while np.any(have < need):
        counts = inc[have < need].sum(axis=0) * available
        best = int(np.argmax(counts))
        picks.append(int(universe[best]))
        available[best] = False
        have += inc[:, best]

    margins = (have - need).astype(np.float64)
    return finalize("gkc", FlipSet.from_indices(picks, m), margins, True, len(picks), picks=picks)


def gkc_defend(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    theta: float,
    beta_a: float,
    beta_b: float,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Greedy k-Cover under the Beta-expectation model (uniform A, B).

    Quotas come from the uniform constants; the cover is then scored with
    the instance's own constants and, while a member is still below θ,
    topped up with the candidate of largest Δ_j times exposed carriers.
    Margins are always the true-LRT ones.

    Args:
        params: The instance's LRT constants (post-check and repair).
        g: Genotype matrix.
        beacon: Member rows.
        Q: Queries.
        x: True responses.
        theta: Attack threshold.
        beta_a: Beta shape a of the AAF model.
        beta_b: Beta shape b of the AAF model.
        allowed: Optional mask of flippable SNVs.

    Returns:
        DefenseResult: options["repair_picks"] counts the top-up flips.
    """
    m = params.m
    uparams = beta_expectation_lrt_params(beta_a, beta_b, len(beacon), params.delta, m)
    D = g.dense(beacon)
    idx = query_indices(Q, m)
    quotas = k_cover_quotas(score_rows(uparams, D, idx, x), theta, float(uparams.A[0]), float(uparams.B[0]))
    cand = restrict_candidates(_q1(idx, x), allowed)
    options: Dict[str, Any] = {"theta": theta, "beta_a": beta_a, "beta_b": beta_b}
    try:
        cover = greedy_k_cover(supports_of(D, cand, x, m), quotas, m=m)
        picks, iterations = list(cover.picks), cover.iterations
    except InfeasibleError as e:
        logger.warning(f"gkc: member {e.individual} cannot meet its uniform-model quota; repairing from empty")
        picks, iterations = [], 0
    # a flip with Δ_j ≤ 0 cannot raise any true score
    picks = [j for j in picks if params.Delta[j] > 0.0]

    carriers = D[:, cand].astype(bool)
    available = ~np.isin(cand, picks) & (params.Delta[cand] > 0.0)
    current = score_rows(params, D, idx, x, FlipSet.from_indices(picks, m))
    repaired = 0
    while np.any(current < theta):
        counts = carriers[current < theta].sum(axis=0) * available
        if cand.size == 0 or counts.max() == 0:
            break
        best = int(np.argmax(params.Delta[cand] * counts))
        available[best] = False
        picks.append(int(cand[best]))
        current = current + carriers[:, best] * params.Delta[cand[best]]
        repaired += 1
    if repaired:
        logger.info(f"gkc: {repaired} extra flips to clear the true-LRT post-check")
    options["repair_picks"] = repaired

    flips = FlipSet.from_indices(picks, m)
    margins = score_rows(params, D, idx, x, flips) - theta
    return finalize("gkc", flips, margins, False, iterations + repaired, picks=picks, options=options)



# ==========================================
# Marginal-Impact Greedy
# ==========================================

def mi_greedy(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    theta: float,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Marginal-Impact Greedy against a fixed threshold.

    Repeatedly flips the SNV with the largest average marginal contribution
    Δ_j |T_j| / |U| over uncovered members U, where T_j ⊆ U carry SNV j.
    A member is covered once Σ_{j∈F} Δ_ij + η_i ≥ θ.

    Args:
        params: LRT constants.
        g: Genotype matrix.
        beacon: Member rows.
        Q: Queries.
        x: True responses.
        theta: Attack threshold.
        allowed: Optional mask of flippable SNVs.

    Returns:
        DefenseResult: feasible=False if some uncovered member runs out of
        candidate flips.
    """
    D = g.dense(beacon)
    idx = query_indices(Q, params.m)
    cand = restrict_candidates(_q1(idx, x), allowed)
    current = score_rows(params, D, idx, x)
    carriers = D[:, cand].astype(bool)
    gain = params.Delta[cand]
    available = np.ones(cand.size, dtype=bool)
    picks: List[int] = []
    feasible = True

    while True:
        uncovered = current < theta
        if not uncovered.any():
            break
        counts = carriers[uncovered].sum(axis=0) * available
        if cand.size == 0 or counts.max() == 0:
            feasible = False
            break
        score = gain * counts / uncovered.sum()
        best = int(np.argmax(score))
        available[best] = False
        picks.append(int(cand[best]))
        current = current + carriers[:, best] * gain[best]
        logger.debug(f"mig: flip SNV {cand[best]} (score={score[best]:.6g}, uncovered={uncovered.sum()})")

    flips = FlipSet.from_indices(picks, params.m)
    margins = score_rows(params, D, idx, x, flips) - theta
    return finalize("mig", flips, margins, feasible, len(picks), picks=picks, options={"theta": theta})


def adaptive_mi_greedy(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    reference: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    K: int,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    MIG against the adaptive attack, over eligible flips only.

    Coverage: Σ Δ_ij⁽ᴷ⁾ y_j + η_i ≥ η⁽ᴷ⁾ with B̄⁽ᴷ⁾ frozen at y = 0. The pick
    score is Σ_{i∈U} Δ_ij⁽ᴷ⁾ / |U|. Stops infeasible once no eligible flip
    helps an uncovered member.
    """
    D = g.dense(beacon)
    D_ref = g.dense(reference)
    idx = query_indices(Q, params.m)
    aq = adaptive_quantities_rows(params, D, D_ref, idx, x, K, beacon, reference)
    cand = restrict_candidates(eligible_flips(aq), allowed)
    gains = aq.delta_iK(cand)
    current = aq.eta.copy()
    available = np.ones(cand.size, dtype=bool)
    picks: List[int] = []
    feasible = True

    while True:
        uncovered = current < aq.eta_K
        if not uncovered.any():
            break
        score = gains[uncovered].sum(axis=0) / uncovered.sum() * available
        if cand.size == 0 or score.max() <= 0.0:
            feasible = False
            break
        best = int(np.argmax(score))
        available[best] = False
        picks.append(int(cand[best]))
        current = current + gains[:, best]

    flips = FlipSet.from_indices(picks, params.m)
    margins = frozen_adaptive_margins(params, D, g.dense(aq.bottom_K), idx, x, flips)
    return finalize(
        "amig", flips, margins, feasible, len(picks), picks=picks,
        options={"K": int(K), "bottom_K": list(aq.bottom_K)},
    )


# ==========================================
# Defense Classes
# ==========================================

class ExactDefense(BaseDefense):
    """Minimum-flip oracle for small instances (fixed or adaptive)."""

    name = "exact"
    description = "Exhaustive minimum-cardinality flip set"

    def __init__(self, max_m: int = DEFAULT_MAX_EXACT):
        self.max_m = max_m

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        return exact_min_flips(
            instance.params, instance.g, instance.split.beacon, instance.Q, instance.x,
            threat, max_m=self.max_m, allowed=instance.allowed,
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": True, "online": False, "exact": True, "randomized": False}


class GmbcDefense(BaseDefense):
    """Greedy Min Beacon Cover."""

    name = "gmbc"
    description = "Greedy set cover over member supports"

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        result = gmbc_defend(
            instance.params, instance.g, instance.split.beacon, instance.Q, instance.x,
            threat.theta, allowed=instance.allowed,
        )
        try:
            bound = theorem_delta_bound(
                instance.params, instance.g, instance.split.beacon, instance.Q, instance.x, threat.theta
            )
            result.options["delta_bound"] = bound.bound
            if not bound.certified:
                result.warnings.append(
                    f"delta={instance.params.delta:.3g} exceeds the cover bound {bound.bound:.3g}; "
                    f"privacy rests on the post-check only"
                )
        except DomainError as e:
            result.warnings.append(str(e))
        return result

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": False, "online": False, "exact": False, "randomized": False}


class GkcDefense(BaseDefense):
    """
    Greedy k-Cover under Beta-distributed AAFs.

    Beta parameters default to a method-of-moments fit of the AAF vector.
    """

    name = "gkc"
    description = "Greedy multi-cover with Beta-expectation constants"

    def __init__(self, beta_a: Optional[float] = None, beta_b: Optional[float] = None):
        self.beta_a = beta_a
        self.beta_b = beta_b

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        if self.beta_a is None or self.beta_b is None:
            a, b = fit_beta_moments(instance.f)
            logger.info(f"gkc: fitted Beta(a={a:.4g}, b={b:.4g}) to AAFs")
        else:
            a, b = self.beta_a, self.beta_b
        return gkc_defend(
            instance.params, instance.g, instance.split.beacon, instance.Q, instance.x,
            threat.theta, a, b, allowed=instance.allowed,
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": False, "online": False, "exact": False, "randomized": False}


class MigDefense(BaseDefense):
    """Marginal-Impact Greedy against a fixed threshold."""

    name = "mig"
    description = "Greedy by average marginal LRT gain"

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        return mi_greedy(
            instance.params, instance.g, instance.split.beacon, instance.Q, instance.x,
            threat.theta, allowed=instance.allowed,
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": False, "online": False, "exact": False, "randomized": False}


class AdaptiveMigDefense(BaseDefense):
    """Marginal-Impact Greedy against the adaptive attacker."""

    name = "amig"
    description = "Greedy over eligible flips against the K-lowest reference threshold"

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        return adaptive_mi_greedy(
            instance.params, instance.g, instance.split.beacon, threat.reference, instance.Q,
            instance.x, threat.K, allowed=instance.allowed,
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": False, "adaptive": True, "online": False, "exact": False, "randomized": False}
