"""
Beacon Privacy Defense - Online Defenses.

Authenticated Online Greedy against fixed and adaptive attackers, and the
unauthenticated setting where every member must survive the worst-case
subset of queries.

Responses are commitments: once an SNV is answered, every later answer
for it repeats the committed response.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core.dataset import GenotypeMatrix, ResponseVector
from src.core.errors import (
    ConfigurationError,
    InfeasibleError,
    InvariantError,
    ParameterError,
    SizeError,
    SnvIndexError,
)
from src.core.instance import BeaconInstance, restrict_candidates
from src.core.lrt import FlipLike, FlipSet, LrtParams, flip_vector, score_rows
from src.core.threat_model import (
    AdaptiveQuantities,
    ThreatSpec,
    adaptive_quantities,
    adaptive_threshold,
    bottom_k,
    eligible_flips,
)
from src.defenses.base import MARGIN_TOLERANCE, BaseDefense, DefenseResult, finalize
from src.defenses.batch import DEFAULT_MAX_EXACT, min_cardinality_subset


RUNNING_RTOL = 1e-10


@dataclass(frozen=True)
class Commitment:
    """A published response for one SNV."""

    response: int
    flipped: bool

    def to_dict(self) -> Dict[str, object]:
        return {"resp": self.response, "flipped": self.flipped}


class CommitmentConflictError(InvariantError):
    """A second, different response was recorded for a committed SNV."""


class CommitmentMap(dict):
    """
    Write-once SNV → Commitment map.

    May be shared between sessions so that every user observes one
    public answer per SNV.
    """

    def commit(self, snv: int, commitment: Commitment) -> Commitment:
        existing = self.get(snv)
        if existing is not None:
            if existing != commitment:
                raise CommitmentConflictError(f"SNV {snv} already committed to {existing}")
            return existing
        self[snv] = commitment
        return commitment

    def __setitem__(self, snv: int, commitment: Commitment) -> None:
        if snv in self and dict.__getitem__(self, snv) != commitment:
            raise CommitmentConflictError(f"SNV {snv} is already committed")
        super().__setitem__(snv, commitment)


@dataclass
class OnlineState:
    """
    Per-session online state.

    Attributes:
        m: Number of SNVs.
        history: Queries answered in this session, in order.
        commitments: Write-once response map (possibly shared).
        eta_running: η_i(Q_t) per member, unflipped.
        member_scores: L_i(Q_t) per member under committed responses.
        reference_eta: η_k(Q_t) per reference individual (adaptive only).
        reference_scores: Post-flip reference scores (adaptive only).
        eta_K_running: η⁽ᴷ⁾(Q_t) (adaptive only).
        flips_so_far: Flips decided by this session.
    """

    m: int
    history: List[int] = field(default_factory=list)
    commitments: CommitmentMap = field(default_factory=CommitmentMap)
    eta_running: np.ndarray = field(default_factory=lambda: np.zeros(0))
    member_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reference_eta: Optional[np.ndarray] = None
    reference_scores: Optional[np.ndarray] = None
    eta_K_running: Optional[float] = None
    flips_so_far: int = 0
    seen: set = field(default_factory=set)

    @classmethod
    def new(
        cls,
        m: int,
        n_members: int,
        n_references: int = 0,
        commitments: Optional[CommitmentMap] = None,
    ) -> "OnlineState":
        """Fresh state with empty history."""
        adaptive = n_references > 0
        return cls(
            m=m,
            commitments=commitments if commitments is not None else CommitmentMap(),
            eta_running=np.zeros(n_members),
            member_scores=np.zeros(n_members),
            reference_eta=np.zeros(n_references) if adaptive else None,
            reference_scores=np.zeros(n_references) if adaptive else None,
        )

    def flip_set(self) -> FlipSet:
        """Flips committed for SNVs in this session's history."""
        flipped = [q for q in self.history if self.commitments[q].flipped]
        return FlipSet.from_indices(flipped, self.m)

    def to_dict(self) -> Dict[str, object]:
        return {
            "history": list(self.history),
            "flips_so_far": self.flips_so_far,
            "eta_K_running": self.eta_K_running,
        }


StepResult = Tuple[int, bool, OnlineState]


# ==========================================
# Authenticated Online Greedy
# ==========================================

def _check_query(state: OnlineState, q: int) -> int:
    q = int(q)
    if not 0 <= q < state.m:
        raise SnvIndexError(f"SNV index {q} out of range [0, {state.m})", snv=q)
    return q


def _contribution(params: LrtParams, q: int, response: int) -> float:
    return float(params.A[q] if response else params.B[q])


def _record(
    state: OnlineState,
    q: int,
    params: LrtParams,
    x_q: int,
    members: np.ndarray,
    refs: Optional[np.ndarray],
    commitment: Commitment,
) -> None:
    honest = _contribution(params, q, x_q)
    served = _contribution(params, q, commitment.response)
    state.eta_running = state.eta_running + members * honest
    state.member_scores = state.member_scores + members * served
    if refs is not None and state.reference_eta is not None:
        state.reference_eta = state.reference_eta + refs * honest
        state.reference_scores = state.reference_scores + refs * served
    state.history.append(q)
    state.seen.add(q)


def _replay(
    state: OnlineState,
    q: int,
    params: LrtParams,
    x_q: int,
    members: np.ndarray,
    refs: Optional[np.ndarray],
    K: Optional[int],
) -> Optional[StepResult]:
    """Answer from an existing commitment, or None if q is uncommitted."""
    existing = state.commitments.get(q)
    if existing is None:
        return None
    if q not in state.seen:
        _record(state, q, params, x_q, members, refs, existing)
        if K is not None:
            _refresh_eta_K(state, K)
    return existing.response, False, state


def _refresh_eta_K(state: OnlineState, K: int) -> None:
    picked = bottom_k(state.reference_eta, K)
    state.eta_K_running = float(np.mean(state.reference_eta[picked]))


def online_greedy_step(
    state: OnlineState,
    q: int,
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    x: ResponseVector,
    theta: float,
) -> StepResult:
    """
    Answer one query, flipping it iff the honest answer would expose a member.

    Committed SNVs replay their response with flipped=False. For θ ≤ 0
    every member keeps L_i(Q_t) ≥ θ after each step.

    Args:
        state: Session state (updated in place and returned).
        q: Queried SNV.
        params: LRT constants.
        g: Genotype matrix.
        beacon: Member rows.
        x: True responses.
        theta: Attack threshold, must be ≤ 0.

    Returns:
        tuple: (response, flipped, state)

    Raises:
        ConfigurationError: If θ > 0.
        SnvIndexError: If q ∉ [0, m).
    """
    if theta > 0:
        raise ConfigurationError(
            f"online defense needs theta <= 0, got {theta}: privacy is impossible before any queries"
        )
    q = _check_query(state, q)
    x_q = int(x[q])
    members = g.column(q, beacon).astype(np.float64)
    replayed = _replay(state, q, params, x_q, members, None, None)
    if replayed is not None:
        return replayed

    flip = False
    if x_q == 1:
        candidate = state.member_scores + members * params.A[q]
        flip = bool(np.any(candidate < theta))
    commitment = state.commitments.commit(q, Commitment(response=0 if flip else x_q, flipped=flip))
    _record(state, q, params, x_q, members, None, commitment)
    state.flips_so_far += int(flip)
    logger.debug(f"og: q={q} response={commitment.response} flipped={flip}")
    return commitment.response, flip, state


def online_greedy_adaptive_step(
    state: OnlineState,
    q: int,
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    reference: Sequence[int],
    x: ResponseVector,
    K: int,
) -> StepResult:
    """
    Online Greedy against the adaptive attacker.

    θ_t is the mean of the K lowest reference scores under the committed
    responses, recomputed over the whole reference set at every step. The
    query is flipped iff x_q = 1 and some member would fall below θ_t
    under the honest answer. Privacy is not guaranteed after the step.

    Raises:
        ParameterError: If K is outside [1, |reference|].
    """
    if not 1 <= int(K) <= len(reference):
        raise ParameterError(f"K={K} outside [1, {len(reference)}]")
    if state.reference_scores is None:
        raise ParameterError("adaptive online state needs reference scores; use OnlineState.new(..., n_references)")
    q = _check_query(state, q)
    x_q = int(x[q])
    members = g.column(q, beacon).astype(np.float64)
    refs = g.column(q, reference).astype(np.float64)
    replayed = _replay(state, q, params, x_q, members, refs, int(K))
    if replayed is not None:
        return replayed

    flip = False
    if x_q == 1:
        ref_candidate = state.reference_scores + refs * params.A[q]
        theta_t = float(np.mean(ref_candidate[bottom_k(ref_candidate, int(K))]))
        candidate = state.member_scores + members * params.A[q]
        flip = bool(np.any(candidate < theta_t))
    commitment = state.commitments.commit(q, Commitment(response=0 if flip else x_q, flipped=flip))
    _record(state, q, params, x_q, members, refs, commitment)
    _refresh_eta_K(state, int(K))
    state.flips_so_far += int(flip)
    logger.debug(f"oga: q={q} response={commitment.response} flipped={flip}")
    return commitment.response, flip, state


def check_running(
    state: OnlineState,
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    x: ResponseVector,
    reference: Optional[Sequence[int]] = None,
) -> None:
    """
    Compare running η and scores with from-scratch recomputation.

    Raises:
        InvariantError: If any running value drifts beyond 1e-10 relative.
    """
    Q = np.asarray(state.history, dtype=np.int64)
    y = state.flip_set()
    D = g.dense(beacon)
    pairs = [
        (state.eta_running, score_rows(params, D, Q, x)),
        (state.member_scores, score_rows(params, D, Q, x, y)),
    ]
    if reference is not None and state.reference_eta is not None:
        R = g.dense(reference)
        pairs.append((state.reference_eta, score_rows(params, R, Q, x)))
        pairs.append((state.reference_scores, score_rows(params, R, Q, x, y)))
    for running, fresh in pairs:
        scale = np.maximum(1.0, np.abs(fresh))
        if np.any(np.abs(running - fresh) > RUNNING_RTOL * scale):
            raise InvariantError("running online scores drifted from recomputation")


def run_online(
    instance: BeaconInstance,
    threat: ThreatSpec,
    order: Optional[Sequence[int]] = None,
    commitments: Optional[CommitmentMap] = None,
) -> DefenseResult:
    """
    Replay a query order through Online Greedy and report the outcome.

    Args:
        instance: Problem instance (its Q is used when order is None).
        threat: Fixed (θ ≤ 0) or adaptive attacker.
        order: Query order (default: instance.Q ascending).
        commitments: Optional shared commitment map.

    Returns:
        DefenseResult: Margins are L_i - θ for fixed threats and
        L_i - θ(Q) with a fresh post-flip B̄⁽ᴷ⁾ for adaptive ones.
    """
    order = [int(q) for q in (instance.Q if order is None else order)]
    split = instance.split
    if threat.is_adaptive:
        state = OnlineState.new(instance.m, len(split.beacon), len(threat.reference), commitments)
        for q in order:
            online_greedy_adaptive_step(
                state, q, instance.params, instance.g, split.beacon, threat.reference, instance.x, threat.K
            )
    else:
        state = OnlineState.new(instance.m, len(split.beacon), commitments=commitments)
        for q in order:
            online_greedy_step(state, q, instance.params, instance.g, split.beacon, instance.x, threat.theta)

    Q = np.asarray(state.history, dtype=np.int64)
    flips = state.flip_set()
    scores = score_rows(instance.params, instance.members, Q, instance.x, flips)
    if threat.is_adaptive:
        R = instance.g.dense(threat.reference)
        margins = scores - adaptive_threshold(instance.params, R, Q, instance.x, flips, threat.K)
    else:
        margins = scores - threat.theta
    method = "oga" if threat.is_adaptive else "og"
    picks = [q for q in state.history if state.commitments[q].flipped]
    return finalize(
        method,
        flips,
        margins,
        not threat.is_adaptive and commitments is None,
        len(order),
        picks=picks,
        options={"order": order[:64], "queries": len(order)},
    )


# ==========================================
# Unauthenticated Setting
# ==========================================

def _support(d_i: np.ndarray, x: ResponseVector) -> np.ndarray:
    return np.flatnonzero(np.asarray(d_i, dtype=bool) & np.asarray(x, dtype=bool))


def unauth_worst_case_margin(
    params: LrtParams,
    d_i: np.ndarray,
    F: FlipLike,
    x: ResponseVector,
    theta: float,
) -> float:
    """
    Worst case over query subsets: Σ_{j∈P_i(S)\\F} A_j - θ.

    Example:
        >>> unauth_worst_case_margin(params, [1, 0, 1, 0], FlipSet.empty(4), x, -1.1)
        -0.10726...
    """
    y = flip_vector(F, params.m)
    p = _support(d_i, x)
    kept = p[y[p] == 0]
    return float(params.A[kept].sum()) - float(theta)


def unauth_margins(
    params: LrtParams, D: np.ndarray, F: FlipLike, x: ResponseVector, theta: float
) -> np.ndarray:
    """unauth_worst_case_margin for every row of D."""
    return np.array([unauth_worst_case_margin(params, d, F, x, theta) for d in np.atleast_2d(D)])


def unauth_fixed_solve(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    x: ResponseVector,
    theta: float,
    mode: Literal["exact", "greedy"] = "greedy",
    max_m: int = DEFAULT_MAX_EXACT,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Flip set protecting every member against every query subset.

    Each member needs Σ_{j∈P_i} |A_j| y_j ≥ θ - Σ_{j∈P_i} A_j. At θ = 0
    the only solution is F = ∪ P_i. Greedy mode is MIG with |A_j| in
    place of Δ_j.

    Args:
        params: LRT constants.
        g: Genotype matrix.
        beacon: Member rows.
        x: True responses.
        theta: Attack threshold.
        mode: "exact" (minimum |F|) or "greedy".
        max_m: Candidate cap for exact mode.
        allowed: Optional mask of flippable SNVs.

    Returns:
        DefenseResult

    Raises:
        InfeasibleError: If θ > 0.
        SizeError: If exact mode has more than max_m candidates.
    """
    if theta > 0:
        raise InfeasibleError(f"unauthenticated privacy is infeasible for theta > 0 (theta={theta})")
    if mode not in ("exact", "greedy"):
        raise ParameterError(f"unknown unauth mode {mode!r}")

    D = g.dense(beacon)
    cand = restrict_candidates(np.flatnonzero(np.asarray(x, dtype=bool)), allowed)
    carriers = D[:, cand].astype(bool)
    method = "unauth_exact" if mode == "exact" else "omig"
    options = {"theta": theta, "mode": mode}

    if theta == 0:
        picks = cand[carriers.any(axis=0)].tolist()
        flips = FlipSet.from_indices(picks, params.m)
        return finalize(method, flips, unauth_margins(params, D, flips, x, theta), False, 1, picks, options)

    absA = np.abs(params.A[cand])
    base = carriers.astype(np.float64) @ params.A[cand] - theta
    gains = carriers * absA

    if mode == "exact":
        if cand.size > max_m:
            raise SizeError(f"exact solver limited to {max_m} candidate SNVs, got {cand.size}")
        chosen, examined = min_cardinality_subset(base, gains)
        feasible = chosen is not None
        picks = cand[chosen].tolist() if feasible else cand.tolist()
        iterations = examined
    else:
        current = base.copy()
        available = np.ones(cand.size, dtype=bool)
        picks = []
        feasible = True
        while True:
            uncovered = current < 0.0
            if not uncovered.any():
                break
            counts = carriers[uncovered].sum(axis=0) * available
            if cand.size == 0 or counts.max() == 0:
                feasible = False
                break
            best = int(np.argmax(absA * counts / uncovered.sum()))
            available[best] = False
            picks.append(int(cand[best]))
            current = current + gains[:, best]
        iterations = len(picks)

    flips = FlipSet.from_indices(picks, params.m)
    return finalize(method, flips, unauth_margins(params, D, flips, x, theta), feasible, iterations, picks, options)


@dataclass(frozen=True)
class UnauthAdaptiveTerms:
    """
    Per-member worst-case terms against the adaptive attacker.

    Attributes:
        base: d_ij⁽ᴷ⁾ A_j over S₁ (n × |S₁|).
        lift: Δ_ij⁽ᴷ⁾ over S₁ (n × |S₁|).
        s1: SNVs with x_j = 1.
        k: k_i = -Σ_{j∈S₀} min(d_ij⁽ᴷ⁾ B_j, 0).
    """

    base: np.ndarray
    lift: np.ndarray
    s1: np.ndarray
    k: np.ndarray

    def worst_case(self, y: np.ndarray) -> np.ndarray:
        """W_i(y) = Σ_{j∈S₁} min(Δ_ij⁽ᴷ⁾ y_j + d_ij⁽ᴷ⁾ A_j, 0)."""
        return np.minimum(self.lift * y[self.s1] + self.base, 0.0).sum(axis=1)

    def margins(self, y: np.ndarray) -> np.ndarray:
        return self.worst_case(y) - self.k


def unauth_adaptive_terms(params: LrtParams, aq: AdaptiveQuantities, x: ResponseVector) -> UnauthAdaptiveTerms:
    """Closed-form worst-case terms over the full SNV set S."""
    xs = np.asarray(x, dtype=bool)
    s1 = np.flatnonzero(xs)
    s0 = np.flatnonzero(~xs)
    dK1 = aq.d_iK(s1)
    k = -np.minimum(aq.d_iK(s0) * params.B[s0], 0.0).sum(axis=1)
    return UnauthAdaptiveTerms(base=dK1 * params.A[s1], lift=aq.delta_iK(s1), s1=s1, k=k)


def unauth_marginal_impact(base: np.ndarray, lift: np.ndarray) -> np.ndarray:
    """
    μ_ij: how much flipping j raises i's worst-case S₁ term.

    The worst case keeps a term only while it is negative, so the gain is
    min(base + lift, 0) - min(base, 0). A term that is already positive
    gains nothing.

    Example:
        >>> unauth_marginal_impact(np.array([-1.0, 0.5, -3.0]), np.array([2.0, 2.0, 1.0])).tolist()
        [1.0, 0.0, 1.0]
    """
    return np.where(lift + base >= 0.0, np.maximum(-base, 0.0), lift)


def unauth_adaptive_solve(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    reference: Sequence[int],
    x: ResponseVector,
    K: int,
    allowed: Optional[np.ndarray] = None,
) -> DefenseResult:
    """
    Greedy worst-case defense against the adaptive attacker.

    Member i is covered when W_i(y) ≥ k_i. Each pick maximizes the mean
    over uncovered members of μ_ij, the exact improvement of i's S₁ term
    from flipping j: -min(d_ij⁽ᴷ⁾A_j, 0) when Δ_ij⁽ᴷ⁾ + d_ij⁽ᴷ⁾A_j ≥ 0,
    else Δ_ij⁽ᴷ⁾. Only eligible flips (Δ_ij⁽ᴷ⁾ ≥ 0 for all i) are used.
    """
    aq = adaptive_quantities(params, g, beacon, reference, None, x, K)
    terms = unauth_adaptive_terms(params, aq, x)
    cand = restrict_candidates(eligible_flips(aq), allowed)
    pos = np.searchsorted(terms.s1, cand)
    base = terms.base[:, pos]
    lift = terms.lift[:, pos]
    mu = unauth_marginal_impact(base, lift)

    y = np.zeros(params.m, dtype=np.uint8)
    available = np.ones(cand.size, dtype=bool)
    picks: List[int] = []
    feasible = True
    while True:
        uncovered = terms.margins(y) < 0.0
        if not uncovered.any():
            break
        score = mu[uncovered].sum(axis=0) / uncovered.sum() * available
        if cand.size == 0 or score.max() <= 0.0:
            feasible = False
            break
        best = int(np.argmax(score))
        available[best] = False
        picks.append(int(cand[best]))
        y[cand[best]] = 1

    flips = FlipSet.from_indices(picks, params.m)
    post = unauth_adaptive_terms(params, aq, x).margins(flips.y)
    return finalize(
        "unauth_adaptive", flips, post, feasible, len(picks), picks,
        options={"K": int(K), "bottom_K": list(aq.bottom_K)},
    )


# ==========================================
# Defense Classes
# ==========================================

def query_order(instance: BeaconInstance, seed: Optional[int]) -> List[int]:
    """Instance queries in ascending order, or a seeded permutation."""
    order = np.sort(instance.Q)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(order)
    return [int(q) for q in order]


class OnlineGreedyDefense(BaseDefense):
    """Online Greedy against a fixed threshold θ ≤ 0."""

    name = "og"
    description = "Per-query flip decisions with committed responses"

    def __init__(self, order_seed: Optional[int] = None):
        self.order_seed = order_seed

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        return run_online(instance, threat, query_order(instance, self.order_seed))

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": False, "online": True, "exact": False, "randomized": False}


class AdaptiveOnlineGreedyDefense(OnlineGreedyDefense):
    """Online Greedy against the adaptive attacker (best effort)."""

    name = "oga"
    description = "Per-query flip decisions against the K-lowest reference threshold"

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": False, "adaptive": True, "online": True, "exact": False, "randomized": False}


class UnauthGreedyDefense(BaseDefense):
    """
    Unauthenticated worst-case defense.

    Fixed threats use MIG with |A_j| gains; adaptive threats use the
    μ-greedy over eligible flips. Margins are worst-case margins.
    """

    name = "omig"
    description = "Worst-case greedy for unauthenticated access"
    mode = "greedy"

    def __init__(self, max_m: int = DEFAULT_MAX_EXACT):
        self.max_m = max_m

    def defend(self, instance: BeaconInstance, threat: ThreatSpec) -> DefenseResult:
        if threat.is_adaptive:
            return unauth_adaptive_solve(
                instance.params, instance.g, instance.split.beacon, threat.reference,
                instance.x, threat.K, allowed=instance.allowed,
            )
        return unauth_fixed_solve(
            instance.params, instance.g, instance.split.beacon, instance.x, threat.theta,
            mode=self.mode, max_m=self.max_m, allowed=instance.allowed,
        )

    def check(self, instance: BeaconInstance, threat: ThreatSpec, result: DefenseResult) -> DefenseResult:
        if threat.is_adaptive:
            aq = adaptive_quantities(
                instance.params, instance.g, instance.split.beacon, threat.reference, None, instance.x, threat.K
            )
            margins = unauth_adaptive_terms(instance.params, aq, instance.x).margins(result.flips.y)
        else:
            margins = unauth_margins(instance.params, instance.members, result.flips, instance.x, threat.theta)
        ok = bool(np.all(margins >= -MARGIN_TOLERANCE * np.maximum(1.0, np.abs(margins))))
        return replace(
            result,
            per_individual_margin=margins,
            feasible=ok,
            witness=None if ok else int(np.argmin(margins)),
        )

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": True, "online": True, "exact": False, "randomized": False}


class UnauthExactDefense(UnauthGreedyDefense):
    """Minimum worst-case flip set for small instances."""

    name = "unauth_exact"
    description = "Exhaustive worst-case flip set for unauthenticated access"
    mode = "exact"

    def get_capabilities(self) -> Dict[str, bool]:
        return {"fixed": True, "adaptive": False, "online": True, "exact": True, "randomized": False}
