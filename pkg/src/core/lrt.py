"""
Beacon Privacy Defense - LRT Core.

Closed-form likelihood-ratio-test mathematics for Beacon membership
inference: D terms, the A/B/Δ/η decomposition, scores with and without
flips, the δ-bound certificate and the Beta-expectation constants.

All logarithms are natural. D terms live in the log domain because
(1 - f)^{2n} underflows double precision for realistic n.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import expit, gammaln

from src.core.dataset import AafVector, GenotypeMatrix, ResponseVector
from src.core.errors import (
    ContractViolationError,
    DomainError,
    InvariantError,
    ParameterError,
    SnvIndexError,
)


DELTA_MAX = 0.25
LOG_QUARTER = float(np.log(0.25))
BETA_FIT_MIN_RELATIVE_VAR = 1e-12


# ==========================================
# Numerics
# ==========================================

def log1mexp(z: np.ndarray) -> np.ndarray:
    """
    ln(1 - exp(z)) for z ≤ 0 without cancellation.

    Uses log(-expm1(z)) near zero and log1p(-exp(z)) in the tail.
    """
    z = np.asarray(z, dtype=np.float64)
    near = z > -np.log(2.0)
    with np.errstate(divide="ignore"):
        return np.where(near, np.log(-np.expm1(np.where(near, z, -1.0))), np.log1p(-np.exp(np.where(near, -1.0, z))))


# ==========================================
# Domain Types
# ==========================================

@dataclass(frozen=True, eq=False)
class LrtParams:
    """
    Per-SNV LRT constants for a Beacon of size n.

    Attributes:
        delta: Sequencing error δ ∈ (0, 0.25).
        n: Beacon size.
        log_Dn: ln D_n^j = 2n ln(1 - f_j).
        log_Dn1: ln D_{n-1}^j.
        A: Contribution of a 1-response, A_j < 0.
        B: Contribution of a 0-response, B_j > 0.
        Delta: Flip gain B_j - A_j > 0.
    """

    delta: float
    n: int
    log_Dn: np.ndarray
    log_Dn1: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Delta: np.ndarray

    def __post_init__(self):
        for arr in (self.log_Dn, self.log_Dn1, self.A, self.B, self.Delta):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        """Number of SNVs."""
        return int(self.A.shape[0])

    @property
    def log1m_Dn(self) -> np.ndarray:
        """ln(1 - D_n^j)."""
        return log1mexp(self.log_Dn)


@dataclass(frozen=True, eq=False)
class FlipSet:
    """
    Defense output: y_j = 1 where the response to SNV j is flipped 1 → 0.

    Attributes:
        y: uint8 indicator of length m.
    """

    y: np.ndarray

    def __post_init__(self):
        arr = np.array(self.y, dtype=np.uint8)
        if arr.ndim != 1 or (arr.size and arr.max() > 1):
            raise ParameterError("flip vector must be a 1-D 0/1 array")
        arr.setflags(write=False)
        object.__setattr__(self, "y", arr)

    @classmethod
    def empty(cls, m: int) -> "FlipSet":
        """No flips."""
        return cls(np.zeros(m, dtype=np.uint8))

    @classmethod
    def from_indices(cls, indices: Sequence[int], m: int) -> "FlipSet":
        """Build from flipped SNV indices."""
        y = np.zeros(m, dtype=np.uint8)
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise SnvIndexError(f"flip index out of range [0, {m})")
        y[idx] = 1
        return cls(y)

    @property
    def flipped_count(self) -> int:
        """|F| = Σ y_j."""
        return int(self.y.sum())

    def indices(self) -> List[int]:
        """Sorted flipped SNV indices."""
        return np.flatnonzero(self.y).tolist()

    def check_against(self, x: ResponseVector) -> None:
        """
        Enforce the 1 → 0 only rule.

        Raises:
            ContractViolationError: If some y_j = 1 where x_j = 0.
        """
        bad = np.flatnonzero(self.y.astype(bool) & ~np.asarray(x, dtype=bool))
        if bad.size:
            raise ContractViolationError(
                f"flip on 0-response at SNV {int(bad[0])}; only 1 -> 0 flips are allowed",
                snv=int(bad[0]),
            )

    def apply(self, x: ResponseVector) -> ResponseVector:
        """Post-flip response vector x ∧ ¬y."""
        self.check_against(x)
        return (np.asarray(x, dtype=np.uint8) & (1 - self.y)).astype(np.uint8)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlipSet):
            return NotImplemented
        return np.array_equal(self.y, other.y)


@dataclass(frozen=True, eq=False)
class QuerySet:
    """
    Ordered, non-repeating SNV queries Q.

    Attributes:
        members: int64 array of SNV indices.
    """

    members: np.ndarray

    def __post_init__(self):
        arr = np.array(self.members, dtype=np.int64).reshape(-1)
        if np.unique(arr).size != arr.size:
            raise ParameterError("query set contains duplicate SNVs")
        arr.setflags(write=False)
        object.__setattr__(self, "members", arr)

    @classmethod
    def full(cls, m: int) -> "QuerySet":
        """Q = S, all SNVs."""
        return cls(np.arange(m))

    def __len__(self) -> int:
        return int(self.members.size)


QueryLike = Union[QuerySet, Sequence[int], np.ndarray, None]
FlipLike = Union[FlipSet, Sequence[int], np.ndarray, None]


def query_indices(Q: QueryLike, m: int) -> np.ndarray:
    """
    Normalize a query argument into validated SNV indices.

    Args:
        Q: QuerySet, index sequence, or None for all SNVs.
        m: Number of SNVs.

    Returns:
        np.ndarray: int64 indices.
    """
    if Q is None:
        return np.arange(m)
    qs = Q if isinstance(Q, QuerySet) else QuerySet(np.asarray(Q, dtype=np.int64))
    idx = qs.members
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise SnvIndexError(f"query index out of range [0, {m})")
    return idx


def flip_vector(y: FlipLike, m: int) -> np.ndarray:
    """Normalize a flip argument into a uint8 vector of length m."""
    if y is None:
        return np.zeros(m, dtype=np.uint8)
    if isinstance(y, FlipSet):
        return y.y
    arr = np.asarray(y, dtype=np.uint8)
    if arr.shape != (m,):
        raise ParameterError(f"flip vector must have length {m}")
    return arr


# ==========================================
# Parameters
# ==========================================

def _validate_delta(delta: float) -> float:
    delta = float(delta)
    if not (0.0 < delta < DELTA_MAX):
        raise ParameterError(f"delta out of range (0, 0.25): {delta!r}", delta=delta)
    return delta


def _a_b(log_Dn: np.ndarray, log_Dn1: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    A = log1mexp(log_Dn) - np.log1p(-delta * np.exp(log_Dn1))
    B = log_Dn - np.log(delta) - log_Dn1
    return A, B


def compute_params(f: AafVector, n: int, delta: float) -> LrtParams:
    """
    Compute per-SNV LRT constants.

    Args:
        f: Alternate allele frequencies.
        n: Beacon size (≥ 1).
        delta: Sequencing error, 0 < δ < 0.25.

    Returns:
        LrtParams: Log-domain D terms and A/B/Δ.

    Raises:
        ParameterError: If δ ∉ (0, 0.25) or n < 1.

    Example:
        >>> p = compute_params(AafVector([0.1]), n=2, delta=0.1)
        >>> round(float(p.B[0]), 5)
        2.09186
    """
    delta = _validate_delta(delta)
    if int(n) < 1:
        raise ParameterError(f"beacon size must be >= 1, got {n}")
    n = int(n)
    log1m_f = np.log1p(-f.f)
    log_Dn = 2.0 * n * log1m_f
    log_Dn1 = 2.0 * (n - 1) * log1m_f
    A, B = _a_b(log_Dn, log_Dn1, delta)
    Delta = B - A
    # A rounds to -0.0 once D_n underflows
    if not (np.all(A <= 0) and np.all(B > 0) and np.all(np.isfinite(Delta))):
        raise InvariantError("sign invariant A < 0 < B violated")
    logger.debug(f"LRT params: n={n}, delta={delta:.3g}, m={A.shape[0]}")
    return LrtParams(delta, n, log_Dn, log_Dn1, A, B, Delta)


def beta_expectation_params(
    beta_a: float, beta_b: float, n: int, delta: float
) -> Tuple[float, float]:
    """
    Uniform A and B when AAFs follow Beta(a, b), using E[(1-f)^{2n}].

    Args:
        beta_a: Beta shape a > 0.
        beta_b: Beta shape b > 0.
        n: Beacon size.
        delta: Sequencing error.

    Returns:
        tuple: (A, B) with B - A > 0.
    """
    log_Dn, log_Dn1 = _beta_log_moments(beta_a, beta_b, n, delta)
    A, B = _a_b(np.array([log_Dn]), np.array([log_Dn1]), _validate_delta(delta))
    if not B[0] - A[0] > 0:
        raise InvariantError("Beta-expectation constants violate B > A")
    return float(A[0]), float(B[0])


def _beta_log_moments(a: float, b: float, n: int, delta: float) -> Tuple[float, float]:
    if not (a > 0 and b > 0):
        raise ParameterError(f"beta parameters must be positive, got a={a}, b={b}")
    if int(n) < 1:
        raise ParameterError(f"beacon size must be >= 1, got {n}")

    def log_moment(power: float) -> float:
        return float(gammaln(a + b) + gammaln(b + power) - gammaln(b) - gammaln(a + b + power))

    return log_moment(2.0 * n), log_moment(2.0 * (n - 1))


def beta_expectation_lrt_params(
    beta_a: float, beta_b: float, n: int, delta: float, m: int
) -> LrtParams:
    """LrtParams with every SNV set to the Beta-expectation constants."""
    delta = _validate_delta(delta)
    log_Dn, log_Dn1 = _beta_log_moments(beta_a, beta_b, n, delta)
    A, B = beta_expectation_params(beta_a, beta_b, n, delta)
    full = lambda v: np.full(m, v, dtype=np.float64)  # noqa: E731
    return LrtParams(delta, int(n), full(log_Dn), full(log_Dn1), full(A), full(B), full(B - A))


def fit_beta_moments(f: AafVector) -> Tuple[float, float]:
    """
    Method-of-moments Beta(a, b) fit to an AAF vector.

    Raises:
        ParameterError: If the AAFs have no spread.
    """
    mean = float(np.mean(f.f))
    var = float(np.var(f.f))
    # rounding leaves ~1e-17 of variance on constant vectors
    if np.ptp(f.f) == 0.0 or var <= BETA_FIT_MIN_RELATIVE_VAR * mean * (1.0 - mean):
        raise ParameterError("cannot fit a Beta distribution to constant AAFs")
    common = mean * (1.0 - mean) / var - 1.0
    if common <= 0.0:
        raise ParameterError("AAF variance too large for a Beta fit")
    return mean * common, (1.0 - mean) * common


# ==========================================
# Scores
# ==========================================

def score_rows(
    params: LrtParams,
    D: np.ndarray,
    Q: QueryLike,
    x: ResponseVector,
    y: FlipLike = None,
) -> np.ndarray:
    """
    Post-flip LRT statistics L_i(Q, x, y) for every row of D.

    Args:
        params: LRT constants.
        D: Dense genotype rows, shape (k, m).
        Q: Queries.
        x: True responses.
        y: Flips (1 → 0 only).

    Returns:
        np.ndarray: Length-k scores.
    """
    idx = query_indices(Q, params.m)
    yv = flip_vector(y, params.m)
    FlipSet(yv).check_against(x)
    r = (np.asarray(x, dtype=np.uint8) & (1 - yv))[idx].astype(bool)
    per_snv = np.where(r, params.A[idx], params.B[idx])
    D = np.atleast_2d(np.asarray(D))
    return D[:, idx].astype(np.float64) @ per_snv


def lrt_score(params: LrtParams, d_i: np.ndarray, Q: QueryLike, x: ResponseVector) -> float:
    """
    LRT statistic L_i(Q, x) = Σ_{j∈Q} d_ij (x_j A_j + (1 - x_j) B_j).

    Example:
        >>> lrt_score(params, [1, 0, 1, 0], None, [1, 1, 1, 0])   # F1, i=1
        -1.2072...
    """
    idx = query_indices(Q, params.m)
    xs = np.asarray(x, dtype=bool)[idx]
    d = np.asarray(d_i, dtype=np.float64)[idx]
    return float(d @ np.where(xs, params.A[idx], params.B[idx]))


def lrt_score_flipped(
    params: LrtParams,
    d_i: np.ndarray,
    Q: QueryLike,
    x: ResponseVector,
    y: FlipLike,
) -> float:
    """
    Post-flip statistic Σ_{j∈Q₁} Δ_ij y_j + η_i(Q).

    Raises:
        ContractViolationError: If y flips a 0-response.
    """
    idx = query_indices(Q, params.m)
    yv = flip_vector(y, params.m)
    FlipSet(yv).check_against(x)
    xs = np.asarray(x, dtype=bool)[idx]
    d = np.asarray(d_i, dtype=np.float64)[idx]
    q1 = idx[xs]
    eta = float(d @ np.where(xs, params.A[idx], params.B[idx]))
    gain = float(np.asarray(d_i, dtype=np.float64)[q1] @ (params.Delta[q1] * yv[q1]))
    return gain + eta


# ==========================================
# η / Δ Decomposition
# ==========================================

@dataclass(frozen=True)
class EtaDecomposition:
    """
    Per-member constants of the flip problem.

    Attributes:
        members: Beacon row indices, in order.
        eta: η_i(Q) per member.
        supports: P_i = {j ∈ Q₁ : d_ij = 1} per member (sorted SNV indices).
        delta: Δ_j per SNV (shared; Δ_ij = Δ_j on P_i, 0 elsewhere).
    """

    members: Tuple[int, ...]
    eta: np.ndarray
    supports: Tuple[np.ndarray, ...]
    delta: np.ndarray

    def delta_row(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Sparse row k: (SNV indices, Δ values) with Δ_ij > 0."""
        p = self.supports[k]
        return p, self.delta[p]


def eta_rows(params: LrtParams, D: np.ndarray, Q: QueryLike, x: ResponseVector) -> np.ndarray:
    """η_i(Q) for each dense row of D (unflipped score)."""
    return score_rows(params, D, Q, x)


def supports_of(D: np.ndarray, Q: QueryLike, x: ResponseVector, m: int) -> Tuple[np.ndarray, ...]:
    """P_i for each dense row of D."""
    idx = query_indices(Q, m)
    q1 = idx[np.asarray(x, dtype=bool)[idx]]
    q1.sort()
    D = np.atleast_2d(np.asarray(D))
    return tuple(q1[D[k, q1].astype(bool)] for k in range(D.shape[0]))


def eta_and_deltas(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
) -> EtaDecomposition:
    """
    η_i(Q) and sparse Δ rows for every Beacon member.

    Args:
        params: LRT constants.
        g: Genotype matrix.
        beacon: Member rows.
        Q: Queries.
        x: True responses.

    Returns:
        EtaDecomposition
    """
    D = g.dense(beacon)
    return EtaDecomposition(
        members=tuple(int(i) for i in beacon),
        eta=eta_rows(params, D, Q, x),
        supports=supports_of(D, Q, x, params.m),
        delta=params.Delta,
    )


# ==========================================
# δ-bound certificate
# ==========================================

@dataclass(frozen=True)
class DeltaBound:
    """
    Sufficient condition for every Beacon-Cover to be private.

    Attributes:
        bound: 1 / (1 + e^{θ - η - D_n}).
        certified: δ ≤ bound.
        d_n: min_{j∈Q₁} ln(D_n^j / (1 - D_n^j)).
        eta: worst-case member constant.
    """

    bound: float
    certified: bool
    d_n: float
    eta: float


def theorem_delta_bound(
    params: LrtParams,
    g: GenotypeMatrix,
    beacon: Sequence[int],
    Q: QueryLike,
    x: ResponseVector,
    theta: float,
) -> DeltaBound:
    """
    Largest δ for which any Beacon-Cover keeps every L_i ≥ θ.

    Raises:
        DomainError: If Q₁ is empty or the Beacon has no members.
    """
    return delta_bound_rows(params, g.dense(beacon), Q, x, theta)


def delta_bound_rows(
    params: LrtParams, D: np.ndarray, Q: QueryLike, x: ResponseVector, theta: float
) -> DeltaBound:
    """theorem_delta_bound over dense member rows."""
    idx = query_indices(Q, params.m)
    xs = np.asarray(x, dtype=bool)[idx]
    q1, q0 = idx[xs], idx[~xs]
    D = np.atleast_2d(np.asarray(D))
    if q1.size == 0:
        raise DomainError("delta bound undefined: no queries with a 1-response")
    if D.shape[0] == 0:
        raise DomainError("delta bound undefined: empty beacon")

    log1m = params.log1m_Dn
    d_n = float(np.min(params.log_Dn[q1] - log1m[q1]))
    per_member = D[:, q1].astype(np.float64) @ log1m[q1] + D[:, q0].astype(np.float64) @ (
        params.log_Dn[q0] - LOG_QUARTER - params.log_Dn1[q0]
    )
    eta = float(np.min(per_member))
    bound = float(expit(eta + d_n - theta))
    return DeltaBound(bound=bound, certified=params.delta <= bound, d_n=d_n, eta=eta)
