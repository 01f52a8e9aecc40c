"""
Tests for the LRT core.

Constants, scoring, the η/Δ decomposition and the δ-bound certificate,
checked against the canonical two-member instance and closed forms.
"""

import math

import numpy as np
import pytest

from src.core.dataset import AafVector
from src.core.errors import ContractViolationError, DomainError, ParameterError, SnvIndexError
from src.core.lrt import (
    FlipSet,
    QuerySet,
    beta_expectation_params,
    compute_params,
    eta_and_deltas,
    fit_beta_moments,
    lrt_score,
    lrt_score_flipped,
    query_indices,
    score_rows,
    theorem_delta_bound,
)
from src.core.verify import f1_instance

TOL = 1e-5


@pytest.mark.unit
class TestComputeParams:
    """Per-SNV constants A_j, B_j, Δ_j."""

    def test_f1_constants(self, f1):
        """A and B match the hand-derived values."""
        assert np.allclose(f1.params.A, [-0.982935, -0.460815, -0.224327, -0.322497], atol=TOL)
        assert f1.params.B[0] == pytest.approx(2.09186, abs=TOL)

    def test_matches_closed_form(self, f1, f1_closed):
        """Log-domain evaluation agrees with the plain formula."""
        A, B = f1_closed
        assert np.allclose(f1.params.A, A, atol=1e-12)
        assert np.allclose(f1.params.B, B, atol=1e-12)
        assert np.allclose(f1.params.Delta, np.array(B) - np.array(A), atol=1e-12)

    def test_sign_invariant(self):
        """A < 0 < B for every SNV."""
        f = AafVector(np.linspace(0.001, 0.499, 50))
        p = compute_params(f, n=40, delta=1e-3)
        assert np.all(p.A < 0)
        assert np.all(p.B > 0)

    def test_tiny_delta_is_finite(self):
        """δ = 1e-240 keeps every constant finite."""
        p = compute_params(AafVector([0.1, 0.2, 0.3, 0.25]), n=2, delta=1e-240)
        assert np.isfinite(p.A).all() and np.isfinite(p.B).all()
        assert p.B[0] == pytest.approx(math.log(0.81) - math.log(1e-240), abs=1e-9)
        assert p.B[0] == pytest.approx(552.409701, abs=TOL)

    def test_large_beacon_rare_allele(self):
        """n·f large: D_n underflows but the constants stay usable."""
        p = compute_params(AafVector([0.45]), n=5000, delta=1e-6)
        assert np.isfinite(p.A).all() and np.isfinite(p.B).all()
        assert -1e-12 <= p.A[0] <= 0.0
        assert p.Delta[0] > 0

    @pytest.mark.parametrize("delta", [0.0, 0.25, 0.3, -1e-3])
    def test_delta_out_of_range(self, delta):
        """δ outside (0, 0.25) is rejected."""
        with pytest.raises(ParameterError, match="delta out of range"):
            compute_params(AafVector([0.1]), n=2, delta=delta)

    def test_empty_beacon(self):
        """n < 1 is rejected."""
        with pytest.raises(ParameterError):
            compute_params(AafVector([0.1]), n=0, delta=0.1)


@pytest.mark.unit
class TestScoring:
    """LRT statistics before and after flips."""

    def test_member_and_reference_scores(self, f1):
        """η for members, L for references."""
        eta = score_rows(f1.params, f1.members, None, f1.x)
        assert np.allclose(eta, [-1.207262, -1.443750], atol=TOL)
        ref = score_rows(f1.params, f1.references, None, f1.x)
        assert np.allclose(ref, [-1.443750, -0.224327], atol=TOL)

    def test_single_row_matches_batch(self, f1):
        """lrt_score agrees with score_rows."""
        assert lrt_score(f1.params, f1.members[0], None, f1.x) == pytest.approx(-1.207262, abs=TOL)

    def test_flipped_scores(self, f1):
        """Flipping SNV 0 lifts both members above 0."""
        y = FlipSet.from_indices([0], 4)
        assert np.allclose(score_rows(f1.params, f1.members, None, f1.x, y), [1.867537, 1.631049], atol=TOL)
        assert lrt_score_flipped(f1.params, f1.members[1], None, f1.x, y) == pytest.approx(1.631049, abs=TOL)

    def test_flipped_equals_direct_scoring(self, make_instance):
        """Σ Δ y + η equals scoring the published responses directly."""
        inst = make_instance(11)
        rng = np.random.default_rng(0)
        y = (rng.random(inst.m) < 0.5).astype(np.uint8) & inst.x
        published = FlipSet(y).apply(inst.x)
        for row in inst.members:
            assert lrt_score_flipped(inst.params, row, None, inst.x, y) == pytest.approx(
                lrt_score(inst.params, row, None, published), abs=1e-10
            )

    def test_query_subset(self, f1):
        """Only queried SNVs contribute."""
        assert score_rows(f1.params, f1.members, [0], f1.x)[1] == pytest.approx(f1.params.A[0])
        assert score_rows(f1.params, f1.members, [], f1.x).tolist() == [0.0, 0.0]

    def test_flip_on_zero_response_rejected(self, f1):
        """Only 1 → 0 flips are allowed."""
        with pytest.raises(ContractViolationError):
            score_rows(f1.params, f1.members, None, f1.x, FlipSet.from_indices([3], 4))

    def test_out_of_range_query(self, f1):
        """Query indices must lie in [0, m)."""
        with pytest.raises(SnvIndexError):
            query_indices([7], 4)

    def test_duplicate_query(self):
        """A query set never repeats an SNV."""
        with pytest.raises(ParameterError):
            QuerySet([1, 1])

    def test_zero_response_never_raises_score(self, make_instance):
        """Answering 1 instead of 0 never increases a member's score."""
        for seed in range(20):
            inst = make_instance(seed)
            base = score_rows(inst.params, inst.members, None, inst.x)
            for j in np.flatnonzero(inst.x == 0):
                x1 = inst.x.copy()
                x1[j] = 1
                assert np.all(score_rows(inst.params, inst.members, None, x1) <= base + 1e-12)


@pytest.mark.unit
class TestEtaDecomposition:
    """η_i and supports P_i."""

    def test_f1_supports(self, f1):
        """P_1 = {0, 2}, P_2 = {0, 1}."""
        dec = eta_and_deltas(f1.params, f1.g, f1.split.beacon, None, f1.x)
        assert [s.tolist() for s in dec.supports] == [[0, 2], [0, 1]]
        assert np.allclose(dec.eta, [-1.207262, -1.443750], atol=TOL)

    def test_delta_row(self, f1):
        """Δ_ij = Δ_j on P_i."""
        dec = eta_and_deltas(f1.params, f1.g, f1.split.beacon, None, f1.x)
        idx, vals = dec.delta_row(1)
        assert idx.tolist() == [0, 1]
        assert np.allclose(vals, f1.params.Delta[[0, 1]])


@pytest.mark.unit
class TestDeltaBound:
    """Certificate that every Beacon-Cover is private."""

    def test_f1_bound(self, f1):
        """D_n and η recomputed from the closed form; δ = 0.1 is not certified."""
        Dn = [(1 - f) ** 4 for f in [0.1, 0.2, 0.3]]
        d_n = min(math.log(d / (1 - d)) for d in Dn)
        eta = min(math.log(1 - Dn[0]) + math.log(1 - Dn[2]), math.log(1 - Dn[0]) + math.log(1 - Dn[1]))
        bound = theorem_delta_bound(f1.params, f1.g, f1.split.beacon, None, f1.x, 0.0)
        assert bound.d_n == pytest.approx(d_n, abs=1e-12)
        assert bound.eta == pytest.approx(eta, abs=1e-12)
        assert bound.bound == pytest.approx(1 / (1 + math.exp(-eta - d_n)), abs=1e-12)
        assert bound.bound == pytest.approx(0.0603, abs=5e-4)
        assert not bound.certified

    def test_certified_for_small_delta(self, f1):
        """δ = 0.01 sits below the bound."""
        small = f1_instance(delta=0.01)
        assert theorem_delta_bound(small.params, small.g, small.split.beacon, None, small.x, 0.0).certified

    def test_no_one_responses(self, f1):
        """An empty Q₁ has no bound."""
        with pytest.raises(DomainError):
            theorem_delta_bound(f1.params, f1.g, f1.split.beacon, [3], f1.x, 0.0)


@pytest.mark.unit
class TestBetaConstants:
    """Uniform constants for Beta-distributed AAFs."""

    def test_gap_positive(self):
        """B - A > 0."""
        A, B = beta_expectation_params(1.0, 5.0, 50, 1e-6)
        assert B - A > 0
        assert A < 0 < B

    def test_moment_fit_recovers_shape(self):
        """Method of moments on a large Beta sample is close to the truth."""
        rng = np.random.default_rng(3)
        f = rng.beta(2.0, 20.0, size=200_000)
        a, b = fit_beta_moments(AafVector(np.clip(f, 1e-6, 0.4999)))
        assert a == pytest.approx(2.0, rel=0.05)
        assert b == pytest.approx(20.0, rel=0.05)

    def test_constant_aafs_rejected(self):
        """No spread, no fit."""
        with pytest.raises(ParameterError):
            fit_beta_moments(AafVector([0.2, 0.2, 0.2]))

    @pytest.mark.parametrize("value", [0.2, 0.1, 0.3, 0.01])
    def test_rounding_variance_rejected(self, value):
        """Floating-point residue in np.var of a constant vector is not spread."""
        with pytest.raises(ParameterError):
            fit_beta_moments(AafVector([value] * 7))

    def test_tiny_real_spread_fits(self):
        """A genuinely narrow but non-constant vector still fits."""
        a, b = fit_beta_moments(AafVector([0.199, 0.2, 0.201]))
        assert a / (a + b) == pytest.approx(0.2, abs=1e-9)
        assert a > 1e3
