"""
Tests for the online defenses and the unauthenticated worst case.
"""

import numpy as np
import pytest

from src.core.errors import ConfigurationError, InfeasibleError, ParameterError, SnvIndexError
from src.core.lrt import FlipSet, score_rows
from src.core.threat_model import ThreatSpec
from src.defenses.online import (
    Commitment,
    CommitmentConflictError,
    CommitmentMap,
    OnlineState,
    check_running,
    online_greedy_adaptive_step,
    online_greedy_step,
    query_order,
    run_online,
    unauth_adaptive_solve,
    unauth_marginal_impact,
    unauth_fixed_solve,
    unauth_margins,
    unauth_worst_case_margin,
)
from src.defenses.registry import DefenseRegistry

TOL = 1e-5


def _step(state, inst, q, theta=0.0):
    return online_greedy_step(state, q, inst.params, inst.g, inst.split.beacon, inst.x, theta)


@pytest.mark.unit
class TestCommitments:
    """Write-once response map."""

    def test_same_commitment_is_idempotent(self):
        """Committing the same response twice is fine."""
        cm = CommitmentMap()
        c = Commitment(response=0, flipped=True)
        assert cm.commit(3, c) is c
        assert cm.commit(3, Commitment(response=0, flipped=True)) == c

    def test_conflict(self):
        """A different response for a committed SNV is refused."""
        cm = CommitmentMap()
        cm.commit(1, Commitment(response=1, flipped=False))
        with pytest.raises(CommitmentConflictError):
            cm.commit(1, Commitment(response=0, flipped=True))
        with pytest.raises(CommitmentConflictError):
            cm[1] = Commitment(response=0, flipped=True)


@pytest.mark.unit
class TestOnlineGreedy:
    """Per-query flip decisions against a fixed θ."""

    def test_f1_order(self, f1):
        """Order (2, 0, 1) at θ = 0 answers (0, 0, 1) and flips {0, 2}."""
        state = OnlineState.new(f1.m, 2)
        answers = [_step(state, f1, q)[0] for q in (2, 0, 1)]
        assert answers == [0, 0, 1]
        assert state.flip_set().indices() == [0, 2]
        assert state.flips_so_far == 2
        check_running(state, f1.params, f1.g, f1.split.beacon, f1.x)

    def test_repeat_replays_commitment(self, f1):
        """A repeated query returns the committed answer with flipped=False."""
        state = OnlineState.new(f1.m, 2)
        assert _step(state, f1, 2)[:2] == (0, True)
        assert _step(state, f1, 2)[:2] == (0, False)
        assert state.history == [2]
        assert state.flips_so_far == 1

    def test_zero_response_passes_through(self, f1):
        """x_q = 0 is answered 0 without a flip."""
        state = OnlineState.new(f1.m, 2)
        assert _step(state, f1, 3)[:2] == (0, False)

    def test_positive_theta_rejected(self, f1):
        """θ > 0 cannot be met before any query."""
        with pytest.raises(ConfigurationError):
            _step(OnlineState.new(f1.m, 2), f1, 0, theta=0.5)

    def test_query_out_of_range(self, f1):
        """q ∉ [0, m)."""
        with pytest.raises(SnvIndexError):
            _step(OnlineState.new(f1.m, 2), f1, 4)

    def test_shared_commitments(self, f1):
        """A second session replays answers committed by the first."""
        shared = CommitmentMap()
        first = OnlineState.new(f1.m, 2, commitments=shared)
        for q in (2, 0, 1):
            _step(first, f1, q)
        second = OnlineState.new(f1.m, 2, commitments=shared)
        assert [_step(second, f1, q)[:2] for q in (0, 1, 2)] == [(0, False), (1, False), (0, False)]
        assert second.flips_so_far == 0
        assert second.flip_set().indices() == [0, 2]

    def test_run_online_matches_steps(self, f1):
        """run_online over an explicit order reports the same flips."""
        result = run_online(f1, ThreatSpec.fixed(0.0), order=[2, 0, 1])
        assert result.feasible
        assert result.flips.indices() == [0, 2]
        assert result.picks == [2, 0]

    @pytest.mark.property
    def test_every_prefix_private(self, make_instance):
        """For θ ≤ 0 every member stays at or above θ after every step."""
        for seed in range(20):
            inst = make_instance(seed)
            rng = np.random.default_rng(seed)
            theta = -float(rng.uniform(0.0, 3.0))
            state = OnlineState.new(inst.m, len(inst.split.beacon))
            for q in rng.permutation(inst.m):
                _step(state, inst, int(q), theta)
                assert np.all(state.member_scores >= theta - 1e-9)
            check_running(state, inst.params, inst.g, inst.split.beacon, inst.x)


@pytest.mark.unit
class TestAdaptiveOnline:
    """Online Greedy against the K-lowest reference threshold."""

    def test_running_values_consistent(self, f1):
        """Running η, scores and η⁽ᴷ⁾ agree with recomputation."""
        state = OnlineState.new(f1.m, 2, n_references=2)
        for q in (2, 0, 1, 3):
            online_greedy_adaptive_step(
                state, q, f1.params, f1.g, f1.split.beacon, f1.split.reference, f1.x, 2
            )
        check_running(state, f1.params, f1.g, f1.split.beacon, f1.x, reference=f1.split.reference)
        honest_refs = score_rows(f1.params, f1.references, None, f1.x)
        assert state.eta_K_running == pytest.approx(float(np.mean(honest_refs)))

    def test_needs_reference_state(self, f1):
        """A fixed-threat state cannot serve adaptive steps."""
        with pytest.raises(ParameterError):
            online_greedy_adaptive_step(
                OnlineState.new(f1.m, 2), 0, f1.params, f1.g, f1.split.beacon, f1.split.reference, f1.x, 1
            )

    def test_k_out_of_range(self, f1):
        """K > |reference|."""
        with pytest.raises(ParameterError):
            online_greedy_adaptive_step(
                OnlineState.new(f1.m, 2, 2), 0, f1.params, f1.g, f1.split.beacon, f1.split.reference, f1.x, 3
            )

    def test_run_online_adaptive(self, f1):
        """Margins are measured against a threshold re-selected on the flipped answers."""
        result = run_online(f1, ThreatSpec.adaptive(2, f1.split.reference), order=[0, 1, 2, 3])
        assert result.method == "oga"
        assert result.per_individual_margin.shape == (2,)


@pytest.mark.unit
class TestUnauthenticated:
    """Worst case over every query subset."""

    def test_worst_case_f1(self, f1):
        """Member 0 without flips: A₀ + A₂ + 1.1."""
        margin = unauth_worst_case_margin(f1.params, f1.members[0], FlipSet.empty(4), f1.x, -1.1)
        assert margin == pytest.approx(-0.107262, abs=TOL)

    def test_exact_f1(self, f1):
        """θ = -1.1: flipping SNV 0 protects both members."""
        result = unauth_fixed_solve(f1.params, f1.g, f1.split.beacon, f1.x, -1.1, mode="exact")
        assert result.feasible and result.flips.indices() == [0]

    def test_greedy_f1(self, f1):
        """Greedy agrees on F1."""
        result = unauth_fixed_solve(f1.params, f1.g, f1.split.beacon, f1.x, -1.1)
        assert result.feasible and result.flips.indices() == [0]

    def test_theta_zero_flips_every_support(self, f1):
        """At θ = 0 the only solution is the union of supports."""
        result = unauth_fixed_solve(f1.params, f1.g, f1.split.beacon, f1.x, 0.0)
        assert result.flips.indices() == [0, 1, 2]
        assert result.feasible

    def test_positive_theta(self, f1):
        """θ > 0 is infeasible."""
        with pytest.raises(InfeasibleError):
            unauth_fixed_solve(f1.params, f1.g, f1.split.beacon, f1.x, 0.1)

    def test_unknown_mode(self, f1):
        """Only exact and greedy."""
        with pytest.raises(ParameterError):
            unauth_fixed_solve(f1.params, f1.g, f1.split.beacon, f1.x, -1.0, mode="fast")

    def test_adaptive_f1_infeasible(self, f1):
        """K = 2: the worst case cannot be met with eligible flips."""
        result = unauth_adaptive_solve(f1.params, f1.g, f1.split.beacon, f1.split.reference, f1.x, 2)
        assert not result.feasible
        assert result.witness is not None

    def test_marginal_impact_positive_base_gains_nothing(self):
        """A term the worst case already drops is worth zero, not |d⁽ᴷ⁾A_j|."""
        mu = unauth_marginal_impact(np.array([0.5, 0.5]), np.array([2.0, 0.0]))
        assert mu.tolist() == [0.0, 0.0]

    def test_marginal_impact_matches_worst_case_change(self):
        """μ equals min(base + lift, 0) - min(base, 0) on a grid."""
        base, lift = np.meshgrid(np.linspace(-3, 3, 13), np.linspace(0, 4, 9))
        expected = np.minimum(base + lift, 0.0) - np.minimum(base, 0.0)
        assert np.allclose(unauth_marginal_impact(base, lift), expected)

    @pytest.mark.property
    def test_worst_case_bounds_every_subset(self, make_instance):
        """The closed-form worst case is never above the score on a sampled subset."""
        for seed in range(10):
            inst = make_instance(seed, m_range=(4, 10))
            rng = np.random.default_rng(seed)
            y = FlipSet((rng.random(inst.m) < 0.3).astype(np.uint8) & inst.x)
            worst = unauth_margins(inst.params, inst.members, y, inst.x, 0.0)
            for _ in range(30):
                Q = np.flatnonzero(rng.random(inst.m) < 0.5)
                scores = score_rows(inst.params, inst.members, Q, inst.x, y)
                assert np.all(worst <= scores + 1e-9)


@pytest.mark.unit
class TestOnlineDefenseClasses:
    """Registry-created online defenses."""

    def test_og_ascending(self, f1):
        """Ascending order flips only SNV 0."""
        result = DefenseRegistry().create("og").run(f1, ThreatSpec.fixed(0.0))
        assert result.feasible and result.flips.indices() == [0]

    def test_query_order_seeded(self, f1):
        """A seed gives a reproducible permutation of Q."""
        assert query_order(f1, None) == [0, 1, 2, 3]
        assert query_order(f1, 7) == query_order(f1, 7)
        assert sorted(query_order(f1, 7)) == [0, 1, 2, 3]

    def test_omig_worst_case_check(self, f1):
        """The post-check uses worst-case margins."""
        result = DefenseRegistry().create("omig").run(f1, ThreatSpec.fixed(-1.1))
        assert result.feasible
        assert np.allclose(
            result.per_individual_margin,
            unauth_margins(f1.params, f1.members, result.flips, f1.x, -1.1),
        )

    def test_unauth_exact_refuses_adaptive(self, f1):
        """The exact unauthenticated solver is fixed-threat only."""
        with pytest.raises(ConfigurationError):
            DefenseRegistry().create("unauth_exact").run(f1, ThreatSpec.adaptive(2, f1.split.reference))
