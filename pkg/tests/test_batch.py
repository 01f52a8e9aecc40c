"""
Tests for the batch defenses: exact oracle, GMBC, GKC and MIG.
"""

import numpy as np
import pytest

from src.core.errors import ConfigurationError, InfeasibleError, ParameterError, SizeError
from src.core.instance import BeaconInstance
from src.core.lrt import score_rows
from src.core.threat_model import ThreatSpec
from src.defenses.batch import (
    adaptive_mi_greedy,
    exact_min_flips,
    gkc_defend,
    gmbc_defend,
    greedy_k_cover,
    greedy_min_beacon_cover,
    k_cover_quotas,
    mi_greedy,
)
from src.defenses.registry import DefenseRegistry

TOL = 1e-5


def _args(inst: BeaconInstance):
    return inst.params, inst.g, inst.split.beacon, inst.Q, inst.x


@pytest.mark.unit
class TestExact:
    """Exhaustive minimum-flip oracle."""

    def test_f1_fixed(self, f1):
        """θ = 0 needs exactly one flip, SNV 0."""
        result = exact_min_flips(*_args(f1), ThreatSpec.fixed(0.0))
        assert result.feasible
        assert result.flips.indices() == [0]
        assert np.allclose(result.per_individual_margin, [1.867537, 1.631049], atol=TOL)

    def test_f1_adaptive(self, f1):
        """K = 2: the only eligible flip is enough."""
        result = exact_min_flips(*_args(f1), ThreatSpec.adaptive(2, f1.split.reference))
        assert result.feasible and result.flips.indices() == [0]

    def test_nothing_to_do(self, f1):
        """θ below every η: the empty set is optimal."""
        result = exact_min_flips(*_args(f1), ThreatSpec.fixed(-10.0))
        assert result.feasible and result.flip_count == 0

    def test_unreachable_threshold(self, f1):
        """θ above every reachable score is infeasible with a witness."""
        result = exact_min_flips(*_args(f1), ThreatSpec.fixed(100.0))
        assert not result.feasible
        assert result.witness is not None

    def test_too_many_candidates(self, f1):
        """More candidates than max_m raises SizeError."""
        with pytest.raises(SizeError) as info:
            exact_min_flips(*_args(f1), ThreatSpec.fixed(0.0), max_m=2)
        assert info.value.details["candidates"] == 3


@pytest.mark.unit
class TestGreedyMinBeaconCover:
    """Set-cover core and the fixed-θ defense built on it."""

    def test_docstring_case(self):
        """SNV 0 hits both supports."""
        assert greedy_min_beacon_cover([[0, 2], [0, 1]], m=4).flips.indices() == [0]

    def test_tie_breaks_to_lowest_index(self):
        """Disjoint singletons of equal count: lowest index first."""
        result = greedy_min_beacon_cover([[3], [1]], m=4)
        assert result.picks == [1, 3]

    def test_tiebreak_weights(self):
        """With weights, equal counts go to the heavier SNV."""
        weights = np.array([0.0, 1.0, 0.0, 5.0])
        result = greedy_min_beacon_cover([[1, 3], [1, 3]], m=4, tiebreak=weights)
        assert result.picks == [3]

    def test_cover_margins(self):
        """Margins are |F ∩ P_i| - 1."""
        result = greedy_min_beacon_cover([[0, 1], [1, 2], [2]], m=3)
        assert result.flips.indices() == [1, 2]
        assert result.per_individual_margin.tolist() == [0.0, 1.0, 0.0]

    def test_query_restriction(self):
        """Supports are cut down to Q."""
        result = greedy_min_beacon_cover([[0, 2], [0, 1]], Q=[1, 2], m=4)
        assert result.flips.indices() == [1, 2]

    def test_empty_support(self):
        """A member with no candidate SNV makes the cover infeasible."""
        with pytest.raises(InfeasibleError) as info:
            greedy_min_beacon_cover([[0], []], m=2)
        assert info.value.individual == 1

    def test_gmbc_f1(self, f1):
        """Both members are needy at θ = 0; one flip covers them."""
        result = gmbc_defend(*_args(f1), 0.0)
        assert result.feasible and result.flips.indices() == [0]

    def test_gmbc_only_needy(self, f1):
        """θ between the two η values covers only member 1."""
        result = gmbc_defend(*_args(f1), -1.3)
        assert result.flips.indices() == [0]
        assert result.feasible

    def test_gmbc_no_candidates(self, f1):
        """max_aaf below every AAF leaves nothing to flip."""
        inst = BeaconInstance.build(f1.g, f1.f, f1.split, 0.1, max_aaf=0.05)
        result = gmbc_defend(*_args(inst), 0.0, allowed=inst.allowed)
        assert not result.feasible
        assert result.witness == 0


@pytest.mark.unit
class TestGreedyKCover:
    """Multi-cover under uniform Beta-expectation constants."""

    def test_quotas(self):
        """k_i = max(0, ceil((θ - η_i) / (B - A)))."""
        assert k_cover_quotas(np.array([-1.0, 0.5, -4.1]), 0.0, -0.5, 1.5).tolist() == [1, 0, 3]

    def test_quotas_need_gap(self):
        """B ≤ A is rejected."""
        with pytest.raises(ParameterError):
            k_cover_quotas(np.zeros(2), 0.0, 1.0, 1.0)

    def test_docstring_case(self):
        """Member 0 needs two hits."""
        assert greedy_k_cover([[0, 2], [0, 1]], [2, 1], m=4).flips.indices() == [0, 2]

    def test_zero_quotas(self):
        """Nothing needed, nothing flipped."""
        result = greedy_k_cover([[0], [1]], [0, 0], m=2)
        assert result.flip_count == 0
        assert result.per_individual_margin.tolist() == [0.0, 0.0]

    def test_quota_exceeds_support(self):
        """k_i > |P_i| is infeasible."""
        with pytest.raises(InfeasibleError):
            greedy_k_cover([[0, 1], [1]], [1, 2], m=2)

    def test_quota_count_mismatch(self):
        """One quota per support."""
        with pytest.raises(ParameterError):
            greedy_k_cover([[0]], [1, 1], m=1)

    def test_gkc_f1(self, f1):
        """Feasible under the instance's own constants at θ = 0."""
        result = gkc_defend(f1.params, f1.g, f1.split.beacon, f1.Q, f1.x, 0.0, 1.0, 3.0)
        assert result.feasible
        assert result.flip_count >= 1
        assert np.all(result.per_individual_margin >= 0)

    def test_gkc_unreachable(self, f1):
        """A huge θ returns an infeasible result with a witness, not an exception."""
        result = gkc_defend(f1.params, f1.g, f1.split.beacon, f1.Q, f1.x, 1e6, 1.0, 3.0)
        assert not result.feasible
        assert result.witness is not None

    @pytest.mark.property
    def test_gkc_true_margins(self, make_instance):
        """Margins are the true-LRT ones, and feasibility matches the exact optimum."""
        for seed in range(40):
            inst = make_instance(seed, delta=0.2 if seed % 2 else 1e-3)
            theta = -1.0 - seed % 3
            p, beacon = inst.params, inst.split.beacon
            result = gkc_defend(p, inst.g, beacon, None, inst.x, theta, 1.0, 3.0)
            true = score_rows(p, inst.members, None, inst.x, result.flips) - theta
            assert np.allclose(result.per_individual_margin, true)
            exact = exact_min_flips(p, inst.g, beacon, None, inst.x, ThreatSpec.fixed(theta))
            assert result.feasible == exact.feasible
            if result.feasible:
                assert np.all(true >= -1e-9)
                assert exact.flip_count <= result.flip_count

    def test_gkc_repair_recorded(self, f1):
        """The top-up count is reported and no SNV is picked twice."""
        result = gkc_defend(f1.params, f1.g, f1.split.beacon, f1.Q, f1.x, 0.0, 1.0, 3.0)
        assert result.options["repair_picks"] >= 0
        assert result.flip_count == len(set(result.picks))


@pytest.mark.unit
class TestMiGreedy:
    """Marginal-Impact Greedy, fixed and adaptive."""

    def test_f1_fixed(self, f1):
        """θ = 0 flips SNV 0."""
        result = mi_greedy(*_args(f1), 0.0)
        assert result.feasible and result.flips.indices() == [0]

    def test_already_private(self, f1):
        """θ = -10: no flips."""
        result = mi_greedy(*_args(f1), -10.0)
        assert result.feasible and result.flip_count == 0

    def test_no_candidates(self, f1):
        """Restricted candidates: infeasible, flips nothing."""
        inst = BeaconInstance.build(f1.g, f1.f, f1.split, 0.1, max_aaf=0.05)
        result = mi_greedy(*_args(inst), 0.0, allowed=inst.allowed)
        assert not result.feasible and result.flip_count == 0

    def test_f1_adaptive(self, f1):
        """K = 2 flips SNV 0; K = 1 needs nothing."""
        r2 = adaptive_mi_greedy(*_args(f1)[:3], f1.split.reference, f1.Q, f1.x, 2)
        assert r2.feasible and r2.flips.indices() == [0]
        r1 = adaptive_mi_greedy(*_args(f1)[:3], f1.split.reference, f1.Q, f1.x, 1)
        assert r1.feasible and r1.flip_count == 0
        assert r1.options["bottom_K"] == [2]

    @pytest.mark.property
    def test_exact_never_worse(self, make_instance):
        """Whenever a greedy solver is feasible the exact oracle needs no more flips."""
        for seed in range(25):
            inst = make_instance(seed)
            eta = score_rows(inst.params, inst.members, None, inst.x)
            theta = float(np.median(eta)) + 1.0
            exact = exact_min_flips(*_args(inst), ThreatSpec.fixed(theta))
            for greedy in (mi_greedy(*_args(inst), theta), gmbc_defend(*_args(inst), theta)):
                if greedy.feasible:
                    assert exact.feasible
                    assert exact.flip_count <= greedy.flip_count

    @pytest.mark.property
    def test_mig_margins_match_scoring(self, make_instance):
        """Reported margins are the post-flip scores minus θ."""
        for seed in range(10):
            inst = make_instance(seed)
            result = mi_greedy(*_args(inst), 0.0)
            direct = score_rows(inst.params, inst.members, None, inst.x, result.flips)
            assert np.allclose(result.per_individual_margin, direct, atol=1e-12)


@pytest.mark.unit
class TestBatchDefenseClasses:
    """Registry-created defenses with the post-check."""

    @pytest.mark.parametrize("method", ["exact", "gmbc", "mig"])
    def test_fixed_f1(self, f1, method):
        """Every fixed-θ solver finds SNV 0 at θ = 0."""
        result = DefenseRegistry().create(method).run(f1, ThreatSpec.fixed(0.0))
        assert result.feasible and result.flips.indices() == [0]

    def test_amig_run(self, f1):
        """The adaptive post-check re-selects B̄ on the flipped responses."""
        result = DefenseRegistry().create("amig").run(f1, ThreatSpec.adaptive(2, f1.split.reference))
        assert result.feasible and result.flips.indices() == [0]

    def test_unsupported_threat(self, f1):
        """MIG refuses the adaptive attacker."""
        with pytest.raises(ConfigurationError):
            DefenseRegistry().create("mig").run(f1, ThreatSpec.adaptive(2, f1.split.reference))

    def test_gmbc_bound_warning(self, f1):
        """δ = 0.1 is above the cover bound, so a warning is attached."""
        result = DefenseRegistry().create("gmbc").defend(f1, ThreatSpec.fixed(0.0))
        assert result.options["delta_bound"] == pytest.approx(0.0603, abs=5e-4)
        assert any("exceeds the cover bound" in w for w in result.warnings)

    def test_gkc_fitted_beta(self, f1):
        """Without explicit Beta parameters GKC fits them to the AAFs."""
        result = DefenseRegistry().create("gkc").defend(f1, ThreatSpec.fixed(0.0))
        assert result.options["beta_a"] > 0 and result.options["beta_b"] > 0

    def test_exact_size_limit(self, f1):
        """max_m flows through the constructor."""
        with pytest.raises(SizeError):
            DefenseRegistry().create("exact", max_m=1).run(f1, ThreatSpec.fixed(0.0))
