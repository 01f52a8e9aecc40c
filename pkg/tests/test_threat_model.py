"""
Tests for the attacker models: fixed θ and the adaptive reference threshold.
"""

import numpy as np
import pytest

from src.core.errors import ParameterError
from src.core.lrt import FlipSet, score_rows
from src.core.threat_model import (
    ThreatSpec,
    adaptive_quantities,
    adaptive_threshold,
    bottom_k,
    eligible_flips,
    frozen_adaptive_margins,
)

TOL = 1e-5


@pytest.mark.unit
class TestThreatSpec:
    """Construction rules."""

    def test_fixed(self):
        """A fixed threat carries θ."""
        threat = ThreatSpec.fixed(-1.5)
        assert threat.kind == "fixed" and threat.theta == -1.5 and not threat.is_adaptive

    def test_adaptive_bounds(self):
        """1 ≤ K ≤ |reference|."""
        assert ThreatSpec.adaptive(2, [2, 3]).is_adaptive
        with pytest.raises(ParameterError):
            ThreatSpec.adaptive(3, [2, 3])
        with pytest.raises(ParameterError):
            ThreatSpec.adaptive(0, [2, 3])


@pytest.mark.unit
class TestBottomK:
    """Stable selection of the lowest reference scores."""

    def test_ties_go_to_lower_position(self):
        """Equal scores keep input order."""
        assert bottom_k(np.array([1.0, -2.0, -2.0, 0.0]), 2).tolist() == [1, 2]
        assert bottom_k(np.array([0.0, 0.0, 0.0]), 1).tolist() == [0]

    def test_out_of_range(self):
        """K outside [1, n] is rejected."""
        with pytest.raises(ParameterError):
            bottom_k(np.zeros(3), 4)


@pytest.mark.unit
class TestAdaptiveThreshold:
    """θ(Q) from reference scores."""

    def test_f1_threshold(self, f1):
        """K = 2 averages both references; K = 1 picks b1."""
        assert adaptive_threshold(f1.params, f1.references, None, f1.x, None, 2) == pytest.approx(-0.834039, abs=TOL)
        assert adaptive_threshold(f1.params, f1.references, None, f1.x, None, 1) == pytest.approx(-1.443750, abs=TOL)

    def test_reselected_after_flips(self, f1):
        """Flipping SNV 0 lifts b1 above b2, so K = 1 now selects b2."""
        y = FlipSet.from_indices([0], 4)
        post = score_rows(f1.params, f1.references, None, f1.x, y)
        assert post[0] > post[1]
        assert adaptive_threshold(f1.params, f1.references, None, f1.x, y, 1) == pytest.approx(post[1])


@pytest.mark.unit
class TestAdaptiveQuantities:
    """Linearized adaptive constraint."""

    def test_f1_values(self, f1):
        """η⁽ᴷ⁾, Δ⁽ᴷ⁾ and eligibility for K = 2."""
        aq = adaptive_quantities(f1.params, f1.g, f1.split.beacon, f1.split.reference, None, f1.x, 2)
        assert aq.eta_K == pytest.approx(-0.834039, abs=TOL)
        assert np.allclose(aq.delta_K, [1.537400, 1.158557, 0.906781, 0.0], atol=TOL)
        assert aq.bottom_K == (2, 3)
        assert eligible_flips(aq).tolist() == [0]

    def test_f1_k1(self, f1):
        """K = 1: B̄ = {b1}, θ = A₁ + A₂, both members already pass."""
        aq = adaptive_quantities(f1.params, f1.g, f1.split.beacon, f1.split.reference, None, f1.x, 1)
        assert aq.bottom_K == (2,)
        assert eligible_flips(aq).tolist() == [0, 2]
        assert np.all(aq.margins() >= -1e-12)

    def test_linear_form_matches_frozen_scoring(self, make_instance):
        """Condition values equal direct scoring against the frozen B̄⁽ᴷ⁾ for any y."""
        for seed in range(15):
            inst = make_instance(seed)
            K = max(1, len(inst.split.reference) // 2)
            aq = adaptive_quantities(inst.params, inst.g, inst.split.beacon, inst.split.reference, None, inst.x, K)
            rng = np.random.default_rng(seed)
            y = ((rng.random(inst.m) < 0.5) & inst.x.astype(bool)).astype(np.uint8)
            direct = frozen_adaptive_margins(
                inst.params, inst.members, inst.g.dense(aq.bottom_K), None, inst.x, y
            )
            assert np.allclose(aq.margins(y), direct, atol=1e-9)

    def test_k_larger_than_reference(self, f1):
        """K > |B̄| is rejected."""
        with pytest.raises(ParameterError):
            adaptive_quantities(f1.params, f1.g, f1.split.beacon, f1.split.reference, None, f1.x, 3)
