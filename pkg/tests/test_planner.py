import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from engram.planner import (AllocationSpec, PlanError, engram_param_count, fit_power_law, realized_rho,
                            slots_for_params, split_budget, vocab_interpretations)


@pytest.mark.parametrize("routed, want", [(106, 46), (99, 43)])
def test_baseline_split_expert_counts(routed, want):
    spec = AllocationSpec.from_baseline(routed, 6, per_expert_params=1.0e7, rho=0.4)
    plan = split_budget(spec)
    assert plan.routed_experts_total == want
    assert plan.inactive_experts == want - 6


def test_realized_rho_of_published_pair():
    r = realized_rho(72, 55, 6)
    assert r == pytest.approx(49 / 66)
    assert 0.742 <= r <= 0.743
    with pytest.raises(PlanError):
        realized_rho(6, 5, 6)
    with pytest.raises(PlanError):
        realized_rho(72, 80, 6)


def test_param_accounting():
    n = engram_param_count(2, 16, 2_262_400, 80)
    assert n == 5_791_744_000
    assert abs(n - 5.7e9) / 5.7e9 < 0.02
    slots = slots_for_params(18.5e9, 2, 16, 80)
    assert slots == pytest.approx(7_226_562.5)
    assert abs(slots - 7_239_680) / 7_239_680 < 0.005
    inter = vocab_interpretations(2_262_400, 2, 16, 80)
    assert inter["per_table"] == n and inter["per_layer"] == n // 16


def test_rho_extremes():
    spec = AllocationSpec(p_tot=1000.0, p_act=100.0, per_expert_params=10.0, top_k=2, rho=1.0, per_slot_params=5)
    p = split_budget(spec)
    assert p.inactive_experts == 90 and p.engram_slots == 0
    p0 = split_budget(AllocationSpec(1000.0, 100.0, 10.0, 2, 0.0, per_slot_params=5))
    assert p0.inactive_experts == 0 and p0.engram_slots == 180 and p0.routed_experts_total == 2


def _brute_split(p_sparse, per_expert, per_slot, rho):
    """Scan expert counts for the one whose share is closest to rho (ties to more experts)."""
    best = min(range(0, int(p_sparse // per_expert) + 2),
               key=lambda e: (abs(e * per_expert - rho * p_sparse), -e))
    return best, int((1 - rho) * p_sparse // per_slot)


@given(st.integers(7, 200), st.integers(1, 8), st.floats(0.0, 1.0), st.integers(1, 500))
def test_split_matches_scan(routed, top_k, rho, per_expert):
    if routed <= top_k:
        return
    spec = AllocationSpec.from_baseline(routed, top_k, float(per_expert), rho, per_slot_params=7)
    p = split_budget(spec)
    experts, slots = _brute_split(spec.p_sparse, per_expert, 7, rho)
    assert p.engram_slots == slots
    # round-half-up and the scan may differ only at exact .5 ties
    assert abs(p.inactive_experts - experts) <= 1
    if abs(rho * spec.p_sparse / per_expert % 1 - 0.5) > 1e-9:
        assert p.inactive_experts == experts


def test_invalid_specs():
    with pytest.raises(PlanError):
        AllocationSpec(10.0, 20.0, 1.0, 1, 0.5)
    with pytest.raises(PlanError):
        AllocationSpec(10.0, 1.0, 1.0, 1, 1.5)
    with pytest.raises(PlanError):
        AllocationSpec(10.0, 1.0, 0.0, 1, 0.5)


def test_power_law_recovers_slope():
    m = np.array([1e5, 3e5, 1e6, 3e6, 1e7])
    loss = 3.0 - 0.05 * np.log(m)
    fit = fit_power_law(np.column_stack([m, loss]))
    assert fit.slope == pytest.approx(-0.05)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.r2 == pytest.approx(1.0)
    np.testing.assert_allclose(fit.predict(m), loss)
    with pytest.raises(PlanError):
        fit_power_law([[1.0, 2.0]])
    with pytest.raises(PlanError):
        fit_power_law([[5.0, 1.0], [5.0, 2.0]])
