"""Sparsity-allocation arithmetic: splitting inactive parameters between experts and memory."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationSpec:
    p_tot: float
    p_act: float
    per_expert_params: float
    top_k: int
    rho: float
    per_slot_params: int = 80
    shared_experts: int = 0

    def __post_init__(self):
        if self.per_expert_params <= 0:
            raise PlanError("per_expert_params must be positive")
        if self.per_slot_params <= 0:
            raise PlanError("per_slot_params must be positive")
        if self.p_act > self.p_tot:
            raise PlanError(f"P_act ({self.p_act}) exceeds P_tot ({self.p_tot})")
        if not 0.0 <= self.rho <= 1.0:
            raise PlanError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def p_sparse(self) -> float:
        return self.p_tot - self.p_act

    @classmethod
    def from_baseline(cls, routed_experts: int, top_k: int, per_expert_params: float, rho: float,
                      p_act: float = 0.0, **kw) -> "AllocationSpec":
        """Budget of a pure-MoE model whose inactive parameters are its unselected experts."""
        if routed_experts <= top_k:
            raise PlanError("baseline needs more routed experts than top_k")
        p_sparse = (routed_experts - top_k) * per_expert_params
        return cls(p_act + p_sparse, p_act, per_expert_params, top_k, rho, **kw)


@dataclass
class ModelPlan:
    routed_experts_total: int
    inactive_experts: int
    engram_slots: int
    realized_p_tot: float
    realized_rho: float
    p_sparse: float

    def to_dict(self) -> dict:
        return asdict(self)


def split_budget(spec: AllocationSpec) -> ModelPlan:
    # experts are chunky so they round to nearest; slots are cheap and floor
    inactive = int(math.floor(spec.rho * spec.p_sparse / spec.per_expert_params + 0.5))
    expert_params = inactive * spec.per_expert_params
    slots = int(math.floor((1.0 - spec.rho) * spec.p_sparse / spec.per_slot_params))
    realized = spec.p_act + expert_params + slots * spec.per_slot_params
    return ModelPlan(
        routed_experts_total=inactive + spec.top_k,
        inactive_experts=inactive,
        engram_slots=slots,
        realized_p_tot=realized,
        realized_rho=expert_params / spec.p_sparse if spec.p_sparse else 1.0,
        p_sparse=spec.p_sparse,
    )


def realized_rho(baseline_routed: int, engram_routed: int, top_k: int) -> float:
    if baseline_routed <= top_k:
        raise PlanError("baseline_routed must exceed top_k")
    if engram_routed > baseline_routed:
        raise PlanError("the Engram model cannot have more routed experts than its baseline")
    return (engram_routed - top_k) / (baseline_routed - top_k)


def engram_param_count(layers: int, tables_per_layer: int, slots_per_table: int, d_sub: int) -> int:
    return int(layers) * int(tables_per_layer) * int(slots_per_table) * int(d_sub)


def slots_for_params(params: float, layers: int, tables_per_layer: int, d_sub: int) -> float:
    return params / (layers * tables_per_layer * d_sub)


def vocab_interpretations(vocab_size: int, layers: int, tables_per_layer: int, d_sub: int) -> dict:
    """Engram parameter count under both readings of a table 'vocab size'."""
    return {
        "per_table": engram_param_count(layers, tables_per_layer, vocab_size, d_sub),
        "per_layer": engram_param_count(layers, 1, vocab_size, d_sub),
    }


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    r2: float
    slope_stderr: float

    def predict(self, slots):
        return self.intercept + self.slope * np.log(np.asarray(slots, dtype=float))


def fit_power_law(points) -> PowerLawFit:
    """Least squares of loss against log(slots)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise PlanError("need at least two (slots, loss) points")
    m, loss = pts[:, 0], pts[:, 1]
    if (m <= 0).any():
        raise PlanError("slot counts must be positive")
    x = np.log(m)
    if np.ptp(x) == 0:
        raise PlanError("all slot counts are equal; slope is undefined")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, loss, rcond=None)
    resid = loss - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((loss - loss.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    n = x.size
    sxx = float(((x - x.mean()) ** 2).sum())
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    return PowerLawFit(float(slope), float(intercept), r2, stderr)
