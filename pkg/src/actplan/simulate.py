"""Step-time, memory, and drift simulation on top of a profiled block.

The model is deliberately coarse: base step time and per-tensor costs scale
linearly with batch size, planner overhead adds on top, and peak memory is
static weights plus the planned activation footprint.  That is enough to
reproduce the qualitative trade-offs that matter here, such as the largest
feasible batch per strategy and the throughput peak that appears when memory
pressure forces costlier plans at large batches.

Outlier drift is synthetic: a mean-reverting random walk whose shocks shrink
as training settles, mimicking activation distributions that are volatile
early and stable late.  Counts convert to compression rates through the
codec's size formula, so the planner sees rates a real codec would produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import planner
from .codec import DEFAULT_GROUP_SIZE, outlier_separated_rate
from .errors import InfeasiblePlanError, ValidationError
from .planner import Plan, PolicyChoice
from .profiles import ModelProfile, scale_profile

STRATEGIES = ("retain-all", "full-recompute", "all-compress", "optimal")


@dataclass(frozen=True)
class StepReport:
    """Cost of one training iteration under a given plan and batch."""

    batch: int
    iteration_ms: float
    overhead_ms: float
    peak_bytes: int
    throughput_samples_per_s: float


def strategy_choices(profile: ModelProfile, strategy: str) -> tuple[PolicyChoice, ...] | None:
    """Fixed assignment for a named strategy; None means solve for it."""
    n = profile.n_operators
    if strategy == "retain-all":
        return (PolicyChoice.RETAIN,) * n
    if strategy == "full-recompute":
        # The block input stays resident as the checkpoint to recompute from.
        return (PolicyChoice.RETAIN,) + (PolicyChoice.RECOMPUTE,) * (n - 1)
    if strategy == "all-compress":
        return (PolicyChoice.COMPRESS,) * n
    if strategy == "optimal":
        return None
    raise ValidationError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")


def plan_for_strategy(profile: ModelProfile, strategy: str) -> Plan:
    choices = strategy_choices(profile, strategy)
    if choices is None:
        return planner.solve(profile)
    return planner.make_plan(profile, choices)


def simulate_step(
    profile: ModelProfile, plan: Plan, batch: int, util_k: float | None = None
) -> StepReport:
    """Iteration time and peak memory for one plan at one batch size.

    With `util_k` set, base compute time follows an efficiency curve
    b/(b+k): small batches underutilize the hardware, so time per sample
    falls as the batch grows.  The default is the plain linear model.
    """
    scaled = scale_profile(profile, batch)
    if len(plan.choices) != scaled.n_operators:
        raise ValidationError(
            f"plan has {len(plan.choices)} choices for {scaled.n_operators} operators"
        )
    act = planner.activation_bytes(scaled, plan.choices)
    peak = scaled.static_mem_bytes + act
    if peak > scaled.mem_budget_bytes:
        raise InfeasiblePlanError(
            f"plan needs {peak} bytes at batch {batch}, budget is {scaled.mem_budget_bytes}"
        )
    overhead_ms = planner.block_cost(scaled, plan.choices) * scaled.n_layers
    if util_k is None:
        base_ms = scaled.base_step_time_ms
    else:
        base_ms = profile.base_step_time_ms * (batch + util_k) / profile.reference_batch
    iteration_ms = base_ms + overhead_ms
    return StepReport(
        batch=batch,
        iteration_ms=iteration_ms,
        overhead_ms=overhead_ms,
        peak_bytes=peak,
        throughput_samples_per_s=batch / (iteration_ms / 1000.0),
    )


def _fits(profile: ModelProfile, strategy: str, batch: int) -> bool:
    scaled = scale_profile(profile, batch)
    choices = strategy_choices(scaled, strategy)
    if choices is None:
        # The solver can always reach the minimal footprint, so feasibility
        # only depends on whether that floor fits.
        return planner.min_total_bytes(scaled) <= scaled.mem_budget_bytes
    act = planner.activation_bytes(scaled, choices)
    return scaled.static_mem_bytes + act <= scaled.mem_budget_bytes


def max_feasible_batch(profile: ModelProfile, strategy: str) -> int:
    """Largest batch whose peak memory fits, or 0 if even batch 1 does not.

    Peak memory never shrinks as the batch grows, so binary search applies.
    """
    if not _fits(profile, strategy, 1):
        return 0
    low = 1
    high = 2
    while _fits(profile, strategy, high):
        low = high
        high *= 2
        if high > 1 << 34:
            raise ValidationError(
                f"max feasible batch for {strategy} exceeds {1 << 34}; "
                "profile memory does not grow with batch"
            )
    while high - low > 1:
        mid = (low + high) // 2
        if _fits(profile, strategy, mid):
            low = mid
        else:
            high = mid
    return low


@dataclass(frozen=True)
class DriftRegime:
    """Shape of the synthetic outlier-count process.

    The mean share of flagged channels decays from `start_fraction` to
    `end_fraction` with e-folding time `settle_iterations`; shocks start at
    `amplitude` channels and shrink with the square root of the iteration.
    `rows` and `group_size` describe the tensor the counts refer to, which
    fixes the implied compression rate.
    """

    rows: int = 1024
    group_size: int = DEFAULT_GROUP_SIZE
    start_fraction: float = 0.12
    end_fraction: float = 0.01
    settle_iterations: int = 150
    amplitude: float = 6.0
    mean_reversion: float = 0.85

    def __post_init__(self) -> None:
        if self.rows < 1:
            raise ValidationError(f"rows must be >= 1, got {self.rows}")
        if not 0 <= self.end_fraction <= self.start_fraction <= 0.5:
            raise ValidationError(
                "fractions must satisfy 0 <= end_fraction <= start_fraction <= 0.5, "
                f"got start={self.start_fraction} end={self.end_fraction}"
            )
        if self.amplitude < 0:
            raise ValidationError(f"amplitude must be >= 0, got {self.amplitude}")
        if not 0 <= self.mean_reversion < 1:
            raise ValidationError(f"mean_reversion must be in [0, 1), got {self.mean_reversion}")
        if self.settle_iterations < 1:
            raise ValidationError(f"settle_iterations must be >= 1, got {self.settle_iterations}")


@dataclass(frozen=True)
class DriftTrace:
    """Per-operator outlier counts and implied compression rates, 1-based."""

    iterations: int
    rows: int
    cols: int
    group_size: int
    counts: dict[int, np.ndarray] = field(repr=False)
    rates: dict[int, np.ndarray] = field(repr=False)

    @property
    def operator_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.counts))

    def covers(self, op_id: int, iteration: int) -> bool:
        return op_id in self.counts and 1 <= iteration <= self.iterations

    def outlier_count(self, op_id: int, iteration: int) -> int:
        self._check(op_id, iteration)
        return int(self.counts[op_id][iteration - 1])

    def rate(self, op_id: int, iteration: int) -> float:
        self._check(op_id, iteration)
        return float(self.rates[op_id][iteration - 1])

    def _check(self, op_id: int, iteration: int) -> None:
        if not self.covers(op_id, iteration):
            raise ValidationError(
                f"drift trace does not cover operator {op_id} at iteration {iteration}"
            )


def generate_drift(
    seed: int,
    iterations: int,
    cols: int,
    regime: DriftRegime = DriftRegime(),
    operator_ids: tuple[int, ...] = (1,),
) -> DriftTrace:
    """Deterministic synthetic outlier-count series per operator.

    Counts follow `mean path + AR(1) walk` with shock size decaying as
    1/sqrt(iteration), then clip to [0, cols // 2] (beyond half the channels
    the outlier codec refuses anyway).  The same seed always produces the
    same trace; operators get independent substreams.
    """
    if iterations < 1:
        raise ValidationError(f"iterations must be >= 1, got {iterations}")
    if cols < 2:
        raise ValidationError(f"cols must be >= 2, got {cols}")
    steps = np.arange(1, iterations + 1, dtype=np.float64)
    mean_path = cols * (
        regime.end_fraction
        + (regime.start_fraction - regime.end_fraction)
        * np.exp(-(steps - 1) / regime.settle_iterations)
    )
    shock_scale = regime.amplitude / np.sqrt(steps)
    counts: dict[int, np.ndarray] = {}
    rates: dict[int, np.ndarray] = {}
    rate_cache: dict[int, float] = {}
    for op_id in operator_ids:
        rng = np.random.default_rng([seed, op_id])
        shocks = rng.standard_normal(iterations) * shock_scale
        walk = np.empty(iterations)
        level = 0.0
        for i in range(iterations):
            level = regime.mean_reversion * level + shocks[i]
            walk[i] = level
        series = np.clip(np.rint(mean_path + walk), 0, cols // 2).astype(np.int64)
        counts[op_id] = series
        op_rates = np.empty(iterations)
        for i, k in enumerate(series):
            k = int(k)
            if k not in rate_cache:
                rate_cache[k] = min(
                    1.0, outlier_separated_rate(regime.rows, cols, k, regime.group_size)
                )
            op_rates[i] = rate_cache[k]
        rates[op_id] = op_rates
    return DriftTrace(
        iterations=iterations,
        rows=regime.rows,
        cols=cols,
        group_size=regime.group_size,
        counts=counts,
        rates=rates,
    )


def drift_csv_rows(trace: DriftTrace) -> list[str]:
    """Rows for the drift CSV: iteration, operator_id, outlier_count, crate."""
    rows = ["iteration,operator_id,outlier_count,crate"]
    for it in range(1, trace.iterations + 1):
        for op_id in trace.operator_ids:
            rows.append(
                f"{it},{op_id},{trace.outlier_count(op_id, it)},{trace.rate(op_id, it)!r}"
            )
    return rows
