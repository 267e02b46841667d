"""Adaptive re-planning as activation statistics drift during training.

Compression rates are not constant: outlier channels are plentiful while
training is unstable and thin out as it settles.  Re-solving every iteration
would be wasteful, so a tracking schedule samples the drift with exponential
backoff (iterations 1, 2, 4, ... up to a cap, then at a fixed cadence).  At
each tracked iteration the affected operators get fresh compression rates,
the planner re-solves, and the new plan is adopted only when it is strictly
better or the old plan no longer fits.  Everything else keeps the incumbent,
so adaptive throughput can only match or beat the static initial plan as
long as no forced swap occurs.

Re-solve wall time is recorded against the iteration that triggered it, in
the log's wall_ms column; it is kept out of the simulated iteration time so
repeated runs stay bit-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

from . import planner
from .errors import OutOfOrderIterationError, ValidationError
from .planner import Plan
from .profiles import LayerKind, ModelProfile, scale_profile
from .simulate import DriftTrace, simulate_step

DEFAULT_TRACKED_KINDS = frozenset(
    {LayerKind.LINEAR, LayerKind.LAYER_NORM, LayerKind.GELU}
)


@dataclass
class TrackingSchedule:
    """Mutable cursor over the backoff sequence of tracking iterations.

    With max_interval m (a power of two), tracking happens at 1, 2, 4, ...
    while the doubling gap stays below m, then every m iterations; that is,
    at the powers of two up to m and at the multiples of m beyond it.  An
    infinite max_interval never caps the doubling.
    """

    max_interval: int | float = 512
    tracked_kinds: frozenset[LayerKind] = DEFAULT_TRACKED_KINDS
    next_iteration: int | float = field(default=1, init=False)
    interval: int | float = field(default=1, init=False)
    last_seen: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.tracked_kinds = frozenset(self.tracked_kinds)
        m = self.max_interval
        if m == math.inf:
            return
        if not isinstance(m, int) or m < 1 or m & (m - 1):
            raise ValidationError(f"max_interval must be a power of two or infinity, got {m!r}")

    def stop(self) -> None:
        """Disable all future tracking."""
        self.next_iteration = math.inf


def is_tracking_iteration(schedule: TrackingSchedule, iteration: int) -> bool:
    """True when this iteration should be tracked; advances the schedule.

    Iterations must be observed in strictly increasing order.  Skipped
    tracking points are forfeited, not replayed.
    """
    if iteration <= schedule.last_seen:
        raise OutOfOrderIterationError(
            f"iteration {iteration} observed after iteration {schedule.last_seen}"
        )
    schedule.last_seen = iteration
    while schedule.next_iteration < iteration:
        _advance(schedule)
    if iteration != schedule.next_iteration:
        return False
    _advance(schedule)
    return True


def _advance(schedule: TrackingSchedule) -> None:
    schedule.next_iteration += schedule.interval
    schedule.interval = min(schedule.interval * 2, schedule.max_interval)


@dataclass(frozen=True)
class EvolutionStep:
    """One iteration of the adaptive loop, as logged."""

    iteration: int
    tracked: bool
    resolved: bool
    changed: bool
    objective_ms_old: float
    objective_ms_new: float
    wall_ms: float


def profile_with_drift(
    profile: ModelProfile,
    drift: DriftTrace,
    iteration: int,
    tracked_kinds: frozenset[LayerKind],
) -> ModelProfile:
    """Base profile with tracked operators' compression rates re-measured."""
    updated = []
    changed = False
    for op in profile.operators:
        if op.kind in tracked_kinds:
            if not drift.covers(op.id, iteration):
                raise ValidationError(
                    f"drift trace does not cover tracked operator {op.id} at iteration {iteration}"
                )
            updated.append(replace(op, compression_rate=drift.rate(op.id, iteration)))
            changed = True
        else:
            updated.append(op)
    if not changed:
        return profile
    return replace(profile, operators=tuple(updated))


def evolve_step(
    profile: ModelProfile,
    plan: Plan,
    drift: DriftTrace,
    iteration: int,
    schedule: TrackingSchedule,
) -> tuple[Plan, EvolutionStep]:
    """Advance one iteration; re-solve and maybe swap at tracking points.

    The swap rule is deliberately one-sided: adopt the fresh plan only when
    its objective is strictly lower, or when the incumbent stopped fitting
    under the new compression rates (a forced re-plan, even at equal or
    worse objective).
    """
    tracked = is_tracking_iteration(schedule, iteration)
    if not tracked:
        return plan, EvolutionStep(
            iteration=iteration,
            tracked=False,
            resolved=False,
            changed=False,
            objective_ms_old=plan.objective_ms,
            objective_ms_new=plan.objective_ms,
            wall_ms=0.0,
        )
    updated = profile_with_drift(profile, drift, iteration, schedule.tracked_kinds)
    started = time.perf_counter()
    fresh = planner.solve(updated)
    wall_ms = (time.perf_counter() - started) * 1000.0
    incumbent_total = updated.static_mem_bytes + planner.activation_bytes(updated, plan.choices)
    forced = incumbent_total > updated.mem_budget_bytes
    adopt = forced or fresh.objective_ms < plan.objective_ms
    chosen = fresh if adopt else plan
    return chosen, EvolutionStep(
        iteration=iteration,
        tracked=True,
        resolved=True,
        changed=adopt,
        objective_ms_old=plan.objective_ms,
        objective_ms_new=fresh.objective_ms,
        wall_ms=wall_ms,
    )


@dataclass(frozen=True)
class EvolutionResult:
    steps: tuple[EvolutionStep, ...]
    initial_plan: Plan
    final_plan: Plan
    adaptive_mean_throughput: float
    static_mean_throughput: float
    improvement_ratio: float
    resolve_wall_ms_total: float


def run_evolution(
    profile: ModelProfile,
    iterations: int,
    drift: DriftTrace,
    schedule: TrackingSchedule | None = None,
    batch: int | None = None,
) -> EvolutionResult:
    """Simulate `iterations` steps with and without adaptive re-planning.

    The static arm keeps the initial optimal plan throughout; the adaptive
    arm follows `evolve_step`.  Both are simulated at the same batch (the
    profile's reference batch unless overridden).
    """
    if iterations < 1:
        raise ValidationError(f"iterations must be >= 1, got {iterations}")
    if drift.iterations < iterations:
        raise ValidationError(
            f"drift trace covers {drift.iterations} iterations, need {iterations}"
        )
    if schedule is None:
        schedule = TrackingSchedule()
    run_profile = profile if batch is None else scale_profile(profile, batch)
    run_batch = run_profile.reference_batch

    initial = planner.solve(run_profile)
    static_throughput = simulate_step(
        run_profile, initial, run_batch
    ).throughput_samples_per_s

    current = initial
    current_profile = run_profile
    steps: list[EvolutionStep] = []
    # Accumulate both arms the same way so their means are comparable
    # without float-summation artifacts.
    adaptive_sum = 0.0
    static_sum = 0.0
    for it in range(1, iterations + 1):
        current, record = evolve_step(run_profile, current, drift, it, schedule)
        steps.append(record)
        if record.tracked:
            current_profile = profile_with_drift(
                run_profile, drift, it, schedule.tracked_kinds
            )
        report = simulate_step(current_profile, current, run_batch)
        adaptive_sum += report.throughput_samples_per_s
        static_sum += static_throughput

    adaptive_mean = adaptive_sum / iterations
    static_mean = static_sum / iterations
    return EvolutionResult(
        steps=tuple(steps),
        initial_plan=initial,
        final_plan=current,
        adaptive_mean_throughput=adaptive_mean,
        static_mean_throughput=static_mean,
        improvement_ratio=adaptive_mean / static_mean,
        resolve_wall_ms_total=sum(s.wall_ms for s in steps),
    )


def evolution_csv_rows(steps) -> list[str]:
    rows = ["iteration,tracked,resolved,changed,objective_ms_old,objective_ms_new,wall_ms"]
    for s in steps:
        rows.append(
            f"{s.iteration},{int(s.tracked)},{int(s.resolved)},{int(s.changed)},"
            f"{s.objective_ms_old!r},{s.objective_ms_new!r},{s.wall_ms!r}"
        )
    return rows
