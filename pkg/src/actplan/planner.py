"""Optimal per-tensor retention policy for one profiled block.

Each activation tensor is either recomputed on the backward pass, compressed
after the forward pass, or retained as-is.  The first tensor in the block is
the checkpoint everything else recomputes from, so it may not itself be
recomputed.  The planner minimizes added step time (recompute plus codec
time) subject to the memory budget, which charges compressed tensors at
their compression rate and recomputed tensors at zero.

`solve` is exact: depth-first branch and bound over the three choices per
operator, with a fractional lower bound obtained from the per-operator
convex frontier of (memory, cost) points.  `brute_force` enumerates all
3^N assignments and exists so the two routes can be checked against each
other; it shares nothing with the search except the cost/memory accessors.

Ties are broken deterministically: lowest objective, then lowest activation
memory, then preferring recompute over compress over retain at the lowest
operator index where candidates differ.  Both routes implement the same
rule, so they agree assignment-for-assignment, not just on the objective.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import InfeasibleError, ParseError, TooLargeError, ValidationError
from .profiles import ModelProfile, OperatorProfile

# Guard against float rounding in the relaxation bound; distinct objectives
# in practice differ by far more than this, so no pruning power is lost.
_BOUND_SAFETY = 1e-9

_BRUTE_FORCE_MAX_OPS = 12


class PolicyChoice(IntEnum):
    RECOMPUTE = 0
    COMPRESS = 1
    RETAIN = 2


_CHOICE_NAMES = {c: c.name.lower() for c in PolicyChoice}
_CHOICES_BY_NAME = {name: c for c, name in _CHOICE_NAMES.items()}


@dataclass(frozen=True)
class SolverStats:
    nodes: int
    wall_ms: float


@dataclass(frozen=True)
class Plan:
    """An assignment of one policy per operator, with its audited totals."""

    choices: tuple[PolicyChoice, ...]
    objective_ms: float
    activation_bytes: int
    total_bytes: int
    stats: SolverStats


def compressed_bytes(op: OperatorProfile) -> int:
    """Resident size of a compressed tensor, rounded up to whole bytes."""
    return math.ceil(op.mem_bytes * op.compression_rate)


def choice_cost_ms(op: OperatorProfile, choice: PolicyChoice) -> float:
    if choice is PolicyChoice.RECOMPUTE:
        return op.compute_time_ms
    if choice is PolicyChoice.COMPRESS:
        return op.compress_time_ms + op.decompress_time_ms
    return 0.0


def choice_mem_bytes(op: OperatorProfile, choice: PolicyChoice) -> int:
    if choice is PolicyChoice.RECOMPUTE:
        return 0
    if choice is PolicyChoice.COMPRESS:
        return compressed_bytes(op)
    return op.mem_bytes


def block_cost(profile: ModelProfile, choices) -> float:
    """Added time per block in ms; the planner objective."""
    total = 0.0
    for op, choice in zip(profile.operators, choices):
        total += choice_cost_ms(op, choice)
    return total


def activation_bytes(profile: ModelProfile, choices) -> int:
    """Activation memory across all layers under an assignment."""
    per_block = 0
    for op, choice in zip(profile.operators, choices):
        per_block += choice_mem_bytes(op, choice)
    return profile.n_layers * per_block


def make_plan(profile: ModelProfile, choices, stats: SolverStats | None = None) -> Plan:
    choices = tuple(PolicyChoice(c) for c in choices)
    if len(choices) != profile.n_operators:
        raise ValidationError(
            f"plan has {len(choices)} choices for {profile.n_operators} operators"
        )
    act = activation_bytes(profile, choices)
    return Plan(
        choices=choices,
        objective_ms=block_cost(profile, choices),
        activation_bytes=act,
        total_bytes=profile.static_mem_bytes + act,
        stats=stats or SolverStats(nodes=0, wall_ms=0.0),
    )


def _min_mem_bytes(profile: ModelProfile) -> int:
    """Smallest achievable per-block activation footprint."""
    first = profile.operators[0]
    return min(compressed_bytes(first), first.mem_bytes)


def min_total_bytes(profile: ModelProfile) -> int:
    return profile.static_mem_bytes + profile.n_layers * _min_mem_bytes(profile)


def _check_feasible(profile: ModelProfile) -> int:
    """Return the per-block memory room, or raise with the minimal total."""
    floor = min_total_bytes(profile)
    if floor > profile.mem_budget_bytes:
        raise InfeasibleError(
            f"no assignment fits: minimal achievable total is {floor} bytes, "
            f"budget is {profile.mem_budget_bytes} bytes",
            min_total_bytes=floor,
        )
    return (profile.mem_budget_bytes - profile.static_mem_bytes) // profile.n_layers


def _hull_segments(profile: ModelProfile):
    """Per-operator frontier moves, globally sorted by cost per byte saved.

    A move trades retained memory for time.  Each operator contributes at
    most two: retain-to-compress and compress-to-recompute when compression
    sits below the retain/recompute chord, otherwise the single
    retain-to-recompute move.  The first operator cannot be recomputed, so
    it only ever contributes the compression move.
    """
    segments = []
    for idx, op in enumerate(profile.operators):
        mem = op.mem_bytes
        cm = compressed_bytes(op)
        cc = op.compress_time_ms + op.decompress_time_ms
        rc = op.compute_time_ms
        if idx == 0:
            if mem > cm:
                segments.append((cc / (mem - cm), idx, 0, mem - cm, cc))
            continue
        on_hull = mem > cm and cc * mem < rc * (mem - cm)
        if on_hull:
            segments.append((cc / (mem - cm), idx, 0, mem - cm, cc))
            segments.append(((rc - cc) / cm, idx, 1, cm, rc - cc))
        else:
            segments.append((rc / mem, idx, 0, mem, rc))
    segments.sort()
    return segments


def solve(profile: ModelProfile) -> Plan:
    """Provably optimal assignment under the documented tie-breaking rule."""
    started = time.perf_counter()
    room = _check_feasible(profile)
    ops = profile.operators
    n = len(ops)

    cost_by_choice = [
        (op.compute_time_ms, op.compress_time_ms + op.decompress_time_ms, 0.0) for op in ops
    ]
    mem_by_choice = [(0, compressed_bytes(op), op.mem_bytes) for op in ops]

    suffix_min_mem = [0] * (n + 1)
    suffix_retain_mem = [0] * (n + 1)
    suffix_positive_cost = [True] * (n + 1)
    for i in range(n - 1, -1, -1):
        # Everything after the checkpoint can be recomputed down to zero bytes.
        least = min(mem_by_choice[i][1], mem_by_choice[i][2]) if i == 0 else 0
        suffix_min_mem[i] = suffix_min_mem[i + 1] + least
        suffix_retain_mem[i] = suffix_retain_mem[i + 1] + mem_by_choice[i][2]
        alternatives_positive = cost_by_choice[i][1] > 0 and (i == 0 or cost_by_choice[i][0] > 0)
        suffix_positive_cost[i] = suffix_positive_cost[i + 1] and alternatives_positive

    segments = _hull_segments(profile)

    best_cost = math.inf
    best_mem = 0
    best_choices: list[int] | None = None
    nodes = 0

    def suffix_bound(depth: int, slack: int) -> float | None:
        """Lower bound on remaining cost given remaining memory room."""
        need = suffix_retain_mem[depth] - slack
        if need <= 0:
            return 0.0
        bound = 0.0
        for slope, idx, _rank, dmem, dcost in segments:
            if idx < depth:
                continue
            if dmem >= need:
                return bound + slope * need
            bound += dcost
            need -= dmem
        return None

    prefix = [0] * n

    def descend(depth: int, cost: float, mem: int) -> None:
        nonlocal best_cost, best_mem, best_choices, nodes
        if depth == n:
            if cost < best_cost or (cost == best_cost and mem < best_mem):
                best_cost, best_mem, best_choices = cost, mem, prefix.copy()
            return
        first_choice = 1 if depth == 0 else 0
        for choice in range(first_choice, 3):
            nodes += 1
            new_cost = cost + cost_by_choice[depth][choice]
            new_mem = mem + mem_by_choice[depth][choice]
            rest = depth + 1
            if new_mem + suffix_min_mem[rest] > room:
                continue
            if new_mem + suffix_retain_mem[rest] <= room and suffix_positive_cost[rest]:
                # Retaining everything left is free and fits, so it is the
                # unique optimum of this subtree.
                tail_mem = new_mem + suffix_retain_mem[rest]
                if new_cost < best_cost or (new_cost == best_cost and tail_mem < best_mem):
                    prefix[depth] = choice
                    best_cost, best_mem = new_cost, tail_mem
                    best_choices = prefix[:rest] + [int(PolicyChoice.RETAIN)] * (n - rest)
                continue
            tail = suffix_bound(rest, room - new_mem)
            if tail is None:
                continue
            bound = new_cost + tail
            if bound - _BOUND_SAFETY > best_cost:
                continue
            if bound + _BOUND_SAFETY >= best_cost and new_mem + suffix_min_mem[rest] >= best_mem:
                continue
            prefix[depth] = choice
            descend(rest, new_cost, new_mem)

    descend(0, 0.0, 0)
    assert best_choices is not None  # feasibility was established up front
    wall_ms = (time.perf_counter() - started) * 1000.0
    return make_plan(profile, best_choices, SolverStats(nodes=nodes, wall_ms=wall_ms))


def brute_force(profile: ModelProfile, max_ops: int = _BRUTE_FORCE_MAX_OPS) -> Plan:
    """Exhaustive reference: evaluates every assignment, same tie-breaking.

    Intended as the independent check on `solve`; refuses more than
    `max_ops` operators because the space is 3^N.
    """
    n = profile.n_operators
    if n > max_ops:
        raise TooLargeError(f"brute force supports at most {max_ops} operators, got {n}")
    started = time.perf_counter()
    room = _check_feasible(profile)

    total = 3**n
    index = np.arange(total, dtype=np.int64)
    cost = np.zeros(total, dtype=np.float64)
    mem = np.zeros(total, dtype=np.int64)
    first_digit = None
    for i, op in enumerate(profile.operators):
        digits = (index // 3 ** (n - 1 - i)) % 3
        if i == 0:
            first_digit = digits
        cost += np.array(
            [op.compute_time_ms, op.compress_time_ms + op.decompress_time_ms, 0.0]
        )[digits]
        mem += np.array([0, compressed_bytes(op), op.mem_bytes], dtype=np.int64)[digits]

    feasible = (mem <= room) & (first_digit != int(PolicyChoice.RECOMPUTE))
    if not feasible.any():
        floor = min_total_bytes(profile)
        raise InfeasibleError(
            f"no assignment fits: minimal achievable total is {floor} bytes, "
            f"budget is {profile.mem_budget_bytes} bytes",
            min_total_bytes=floor,
        )
    best_cost = cost[feasible].min()
    candidates = feasible & (cost == best_cost)
    best_mem = mem[candidates].min()
    candidates &= mem == best_mem
    winner = int(index[candidates].min())
    choices = [(winner // 3 ** (n - 1 - i)) % 3 for i in range(n)]
    wall_ms = (time.perf_counter() - started) * 1000.0
    return make_plan(profile, choices, SolverStats(nodes=total, wall_ms=wall_ms))


def verify(profile: ModelProfile, plan: Plan) -> list[str]:
    """Recompute every constraint from scratch; empty list means the plan holds."""
    violations = []
    if len(plan.choices) != profile.n_operators:
        violations.append(
            f"one policy per operator: plan has {len(plan.choices)} choices, "
            f"profile has {profile.n_operators} operators"
        )
        return violations
    if plan.choices[0] is PolicyChoice.RECOMPUTE:
        violations.append("first operator is the block checkpoint and may not be recomputed")
    act = activation_bytes(profile, plan.choices)
    total = profile.static_mem_bytes + act
    if total > profile.mem_budget_bytes:
        violations.append(
            f"memory budget exceeded: static + activations = {total} bytes, "
            f"budget = {profile.mem_budget_bytes} bytes"
        )
    if plan.activation_bytes != act:
        violations.append(
            f"activation bytes mismatch: plan says {plan.activation_bytes}, recomputed {act}"
        )
    if plan.total_bytes != total:
        violations.append(
            f"total bytes mismatch: plan says {plan.total_bytes}, recomputed {total}"
        )
    objective = block_cost(profile, plan.choices)
    if abs(plan.objective_ms - objective) > 1e-9 * max(1.0, abs(objective)):
        violations.append(
            f"objective mismatch: plan says {plan.objective_ms}, recomputed {objective}"
        )
    return violations


@dataclass(frozen=True)
class TensorBandwidth:
    """How much memory a technique frees per millisecond spent, in MiB/ms."""

    op_id: int
    name: str
    recompute_mib_per_ms: float | None
    compress_mib_per_ms: float | None
    preferred: PolicyChoice | None


def bandwidths(profile: ModelProfile) -> list[TensorBandwidth]:
    """Rank recomputation against compression per tensor.

    Recomputation frees the whole tensor, compression frees the part the
    codec removes.  A technique whose time is zero has no defined bandwidth
    and is reported as unavailable.  Ties prefer recomputation.
    """
    out = []
    for op in profile.operators:
        mib = op.mem_bytes / (1 << 20)
        recompute = mib / op.compute_time_ms if op.compute_time_ms > 0 else None
        codec_ms = op.compress_time_ms + op.decompress_time_ms
        compress = mib * (1.0 - op.compression_rate) / codec_ms if codec_ms > 0 else None
        if recompute is None and compress is None:
            preferred = None
        elif compress is None:
            preferred = PolicyChoice.RECOMPUTE
        elif recompute is None:
            preferred = PolicyChoice.COMPRESS
        elif recompute >= compress:
            preferred = PolicyChoice.RECOMPUTE
        else:
            preferred = PolicyChoice.COMPRESS
        out.append(
            TensorBandwidth(
                op_id=op.id,
                name=op.name,
                recompute_mib_per_ms=recompute,
                compress_mib_per_ms=compress,
                preferred=preferred,
            )
        )
    return out


def plan_to_dict(plan: Plan) -> dict:
    return {
        "choices": [_CHOICE_NAMES[c] for c in plan.choices],
        "objective_ms": plan.objective_ms,
        "activation_bytes": plan.activation_bytes,
        "total_bytes": plan.total_bytes,
        "solver": {"nodes": plan.stats.nodes, "wall_ms": plan.stats.wall_ms},
    }


def plan_from_dict(raw: dict) -> Plan:
    if not isinstance(raw, dict):
        raise ParseError(f"plan must be an object, got {type(raw).__name__}")
    expected = {"choices", "objective_ms", "activation_bytes", "total_bytes", "solver"}
    missing = expected - raw.keys()
    unknown = raw.keys() - expected
    if missing or unknown:
        raise ParseError(f"plan fields: missing {sorted(missing)}, unknown {sorted(unknown)}")
    try:
        choices = tuple(_CHOICES_BY_NAME[name] for name in raw["choices"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"plan choices must be retain/compress/recompute: {exc}") from exc
    solver = raw["solver"]
    if not isinstance(solver, dict) or solver.keys() != {"nodes", "wall_ms"}:
        raise ParseError("plan solver block must contain exactly nodes and wall_ms")
    return Plan(
        choices=choices,
        objective_ms=float(raw["objective_ms"]),
        activation_bytes=int(raw["activation_bytes"]),
        total_bytes=int(raw["total_bytes"]),
        stats=SolverStats(nodes=int(solver["nodes"]), wall_ms=float(solver["wall_ms"])),
    )


def save_plan(plan: Plan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=2) + "\n")


def load_plan(path: str | Path) -> Plan:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read plan {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"plan {path} is not valid JSON: {exc}") from exc
    return plan_from_dict(raw)
