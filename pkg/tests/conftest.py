"""Shared fixtures and instance builders.

The four-operator block mirrors a profiled GPT attention/MLP slice whose
per-tensor trade-offs are known by hand; most solver tests build on it.
Random instances use dyadic-grid times (multiples of 1/1024) so that cost
sums are exact in floating point and cross-checks can use equality.
"""

from __future__ import annotations

import math
import random

import pytest

from actplan.codec import outlier_separated_rate
from actplan.profiles import LayerKind, ModelProfile, OperatorProfile
from actplan.simulate import DriftRegime

MIB = 1024 * 1024

# Measured block slice: (name, kind, mem, recompute ms, compress+decompress ms, rate)
FOUR_OP_ROWS = (
    ("attn_out", LayerKind.LINEAR, 96 * MIB, 0.36, 0.37, 24 / 96),
    ("softmax", LayerKind.SOFTMAX, 42 * MIB, 1.02, 0.16, 11.8 / 42),
    ("score", LayerKind.SCORE, 42 * MIB, 0.58, 0.16, 11.8 / 42),
    ("gelu", LayerKind.GELU, int(10.5 * MIB), 0.04, 0.04, 2.6 / 10.5),
)


def four_ops(start_id: int = 1) -> tuple[OperatorProfile, ...]:
    return tuple(
        OperatorProfile(
            id=start_id + i,
            name=name,
            kind=kind,
            mem_bytes=mem,
            compute_time_ms=tcomp,
            compress_time_ms=tboth,
            decompress_time_ms=0.0,
            compression_rate=rate,
        )
        for i, (name, kind, mem, tcomp, tboth, rate) in enumerate(FOUR_OP_ROWS)
    )


@pytest.fixture
def four_op_block() -> ModelProfile:
    return ModelProfile(
        operators=four_ops(),
        n_layers=1,
        static_mem_bytes=0,
        mem_budget_bytes=64 * MIB,
        reference_batch=1,
        base_step_time_ms=10.0,
    )


def five_op_profile() -> ModelProfile:
    """Four measured rows behind a small block-input checkpoint, 40 MiB cap."""
    head = OperatorProfile(
        id=1,
        name="block_input",
        kind=LayerKind.LINEAR,
        mem_bytes=8 * MIB,
        compute_time_ms=0.10,
        compress_time_ms=0.06,
        decompress_time_ms=0.0,
        compression_rate=0.25,
    )
    return ModelProfile(
        operators=(head,) + four_ops(start_id=2),
        n_layers=1,
        static_mem_bytes=0,
        mem_budget_bytes=40 * MIB,
        reference_batch=1,
        base_step_time_ms=10.0,
    )


@pytest.fixture
def five_op_block() -> ModelProfile:
    return five_op_profile()


_KINDS = (
    LayerKind.LINEAR,
    LayerKind.LAYER_NORM,
    LayerKind.GELU,
    LayerKind.QKV_MATRIX,
    LayerKind.SOFTMAX,
    LayerKind.SCORE,
    LayerKind.DROPOUT_MASK,
    LayerKind.OTHER,
)


def dyadic(rng: random.Random, lo: float, hi: float) -> float:
    """A time on the 1/1024 grid; sums of a few of these are float-exact."""
    return rng.randint(round(lo * 1024), round(hi * 1024)) / 1024


def random_instance(
    seed: int,
    max_ops: int = 10,
    budget_fraction: tuple[float, float] = (0.2, 1.1),
    n_layers_choices: tuple[int, ...] = (1, 2, 4),
) -> ModelProfile:
    """Feasible random instance with dyadic times and varied tightness."""
    rng = random.Random(seed)
    n = rng.randint(2, max_ops)
    ops = []
    for i in range(1, n + 1):
        mem = rng.randint(1, 64) * 256 * 1024
        ops.append(
            OperatorProfile(
                id=i,
                name=f"op{i}",
                kind=rng.choice(_KINDS),
                mem_bytes=mem,
                compute_time_ms=dyadic(rng, 0.0, 2.0),
                compress_time_ms=dyadic(rng, 0.0, 0.5),
                decompress_time_ms=dyadic(rng, 0.0, 0.5),
                compression_rate=rng.randint(1, 512) / 512,
            )
        )
    n_layers = rng.choice(n_layers_choices)
    static = rng.randint(0, 8) * MIB
    retain_all = n_layers * sum(op.mem_bytes for op in ops)
    floor = n_layers * min(
        ops[0].mem_bytes, math.ceil(ops[0].mem_bytes * ops[0].compression_rate)
    )
    lo, hi = budget_fraction
    budget = static + max(int(retain_all * rng.uniform(lo, hi)), floor + 1)
    return ModelProfile(
        operators=tuple(ops),
        n_layers=n_layers,
        static_mem_bytes=static,
        mem_budget_bytes=budget,
        reference_batch=rng.choice((1, 2, 4)),
        base_step_time_ms=dyadic(rng, 5.0, 50.0),
    )


def realistic_block(n_ops: int = 30, seed: int = 1, budget_fraction: float = 0.45) -> ModelProfile:
    """Transformer-block-shaped instance: 24 layers, tight budget, mixed kinds."""
    rng = random.Random(seed)
    ops = []
    for i in range(1, n_ops + 1):
        ops.append(
            OperatorProfile(
                id=i,
                name=f"op{i}",
                kind=rng.choice(_KINDS),
                mem_bytes=rng.choice([4, 8, 16, 32, 48, 64, 96]) * MIB,
                compute_time_ms=round(rng.uniform(0.02, 1.5), 3),
                compress_time_ms=round(rng.uniform(0.03, 0.4), 3),
                decompress_time_ms=round(rng.uniform(0.02, 0.3), 3),
                compression_rate=rng.choice([0.125, 0.25, 0.26, 0.27, 0.3]),
            )
        )
    n_layers = 24
    static = 2048 * MIB
    budget = static + int(budget_fraction * n_layers * sum(op.mem_bytes for op in ops))
    return ModelProfile(tuple(ops), n_layers, static, budget, 4, 180.0)


def dominance_block(channels: int = 4096, regime: DriftRegime = DriftRegime()) -> ModelProfile:
    """Block whose base compression rates sit at the drift process ceiling.

    Drifted outlier counts clip at channels // 2, so every drifted rate is at
    most the base rate here.  The initial optimal plan on this instance uses
    no compression (retain the two cheap tensors, recompute the expensive
    pair), so it stays feasible under every drifted profile: re-planning can
    adopt strictly better plans as outliers thin out but can never be forced
    into a worse one.
    """
    r_max = min(
        1.0,
        outlier_separated_rate(regime.rows, channels, channels // 2, regime.group_size),
    )
    ops = (
        OperatorProfile(1, "block_input", LayerKind.LINEAR, 8 * MIB, 0.10, 0.06, 0.0, r_max),
        OperatorProfile(2, "mlp_up_proj", LayerKind.LINEAR, 64 * MIB, 2.0, 0.2, 0.0, r_max),
        OperatorProfile(3, "mlp_down_proj", LayerKind.LINEAR, 64 * MIB, 2.0, 0.2, 0.0, r_max),
        OperatorProfile(4, "mlp_gelu", LayerKind.GELU, 32 * MIB, 0.05, 0.1, 0.0, r_max),
    )
    return ModelProfile(
        operators=ops,
        n_layers=1,
        static_mem_bytes=0,
        mem_budget_bytes=44 * MIB,
        reference_batch=1,
        base_step_time_ms=10.0,
    )
