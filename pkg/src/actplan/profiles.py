"""Operator-level memory and timing profiles for one transformer block.

A profile describes the activation tensors produced inside a repeated block:
how large each one is at a reference batch size, what it costs to recompute
from the previous checkpoint, what it costs to compress and decompress, and
how well it compresses.  Everything downstream (the planner, the simulator,
the adaptive re-planning loop) consumes these records.

All dataclasses are frozen; scaling to a different batch size returns a new
profile instead of mutating in place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import ParseError, ValidationError


class LayerKind(str, Enum):
    """Functional category of the operator that produced a tensor."""

    LINEAR = "linear"
    LAYER_NORM = "layer_norm"
    GELU = "gelu"
    QKV_MATRIX = "qkv_matrix"
    SOFTMAX = "softmax"
    SCORE = "score"
    DROPOUT_MASK = "dropout_mask"
    OTHER = "other"


_OPERATOR_FIELDS = (
    "id",
    "name",
    "kind",
    "mem_bytes",
    "compute_time_ms",
    "compress_time_ms",
    "decompress_time_ms",
    "compression_rate",
)

_PROFILE_FIELDS = (
    "n_layers",
    "static_mem_bytes",
    "mem_budget_bytes",
    "reference_batch",
    "base_step_time_ms",
    "operators",
)


@dataclass(frozen=True)
class OperatorProfile:
    """One activation tensor inside the block.

    compute_time_ms is the cost of recomputing the tensor from the previous
    retained checkpoint.  compression_rate is compressed size divided by
    original size, so smaller is better.
    """

    id: int
    name: str
    kind: LayerKind
    mem_bytes: int
    compute_time_ms: float
    compress_time_ms: float
    decompress_time_ms: float
    compression_rate: float

    def __post_init__(self) -> None:
        if not isinstance(self.mem_bytes, int) or isinstance(self.mem_bytes, bool):
            raise ValidationError(f"operator {self.id}: mem_bytes must be an integer, got {self.mem_bytes!r}")
        if self.mem_bytes <= 0:
            raise ValidationError(f"operator {self.id}: mem_bytes must be positive, got {self.mem_bytes}")
        for field in ("compute_time_ms", "compress_time_ms", "decompress_time_ms"):
            value = getattr(self, field)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"operator {self.id}: {field} must be finite and >= 0, got {value}")
        if not 0.0 < self.compression_rate <= 1.0:
            raise ValidationError(
                f"operator {self.id}: compression_rate must be in (0, 1], got {self.compression_rate}"
            )


@dataclass(frozen=True)
class ModelProfile:
    """Profiled block plus the model-level context the planner needs."""

    operators: tuple[OperatorProfile, ...]
    n_layers: int
    static_mem_bytes: int
    mem_budget_bytes: int
    reference_batch: int
    base_step_time_ms: float

    def __post_init__(self) -> None:
        if not self.operators:
            raise ValidationError("operators must be non-empty")
        ids = [op.id for op in self.operators]
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError(f"operator ids must be contiguous 1..N in order, got {ids}")
        if self.n_layers < 1:
            raise ValidationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.static_mem_bytes < 0:
            raise ValidationError(f"static_mem_bytes must be >= 0, got {self.static_mem_bytes}")
        if self.mem_budget_bytes <= self.static_mem_bytes:
            raise ValidationError(
                f"mem_budget_bytes ({self.mem_budget_bytes}) must exceed "
                f"static_mem_bytes ({self.static_mem_bytes})"
            )
        if self.reference_batch < 1:
            raise ValidationError(f"reference_batch must be >= 1, got {self.reference_batch}")
        if self.base_step_time_ms <= 0:
            raise ValidationError(f"base_step_time_ms must be positive, got {self.base_step_time_ms}")

    @property
    def n_operators(self) -> int:
        return len(self.operators)

    def operator(self, op_id: int) -> OperatorProfile:
        try:
            op = self.operators[op_id - 1]
        except IndexError:
            raise ValidationError(f"no operator with id {op_id}") from None
        return op


def _require(mapping: dict, fields: tuple[str, ...], context: str) -> None:
    missing = [f for f in fields if f not in mapping]
    if missing:
        raise ParseError(f"{context}: missing fields {missing}")
    unknown = [k for k in mapping if k not in fields]
    if unknown:
        raise ParseError(f"{context}: unknown fields {unknown}")


def _as_int(value, field: str, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{context}: {field} must be an integer, got {value!r}")
    return value


def _as_number(value, field: str, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{context}: {field} must be a number, got {value!r}")
    return float(value)


def operator_from_dict(raw: dict) -> OperatorProfile:
    if not isinstance(raw, dict):
        raise ParseError(f"operator entry must be an object, got {type(raw).__name__}")
    _require(raw, _OPERATOR_FIELDS, "operator")
    op_id = _as_int(raw["id"], "id", "operator")
    context = f"operator {op_id}"
    name = raw["name"]
    if not isinstance(name, str) or not name:
        raise ParseError(f"{context}: name must be a non-empty string")
    try:
        kind = LayerKind(raw["kind"])
    except ValueError:
        raise ParseError(
            f"{context}: unknown kind {raw['kind']!r}, expected one of "
            f"{sorted(k.value for k in LayerKind)}"
        ) from None
    return OperatorProfile(
        id=op_id,
        name=name,
        kind=kind,
        mem_bytes=_as_int(raw["mem_bytes"], "mem_bytes", context),
        compute_time_ms=_as_number(raw["compute_time_ms"], "compute_time_ms", context),
        compress_time_ms=_as_number(raw["compress_time_ms"], "compress_time_ms", context),
        decompress_time_ms=_as_number(raw["decompress_time_ms"], "decompress_time_ms", context),
        compression_rate=_as_number(raw["compression_rate"], "compression_rate", context),
    )


def profile_from_dict(raw: dict) -> ModelProfile:
    if not isinstance(raw, dict):
        raise ParseError(f"profile must be an object, got {type(raw).__name__}")
    _require(raw, _PROFILE_FIELDS, "profile")
    if not isinstance(raw["operators"], list):
        raise ParseError("profile: operators must be a list")
    operators = tuple(operator_from_dict(entry) for entry in raw["operators"])
    if not operators:
        raise ValidationError("operators must be non-empty")
    return ModelProfile(
        operators=operators,
        n_layers=_as_int(raw["n_layers"], "n_layers", "profile"),
        static_mem_bytes=_as_int(raw["static_mem_bytes"], "static_mem_bytes", "profile"),
        mem_budget_bytes=_as_int(raw["mem_budget_bytes"], "mem_budget_bytes", "profile"),
        reference_batch=_as_int(raw["reference_batch"], "reference_batch", "profile"),
        base_step_time_ms=_as_number(raw["base_step_time_ms"], "base_step_time_ms", "profile"),
    )


def operator_to_dict(op: OperatorProfile) -> dict:
    return {
        "id": op.id,
        "name": op.name,
        "kind": op.kind.value,
        "mem_bytes": op.mem_bytes,
        "compute_time_ms": op.compute_time_ms,
        "compress_time_ms": op.compress_time_ms,
        "decompress_time_ms": op.decompress_time_ms,
        "compression_rate": op.compression_rate,
    }


def profile_to_dict(profile: ModelProfile) -> dict:
    return {
        "n_layers": profile.n_layers,
        "static_mem_bytes": profile.static_mem_bytes,
        "mem_budget_bytes": profile.mem_budget_bytes,
        "reference_batch": profile.reference_batch,
        "base_step_time_ms": profile.base_step_time_ms,
        "operators": [operator_to_dict(op) for op in profile.operators],
    }


def load_profile(path: str | Path) -> ModelProfile:
    """Read and validate a profile JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read profile {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"profile {path} is not valid JSON: {exc}") from exc
    return profile_from_dict(raw)


def save_profile(profile: ModelProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile_to_dict(profile), indent=2) + "\n")


def _scale_bytes(value: int, batch: int, reference: int) -> int:
    # Round half up in exact integer arithmetic; clamp so a profiled tensor
    # never scales to zero bytes.
    scaled = (2 * value * batch + reference) // (2 * reference)
    return max(1, scaled)


def scale_profile(profile: ModelProfile, batch: int) -> ModelProfile:
    """Rescale per-tensor memory and times linearly to a new batch size.

    Static memory and the budget are model-level constants and do not change.
    The returned profile uses `batch` as its own reference batch.
    """
    if batch < 1:
        raise ValidationError(f"batch must be >= 1, got {batch}")
    if batch == profile.reference_batch:
        return profile
    factor = batch / profile.reference_batch
    operators = tuple(
        replace(
            op,
            mem_bytes=_scale_bytes(op.mem_bytes, batch, profile.reference_batch),
            compute_time_ms=op.compute_time_ms * factor,
            compress_time_ms=op.compress_time_ms * factor,
            decompress_time_ms=op.decompress_time_ms * factor,
        )
        for op in profile.operators
    )
    return replace(
        profile,
        operators=operators,
        reference_batch=batch,
        base_step_time_ms=profile.base_step_time_ms * factor,
    )
