"""Property tests for the codecs against independent oracles."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from actplan.codec import (
    PER_CHANNEL,
    Scheme,
    SchemeSpec,
    compress,
    compress_outlier_separated,
    decompress,
    dequantize,
    deserialize,
    detect_outlier_channels,
    pack_bitmask,
    packed_payload_bytes,
    quantize_asymmetric,
    quantize_symmetric,
    serialize,
    unpack_bitmask,
)

finite_f32 = st.floats(
    min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False, width=32
)


def matrices(max_rows=6, max_cols=40):
    return st.integers(1, max_rows).flatmap(
        lambda r: st.integers(1, max_cols).flatmap(
            lambda c: arrays(np.float32, (r, c), elements=finite_f32)
        )
    )


def check_round_trip_bound(x: np.ndarray, ct) -> None:
    """Every non-clipped element lands within scale/2 of its input.

    The reference value is the float16 cast of the input, which is what the
    scale computation sees.
    """
    x_hat = dequantize(ct).astype(np.float64)
    half = x.astype(np.float16).astype(np.float64)
    rows, cols = half.shape
    if ct.group_size == PER_CHANNEL:
        group_of = np.broadcast_to(np.arange(cols), (rows, cols))
    else:
        group_of = (np.arange(rows * cols) // ct.group_size).reshape(rows, cols)
    scales = ct.scales.astype(np.float64)[group_of]
    offsets = (
        ct.offsets.astype(np.float64)[group_of]
        if ct.offsets is not None
        else np.zeros_like(scales)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ideal = np.where(scales > 0, np.rint((half - offsets) / scales), 0.0)
    clipped = (ideal > 7) | (ideal < -8)
    err = np.abs(half - x_hat)
    tol = scales / 2 + 1e-9
    ok = err[~clipped] <= tol[~clipped]
    assert ok.all(), f"worst={err[~clipped].max()} allowed={tol[~clipped].min()}"


class TestRoundTripBound:
    @given(matrices())
    @settings(max_examples=150, deadline=None)
    def test_symmetric(self, x):
        check_round_trip_bound(x, quantize_symmetric(x, 16))

    @given(matrices())
    @settings(max_examples=150, deadline=None)
    def test_asymmetric(self, x):
        check_round_trip_bound(x, quantize_asymmetric(x, 16))

    @given(matrices(max_rows=8, max_cols=12))
    @settings(max_examples=100, deadline=None)
    def test_per_channel(self, x):
        check_round_trip_bound(x, quantize_symmetric(x, PER_CHANNEL))


class TestBitmaskIdentity:
    @given(arrays(np.uint8, st.integers(1, 300), elements=st.integers(0, 1)))
    @settings(max_examples=150, deadline=None)
    def test_identity(self, mask):
        restored = unpack_bitmask(pack_bitmask(mask))
        assert np.array_equal(restored.ravel(), mask)


class TestOutlierOracle:
    @given(matrices(max_rows=8, max_cols=24))
    @settings(max_examples=200, deadline=None)
    def test_matches_loop_oracle(self, x):
        flagged = set(detect_outlier_channels(x).tolist())

        # plain-python reimplementation of the flagging rule
        half = x.astype(np.float16).astype(np.float64)
        sums = [sum(abs(v) for v in half[:, c]) for c in range(half.shape[1])]
        n = len(sums)
        mean = sum(sums) / n
        var = sum((s - mean) ** 2 for s in sums) / n
        std = var**0.5
        if std == 0:
            expected = set()
        else:
            zs = [(s - mean) / std for s in sums]
            # a channel sitting exactly on the threshold (e.g. one nonzero
            # among ten, z = sqrt(n - 1) = 3) flips with summation order;
            # the strict > 3 rule is only meaningful away from the boundary
            assume(all(abs(z - 3.0) > 1e-6 for z in zs))
            expected = {c for c, z in enumerate(zs) if z > 3.0}
        assert flagged == expected


class TestOutlierReconstruction:
    @given(
        st.integers(2, 6),
        st.integers(4, 20),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_flagged_columns_bit_exact(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(rows, cols)).astype(np.float32)
        hot = int(rng.integers(0, cols))
        x[:, hot] *= 1000.0
        ct = compress_outlier_separated(x, group_size=8)
        x_hat = decompress(ct)
        half = x.astype(np.float16).astype(np.float32)
        for col in ct.outlier_indices:
            assert np.array_equal(x_hat[:, col], half[:, col])


class TestSizeInvariants:
    @given(st.integers(2, 64), st.integers(1, 256), st.integers(0, 8), st.sampled_from([8, 32, 128]))
    @settings(max_examples=200, deadline=None)
    def test_outliers_never_shrink_payload(self, rows, cols, k, group):
        # needs rows >= 2: a single-row outlier column costs 6 bytes but only
        # saves half a code byte, so the inequality is strict only then
        k = min(k, cols)
        base = packed_payload_bytes(Scheme.OUTLIER_SEPARATED, rows, cols, group, 0)
        with_k = packed_payload_bytes(Scheme.OUTLIER_SEPARATED, rows, cols, group, k)
        assert with_k >= base

    @given(matrices(max_rows=4, max_cols=32))
    @settings(max_examples=100, deadline=None)
    def test_formula_matches_actual(self, x):
        for spec in (
            SchemeSpec(Scheme.SYMMETRIC_GROUP, group_size=16),
            SchemeSpec(Scheme.ASYMMETRIC_GROUP, group_size=16),
        ):
            ct = compress(x, spec)
            assert ct.compressed_size_bytes == packed_payload_bytes(
                ct.scheme, ct.rows, ct.cols, ct.group_size, ct.outlier_count
            )


class TestSerializationProperties:
    @given(matrices(max_rows=4, max_cols=32), st.sampled_from([8, 16, PER_CHANNEL]))
    @settings(max_examples=150, deadline=None)
    def test_round_trip_bytes(self, x, group):
        for quantize in (quantize_symmetric, quantize_asymmetric):
            ct = quantize(x, group)
            blob = serialize(ct)
            assert serialize(deserialize(blob)) == blob

    @given(matrices(max_rows=4, max_cols=16))
    @settings(max_examples=80, deadline=None)
    def test_values_survive_wire(self, x):
        ct = quantize_symmetric(x, 8)
        np.testing.assert_array_equal(dequantize(deserialize(serialize(ct))), dequantize(ct))


@pytest.mark.parametrize("flip_at", [0, 4, 5, 9, 13, 24])
def test_header_corruption_detected_or_harmless(flip_at):
    x = np.arange(64, dtype=np.float32).reshape(4, 16)
    blob = bytearray(serialize(quantize_symmetric(x, 8)))
    blob[flip_at] ^= 0xFF
    try:
        back = deserialize(bytes(blob))
    except Exception:
        return  # rejection is the expected outcome
    # a surviving parse must at least be internally consistent
    assert serialize(back) == bytes(blob)
