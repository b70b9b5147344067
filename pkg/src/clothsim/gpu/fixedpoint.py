"""Signed fixed-point codec used by the atomic accumulation buffers.

Floating-point addition is not associative, so parallel reduction order would
leak into results; 32-bit integer addition is associative and commutative even
with wraparound, which makes accumulated sums independent of scheduling. Force
and response vectors are therefore encoded as i32 at a configurable scale
(default 2^16) before accumulation and decoded after.

Encoding rounds to nearest even (matching the shader sources, which use
round() before the integer conversion) and saturates at +/-FIXED_SATURATION,
the largest float32-representable magnitude below 2^31. Decoding is exact:
every int32 divided by a power-of-two scale is exactly representable in
float64. The safe operating region is |value| * scale * max_adds_per_node
< 2^31; beyond that, sums wrap exactly like the real atomics would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FIXED_SATURATION", "FixedPointVec3", "encode_values", "decode_values", "wrap_add_i32"]

FIXED_SATURATION = 2147483520  # largest f32 below 2^31; keeps i32 negation safe


def encode_values(values, scale: int, float32: bool = True) -> np.ndarray:
    """Vectorized encode: i32(round(value * scale)), saturating.

    float32=True performs the multiply in f32, which is what the shader does;
    the exact (float64) path is used by the scalar codec below.
    """
    values = np.asarray(values)
    if float32:
        product = values.astype(np.float32) * np.float32(scale)
        rounded = np.rint(product).astype(np.float64)
    else:
        rounded = np.rint(np.asarray(values, dtype=np.float64) * float(scale))
    clipped = np.clip(rounded, -FIXED_SATURATION, FIXED_SATURATION)
    return clipped.astype(np.int64).astype(np.int32)


def decode_values(raw: np.ndarray, scale: int, float32: bool = True) -> np.ndarray:
    """Exact decode to float64, optionally rounded once to f32 (shader view)."""
    exact = np.asarray(raw, dtype=np.float64) / float(scale)
    return exact.astype(np.float32) if float32 else exact


def wrap_add_i32(target: np.ndarray, indices: np.ndarray, values: np.ndarray) -> None:
    """Accumulate int32 values into target at indices with exact int32
    wraparound, independent of the order of the (index, value) pairs.

    Sums are gathered per slot in float64 (exact: each |value| < 2^31 and
    bincount totals stay far below 2^53), then folded into int32 modulo 2^32.
    """
    if len(indices) == 0:
        return
    flat = target.reshape(-1)
    sums = np.bincount(
        np.asarray(indices, dtype=np.int64),
        weights=np.asarray(values, dtype=np.float64),
        minlength=flat.size,
    )
    total = flat.astype(np.int64) + sums.astype(np.int64)
    flat[:] = ((total + 2**31) % 2**32 - 2**31).astype(np.int32)


@dataclass(frozen=True)
class FixedPointVec3:
    """One encoded 3-vector; the scalar, exact-arithmetic view of the codec."""

    x: int
    y: int
    z: int
    scale: int = 1 << 16

    @classmethod
    def encode(cls, vec, scale: int = 1 << 16) -> "FixedPointVec3":
        raw = encode_values(np.asarray(vec, dtype=np.float64), scale, float32=False)
        return cls(x=int(raw[0]), y=int(raw[1]), z=int(raw[2]), scale=scale)

    def decode(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64) / float(self.scale)

    def __add__(self, other: "FixedPointVec3") -> "FixedPointVec3":
        if self.scale != other.scale:
            raise ValueError("cannot add fixed-point vectors with different scales")
        def wrap(v):
            return int((v + 2**31) % 2**32 - 2**31)
        return FixedPointVec3(
            x=wrap(self.x + other.x),
            y=wrap(self.y + other.y),
            z=wrap(self.z + other.z),
            scale=self.scale,
        )
