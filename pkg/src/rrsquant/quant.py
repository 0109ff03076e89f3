"""Symmetric round-to-nearest quantization.

Scale per group is ``max|x| / (2**(N-1) - 1)`` and integers are clamped to
``[-(2**(N-1) - 1), 2**(N-1) - 1]``; ``-2**(N-1)`` is never produced.
Rounding is to the nearest multiple of the stored scale, half-to-even.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import as_array

MIN_BITS = 2
MAX_BITS = 8


class SchemeKind(str, Enum):
    PER_TENSOR = "per-tensor"
    PER_CHANNEL = "per-channel"
    SUB_CHANNEL = "sub-channel"


@dataclass(frozen=True)
class GroupScheme:
    kind: SchemeKind = SchemeKind.PER_CHANNEL
    group_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if self.kind is SchemeKind.SUB_CHANNEL:
            if self.group_size is None or int(self.group_size) < 1:
                raise ValidationError("sub-channel group_size must be >= 1")
            object.__setattr__(self, "group_size", int(self.group_size))
        elif self.group_size is not None:
            raise ValidationError(f"{self.kind.value} takes no group_size")

    @classmethod
    def per_tensor(cls) -> "GroupScheme":
        return cls(SchemeKind.PER_TENSOR)

    @classmethod
    def per_channel(cls) -> "GroupScheme":
        return cls(SchemeKind.PER_CHANNEL)

    @classmethod
    def sub_channel(cls, group_size: int) -> "GroupScheme":
        return cls(SchemeKind.SUB_CHANNEL, group_size)

    def group_starts(self, cols: int) -> np.ndarray:
        """Column offsets at which each in-row group begins."""
        if self.kind is SchemeKind.SUB_CHANNEL:
            return np.arange(0, cols, self.group_size)
        return np.zeros(1, dtype=np.intp)

    def __str__(self) -> str:
        if self.kind is SchemeKind.SUB_CHANNEL:
            return f"sub-channel/{self.group_size}"
        return self.kind.value


def qmax(bit_width: int) -> int:
    return 2 ** (bit_width - 1) - 1


def _check_bits(bit_width: int) -> int:
    if isinstance(bit_width, bool) or int(bit_width) != bit_width:
        raise ValidationError(f"bit width must be an integer, got {bit_width!r}")
    bit_width = int(bit_width)
    if not MIN_BITS <= bit_width <= MAX_BITS:
        raise ValidationError(
            f"bit width {bit_width} outside [{MIN_BITS}, {MAX_BITS}]"
        )
    return bit_width


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    """Integer codes plus one scale per quantization group.

    ``scales`` is 2-D: ``(1, 1)`` per-tensor, ``(rows, 1)`` per-channel and
    ``(rows, n_groups)`` sub-channel.
    """

    ints: np.ndarray
    scales: np.ndarray
    bit_width: int
    scheme: GroupScheme

    @property
    def rows(self) -> int:
        return self.ints.shape[0]

    @property
    def cols(self) -> int:
        return self.ints.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ints.shape

    def element_scales(self) -> np.ndarray:
        """Scale of every element, broadcast to ``shape``."""
        starts = self.scheme.group_starts(self.cols)
        widths = np.diff(np.append(starts, self.cols))
        per_elem = np.repeat(self.scales, widths, axis=1)
        return np.broadcast_to(per_elem, self.shape)

    def row_scales(self) -> np.ndarray:
        """One scale per row; only defined for per-tensor and per-channel."""
        if self.scheme.kind is SchemeKind.SUB_CHANNEL:
            raise ValidationError("sub-channel matrices have no single row scale")
        return np.broadcast_to(self.scales[:, 0], (self.rows,))


def quantize(m, bit_width: int, scheme: GroupScheme | None = None) -> QuantizedMatrix:
    bit_width = _check_bits(bit_width)
    scheme = scheme or GroupScheme.per_channel()
    x = as_array(m)
    if x.size == 0:
        raise ShapeError("cannot quantize an empty matrix")
    top = qmax(bit_width)
    mag = np.abs(x)

    if scheme.kind is SchemeKind.PER_TENSOR:
        amax = mag.max(keepdims=True)
    elif scheme.kind is SchemeKind.PER_CHANNEL:
        amax = mag.max(axis=1, keepdims=True)
    else:
        amax = np.maximum.reduceat(mag, scheme.group_starts(x.shape[1]), axis=1)

    scales = amax / top
    # subnormal maxima can underflow to a zero scale; the smallest positive
    # double still represents every value in such a group exactly
    np.maximum(scales, np.nextafter(0.0, 1.0), out=scales)
    scales[amax == 0] = 1.0
    q = QuantizedMatrix(np.empty(x.shape, dtype=np.int8), scales, bit_width, scheme)
    elem = q.element_scales()
    codes = np.rint(x / elem)
    # x / s can round onto a .5 tie that the stored scale does not have; move
    # such codes one step toward x so |x - q*s| <= s/2 holds for the stored s
    resid = x - codes * elem
    far = np.abs(resid) > elem / 2
    codes[far] += np.sign(resid[far])
    # unreachable in exact arithmetic; clamp in case of rounding at the edge
    np.clip(codes, -top, top, out=codes)
    q.ints[...] = codes
    q.ints.setflags(write=False)
    q.scales.setflags(write=False)
    return q


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    return q.ints * q.element_scales()


def fake_quantize(m, bit_width: int, scheme: GroupScheme | None = None) -> np.ndarray:
    return dequantize(quantize(m, bit_width, scheme))
