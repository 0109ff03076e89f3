"""Matmul back-ends and the end-to-end method pipelines.

``matmul_fused_blocked`` is a functional model of a GEMM fused with Runtime
Smooth: K is split into blocks that coincide with the smoothing groups, each
block yields an integer partial sum, the partial is converted to float and
multiplied by the block's smoothing scale, and blocks are reduced in
ascending order. The per-row activation and weight scales are applied last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .metrics import MuKind, token_mu
from .quant import GroupScheme, QuantizedMatrix, SchemeKind, dequantize, qmax, quantize
from .rotation import hadamard, rotate_activation, rotate_weight
from .smooth import (
    SmoothingPlan,
    SmoothQuantConfig,
    apply_perm_to_weight,
    apply_smooth,
    build_plan,
    channel_max_scales,
    smoothquant_apply,
    smoothquant_scales,
)
from .tensor import as_array

INT32_MAX = 2**31 - 1
BYPASS_BITS = 16


def matmul_fp(x, w) -> np.ndarray:
    """Reference ``X W^T`` in float64."""
    x = as_array(x)
    w = as_array(w)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"X has K={x.shape[1]}, W has K={w.shape[1]}")
    return x @ w.T


def _check_operands(xq: QuantizedMatrix, wq: QuantizedMatrix) -> None:
    if xq.cols != wq.cols:
        raise ShapeError(f"X has K={xq.cols}, W has K={wq.cols}")
    for name, q in (("activation", xq), ("weight", wq)):
        if q.scheme.kind is SchemeKind.SUB_CHANNEL:
            raise ConfigError(
                f"{name} must be per-channel or per-tensor quantized for the integer GEMM"
            )


def _outer_scales(xq: QuantizedMatrix, wq: QuantizedMatrix) -> np.ndarray:
    return np.multiply.outer(xq.row_scales(), wq.row_scales())


def matmul_quant_naive(
    xq: QuantizedMatrix, wq: QuantizedMatrix, s=None
) -> np.ndarray:
    """``Y[n, m] = ax[n] * aw[m] * sum_j s_j * Xq[n, j] * Wq[m, j]``."""
    _check_operands(xq, wq)
    a = xq.ints.astype(np.float64)
    if s is not None:
        s = np.asarray(s, dtype=np.float64).ravel()
        if s.size != xq.cols:
            raise ShapeError(f"{s.size} smoothing scales for K={xq.cols}")
        a = a * s
    acc = a @ wq.ints.T.astype(np.float64)
    return _outer_scales(xq, wq) * acc


@dataclass(frozen=True)
class BlockedGemmConfig:
    block_size: int

    def __post_init__(self) -> None:
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ValidationError(f"block size must be >= 1, got {self.block_size}")


def _blocked_reduce(a: np.ndarray, b: np.ndarray, starts: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """``sum_b scales[b] * (a_b @ b_b^T)`` reduced in ascending block order."""
    stops = np.append(starts[1:], a.shape[1])
    acc = np.zeros((a.shape[0], b.shape[0]))
    for start, stop, scale in zip(starts, stops, scales):
        acc += scale * (a[:, start:stop] @ b[:, start:stop].T)
    return acc


def matmul_fused_blocked(
    xq: QuantizedMatrix,
    wq: QuantizedMatrix,
    plan: SmoothingPlan,
    cfg: BlockedGemmConfig,
) -> np.ndarray:
    """Blocked integer GEMM with one runtime smoothing scale per block.

    Operands must already be permuted (and the activation smoothed) by
    ``plan``.
    """
    _check_operands(xq, wq)
    if plan.group_size != cfg.block_size:
        raise ConfigError(
            f"smoothing group size {plan.group_size} != GEMM block size {cfg.block_size}"
        )
    if plan.dim != xq.cols:
        raise ConfigError(f"plan covers {plan.dim} channels, operands have K={xq.cols}")
    worst = cfg.block_size * qmax(xq.bit_width) * qmax(wq.bit_width)
    if worst > INT32_MAX:
        raise ConfigError(
            f"block of {cfg.block_size} can overflow a 32-bit accumulator"
        )
    # integer partials are computed through float64 GEMM: every partial sum is
    # an integer below 2**31 < 2**53, so the result is exact in any order
    acc = _blocked_reduce(
        xq.ints.astype(np.float64),
        wq.ints.astype(np.float64),
        plan.group_starts(),
        plan.group_scales,
    )
    return _outer_scales(xq, wq) * acc


# ---------------------------------------------------------------------------
# method pipelines
# ---------------------------------------------------------------------------


class Method(str, Enum):
    RTN = "rtn"
    SMOOTHQUANT = "smoothquant"
    RS = "rs"
    ROTATE = "rotate"
    RRS = "rrs"


def _bypass(bits: int | None) -> bool:
    return bits is None or bits >= BYPASS_BITS


@dataclass(frozen=True)
class MethodConfig:
    """One quantization pipeline.

    ``a_bits``/``w_bits`` of ``None`` or >= 16 bypass that operand's quantizer
    (the transformations still run), which isolates transformation error from
    quantization error.
    """

    method: Method
    a_bits: int | None = 4
    w_bits: int | None = 4
    a_scheme: GroupScheme = field(default_factory=GroupScheme.per_channel)
    w_scheme: GroupScheme = field(default_factory=GroupScheme.per_channel)
    smooth_group: int | None = None
    sq_alpha: float = 0.5
    mu_kind: MuKind = MuKind.RMS

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "mu_kind", MuKind(self.mu_kind))
        for bits in (self.a_bits, self.w_bits):
            if not _bypass(bits) and not 2 <= bits <= 8:
                raise ValidationError(f"bit width {bits} outside [2, 8] (or >= 16 to bypass)")
        if self.runtime_smooth:
            if self.smooth_group is None or self.smooth_group < 1:
                raise ValidationError(f"{self.method.value} needs smooth_group >= 1")
        if not 0.0 <= self.sq_alpha <= 1.0:
            raise ValidationError("sq_alpha must be in [0, 1]")

    @property
    def rotate(self) -> bool:
        return self.method in (Method.ROTATE, Method.RRS)

    @property
    def runtime_smooth(self) -> bool:
        return self.method in (Method.RS, Method.RRS)

    @property
    def bypass(self) -> bool:
        return _bypass(self.a_bits) and _bypass(self.w_bits)


@dataclass(frozen=True)
class MuSummary:
    mean: float
    median: float
    p99: float
    n_tokens: int
    n_zero: int

    @classmethod
    def of(cls, values: np.ndarray) -> "MuSummary":
        ok = values[~np.isnan(values)]
        if ok.size == 0:
            return cls(math.nan, math.nan, math.nan, 0, int(values.size))
        return cls(
            float(ok.mean()),
            float(np.median(ok)),
            float(np.percentile(ok, 99)),
            int(ok.size),
            int(values.size - ok.size),
        )


@dataclass(frozen=True, eq=False)
class MethodResult:
    y: np.ndarray
    y_fp: np.ndarray
    rel_frob_error: float
    max_abs_error: float
    mu: MuSummary
    quantizer_input: np.ndarray
    plan: SmoothingPlan | None = None


def _maybe_quantize(m: np.ndarray, bits: int | None, scheme: GroupScheme) -> QuantizedMatrix | None:
    return None if _bypass(bits) else quantize(m, bits, scheme)


def run_method(x, w, cfg: MethodConfig, calibration=None) -> MethodResult:
    """Run one pipeline on ``X (N x K)`` and ``W (M x K)`` against ``X W^T``.

    ``calibration`` supplies the activation used to calibrate SmoothQuant
    (defaults to ``x`` itself, the best case for that baseline).
    """
    x = as_array(x)
    w = as_array(w)
    y_fp = matmul_fp(x, w)
    xt, wt = x, w

    if cfg.rotate:
        rot = hadamard(x.shape[1])
        xt = rotate_activation(xt, rot)
        wt = rotate_weight(wt, rot)

    if cfg.method is Method.SMOOTHQUANT:
        sq = SmoothQuantConfig.calibrate(x if calibration is None else calibration, w, cfg.sq_alpha)
        xt, wt = smoothquant_apply(xt, wt, smoothquant_scales(sq))

    plan = None
    if cfg.runtime_smooth:
        plan = build_plan(channel_max_scales(xt), cfg.smooth_group)
        xt = apply_smooth(xt, plan)
        wt = apply_perm_to_weight(wt, plan)

    xq = _maybe_quantize(xt, cfg.a_bits, cfg.a_scheme)
    wq = _maybe_quantize(wt, cfg.w_bits, cfg.w_scheme)
    integer_path = (
        xq is not None
        and wq is not None
        and xq.scheme.kind is not SchemeKind.SUB_CHANNEL
        and wq.scheme.kind is not SchemeKind.SUB_CHANNEL
    )
    if integer_path and plan is not None:
        y = matmul_fused_blocked(xq, wq, plan, BlockedGemmConfig(plan.group_size))
    elif integer_path:
        y = matmul_quant_naive(xq, wq)
    else:
        # float path: bypassed or sub-channel operands, same block reduction
        a = xt if xq is None else dequantize(xq)
        b = wt if wq is None else dequantize(wq)
        if plan is not None:
            y = _blocked_reduce(a, b, plan.group_starts(), plan.group_scales)
        else:
            y = a @ b.T

    diff = y - y_fp
    denom = np.linalg.norm(y_fp)
    rel = float(np.linalg.norm(diff) / denom) if denom > 0 else float(np.linalg.norm(diff))
    return MethodResult(
        y=y,
        y_fp=y_fp,
        rel_frob_error=rel,
        max_abs_error=float(np.abs(diff).max()) if diff.size else 0.0,
        mu=MuSummary.of(token_mu(xt, cfg.mu_kind)),
        quantizer_input=xt,
        plan=plan,
    )
