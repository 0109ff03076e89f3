"""Runtime Smooth plans and the SmoothQuant migration baseline.

Runtime Smooth divides activation channels by their live abs-maxima and keeps
the weight unscaled; the scales are re-applied inside the GEMM. To make the
scale constant within a GEMM block, channels are first sorted by their maxima
(descending) and each contiguous group of ``group_size`` channels shares the
group maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import as_array


def channel_absmax(x) -> np.ndarray:
    """Column abs-maxima, without the zero fallback."""
    x = as_array(x)
    if x.size == 0:
        raise ShapeError("empty matrix")
    return np.abs(x).max(axis=0)


def channel_max_scales(x) -> np.ndarray:
    """Per-channel runtime smoothing scales; all-zero channels get 1."""
    s = channel_absmax(x)
    s[s == 0] = 1.0
    return s


@dataclass(frozen=True, eq=False)
class SmoothingPlan:
    """Channel order and group-wise divisors for one activation matrix.

    ``permutation[p]`` is the original channel placed at position ``p``.
    ``raw_scales`` stay in original channel order.
    """

    permutation: np.ndarray
    group_size: int
    group_scales: np.ndarray
    raw_scales: np.ndarray

    @property
    def dim(self) -> int:
        return self.permutation.size

    @property
    def n_groups(self) -> int:
        return self.group_scales.size

    def group_starts(self) -> np.ndarray:
        return np.arange(0, self.dim, self.group_size)

    def channel_divisors(self) -> np.ndarray:
        """Divisor of each permuted channel (its group's scale)."""
        return np.repeat(self.group_scales, self.group_size)[: self.dim]

    def inverse_permutation(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.dim)
        return inv


def build_plan(s, group_size: int) -> SmoothingPlan:
    s = np.asarray(s, dtype=np.float64).ravel()
    if int(group_size) != group_size or group_size < 1:
        raise ValidationError(f"group size must be a positive integer, got {group_size}")
    group_size = int(group_size)
    if s.size == 0:
        raise ShapeError("no channels to plan")
    if not (s > 0).all() or not np.isfinite(s).all():
        raise ValidationError("smoothing scales must be finite and > 0")
    # stable sort on -s: descending magnitude, ties keep ascending index
    perm = np.argsort(-s, kind="stable")
    starts = np.arange(0, s.size, group_size)
    group_scales = np.maximum.reduceat(s[perm], starts)
    for arr in (perm, group_scales, s):
        arr.setflags(write=False)
    return SmoothingPlan(perm, group_size, group_scales, s)


def _check_plan(m: np.ndarray, plan: SmoothingPlan, what: str) -> None:
    if m.shape[1] != plan.dim:
        raise ShapeError(f"{what} has {m.shape[1]} columns, plan covers {plan.dim}")


def apply_smooth(x, plan: SmoothingPlan) -> np.ndarray:
    """Permute activation channels and divide each by its group scale."""
    x = as_array(x)
    _check_plan(x, plan, "activation")
    return x[:, plan.permutation] / plan.channel_divisors()


def apply_perm_to_weight(w, plan: SmoothingPlan) -> np.ndarray:
    """Permute weight channels to match; the weight is never scaled."""
    w = as_array(w)
    _check_plan(w, plan, "weight")
    return w[:, plan.permutation]


def unpermute(m, plan: SmoothingPlan) -> np.ndarray:
    m = as_array(m)
    _check_plan(m, plan, "matrix")
    return m[:, plan.inverse_permutation()]


# ---------------------------------------------------------------------------
# SmoothQuant baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SmoothQuantConfig:
    alpha: float
    x_max: np.ndarray
    w_max: np.ndarray

    def __post_init__(self) -> None:
        x_max = np.asarray(self.x_max, dtype=np.float64).ravel()
        w_max = np.asarray(self.w_max, dtype=np.float64).ravel()
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"migration strength must be in [0, 1], got {self.alpha}")
        if x_max.shape != w_max.shape:
            raise ShapeError("calibration maxima for X and W differ in length")
        if (x_max < 0).any() or (w_max < 0).any():
            raise ValidationError("calibration maxima must be >= 0")
        object.__setattr__(self, "x_max", x_max)
        object.__setattr__(self, "w_max", w_max)

    @classmethod
    def calibrate(cls, x_calib, w, alpha: float = 0.5) -> "SmoothQuantConfig":
        return cls(alpha, channel_absmax(x_calib), channel_absmax(w))


def smoothquant_scales(cfg: SmoothQuantConfig) -> np.ndarray:
    """``max|X_j|**alpha / max|W_j|**(1 - alpha)``; 1 where either max is 0."""
    ok = (cfg.x_max > 0) & (cfg.w_max > 0)
    s = np.ones_like(cfg.x_max)
    s[ok] = cfg.x_max[ok] ** cfg.alpha / cfg.w_max[ok] ** (1.0 - cfg.alpha)
    return s


def smoothquant_apply(x, w, s) -> tuple[np.ndarray, np.ndarray]:
    """Migrate: ``X diag(s)^-1`` and ``W diag(s)`` (so the product is unchanged)."""
    x = as_array(x)
    w = as_array(w)
    s = np.asarray(s, dtype=np.float64).ravel()
    if not (x.shape[1] == w.shape[1] == s.size):
        raise ShapeError(
            f"X has {x.shape[1]} channels, W {w.shape[1]}, scales {s.size}"
        )
    return x / s, w * s
