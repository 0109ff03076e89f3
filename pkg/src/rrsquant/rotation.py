"""Scaled Sylvester-Hadamard rotations.

``(X R)(W R)^T == X W^T`` because ``R R^T = I``; rotating both operands leaves
the matmul output unchanged while spreading outliers across channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError, UnsupportedDimensionError
from .metrics import MuKind, token_mu
from .tensor import as_array


@dataclass(frozen=True, eq=False)
class HadamardRotation:
    dim: int
    matrix: np.ndarray
    construction: str = "sylvester"

    def __repr__(self) -> str:
        return f"HadamardRotation(dim={self.dim})"


def is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def hadamard(k: int) -> HadamardRotation:
    """Sylvester Hadamard matrix of order ``k`` scaled by ``1/sqrt(k)``."""
    k = int(k)
    if not is_power_of_two(k):
        raise UnsupportedDimensionError(
            f"Hadamard rotation needs a power-of-two dimension, got K={k}"
        )
    return _hadamard_cached(k)


@lru_cache(maxsize=16)
def _hadamard_cached(k: int) -> HadamardRotation:
    h = np.ones((1, 1))
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    r = h / np.sqrt(k)
    r.setflags(write=False)
    return HadamardRotation(k, r)


def fwht(x) -> np.ndarray:
    """Normalised fast Walsh-Hadamard transform along the last axis.

    Equals ``x @ hadamard(K).matrix`` (the Sylvester matrix is symmetric) in
    O(K log K) per row.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    k = x.shape[-1]
    if not is_power_of_two(k):
        raise UnsupportedDimensionError(
            f"Hadamard rotation needs a power-of-two dimension, got K={k}"
        )
    lead = x.shape[:-1]
    h = 1
    while h < k:
        y = x.reshape(*lead, k // (2 * h), 2, h)
        a = y[..., 0, :].copy()
        b = y[..., 1, :]
        y[..., 0, :] += b
        y[..., 1, :] = a - b
        h *= 2
    return x / np.sqrt(k)


def _check_dim(m: np.ndarray, rot: HadamardRotation, what: str) -> None:
    if m.shape[1] != rot.dim:
        raise ShapeError(f"{what} has {m.shape[1]} columns, rotation is {rot.dim}-dim")


def rotate_activation(x, rot: HadamardRotation) -> np.ndarray:
    """``X R``."""
    x = as_array(x)
    _check_dim(x, rot, "activation")
    return x @ rot.matrix


def rotate_weight(w, rot: HadamardRotation) -> np.ndarray:
    """Weight-side partner: ``(R^T W^T)^T = W R``."""
    w = as_array(w)
    _check_dim(w, rot, "weight")
    return w @ rot.matrix


@dataclass(frozen=True)
class LessSmoothResult:
    probability: float
    n_less_smooth: int
    n_tokens: int
    n_zero: int


def less_smooth_probability(
    x, rot: HadamardRotation, kind: MuKind | str = MuKind.RMS
) -> LessSmoothResult:
    """Fraction of (nonzero) tokens whose mu strictly increases under ``rot``."""
    x = as_array(x)
    before = token_mu(x, kind)
    after = token_mu(rotate_activation(x, rot), kind)
    valid = ~np.isnan(before)
    n = int(valid.sum())
    worse = int((after[valid] > before[valid]).sum())
    return LessSmoothResult(
        probability=worse / n if n else float("nan"),
        n_less_smooth=worse,
        n_tokens=n,
        n_zero=int(x.shape[0] - n),
    )
