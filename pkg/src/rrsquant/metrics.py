"""Token smoothness metric: absmax over RMS (or over the L2 norm)."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import UndefinedMetricError


class MuKind(str, Enum):
    RMS = "rms"
    L2 = "l2"


def mu(t, kind: MuKind | str = MuKind.RMS) -> float:
    """Smoothness of a single token; lower is easier to quantize."""
    t = np.asarray(t, dtype=np.float64).ravel()
    vals = token_mu(t[None, :], kind)
    if np.isnan(vals[0]):
        raise UndefinedMetricError("mu is undefined for an all-zero token")
    return float(vals[0])


def token_mu(x, kind: MuKind | str = MuKind.RMS) -> np.ndarray:
    """Row-wise mu of a 2-D array; all-zero rows give NaN."""
    kind = MuKind(kind)
    x = np.asarray(x, dtype=np.float64)
    absmax = np.abs(x).max(axis=1)
    # rescale by absmax first so the norm cannot overflow or underflow
    safe = np.where(absmax > 0, absmax, 1.0)
    norm = np.linalg.norm(x / safe[:, None], axis=1)
    if kind is MuKind.RMS:
        norm = norm / np.sqrt(x.shape[1])
    out = np.full(x.shape[0], np.nan)
    nz = absmax > 0
    out[nz] = 1.0 / norm[nz]
    return out
