"""Outlier and smoothness diagnostics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError
from .gemm import MuSummary
from .metrics import MuKind, mu, token_mu
from .rotation import fwht, hadamard, is_power_of_two, rotate_activation
from .smooth import apply_smooth, build_plan, channel_max_scales
from .tensor import as_array

__all__ = [
    "MuKind",
    "mu",
    "token_mu",
    "Transform",
    "transform_activation",
    "MuReportRow",
    "mu_report",
    "CensusResult",
    "spike_census",
    "VictimSimConfig",
    "VictimSummary",
    "victim_sim",
    "default_threads",
]

THREADS_ENV = "RRSQUANT_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    return max(1, n)


class Transform(str, Enum):
    NONE = "none"
    ROTATE = "rotate"
    RS = "rs"
    RRS = "rrs"


def transform_activation(x, transform: Transform | str, group_size: int = 1) -> np.ndarray:
    """The activation exactly as the quantizer would see it under ``transform``."""
    transform = Transform(transform)
    x = as_array(x)
    if transform in (Transform.ROTATE, Transform.RRS):
        x = rotate_activation(x, hadamard(x.shape[1]))
    if transform in (Transform.RS, Transform.RRS):
        x = apply_smooth(x, build_plan(channel_max_scales(x), group_size))
    return x


@dataclass(frozen=True)
class MuReportRow:
    transform: Transform
    summary: MuSummary


def mu_report(
    x,
    transforms: Iterable[Transform | str] = tuple(Transform),
    kind: MuKind | str = MuKind.RMS,
    group_size: int = 1,
) -> list[MuReportRow]:
    """Per-transform distribution of token mu. All-zero tokens are excluded
    and counted; a matrix with no nonzero token is an error."""
    x = as_array(x)
    rows = []
    for t in transforms:
        vals = token_mu(transform_activation(x, t, group_size), kind)
        if np.isnan(vals).all():
            raise UndefinedMetricError(
                "mu is undefined: every token of the activation is all-zero"
            )
        rows.append(MuReportRow(Transform(t), MuSummary.of(vals)))
    return rows


@dataclass(frozen=True)
class CensusResult:
    """``counts[b]`` counts elements with ``edges[b] < ratio <= edges[b + 1]``."""

    edges: tuple[float, ...]
    counts: tuple[int, ...]
    n_tokens: int
    skipped_tokens: tuple[int, ...]


def spike_census(x, thresholds: Sequence[float]) -> CensusResult:
    """Histogram of ``|x| / median(|t|)`` over all tokens, above the first threshold.

    Thresholds must be strictly increasing; the last bin is open-ended.
    Tokens whose median absolute value is zero are skipped and listed.
    """
    x = as_array(x)
    edges = [float(t) for t in thresholds]
    if not edges:
        raise ValidationError("need at least one threshold")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValidationError("thresholds must be strictly increasing")
    mag = np.abs(x)
    med = np.median(mag, axis=1)
    skipped = np.flatnonzero(med == 0)
    ok = med > 0
    ratios = mag[ok] / med[ok, None]
    bounds = edges + [np.inf]
    counts = tuple(
        int(((ratios > lo) & (ratios <= hi)).sum()) for lo, hi in zip(bounds, bounds[1:])
    )
    return CensusResult(tuple(bounds), counts, int(ok.sum()), tuple(int(i) for i in skipped))


# ---------------------------------------------------------------------------
# victim simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VictimSimConfig:
    """Monte Carlo set-up for the smoothed-normal-token statistic ``u``.

    Each trial draws ``max(spike_tokens)`` tokens with ``spikes_per_token``
    spikes at distinct channels. Spike magnitudes come from ``magnitudes``
    (uniform choice) when given, else log-uniform over ``magnitude_range``;
    signs are random. Normal values are 1 and enter only through the floor of
    the smoothing scale.
    """

    k: int = 4096
    spike_tokens: tuple[int, ...] = (1, 2, 4, 8, 16)
    spikes_per_token: int = 8
    magnitude_range: tuple[float, float] = (100.0, 1000.0)
    magnitudes: tuple[float, ...] | None = None
    trials: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "spike_tokens", tuple(int(v) for v in self.spike_tokens))
        if not is_power_of_two(self.k):
            raise ValidationError(f"K must be a power of two, got {self.k}")
        if not self.spike_tokens or min(self.spike_tokens) < 1:
            raise ValidationError("every spike-token count must be >= 1")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if not 1 <= self.spikes_per_token <= self.k:
            raise ValidationError(f"spikes_per_token must be in [1, {self.k}]")
        lo, hi = self.magnitude_range
        if self.magnitudes is None and not 0 < lo <= hi:
            raise ValidationError("magnitude_range must satisfy 0 < lo <= hi")
        if self.magnitudes is not None:
            mags = tuple(float(m) for m in self.magnitudes)
            if not mags or min(mags) < 0:
                raise ValidationError("magnitudes must be a non-empty list of values >= 0")
            object.__setattr__(self, "magnitudes", mags)


@dataclass(frozen=True)
class VictimSummary:
    spike_tokens: int
    trials: int
    mean: float
    std: float
    median: float
    p05: float
    p95: float


def victim_u(rotated_spikes: np.ndarray) -> float:
    """``u`` of the all-ones normal token after smoothing.

    ``scale_k = max(1, max_t |rotated_spikes[t, k]|)``, ``x = 1 / scale``,
    ``u = max(x) / RMS(x)``.
    """
    scale = np.maximum(1.0, np.abs(rotated_spikes).max(axis=0))
    xs = 1.0 / scale
    return float(xs.max() / np.sqrt(np.mean(xs * xs)))


def _spike_tokens(cfg: VictimSimConfig, rng: np.random.Generator, n_tokens: int) -> np.ndarray:
    toks = np.zeros((n_tokens, cfg.k))
    for t in range(n_tokens):
        idx = rng.choice(cfg.k, size=cfg.spikes_per_token, replace=False)
        if cfg.magnitudes is not None:
            mags = rng.choice(np.asarray(cfg.magnitudes), size=idx.size)
        else:
            lo, hi = cfg.magnitude_range
            mags = np.exp(rng.uniform(np.log(lo), np.log(hi), size=idx.size))
        signs = rng.choice([-1.0, 1.0], size=idx.size)
        toks[t, idx] = signs * mags
    return toks


def _trial(cfg: VictimSimConfig, trial: int) -> list[float]:
    # stream depends only on (seed, trial): thread count cannot change results,
    # and the l-token prefix is shared across the sweep
    rng = np.random.default_rng([cfg.seed, trial])
    rotated = fwht(_spike_tokens(cfg, rng, max(cfg.spike_tokens)))
    return [victim_u(rotated[:l]) for l in cfg.spike_tokens]


def victim_sim(cfg: VictimSimConfig, threads: int | None = None) -> list[VictimSummary]:
    threads = default_threads() if threads is None else max(1, int(threads))
    trials = range(cfg.trials)
    if threads == 1:
        us = [_trial(cfg, i) for i in trials]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            us = list(pool.map(lambda i: _trial(cfg, i), trials))
    table = np.asarray(us)  # trials x len(spike_tokens)
    out = []
    for col, l in enumerate(cfg.spike_tokens):
        v = table[:, col]
        out.append(
            VictimSummary(
                spike_tokens=l,
                trials=cfg.trials,
                mean=float(v.mean()),
                std=float(v.std()),
                median=float(np.median(v)),
                p05=float(np.percentile(v, 5)),
                p95=float(np.percentile(v, 95)),
            )
        )
    return out
