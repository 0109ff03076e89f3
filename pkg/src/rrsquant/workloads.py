"""Canonical seeded workloads used by the benchmarks and trend checks.

``channel``: gaussian activations with a set of massive channels that keep a
fixed sign and near-constant magnitude across tokens (QKV/up/gate-like).

``spike``: down-projector-like activations. Half of the tokens carry a few
spikes far above the token's other values, on top of a mild channel-wise
background.

Weights are plain gaussian in both cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor import SyntheticSpec, generate, random_layout

CANONICAL_SEED = 0
_WEIGHT_STREAM = 0x9E3779B9


@dataclass(frozen=True, eq=False)
class Workload:
    name: str
    x: np.ndarray
    w: np.ndarray
    spec: SyntheticSpec


def _weight(rows: int, cols: int, seed: int) -> np.ndarray:
    spec = SyntheticSpec(rows, cols, seed=(seed + _WEIGHT_STREAM) % 2**64)
    return np.asarray(generate(spec))


def channel_spec(
    seed: int = CANONICAL_SEED,
    rows: int = 256,
    cols: int = 4096,
    n_channels: int = 64,
    magnitude: float = 20.0,
    jitter: float = 0.2,
) -> SyntheticSpec:
    channels, _ = random_layout(rows, cols, n_channels, 0, seed)
    return SyntheticSpec(
        rows,
        cols,
        "channel",
        channels,
        magnitude=magnitude,
        coherent=True,
        jitter=jitter,
        seed=seed,
    )


def spike_spec(
    seed: int = CANONICAL_SEED,
    rows: int = 256,
    cols: int = 1024,
    n_channels: int = 16,
    channel_magnitude: float = 10.0,
    spike_tokens: int = 128,
    spikes_per_token: int = 4,
    spike_magnitude: float = 50.0,
    jitter: float = 0.2,
) -> SyntheticSpec:
    channels, spikes = random_layout(
        rows, cols, n_channels, spike_tokens * spikes_per_token, seed, spike_tokens=spike_tokens
    )
    return SyntheticSpec(
        rows,
        cols,
        "mixed",
        channels,
        spikes,
        magnitude=channel_magnitude,
        spike_magnitude=spike_magnitude,
        coherent=True,
        jitter=jitter,
        seed=seed,
    )


def channel_workload(seed: int = CANONICAL_SEED, out_features: int = 256) -> Workload:
    spec = channel_spec(seed)
    return Workload("channel", np.asarray(generate(spec)), _weight(out_features, spec.cols, seed), spec)


def spike_workload(seed: int = CANONICAL_SEED, out_features: int = 256) -> Workload:
    spec = spike_spec(seed)
    return Workload("spike", np.asarray(generate(spec)), _weight(out_features, spec.cols, seed), spec)


WORKLOADS = {"channel": channel_workload, "spike": spike_workload}


def load_workload(name: str, seed: int = CANONICAL_SEED) -> Workload:
    try:
        factory = WORKLOADS[name]
    except KeyError:
        raise ValidationError(
            f"unknown workload {name!r}; choose from {sorted(WORKLOADS)}"
        ) from None
    return factory(seed)
