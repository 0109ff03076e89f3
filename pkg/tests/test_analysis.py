import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrsquant.analysis import (
    THREADS_ENV,
    Transform,
    VictimSimConfig,
    default_threads,
    mu_report,
    spike_census,
    transform_activation,
    victim_sim,
    victim_u,
)
from rrsquant.errors import UndefinedMetricError, UnsupportedDimensionError, ValidationError
from rrsquant.rotation import fwht, hadamard
from rrsquant.smooth import apply_smooth, build_plan, channel_max_scales
from rrsquant.tensor import SyntheticSpec, generate

# --- mu_report ------------------------------------------------------------


def test_flat_matrix_has_unit_mu():
    (row,) = mu_report(np.full((5, 16), 3.0), ["none"])
    assert row.transform is Transform.NONE
    assert row.summary.mean == pytest.approx(1.0) and row.summary.p99 == pytest.approx(1.0)


def test_transform_activation_composition():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 32)) * np.exp(rng.normal(0, 2, 32))
    xr = x @ hadamard(32).matrix
    np.testing.assert_array_equal(transform_activation(x, "none"), x)
    np.testing.assert_array_equal(transform_activation(x, "rotate"), xr)
    np.testing.assert_array_equal(
        transform_activation(x, "rs", 4), apply_smooth(x, build_plan(channel_max_scales(x), 4))
    )
    np.testing.assert_array_equal(
        transform_activation(x, "rrs", 4), apply_smooth(xr, build_plan(channel_max_scales(xr), 4))
    )


def test_zero_tokens_are_excluded_and_all_zero_is_an_error():
    x = np.vstack([np.zeros(8), np.ones(8)])
    rows = mu_report(x)
    assert all(r.summary.n_zero == 1 and r.summary.n_tokens == 1 for r in rows)
    with pytest.raises(UndefinedMetricError):
        mu_report(np.zeros((3, 8)))


def test_rotation_needs_power_of_two():
    with pytest.raises(UnsupportedDimensionError):
        mu_report(np.ones((2, 12)), ["rotate"])
    assert len(mu_report(np.ones((2, 12)), ["none", "rs"])) == 2


def test_l2_kind_is_scaled_rms():
    x = np.random.default_rng(1).standard_normal((10, 64))
    rms = mu_report(x, ["none"], "rms")[0].summary
    l2 = mu_report(x, ["none"], "l2")[0].summary
    assert l2.mean == pytest.approx(rms.mean / 8, rel=1e-12)


# --- spike census ---------------------------------------------------------


def test_census_single_token():
    res = spike_census([[1.0, 1.0, 1.0, 1000.0]], [100])
    assert res.counts == (1,)
    assert res.edges == (100.0, math.inf)


def test_census_flat_token():
    assert spike_census(np.full((3, 8), 2.0), [10, 100, 1000]).counts == (0, 0, 0)


def test_census_three_planted_spikes_constant_base():
    spec = SyntheticSpec(8, 32, "spike", spikes=((0, 1), (3, 3), (7, 30)), magnitude=1000, base="constant")
    res = spike_census(generate(spec), [100])
    assert res.counts == (3,)


def test_census_three_planted_spikes_gaussian_base():
    spec = SyntheticSpec(16, 256, "spike", spikes=((0, 1), (3, 3), (7, 30)), magnitude=1000, coherent=True, seed=4)
    assert spike_census(generate(spec), [100]).counts == (3,)


def test_census_bins_are_left_open_right_closed():
    x = [[1.0] * 7 + [10.0, 100.0, 100.5]]  # median 1
    assert spike_census(x, [10, 100]).counts == (1, 1)


def test_census_skips_zero_median_tokens():
    x = np.array([[0.0, 0.0, 0.0, 5.0], [1.0, 1.0, 1.0, 500.0]])
    res = spike_census(x, [100])
    assert res.skipped_tokens == (0,) and res.n_tokens == 1 and res.counts == (1,)


@pytest.mark.parametrize("thresholds", [[], [10, 10], [100, 10]])
def test_census_threshold_validation(thresholds):
    with pytest.raises(ValidationError):
        spike_census(np.ones((2, 4)), thresholds)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_census_is_invariant_under_token_permutation(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((12, 16)) * np.exp(rng.normal(0, 3, (12, 16)))
    perm = rng.permutation(12)
    assert spike_census(x, [2, 10, 100]).counts == spike_census(x[perm], [2, 10, 100]).counts


# --- victim simulation ----------------------------------------------------


def test_victim_u_hand_example():
    rotated = np.array([[2.0, 0.5, -1.0, 4.0]])
    xs = np.array([0.5, 1.0, 1.0, 0.25])
    assert victim_u(rotated) == pytest.approx(1.0 / np.sqrt(np.mean(xs**2)), rel=1e-15)


def test_single_spike_k4_gives_flat_scale():
    cfg = VictimSimConfig(k=4, spike_tokens=(1,), spikes_per_token=1, magnitudes=(1000.0,), trials=20)
    (s,) = victim_sim(cfg)
    assert s.mean == 1.0 and s.std == 0.0


def test_spike_below_sqrt_k_hits_the_floor():
    cfg = VictimSimConfig(k=64, spike_tokens=(1, 3), spikes_per_token=1, magnitudes=(7.9,), trials=10)
    assert all(s.mean == 1.0 and s.p95 == 1.0 for s in victim_sim(cfg))


def test_zero_magnitude_spikes_have_no_victims():
    cfg = VictimSimConfig(k=256, spike_tokens=(1, 2, 8), spikes_per_token=4, magnitudes=(0.0,), trials=5)
    assert [s.mean for s in victim_sim(cfg)] == [1.0, 1.0, 1.0]


def test_two_spikes_in_one_token_leave_victims():
    # rotated = (O/sqrt(K)) (h_a +- h_b): half the channels cancel to the floor
    k, o = 16, 400.0
    t = np.zeros((1, k))
    t[0, 1], t[0, 2] = o, o
    rotated = np.abs(fwht(t)[0])
    u = victim_u(fwht(t))
    xs = 1.0 / np.maximum(rotated, 1.0)
    assert u == pytest.approx(1 / np.sqrt(np.mean(xs**2)))
    assert u > 1.3


def test_results_do_not_depend_on_thread_count():
    cfg = VictimSimConfig(k=256, spike_tokens=(1, 2, 4), trials=40, seed=3)
    assert victim_sim(cfg, threads=1) == victim_sim(cfg, threads=4)


def test_spike_token_prefix_is_shared_across_sweep():
    full = victim_sim(VictimSimConfig(k=128, spike_tokens=(1, 2, 4), trials=30, seed=8))
    only2 = victim_sim(VictimSimConfig(k=128, spike_tokens=(2,), trials=30, seed=8))
    assert full[1] == only2[0]


def test_summary_statistics_shape():
    out = victim_sim(VictimSimConfig(k=64, spike_tokens=(1, 4), trials=50))
    assert [s.spike_tokens for s in out] == [1, 4]
    for s in out:
        assert s.trials == 50 and s.p05 <= s.median <= s.p95 and s.mean >= 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(k=12),
        dict(spike_tokens=()),
        dict(spike_tokens=(0, 1)),
        dict(trials=0),
        dict(spikes_per_token=0),
        dict(k=8, spikes_per_token=9),
        dict(magnitude_range=(0.0, 10.0)),
        dict(magnitude_range=(10.0, 1.0)),
        dict(magnitudes=()),
        dict(magnitudes=(-1.0,)),
    ],
)
def test_victim_config_validation(kwargs):
    with pytest.raises(ValidationError):
        VictimSimConfig(**kwargs)


def test_thread_env(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert default_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_threads() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    assert default_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ValidationError):
        default_threads()
