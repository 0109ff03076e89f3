"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records a single PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import time
from pathlib import Path

import numpy as np
import pytest

from rrsquant.analysis import VictimSimConfig, mu_report, victim_sim
from rrsquant.cli import main
from rrsquant.gemm import BlockedGemmConfig, Method, MethodConfig, matmul_fused_blocked, matmul_quant_naive, run_method
from rrsquant.metrics import MuKind, mu
from rrsquant.quant import GroupScheme, dequantize, quantize
from rrsquant.rotation import hadamard, less_smooth_probability, rotate_activation, rotate_weight
from rrsquant.smooth import apply_perm_to_weight, apply_smooth, build_plan, channel_max_scales
from rrsquant.tensor import SyntheticSpec, generate, random_layout
from rrsquant.workloads import channel_workload, spike_workload

SWEEP_L = (1, 32, 64, 128, 256)


@pytest.fixture(scope="module")
def channel_wl():
    return channel_workload()


@pytest.fixture(scope="module")
def spike_wl():
    return spike_workload()


def _mean_mu(x):
    return {r.transform.value: r.summary.mean for r in mu_report(x)}


def test_c01_rotation_equivalence(acceptance):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for i in range(50):
        k = (16, 64, 256, 1024)[i % 4]
        n, m = (int(v) for v in rng.integers(1, 65, size=2))
        x = rng.standard_normal((n, k)) * np.exp(rng.normal(0, 2, k))
        w = rng.standard_normal((m, k))
        r = hadamard(k)
        y = x @ w.T
        yr = rotate_activation(x, r) @ rotate_weight(w, r).T
        worst = max(worst, np.linalg.norm(yr - y) / np.linalg.norm(y))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    acceptance(1, "rotation equivalence, 50 pairs", ok, f"max rel {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_c02_transformation_equivalence(acceptance):
    rng = np.random.default_rng(102)
    worst = 0.0
    for i in range(20):
        k = int(2 ** rng.integers(2, 9))
        x = rng.standard_normal((int(rng.integers(1, 40)), k)) * np.exp(rng.normal(0, 2, k))
        w = rng.standard_normal((int(rng.integers(1, 40)), k))
        group = int(rng.integers(1, k + 1))
        for method in Method:
            cfg = MethodConfig(method, a_bits=None, w_bits=None,
                               smooth_group=group if method in (Method.RS, Method.RRS) else None)
            worst = max(worst, run_method(x, w, cfg).rel_frob_error)
    ok = worst <= 1e-10
    acceptance(2, "bypass-mode equivalence, 5 methods x 20 instances", ok, f"max rel {worst:.2e}")
    assert ok


def test_c03_quantization_round_trip_bound(acceptance):
    rng = np.random.default_rng(103)
    violations = 0
    groups = 0
    worst = 0.0
    for bits in (4, 8):
        for _ in range(500):
            width = int(rng.integers(1, 129))
            kind = rng.integers(3)
            if kind == 0:
                g = rng.standard_normal(width)
            elif kind == 1:
                g = rng.standard_normal(width) * np.exp(rng.normal(0, 4, width))
            else:
                # exact multiples of a scale, to exercise ties
                step = 2.0 ** int(rng.integers(-4, 4))
                g = rng.integers(-4 * 2 ** bits, 4 * 2 ** bits, width) * step / 2
            q = quantize(g[None, :], bits, GroupScheme.per_channel())
            half = q.scales[0, 0] / 2
            err = np.abs(g - dequantize(q)[0])
            violations += int(np.sum(err > half))
            worst = max(worst, float(err.max() / half - 1))
            groups += 1
    ok = violations == 0 and groups == 1000
    acceptance(3, "round-trip |x - deq| <= scale/2", ok,
               f"{groups} groups, {violations} violations, max excess {max(worst, 0):.1e} of scale/2")
    assert ok


def test_c04_fused_vs_naive(acceptance):
    rng = np.random.default_rng(104)
    worst = 0.0
    ragged = single = 0
    for case in range(30):
        n, m = (int(v) for v in rng.integers(1, 65, size=2))
        k = int(rng.integers(2, 513))
        if case % 5 == 0:
            block = k + int(rng.integers(0, 3))  # one block covers everything
        else:
            block = int(rng.integers(1, k))
        ragged += k % block != 0
        single += block >= k
        x = rng.standard_normal((n, k)) * np.exp(rng.normal(0, 2, k))
        w = rng.standard_normal((m, k))
        plan = build_plan(channel_max_scales(x), block)
        xq = quantize(apply_smooth(x, plan), 4)
        wq = quantize(apply_perm_to_weight(w, plan), 4)
        fused = matmul_fused_blocked(xq, wq, plan, BlockedGemmConfig(block))
        naive = matmul_quant_naive(xq, wq, plan.channel_divisors())
        worst = max(worst, np.linalg.norm(fused - naive) / np.linalg.norm(naive))
    ok = worst <= 1e-9 and ragged > 0 and single > 0
    acceptance(4, "fused blocked GEMM vs naive, 30 cases", ok,
               f"max rel {worst:.2e}, {ragged} ragged, {single} single-block")
    assert ok


def test_c05_mu_bounds_and_scale_invariance(acceptance):
    rng = np.random.default_rng(105)
    bound_fail = inv_fail = 0
    worst = 0.0
    for i in range(10_000):
        k = int(rng.integers(1, 257))
        kind = i % 4
        if kind == 0:
            t = rng.standard_normal(k)
        elif kind == 1:
            t = rng.standard_normal(k) * np.exp(rng.normal(0, 5, k))
        elif kind == 2:
            t = np.zeros(k)
            t[rng.integers(k)] = rng.normal()
            t[0] += 1e-3
        else:
            t = np.full(k, rng.normal()) + 1e-9
        m = mu(t, MuKind.RMS)
        if not (1 - 1e-12 <= m <= np.sqrt(k) * (1 + 1e-12)):
            bound_fail += 1
        c = float(rng.choice([-1, 1]) * np.exp(rng.uniform(-20, 20)))
        dev = abs(mu(c * t) - m) / m
        worst = max(worst, dev)
        inv_fail += dev > 1e-12
    ok = bound_fail == 0 and inv_fail == 0
    acceptance(5, "1 <= mu_rms <= sqrt(K), scale invariance", ok,
               f"10000 tokens, {bound_fail} bound / {inv_fail} invariance failures, max dev {worst:.1e}")
    assert ok


def test_c06_rotation_less_smooth_trend(acceptance):
    wins = 0
    r = hadamard(256)
    for seed in range(20):
        gauss = generate(SyntheticSpec(512, 256, seed=seed))
        channels, _ = random_layout(512, 256, 8, 0, seed)
        outl = generate(SyntheticSpec(512, 256, "channel", channels, magnitude=50, seed=seed))
        wins += less_smooth_probability(gauss, r).probability > less_smooth_probability(outl, r).probability
    ok = wins >= 18
    acceptance(6, "P(less smooth) gaussian > channel outliers", ok, f"{wins}/20 seeds")
    assert ok


def test_c07_mu_orderings(acceptance, channel_wl, spike_wl):
    c = _mean_mu(channel_wl.x)
    s = _mean_mu(spike_wl.x)
    chan_ok = c["rrs"] <= c["rs"] < c["rotate"] < c["none"]
    spike_ok = s["rrs"] < s["rotate"] < s["rs"]
    ok = chan_ok and spike_ok
    detail = (
        "channel rrs {rrs:.3f} rs {rs:.3f} rotate {rotate:.3f} none {none:.3f}".format(**c)
        + "; spike rrs {rrs:.3f} rotate {rotate:.3f} rs {rs:.3f}".format(**s)
    )
    acceptance(7, "mean mu orderings", ok, detail)
    assert ok


def test_c08_victim_effect_error(acceptance, spike_wl):
    rs = run_method(spike_wl.x, spike_wl.w, MethodConfig("rs", smooth_group=1)).rel_frob_error
    rrs = run_method(spike_wl.x, spike_wl.w, MethodConfig("rrs", smooth_group=1)).rel_frob_error
    ok = rs >= 1.2 * rrs
    acceptance(8, "error(RS) >= 1.2 x error(RRS) on spikes", ok,
               f"RS {rs:.4f}, RRS {rrs:.4f}, ratio {rs / rrs:.3f}")
    assert ok


def test_c09_victim_non_monotonicity(acceptance):
    out = {s.spike_tokens: s.mean for s in victim_sim(VictimSimConfig(k=4096, spike_tokens=(1, 2, 4, 8, 16),
                                                                     trials=1000))}
    ok = out[2] > out[1] and out[2] > out[16]
    acceptance(9, "victim u peaks at two spike tokens", ok,
               ", ".join(f"u({l})={u:.2f}" for l, u in out.items()))
    assert ok


def test_c10_group_size_sweep(acceptance, channel_wl):
    rs = [run_method(channel_wl.x, channel_wl.w, MethodConfig("rs", smooth_group=L)).rel_frob_error for L in SWEEP_L]
    rrs = [run_method(channel_wl.x, channel_wl.w, MethodConfig("rrs", smooth_group=L)).rel_frob_error
           for L in SWEEP_L]
    monotone = all(a <= b for a, b in zip(rs, rs[1:]))
    spread = (max(rrs) - min(rrs)) / min(rrs)
    ok = monotone and spread < 0.05
    acceptance(10, "RS error non-decreasing in L, RRS flat", ok,
               "RS " + " ".join(f"{e:.4f}" for e in rs) + f"; RRS spread {spread:.1%}")
    assert ok


def _run_all_commands(workdir: Path) -> None:
    cmds = [
        ["gen", "--rows", "64", "--cols", "128", "--outlier", "mixed", "--channels", "3", "--spikes", "5",
         "--coherent", "--jitter", "0.1", "-o", "x.rrst"],
        ["gen", "--rows", "32", "--cols", "128", "--seed", "9", "-o", "w.rrst"],
        ["bench", "--x", "x.rrst", "--w", "w.rrst", "--smooth-group", "1,16", "-o", "bench.csv"],
        ["bench", "--workload", "spike", "--methods", "rs,rrs", "-o", "bench_spike.csv"],
        ["analyze", "--input", "x.rrst", "--census", "10,100", "--less-smooth", "-o", "analyze.csv"],
        ["victims", "--k", "512", "--trials", "200", "--threads", "3", "-o", "victims.csv"],
        ["gemm-check", "--cases", "10", "-o", "gemm.csv"],
    ]
    for argv in cmds:
        assert main(argv) == 0, argv


def test_c11_cli_reproducibility(acceptance, tmp_path, monkeypatch):
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        monkeypatch.chdir(d)
        _run_all_commands(d)
        files = sorted(p for p in d.iterdir() if not p.name.endswith(".manifest.json"))
        digests.append({p.name: p.read_bytes() for p in files})
    same = digests[0] == digests[1]
    ok = same and len(digests[0]) >= 12
    acceptance(11, "CLI outputs byte-identical across runs", ok,
               f"{len(digests[0])} data files compared")
    assert ok
