"""Command-line front end: ``rrsquant {gen,bench,analyze,victims,gemm-check}``.

Every command that writes a report also writes ``<output>.manifest.json``
with the tool version, the fully resolved configuration, the seed, sha256
digests of input files and a timestamp. Data files never contain the
timestamp, so identical flags give byte-identical data.

Exit codes: 0 success, 2 usage, 3 input format, 4 numerical/configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    THREADS_ENV,
    Transform,
    VictimSimConfig,
    mu_report,
    spike_census,
    victim_sim,
)
from .errors import (
    ConfigError,
    RRSError,
    ShapeError,
    TensorFormatError,
    UndefinedMetricError,
    ValidationError,
)
from .gemm import BlockedGemmConfig, Method, MethodConfig, matmul_fused_blocked, matmul_quant_naive, run_method
from .metrics import MuKind
from .quant import GroupScheme, quantize
from .rotation import hadamard, is_power_of_two, less_smooth_probability
from .smooth import apply_perm_to_weight, apply_smooth, build_plan, channel_max_scales
from .tensor import BASE_KINDS, OUTLIER_KINDS, Role, SyntheticSpec, generate, random_layout, read_tensor, write_tensor
from .workloads import CANONICAL_SEED, WORKLOADS, load_workload

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

BENCH_COLUMNS = (
    "method",
    "a_bits",
    "w_bits",
    "L",
    "rel_frob_error",
    "max_abs_error",
    "mu_mean",
    "mu_p99",
    "status",
    "note",
)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _cell(text: str) -> tuple[int, int]:
    try:
        i, j = text.split(",")
        return int(i), int(j)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROW,COL, got {text!r}") from None


def _bits(text: str) -> list[int | None]:
    out: list[int | None] = []
    for v in _str_list(text):
        if v.lower() in ("inf", "none", "fp"):
            out.append(None)
        else:
            try:
                out.append(int(v))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad bit width {v!r}") from None
    return out


def _scheme(text: str) -> GroupScheme:
    if text == "per-tensor":
        return GroupScheme.per_tensor()
    if text == "per-channel":
        return GroupScheme.per_channel()
    if text.startswith("sub-channel:"):
        try:
            return GroupScheme.sub_channel(int(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(
        f"scheme must be per-tensor, per-channel or sub-channel:N, got {text!r}"
    )


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


def _csv_bytes(columns: Sequence[str], rows: Sequence[dict]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue().encode()


def _json_bytes(obj: Any) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n").encode()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v: Any) -> Any:
    if isinstance(v, GroupScheme):
        return str(v)
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return v.item()
    return v


def _write_manifest(out: Path, args: argparse.Namespace, inputs: Sequence[Path], outputs: Sequence[Path]) -> None:
    config = {
        k: _jsonable(v)
        for k, v in sorted(vars(args).items())
        if k not in ("func",)
    }
    manifest = {
        "tool": "rrsquant",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _atomic_write(Path(f"{out}.manifest.json"), _json_bytes(manifest))


def _report(out: Path, columns: Sequence[str], rows: list[dict], args, inputs, extra: dict | None = None) -> None:
    """CSV at ``out``, JSON mirror at ``out`` with suffix ``.json``, plus manifest."""
    out = Path(out)
    json_path = out.with_suffix(".json")
    if json_path == out:
        raise UsageError("report path must not end in .json")
    _atomic_write(out, _csv_bytes(columns, rows))
    payload = {"columns": list(columns), "rows": [{c: _jsonable(r.get(c)) for c in columns} for r in rows]}
    if extra:
        payload.update(_jsonable(extra))
    _atomic_write(json_path, _json_bytes(payload))
    _write_manifest(out, args, inputs, [out, json_path])


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    channels = list(args.channel_idx or [])
    spikes = list(args.spike_at or [])
    if args.channels or args.spikes:
        rc, rs = random_layout(
            args.rows,
            args.cols,
            args.channels or 0,
            args.spikes or 0,
            args.seed,
            spike_tokens=args.spike_tokens,
        )
        channels = sorted(set(channels) | set(rc))
        spikes = sorted(set(spikes) | set(rs))
    spec = SyntheticSpec(
        rows=args.rows,
        cols=args.cols,
        outlier=args.outlier,
        channels=tuple(channels),
        spikes=tuple(spikes),
        magnitude=args.mag,
        sigma=args.sigma,
        base=args.base,
        epsilon=args.epsilon,
        coherent=args.coherent,
        jitter=args.jitter,
        spike_magnitude=args.spike_mag,
        seed=args.seed,
    )
    m = generate(spec)
    write_tensor(m, args.output, dtype_code=0 if args.dtype == "f4" else 1)
    _write_manifest(args.output, args, [], [args.output])
    print(f"wrote {m.rows}x{m.cols} tensor to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_inputs(args) -> tuple[np.ndarray, np.ndarray, list[Path]]:
    if args.x or args.w:
        if not (args.x and args.w):
            raise UsageError("--x and --w must be given together")
        x = np.asarray(read_tensor(args.x, Role.ACTIVATION))
        w = np.asarray(read_tensor(args.w, Role.WEIGHT))
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"activation K={x.shape[1]} but weight K={w.shape[1]}")
        return x, w, [Path(args.x), Path(args.w)]
    wl = load_workload(args.workload, args.seed)
    return wl.x, wl.w, []


def _bench_rows(x: np.ndarray, w: np.ndarray, args) -> list[dict]:
    rows = []
    k = x.shape[1]
    for method in args.methods:
        method = Method(method)
        groups: list[int | None] = list(args.smooth_group) if method in (Method.RS, Method.RRS) else [None]
        for a_bits in args.a_bits:
            for w_bits in args.w_bits:
                for L in groups:
                    row = {"method": method.value, "a_bits": a_bits if a_bits is not None else "inf",
                           "w_bits": w_bits if w_bits is not None else "inf", "L": L}
                    if method in (Method.ROTATE, Method.RRS) and not is_power_of_two(k):
                        row.update(status="skipped", note=f"rotation needs a power-of-two K, got {k}")
                        rows.append(row)
                        continue
                    cfg = MethodConfig(
                        method,
                        a_bits=a_bits,
                        w_bits=w_bits,
                        a_scheme=args.a_scheme,
                        w_scheme=args.w_scheme,
                        smooth_group=L,
                        sq_alpha=args.sq_alpha,
                        mu_kind=args.mu,
                    )
                    res = run_method(x, w, cfg)
                    row.update(
                        rel_frob_error=res.rel_frob_error,
                        max_abs_error=res.max_abs_error,
                        mu_mean=res.mu.mean,
                        mu_p99=res.mu.p99,
                        status="ok",
                        note="",
                    )
                    rows.append(row)
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    for m in args.methods:
        if m not in [v.value for v in Method]:
            raise UsageError(f"unknown method {m!r}; choose from {[v.value for v in Method]}")
    if args.a_group is not None:
        args.a_scheme = GroupScheme.sub_channel(args.a_group)
    if args.w_group is not None:
        args.w_scheme = GroupScheme.sub_channel(args.w_group)
    x, w, inputs = _bench_inputs(args)
    rows = _bench_rows(x, w, args)
    _report(args.output, BENCH_COLUMNS, rows, args, inputs)
    for r in rows:
        err = r.get("rel_frob_error")
        shown = f"{err:.6g}" if err is not None else r["status"]
        print(f"{r['method']:<12} A{r['a_bits']}W{r['w_bits']} L={r['L'] if r['L'] is not None else '-':<5} {shown}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

MU_COLUMNS = ("transform", "mu_kind", "group", "mean", "median", "p99", "n_tokens", "n_zero")
CENSUS_COLUMNS = ("lower", "upper", "count")


def cmd_analyze(args: argparse.Namespace) -> int:
    x = np.asarray(read_tensor(args.input, Role.ACTIVATION))
    for t in args.transforms:
        if t not in [v.value for v in Transform]:
            raise UsageError(f"unknown transform {t!r}; choose from {[v.value for v in Transform]}")
    transforms = [
        t for t in args.transforms
        if args.rotate or Transform(t) not in (Transform.ROTATE, Transform.RRS)
    ]
    report = mu_report(x, transforms, args.mu, args.group)
    rows = [
        {
            "transform": r.transform.value,
            "mu_kind": MuKind(args.mu).value,
            "group": args.group if r.transform in (Transform.RS, Transform.RRS) else None,
            "mean": r.summary.mean,
            "median": r.summary.median,
            "p99": r.summary.p99,
            "n_tokens": r.summary.n_tokens,
            "n_zero": r.summary.n_zero,
        }
        for r in report
    ]
    extra: dict[str, Any] = {}
    if args.census:
        census = spike_census(x, args.census)
        extra["census"] = {
            "columns": list(CENSUS_COLUMNS),
            "rows": [
                {"lower": lo, "upper": hi, "count": c}
                for lo, hi, c in zip(census.edges, census.edges[1:], census.counts)
            ],
            "n_tokens": census.n_tokens,
            "skipped_tokens": list(census.skipped_tokens),
        }
    if args.less_smooth and args.rotate:
        res = less_smooth_probability(x, hadamard(x.shape[1]), args.mu)
        extra["less_smooth"] = {
            "probability": res.probability,
            "n_less_smooth": res.n_less_smooth,
            "n_tokens": res.n_tokens,
            "n_zero": res.n_zero,
        }
    _report(args.output, MU_COLUMNS, rows, args, [Path(args.input)], extra)
    for r in rows:
        print(f"{r['transform']:<7} mean={r['mean']:.4f} median={r['median']:.4f} p99={r['p99']:.4f}")
    if "census" in extra:
        for r in extra["census"]["rows"]:
            print(f"census ({r['lower']:g}, {r['upper']:g}]: {r['count']}")
    if "less_smooth" in extra:
        print(f"less-smooth probability after rotation: {extra['less_smooth']['probability']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# victims
# ---------------------------------------------------------------------------

VICTIM_COLUMNS = ("spike_tokens", "trials", "mean", "std", "median", "p05", "p95")


def cmd_victims(args: argparse.Namespace) -> int:
    if len(args.mag_range) != 2:
        raise UsageError("--mag-range takes LO,HI")
    cfg = VictimSimConfig(
        k=args.k,
        spike_tokens=tuple(args.l),
        spikes_per_token=args.spikes_per_token,
        magnitude_range=tuple(args.mag_range),
        magnitudes=tuple(args.magnitudes) if args.magnitudes else None,
        trials=args.trials,
        seed=args.seed,
    )
    summary = victim_sim(cfg, threads=args.threads)
    rows = [vars(s) for s in summary]
    _report(args.output, VICTIM_COLUMNS, rows, args, [])
    for s in summary:
        print(f"l={s.spike_tokens:<4} mean u={s.mean:.4f} (p05 {s.p05:.4f}, p95 {s.p95:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gemm-check
# ---------------------------------------------------------------------------

GEMM_COLUMNS = ("case", "n", "m", "k", "block", "n_blocks", "rel_deviation")


def gemm_check_cases(n_cases: int, seed: int, bits: int = 4) -> list[dict]:
    """Fused blocked GEMM against the naive group-scaled product on random shapes."""
    rng = np.random.default_rng(seed)
    rows = []
    for case in range(n_cases):
        n, m = (int(v) for v in rng.integers(1, 48, size=2))
        k = int(rng.integers(1, 300))
        shape_kind = case % 3
        if shape_kind == 0:
            block = k  # single block
        elif shape_kind == 1:
            block = int(rng.integers(1, k + 1))
        else:
            block = int(rng.integers(1, max(2, k // 2) + 1))
        x = rng.standard_normal((n, k)) * np.exp(rng.normal(0, 1.5, size=k))
        w = rng.standard_normal((m, k))
        plan = build_plan(channel_max_scales(x), block)
        xq = quantize(apply_smooth(x, plan), bits)
        wq = quantize(apply_perm_to_weight(w, plan), bits)
        fused = matmul_fused_blocked(xq, wq, plan, BlockedGemmConfig(block))
        naive = matmul_quant_naive(xq, wq, plan.channel_divisors())
        denom = np.linalg.norm(naive)
        dev = float(np.linalg.norm(fused - naive) / denom) if denom > 0 else float(np.linalg.norm(fused))
        rows.append(
            {"case": case, "n": n, "m": m, "k": k, "block": block, "n_blocks": plan.n_groups, "rel_deviation": dev}
        )
    return rows


def cmd_gemm_check(args: argparse.Namespace) -> int:
    rows = gemm_check_cases(args.cases, args.seed, args.bits)
    worst = max(r["rel_deviation"] for r in rows)
    if args.output:
        _report(args.output, GEMM_COLUMNS, rows, args, [])
    print(f"{len(rows)} cases, max relative deviation {worst:.3e} (tolerance {args.tol:g})")
    if worst > args.tol:
        print("gemm-check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrsquant",
        description="INT4 quantization experiments with Rotated Runtime Smooth.",
        epilog=f"Set {THREADS_ENV} to choose the default thread count for parallel commands. "
        "Exit codes: 0 ok, 2 usage, 3 input format, 4 numerical/config.",
    )
    parser.add_argument("--version", action="version", version=f"rrsquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic activation tensor file")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--outlier", choices=OUTLIER_KINDS, default="none")
    g.add_argument("--channels", type=int, default=0, metavar="N", help="number of random outlier channels")
    g.add_argument("--channel-idx", type=_int_list, metavar="I,J,...", help="explicit outlier channel indices")
    g.add_argument("--spikes", type=int, default=0, metavar="N", help="number of random spike cells")
    g.add_argument("--spike-tokens", type=int, default=None, metavar="N",
                   help="confine random spikes to N random tokens")
    g.add_argument("--spike-at", type=_cell, action="append", metavar="ROW,COL", help="explicit spike cell (repeatable)")
    g.add_argument("--mag", type=float, default=50.0, help="outlier magnitude multiplier (>= 1)")
    g.add_argument("--spike-mag", type=float, default=None, help="spike multiplier if different from --mag")
    g.add_argument("--sigma", type=float, default=1.0, help="std of the gaussian base")
    g.add_argument("--base", choices=BASE_KINDS, default="gaussian")
    g.add_argument("--epsilon", type=float, default=1.0, help="fill value of the constant base")
    g.add_argument("--coherent", action="store_true", help="fixed-sign, near-constant outliers")
    g.add_argument("--jitter", type=float, default=0.0, help="relative jitter of coherent outliers")
    g.add_argument("--seed", type=_seed, default=CANONICAL_SEED)
    g.add_argument("--dtype", choices=("f4", "f8"), default="f8")
    g.add_argument("-o", "--output", type=Path, required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", help="run quantization methods and report errors")
    b.add_argument("--x", type=Path, help="activation tensor file (N x K)")
    b.add_argument("--w", type=Path, help="weight tensor file (M x K)")
    b.add_argument("--workload", choices=sorted(WORKLOADS), default="channel",
                   help="canonical synthetic workload used when no files are given")
    b.add_argument("--methods", "--method", dest="methods", type=_str_list,
                   default=[m.value for m in Method], help="comma list of methods")
    b.add_argument("--a-bits", type=_bits, default=[4], help="comma list; 16/inf bypasses")
    b.add_argument("--w-bits", type=_bits, default=[4], help="comma list; 16/inf bypasses")
    b.add_argument("--smooth-group", type=_int_list, default=[1], metavar="L,...",
                   help="runtime smoothing group sizes (rs, rrs)")
    b.add_argument("--a-scheme", type=_scheme, default=GroupScheme.per_channel())
    b.add_argument("--w-scheme", type=_scheme, default=GroupScheme.per_channel())
    b.add_argument("--a-group", type=int, default=None, metavar="N",
                   help="shorthand for --a-scheme sub-channel:N")
    b.add_argument("--w-group", type=int, default=None, metavar="N",
                   help="shorthand for --w-scheme sub-channel:N")
    b.add_argument("--sq-alpha", type=float, default=0.5)
    b.add_argument("--mu", choices=[k.value for k in MuKind], default="rms")
    b.add_argument("--seed", type=_seed, default=CANONICAL_SEED)
    b.add_argument("-o", "--output", type=Path, default=Path("bench.csv"))
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze", help="smoothness and spike statistics of a tensor file")
    a.add_argument("--input", type=Path, required=True)
    a.add_argument("--transforms", type=_str_list, default=[t.value for t in Transform])
    a.add_argument("--mu", choices=[k.value for k in MuKind], default="rms")
    a.add_argument("--group", type=int, default=1, help="runtime smoothing group size")
    a.add_argument("--rotate", action=argparse.BooleanOptionalAction, default=True,
                   help="include the rotated transforms (rotate, rrs)")
    a.add_argument("--census", type=_float_list, metavar="T1,T2,...",
                   help="spike census thresholds on |x|/median(|token|)")
    a.add_argument("--less-smooth", action="store_true",
                   help="also report how often rotation makes a token less smooth")
    a.add_argument("-o", "--output", type=Path, default=Path("analyze.csv"))
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("victims", help="Monte Carlo victim simulation")
    v.add_argument("--k", type=int, default=4096)
    v.add_argument("--l", type=_int_list, default=[1, 2, 4, 8, 16], metavar="L,...",
                   help="numbers of spike tokens")
    v.add_argument("--spikes-per-token", type=int, default=8)
    v.add_argument("--mag-range", type=_float_list, default=[100.0, 1000.0], metavar="LO,HI",
                   help="log-uniform spike magnitude range")
    v.add_argument("--magnitudes", type=_float_list, default=None, metavar="M,...",
                   help="explicit spike magnitudes (overrides --mag-range)")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=_seed, default=CANONICAL_SEED)
    v.add_argument("--threads", type=int, default=None, help=f"default: ${THREADS_ENV} or 1")
    v.add_argument("-o", "--output", type=Path, default=Path("victims.csv"))
    v.set_defaults(func=cmd_victims)

    c = sub.add_parser("gemm-check", help="fused blocked GEMM vs naive equivalence on random shapes")
    c.add_argument("--cases", type=int, default=30)
    c.add_argument("--bits", type=int, default=4)
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--seed", type=_seed, default=CANONICAL_SEED)
    c.add_argument("-o", "--output", type=Path, default=None)
    c.set_defaults(func=cmd_gemm_check)
    return parser


def _fail(code: int, msg: str) -> int:
    print(f"rrsquant: error: {msg}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with 2
        return int(exc.code or 0)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (TensorFormatError, ShapeError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_INPUT, f"cannot read {exc.filename}: {exc.strerror}")
    except UndefinedMetricError as exc:
        return _fail(EXIT_NUMERIC, f"undefined metric: {exc}")
    except ConfigError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except ValidationError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except RRSError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
