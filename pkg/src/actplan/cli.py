"""Command line front end.

Exit codes: 0 on success, 1 on bad input (parse or validation failures),
2 when the requested configuration does not fit in the memory budget.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .charts import line_chart
from .codec import PER_CHANNEL, Scheme, SchemeSpec, measure_codec
from .errors import (
    ActplanError,
    InfeasibleError,
    InfeasiblePlanError,
    ParseError,
)
from .evolve import DEFAULT_TRACKED_KINDS, TrackingSchedule, evolution_csv_rows, run_evolution
from .planner import bandwidths, load_plan, save_plan, solve
from .profiles import load_profile, scale_profile
from .simulate import (
    STRATEGIES,
    DriftRegime,
    drift_csv_rows,
    generate_drift,
    max_feasible_batch,
    plan_for_strategy,
    simulate_step,
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INFEASIBLE = 2

_SIZE_SUFFIXES = {"B": 1, "KiB": 1024, "MiB": 1024**2, "GiB": 1024**3}


class _Parser(argparse.ArgumentParser):
    """argparse variant that raises instead of calling sys.exit."""

    def error(self, message):  # noqa: D102 - argparse hook
        raise ParseError(message)


def parse_size(text: str) -> int:
    """Parse a byte size like '96MiB' or '4096' into an exact integer."""
    stripped = text.strip()
    factor = 1
    digits = stripped
    for suffix in sorted(_SIZE_SUFFIXES, key=len, reverse=True):
        if stripped.endswith(suffix):
            digits = stripped[: -len(suffix)].strip()
            factor = _SIZE_SUFFIXES[suffix]
            break
    if not digits.isdigit():
        raise ParseError(f"invalid size {text!r}: expected INTEGER[B|KiB|MiB|GiB]")
    value = int(digits) * factor
    if value <= 0:
        raise ParseError(f"invalid size {text!r}: must be positive")
    return value


def parse_batches(text: str) -> list[int]:
    """Parse 'A:B' (inclusive range) or a comma list into sorted unique batches."""
    try:
        if ":" in text:
            lo_s, hi_s = text.split(":", 1)
            lo, hi = int(lo_s), int(hi_s)
            if lo < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        values = sorted({int(part) for part in text.split(",")})
        if not values or values[0] < 1:
            raise ValueError
        return values
    except ValueError:
        raise ParseError(f"invalid batch list {text!r}: expected A:B or comma-separated integers") from None


def _load(args):
    profile = load_profile(args.profile)
    if args.budget is not None:
        profile = replace(profile, mem_budget_bytes=args.budget)
    return profile


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_CHOICE_NAMES = {0: "recompute", 1: "compress", 2: "retain"}


def cmd_plan(args) -> int:
    profile = _load(args)
    plan = solve(profile)
    out = _outdir(args)
    save_plan(plan, out / "plan.json")
    mib = 1024**2
    print(
        f"plan: objective {plan.objective_ms:g} ms/block, "
        f"activations {plan.activation_bytes / mib:.1f} MiB, "
        f"total {plan.total_bytes / mib:.1f} MiB of {profile.mem_budget_bytes / mib:.1f} MiB budget"
    )
    for op, choice in zip(profile.operators, plan.choices):
        print(f"  op {op.id:>2} {op.name:<24} {_CHOICE_NAMES[choice]}")
    print(f"wrote {out / 'plan.json'}")
    return EXIT_OK


def cmd_bandwidth(args) -> int:
    profile = _load(args)
    out = _outdir(args)
    rows = ["operator_id,name,recompute_mib_per_ms,compress_mib_per_ms,preferred"]
    print(f"{'op':>3} {'name':<24} {'recompute':>12} {'compress':>12} preferred")
    for bw in bandwidths(profile):
        rec = "" if bw.recompute_mib_per_ms is None else repr(bw.recompute_mib_per_ms)
        com = "" if bw.compress_mib_per_ms is None else repr(bw.compress_mib_per_ms)
        pref = "" if bw.preferred is None else _CHOICE_NAMES[bw.preferred]
        rows.append(f"{bw.op_id},{bw.name},{rec},{com},{pref}")
        rec_disp = "-" if not rec else f"{bw.recompute_mib_per_ms:.1f}"
        com_disp = "-" if not com else f"{bw.compress_mib_per_ms:.1f}"
        print(f"{bw.op_id:>3} {bw.name:<24} {rec_disp:>12} {com_disp:>12} {pref or '-'}")
    _write(out / "bandwidths.csv", rows)
    print(f"wrote {out / 'bandwidths.csv'}")
    return EXIT_OK


def _run_drift_section(profile, args, out: Path) -> None:
    """Shared by simulate (--iterations > 0) and evolve."""
    tracked_ids = tuple(op.id for op in profile.operators if op.kind in DEFAULT_TRACKED_KINDS)
    if not tracked_ids:
        raise ParseError("profile has no operators with drift-tracked kinds")
    drift = generate_drift(args.seed, args.iterations, args.channels, DriftRegime(), tracked_ids)
    schedule = TrackingSchedule(max_interval=args.max_interval)
    result = run_evolution(profile, args.iterations, drift, schedule, batch=args.batch)

    _write(out / "evolution.csv", evolution_csv_rows(result.steps))
    _write(out / "drift.csv", drift_csv_rows(drift))
    resolved = sum(1 for step in result.steps if step.resolved)
    changed = sum(1 for step in result.steps if step.changed)
    print(f"evolution: {args.iterations} iterations, {resolved} re-solves, {changed} plan changes")
    print(
        f"adaptive {result.adaptive_mean_throughput:.2f} samples/s vs "
        f"static {result.static_mean_throughput:.2f} "
        f"({result.improvement_ratio:.4f}x)"
    )
    print(f"wrote {out / 'evolution.csv'} and {out / 'drift.csv'}")
    if args.charts:
        its = [float(i) for i in range(1, drift.iterations + 1)]
        series = [
            (f"op {op_id}", its, [float(c) for c in drift.counts[op_id]])
            for op_id in drift.operator_ids
        ]
        (out / "drift.svg").write_text(
            line_chart("Outlier channels over training", "iteration", "outlier channels", series),
            encoding="utf-8",
        )
        obj_xs: list[float] = []
        obj_ys: list[float] = []
        for step in result.steps:
            obj_xs.append(float(step.iteration))
            obj_ys.append(step.objective_ms_new if step.changed else step.objective_ms_old)
        (out / "objective.svg").write_text(
            line_chart("Plan objective over training", "iteration", "ms per block", [("objective", obj_xs, obj_ys)]),
            encoding="utf-8",
        )
        print(f"wrote {out / 'drift.svg'} and {out / 'objective.svg'}")


def cmd_simulate(args) -> int:
    profile = _load(args)
    batches = parse_batches(args.batches)
    out = _outdir(args)
    rows = ["batch,strategy,iteration_ms,overhead_ms,peak_bytes,throughput"]
    by_strategy: dict[str, tuple[list[float], list[float]]] = {}

    if args.plan is not None:
        fixed = load_plan(args.plan)
        labelled = [("plan-file", None)]
    else:
        fixed = None
        labelled = [(name, name) for name in sorted(STRATEGIES)]

    for batch in batches:
        scaled = scale_profile(profile, batch)
        for label, strategy in labelled:
            if fixed is not None:
                # An explicit plan file must fit at every requested batch.
                report = simulate_step(profile, fixed, batch, util_k=args.util_k)
            else:
                try:
                    plan = plan_for_strategy(scaled, strategy)
                    report = simulate_step(profile, plan, batch, util_k=args.util_k)
                except (InfeasibleError, InfeasiblePlanError):
                    continue
            rows.append(
                f"{report.batch},{label},{report.iteration_ms!r},{report.overhead_ms!r},"
                f"{report.peak_bytes},{report.throughput_samples_per_s!r}"
            )
            xs, ys = by_strategy.setdefault(label, ([], []))
            xs.append(float(batch))
            ys.append(report.throughput_samples_per_s)

    _write(out / "steps.csv", rows)
    print(f"wrote {out / 'steps.csv'} ({len(rows) - 1} rows)")
    for label, (xs, ys) in sorted(by_strategy.items()):
        peak = max(ys)
        print(f"  {label:<16} best {peak:.1f} samples/s at batch {int(xs[ys.index(peak)])}")
    if args.charts and by_strategy:
        series = [(label, xs, ys) for label, (xs, ys) in sorted(by_strategy.items())]
        (out / "throughput.svg").write_text(
            line_chart("Throughput by strategy", "batch size", "samples/s", series),
            encoding="utf-8",
        )
        print(f"wrote {out / 'throughput.svg'}")
    if args.iterations > 0:
        _run_drift_section(profile, args, out)
    return EXIT_OK


def cmd_max_batch(args) -> int:
    profile = _load(args)
    out = _outdir(args)
    rows = ["strategy,max_batch"]
    results: dict[str, int] = {}
    for strategy in sorted(STRATEGIES):
        results[strategy] = max_feasible_batch(profile, strategy)
        rows.append(f"{strategy},{results[strategy]}")
    _write(out / "max_batch.csv", rows)
    baseline = results["retain-all"]
    for strategy in sorted(STRATEGIES):
        suffix = ""
        if baseline > 0 and strategy != "retain-all":
            suffix = f"  ({results[strategy] / baseline:.1f}x retain-all)"
        print(f"{strategy:<16} {results[strategy]:>6}{suffix}")
    print(f"wrote {out / 'max_batch.csv'}")
    return EXIT_OK


def _bench_cases(rows: int, cols: int, seed: int):
    rng = np.random.default_rng(seed)
    dense = rng.normal(size=(rows, cols))
    ragged = rng.normal(size=(rows, cols)) * rng.lognormal(sigma=1.0, size=cols)
    positive = rng.random(size=(rows, cols))
    hot = rng.normal(size=(rows, cols))
    hot_cols = rng.choice(cols, size=max(1, cols // 200), replace=False)
    hot[:, hot_cols] *= 40.0
    mask = (rng.random(size=(rows, cols)) < 0.9).astype(np.float32)
    return [
        ("symmetric-128", SchemeSpec(Scheme.SYMMETRIC_GROUP), dense),
        ("symmetric-per-channel", SchemeSpec(Scheme.SYMMETRIC_GROUP, group_size=PER_CHANNEL), ragged),
        ("asymmetric-128", SchemeSpec(Scheme.ASYMMETRIC_GROUP), positive),
        ("outlier-separated", SchemeSpec(Scheme.OUTLIER_SEPARATED), hot),
        ("bit-mask", SchemeSpec(Scheme.BIT_MASK), mask),
    ]


def cmd_codec_bench(args) -> int:
    out = _outdir(args)
    rows = ["name,scheme,rows,cols,ratio,compress_ms,decompress_ms,original_bytes,compressed_bytes"]
    print(f"{'name':<24} {'ratio':>7} {'comp ms':>9} {'decomp ms':>9}")
    for name, spec, data in _bench_cases(args.rows, args.cols, args.seed):
        report = measure_codec(data.astype(np.float32), spec)
        rows.append(
            f"{name},{report.scheme.name},{args.rows},{args.cols},{report.ratio!r},"
            f"{report.compress_ms!r},{report.decompress_ms!r},"
            f"{report.original_bytes},{report.compressed_bytes}"
        )
        print(f"{name:<24} {report.ratio:>7.3f} {report.compress_ms:>9.2f} {report.decompress_ms:>9.2f}")
    _write(out / "codec_bench.csv", rows)
    print(f"wrote {out / 'codec_bench.csv'}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    profile = _load(args)
    out = _outdir(args)
    _run_drift_section(profile, args, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="actplan", description="Activation memory planning for transformer training.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, profile: bool = True) -> None:
        if profile:
            p.add_argument("--profile", required=True, help="path to a profile JSON file")
            p.add_argument("--budget", type=parse_size, default=None, help="override memory budget, e.g. 40GiB")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=0, help="seed for any randomised output")
        p.add_argument("--charts", action="store_true", help="also write SVG charts")

    def drift_opts(p: argparse.ArgumentParser, default_iterations: int) -> None:
        p.add_argument("--iterations", type=int, default=default_iterations, help="training iterations to simulate")
        p.add_argument("--channels", type=int, default=4096, help="channels per drifting operator")
        p.add_argument("--max-interval", type=int, default=512, help="tracking interval cap (power of two)")
        p.add_argument("--batch", type=int, default=None, help="batch size (default: profile reference batch)")

    p_plan = sub.add_parser("plan", help="solve for the optimal per-tensor policy")
    common(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_bw = sub.add_parser("bandwidth", help="rank operators by recompute and compress bandwidth")
    common(p_bw)
    p_bw.set_defaults(func=cmd_bandwidth)

    p_sim = sub.add_parser("simulate", help="sweep batch sizes under each memory strategy")
    common(p_sim)
    p_sim.add_argument("--batches", default="1:16", help="A:B inclusive range or comma list (default: 1:16)")
    p_sim.add_argument("--plan", default=None, help="simulate a saved plan.json instead of the built-in strategies")
    p_sim.add_argument("--util-k", type=float, default=None, help="optional utilisation knee constant")
    drift_opts(p_sim, default_iterations=0)
    p_sim.set_defaults(func=cmd_simulate)

    p_max = sub.add_parser("max-batch", help="largest feasible batch per strategy")
    common(p_max)
    p_max.set_defaults(func=cmd_max_batch)

    p_codec = sub.add_parser("codec-bench", help="compression ratio and speed per scheme")
    common(p_codec, profile=False)
    p_codec.add_argument("--rows", type=int, default=4096)
    p_codec.add_argument("--cols", type=int, default=4096)
    p_codec.set_defaults(func=cmd_codec_bench)

    p_evo = sub.add_parser("evolve", help="re-plan against drifting outlier statistics")
    common(p_evo)
    drift_opts(p_evo, default_iterations=1000)
    p_evo.set_defaults(func=cmd_evolve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (InfeasibleError, InfeasiblePlanError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ActplanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
