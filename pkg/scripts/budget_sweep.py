#!/usr/bin/env python3
"""Sweep the memory budget and watch the plan, objective, and batch ceiling.

For each budget fraction f, the activation room is f times the full
retain-all footprint.  The solver re-plans at every point, so the output
shows where the block can afford to stop recomputing, where compression
takes over, and how the feasible batch ceiling moves per strategy.

Usage:
    python3 scripts/budget_sweep.py --profile profiles/example_block.json \
        --out out/budget_sweep --charts
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from actplan.charts import line_chart
from actplan.errors import ActplanError, InfeasibleError
from actplan.planner import PolicyChoice, solve
from actplan.profiles import load_profile
from actplan.simulate import STRATEGIES, max_feasible_batch

DEFAULT_FRACTIONS = [round(0.05 + 0.05 * i, 2) for i in range(20)]


def sweep(profile, fractions):
    retain_all = profile.n_layers * sum(op.mem_bytes for op in profile.operators)
    rows = []
    for fraction in fractions:
        budget = profile.static_mem_bytes + int(fraction * retain_all)
        if budget <= profile.static_mem_bytes:
            continue
        p = replace(profile, mem_budget_bytes=budget)
        try:
            plan = solve(p)
        except InfeasibleError:
            continue
        counts = {choice: plan.choices.count(choice) for choice in PolicyChoice}
        limits = {s: max_feasible_batch(p, s) for s in STRATEGIES}
        rows.append((fraction, budget, plan, counts, limits))
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--profile", required=True)
    parser.add_argument("--out", default="out/budget_sweep")
    parser.add_argument(
        "--fractions",
        default=None,
        help="comma list of retain-all fractions (default: 0.05 to 1.0)",
    )
    parser.add_argument("--charts", action="store_true")
    args = parser.parse_args(argv)

    try:
        profile = load_profile(args.profile)
    except ActplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    fractions = (
        DEFAULT_FRACTIONS
        if args.fractions is None
        else [float(part) for part in args.fractions.split(",")]
    )

    rows = sweep(profile, fractions)
    if not rows:
        print("error: no feasible budget in the requested range", file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (
        "fraction,budget_bytes,objective_ms,n_recompute,n_compress,n_retain,"
        + ",".join(f"max_batch_{s.replace('-', '_')}" for s in sorted(STRATEGIES))
    )
    lines = [header]
    print(f"{'frac':>6} {'objective':>10} {'R/C/K':>8}  max batch per strategy")
    for fraction, budget, plan, counts, limits in rows:
        r = counts[PolicyChoice.RECOMPUTE]
        c = counts[PolicyChoice.COMPRESS]
        k = counts[PolicyChoice.RETAIN]
        lines.append(
            f"{fraction},{budget},{plan.objective_ms!r},{r},{c},{k},"
            + ",".join(str(limits[s]) for s in sorted(STRATEGIES))
        )
        shown = " ".join(f"{s}={limits[s]}" for s in sorted(STRATEGIES))
        print(f"{fraction:>6} {plan.objective_ms:>10.3f} {f'{r}/{c}/{k}':>8}  {shown}")
    (out / "budget_sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'budget_sweep.csv'}")

    if args.charts:
        xs = [row[0] for row in rows]
        (out / "objective.svg").write_text(
            line_chart(
                "Per-block overhead vs activation budget",
                "fraction of retain-all footprint",
                "ms per block",
                [("objective", xs, [row[2].objective_ms for row in rows])],
            ),
            encoding="utf-8",
        )
        series = [
            (s, xs, [float(row[4][s]) for row in rows]) for s in sorted(STRATEGIES)
        ]
        (out / "max_batch.svg").write_text(
            line_chart(
                "Feasible batch ceiling vs activation budget",
                "fraction of retain-all footprint",
                "max batch",
                series,
            ),
            encoding="utf-8",
        )
        print(f"wrote {out / 'objective.svg'} and {out / 'max_batch.svg'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
