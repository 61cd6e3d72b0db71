"""Command-line front end: plan, sweep, baseline, synth, validate.

Exit codes: 0 success, 1 input/usage error, 2 infeasible (or failed
validation / baseline collapse), 3 internal limit reached with no incumbent.
Output files are written atomically (temp file + rename) so an interrupted
run never leaves a corrupt artifact.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile

import click
import numpy as np

from . import baseline as baseline_mod
from . import extract as extract_mod
from .errors import (
    EmptyLayerResult,
    InvalidBudget,
    LatPruneError,
    NodeLimitReached,
    TimeLimitReached,
)
from .latency import (
    DeviceModel,
    dense_latency,
    load_tables,
    synthesize_table,
    tables_to_dict,
)
from .netgraph import load_network
from .importance import load_scores
from .solver import SolveOptions, build_problem, solve


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".latprune-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _err(message: str) -> None:
    click.echo(f"latprune: {message}", err=True)


def _load_inputs(network_path, importance_path, latency_path):
    network = load_network(network_path)
    scores = load_scores(importance_path)
    tables = load_tables(latency_path, network)
    return network, scores, tables


def _resolve_budget(network, tables, budget_ms, budget_ratio) -> float:
    if (budget_ms is None) == (budget_ratio is None):
        raise InvalidBudget("exactly one of --budget-ms / --budget-ratio must be given")
    if budget_ms is not None:
        if budget_ms < 0:
            raise InvalidBudget(f"--budget-ms must be >= 0, got {budget_ms}")
        return float(budget_ms)
    if not 0 < budget_ratio < 1:
        raise InvalidBudget(f"--budget-ratio must be in (0, 1), got {budget_ratio}")
    return (1.0 - budget_ratio) * dense_latency(network, tables)


@click.group()
def main():
    """Plan latency-constrained structured pruning with a certified gap."""


_common = [
    click.option("--network", "network_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--importance", "importance_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--latency", "latency_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--granularity", default=1, show_default=True, type=int),
    click.option("--gap", "target_gap", default=0.01, show_default=True, type=float,
                 help="Stop once the certified optimality gap is below this."),
    click.option("--time-limit", "time_limit_s", default=None, type=float),
]


def _with(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


@main.command("plan")
@_with(_common)
@click.option("--budget-ms", type=float, default=None)
@click.option("--budget-ratio", type=float, default=None,
              help="Fraction of dense latency to remove; budget = (1-r) * dense.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_plan(network_path, importance_path, latency_path, granularity, target_gap,
             time_limit_s, budget_ms, budget_ratio, out_path):
    """Solve one budget and write the pruning plan JSON."""
    try:
        network, scores, tables = _load_inputs(network_path, importance_path, latency_path)
        budget = _resolve_budget(network, tables, budget_ms, budget_ratio)
        problem = build_problem(network, scores, tables, budget, granularity)
    except LatPruneError as exc:
        _err(str(exc))
        sys.exit(1)
    try:
        solution = solve(problem, SolveOptions(time_limit_s=time_limit_s, target_gap=target_gap))
    except (TimeLimitReached, NodeLimitReached) as exc:
        _err(str(exc))
        sys.exit(3)
    if solution.status == "Infeasible":
        _err(
            f"budget {budget:.6g} ms is infeasible; minimum achievable latency "
            f"is {solution.latency_ms:.6g} ms"
        )
        sys.exit(2)
    plan = extract_mod.extract_plan(solution, problem.importances, network, budget, granularity)
    report = extract_mod.validate_plan(plan, network, tables, budget)
    if not report.ok:  # pragma: no cover - extraction postcondition
        for v in report.violations:
            _err(f"internal plan violation: {v.code}: {v.message}")
        sys.exit(1)
    _atomic_write(out_path, extract_mod.dumps_plan(plan))
    click.echo(
        f"status={solution.status} objective={solution.objective:.9g} "
        f"latency_ms={solution.latency_ms:.9g} budget_ms={budget:.9g} "
        f"gap={solution.gap:.3e} removed_blocks={len(plan.removed_blocks)}"
    )
    sys.exit(0)


@main.command("sweep")
@_with(_common)
@click.option("--budget-ms", "budgets_ms", type=float, multiple=True)
@click.option("--budget-ratio", "budget_ratios", type=float, multiple=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_sweep(network_path, importance_path, latency_path, granularity, target_gap,
              time_limit_s, budgets_ms, budget_ratios, out_path):
    """Solve several budgets and emit a CSV of the trade-off curve."""
    try:
        network, scores, tables = _load_inputs(network_path, importance_path, latency_path)
        budgets = [float(b) for b in budgets_ms]
        if budget_ratios:
            dense = dense_latency(network, tables)
            for r in budget_ratios:
                if not 0 < r < 1:
                    raise InvalidBudget(f"--budget-ratio must be in (0, 1), got {r}")
                budgets.append((1.0 - r) * dense)
        if not budgets:
            raise InvalidBudget("sweep needs at least one --budget-ms or --budget-ratio")
    except LatPruneError as exc:
        _err(str(exc))
        sys.exit(1)

    rows = []
    for budget in sorted(budgets, reverse=True):
        problem = build_problem(network, scores, tables, budget, granularity)
        solution = solve(problem, SolveOptions(time_limit_s=time_limit_s, target_gap=target_gap))
        removed = sum(1 for v in solution.block_active.values() if v == 0)
        if solution.status == "Infeasible":
            rows.append([f"{budget:.17g}", "", "", "", "", "Infeasible"])
        else:
            rows.append([
                f"{budget:.17g}", f"{solution.objective:.17g}", f"{solution.latency_ms:.17g}",
                f"{solution.gap:.6e}", removed, solution.status,
            ])
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["budget_ms", "objective", "latency_ms", "gap", "blocks_removed", "status"])
    w.writerows(rows)
    _atomic_write(out_path, buf.getvalue())
    click.echo(f"wrote {len(rows)} sweep rows to {out_path}")
    sys.exit(0)


@main.command("baseline")
@_with(_common)
@click.option("--budget-ms", type=float, default=None)
@click.option("--budget-ratio", type=float, default=None)
@click.option("--steps", default=30, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--trace-out", "trace_path", default=None, type=click.Path(dir_okay=False),
              help="Per-step CSV (default: <out>.trace.csv).")
def cmd_baseline(network_path, importance_path, latency_path, granularity, target_gap,
                 time_limit_s, budget_ms, budget_ratio, steps, out_path, trace_path):
    """Run the stale-input knapsack baseline over an exponential schedule."""
    trace_path = trace_path or out_path + ".trace.csv"
    try:
        network, scores, tables = _load_inputs(network_path, importance_path, latency_path)
        budget = _resolve_budget(network, tables, budget_ms, budget_ratio)
        problem = build_problem(network, scores, tables, budget, 1)
    except LatPruneError as exc:
        _err(str(exc))
        sys.exit(1)
    try:
        plan, trace = baseline_mod.run_halp(problem, steps)
    except EmptyLayerResult as exc:
        baseline_mod.write_trace_csv(exc.trace or [], trace_path)
        _err(f"baseline collapsed: {exc}")
        sys.exit(2)
    baseline_mod.write_trace_csv(trace, trace_path)
    _atomic_write(out_path, extract_mod.dumps_plan(plan))
    final = trace[-1]
    click.echo(
        f"baseline steps={steps} objective={plan.objective:.9g} "
        f"true_ms={final.true_ms:.9g} estimated_ms={final.estimated_ms:.9g} "
        f"budget_ms={budget:.9g}"
    )
    sys.exit(0)


@main.command("synth")
@click.option("--network", "network_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--overhead-ms", default=0.01, show_default=True, type=float)
@click.option("--cost-per-mac-ms", default=1e-9, show_default=True, type=float)
@click.option("--tile", default=1, show_default=True, type=int)
@click.option("--granularity", default=1, show_default=True, type=int)
@click.option("--seed", default=None, type=int,
              help="Optional deterministic per-layer jitter for test instances.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_synth(network_path, overhead_ms, cost_per_mac_ms, tile, granularity, seed, out_path):
    """Emit a latency table file from the synthetic device model."""
    try:
        network = load_network(network_path)
        model = DeviceModel(fixed_overhead_ms=overhead_ms, cost_per_mac_ms=cost_per_mac_ms,
                            tile=tile)
    except (LatPruneError, ValueError) as exc:
        _err(str(exc))
        sys.exit(1)
    rng = np.random.default_rng(seed) if seed is not None else None
    tables = {}
    for layer in network.layers:
        m = model
        if rng is not None:
            m = DeviceModel(
                fixed_overhead_ms=model.fixed_overhead_ms,
                cost_per_mac_ms=model.cost_per_mac_ms * float(rng.uniform(0.5, 2.0)),
                tile=model.tile,
            )
        tables[layer.layer_id] = synthesize_table(
            layer, network.prev_max_channels(layer.layer_id), m, granularity
        )
    _atomic_write(out_path, json.dumps(tables_to_dict(tables), indent=2) + "\n")
    click.echo(f"wrote latency tables for {len(tables)} layers to {out_path}")
    sys.exit(0)


@main.command("validate")
@click.option("--network", "network_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--latency", "latency_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_validate(network_path, latency_path, plan_path):
    """Re-check a plan against its budget, coupling, and index invariants."""
    try:
        network = load_network(network_path)
        tables = load_tables(latency_path, network)
        plan = extract_mod.load_plan(plan_path)
    except LatPruneError as exc:
        _err(str(exc))
        sys.exit(1)
    report = extract_mod.validate_plan(plan, network, tables)
    if report.ok:
        click.echo(
            f"plan ok: latency {report.recomputed_latency_ms:.9g} ms "
            f"<= budget {plan.budget_ms:.9g} ms"
        )
        sys.exit(0)
    for v in report.violations:
        click.echo(f"{v.code}: {v.message}", err=True)
    sys.exit(2)
