"""Stale-input knapsack baseline with an exponential multi-step schedule.

The baseline prices each output channel with the input-channel count frozen
at the previous step's value, ranks channels by importance, and packs them
into a knapsack under the step budget. Because the frozen input counts go
stale as soon as other layers shrink, its latency estimate drifts from the
truth; this module records both numbers per step so the drift is directly
observable, and surfaces (rather than patches) the failure mode where the
knapsack drops a layer to zero channels.

The baseline never removes blocks; coupled layers are packed as one item
group so its plans satisfy the residual-add width constraints.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyLayerResult, InvalidBudget
from .extract import LayerPlan, PrunePlan, kept_channel_map
from .importance import LayerImportance
from .latency import LatencyTable, dense_latency, total_plan_latency
from .netgraph import NetworkSpec
from .solver import Problem

#: abandon the exact knapsack sweep beyond this many frontier states
_EXACT_STATE_CAP = 1_000_000


@dataclass
class BaselineState:
    kept: dict[int, int]          # layer_id -> currently kept channel count
    step_index: int = 0
    budgets: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class StepTrace:
    step: int
    budget_ms: float
    estimated_ms: float
    true_ms: float
    layers_at_zero: int


def exponential_schedule(dense_latency_ms: float, final_budget_ms: float, steps: int) -> list[float]:
    """Geometric interpolation from the dense latency down to the final budget."""
    if steps < 1:
        raise InvalidBudget(f"steps must be >= 1, got {steps}")
    if not 0 < final_budget_ms <= dense_latency_ms:
        raise InvalidBudget(
            f"final budget {final_budget_ms} must be in (0, {dense_latency_ms}]"
        )
    ratio = final_budget_ms / dense_latency_ms
    return [dense_latency_ms * ratio ** ((k + 1) / steps) for k in range(steps)]


# ---------------------------------------------------------------------------
# item groups: one per coupling unit, prefix-constrained channel selection
# ---------------------------------------------------------------------------

def _coupling_units(network: NetworkSpec) -> list[tuple[int, ...]]:
    groups: dict[str, list[int]] = {}
    for layer in network.layers:
        if layer.coupling_group is not None:
            groups.setdefault(layer.coupling_group, []).append(layer.layer_id)
    out: list[tuple[int, ...]] = []
    seen: set[str] = set()
    for layer in network.layers:
        g = layer.coupling_group
        if g is None:
            out.append((layer.layer_id,))
        elif g not in seen:
            seen.add(g)
            out.append(tuple(groups[g]))
    return out


def _frozen_inputs(network: NetworkSpec, kept: dict[int, int]) -> dict[int, int]:
    prev: dict[int, int] = {}
    for layer in network.layers:
        lid = layer.layer_id
        prev[lid] = network.input_channels if lid == 1 else kept[lid - 1]
    return prev


def _estimated_latency(network: NetworkSpec, tables: dict[int, LatencyTable],
                       frozen: dict[int, int], kept: dict[int, int]) -> float:
    return sum(
        tables[l.layer_id].value_at(frozen[l.layer_id], kept[l.layer_id])
        for l in network.layers
    )


def _unit_curves(
    network: NetworkSpec,
    importances: dict[int, LayerImportance],
    tables: dict[int, LatencyTable],
    frozen: dict[int, int],
    kept: dict[int, int],
    units: list[tuple[int, ...]],
):
    """Per unit: cumulative (value, cost) of keeping the top k channels, k=0..cap."""
    curves = []
    for members in units:
        cap = min(kept[l] for l in members)
        values = np.zeros(cap + 1)
        costs = np.zeros(cap + 1)
        for l in members:
            values[1:] += importances[l].prefix[:cap]
            row = tables[l].value_grid([frozen[l]], np.arange(1, cap + 1))[0]
            costs[1:] += row
        curves.append((members, values, costs))
    return curves


def _seat_first_channels(curves, budget: float):
    """Seat each unit's mandatory first channel, best value/cost ratio first.

    Returns (seated unit indices, remaining budget). Units left unseated are
    the ones the budget cannot cover even at one channel each.
    """
    order = sorted(
        range(len(curves)),
        key=lambda i: (-(curves[i][1][1] / curves[i][2][1]) if curves[i][2][1] > 0
                       else -float("inf"), i),
    )
    seated: set[int] = set()
    remaining = budget
    for idx in order:
        c = curves[idx][2][1]
        if c <= remaining:
            remaining -= c
            seated.add(idx)
    return seated, remaining


def _greedy_pack(curves, budget: float):
    """Keep one channel everywhere, then ratio-greedy over further channels.

    Returns None when the budget cannot cover the mandatory first channels
    (the caller surfaces the dropped layers).
    """
    seated, remaining = _seat_first_channels(curves, budget)
    if len(seated) < len(curves):
        return None
    chosen = [1] * len(curves)
    heap = []
    for idx, (_, values, costs) in enumerate(curves):
        if len(values) > 2:
            v = values[2] - values[1]
            c = costs[2] - costs[1]
            ratio = v / c if c > 0 else float("inf")
            heapq.heappush(heap, (-ratio, idx, 2, v, c))
    while heap:
        _, idx, k, v, c = heapq.heappop(heap)
        if c > remaining:
            continue  # this unit's prefix is blocked; later channels stay out
        remaining -= c
        chosen[idx] = k
        _, values, costs = curves[idx]
        if k + 1 < len(values):
            nv = values[k + 1] - values[k]
            nc = costs[k + 1] - costs[k]
            ratio = nv / nc if nc > 0 else float("inf")
            heapq.heappush(heap, (-ratio, idx, k + 1, nv, nc))
    return chosen


def _exact_pack(curves, budget: float):
    """Pareto-frontier sweep over units (one channel minimum each).

    None when the count grid is too large for an exact sweep or no keep-one
    assignment fits the budget.
    """
    grid = 1
    for _, values, _ in curves:
        grid *= len(values)
        if grid > _EXACT_STATE_CAP:
            return None
    frontier = [(0.0, 0.0, ())]  # (cost, -value, picks)
    for _, values, costs in curves:
        nxt = []
        for cost, negval, picks in frontier:
            for k in range(1, len(values)):
                c = cost + costs[k]
                if c > budget:
                    continue
                nxt.append((c, negval - values[k], picks + (k,)))
        nxt.sort()
        pruned = []
        best = float("inf")
        for c, negval, picks in nxt:
            if negval < best:
                pruned.append((c, negval, picks))
                best = negval
        frontier = pruned
        if not frontier:
            return None
    best = min(frontier, key=lambda t: (t[1], t[0], t[2]))
    return list(best[2])


def halp_step(
    network: NetworkSpec,
    importances: dict[int, LayerImportance],
    tables: dict[int, LatencyTable],
    state: BaselineState,
    budget_ms: float,
) -> tuple[BaselineState, StepTrace]:
    """One knapsack step at the given budget with frozen input counts.

    Raises :class:`EmptyLayerResult` when the pack zeroes a layer; the
    exception carries the offending layers and the step's trace row so the
    failure is observable instead of silently repaired.
    """
    frozen = _frozen_inputs(network, state.kept)
    units = _coupling_units(network)
    curves = _unit_curves(network, importances, tables, frozen, state.kept, units)

    chosen = _exact_pack(curves, budget_ms)
    if chosen is None:
        chosen = _greedy_pack(curves, budget_ms)
    if chosen is None:
        # budget below the cost of one channel per layer: derive the drop set
        seated, _ = _seat_first_channels(curves, budget_ms)
        chosen = [1 if i in seated else 0 for i in range(len(curves))]

    new_kept = dict(state.kept)
    zero_layers: list[int] = []
    for (members, _, _), k in zip(curves, chosen):
        for l in members:
            new_kept[l] = k
            if k == 0:
                zero_layers.append(l)

    estimated = _estimated_latency(network, tables, frozen, new_kept) if not zero_layers else float("nan")
    true = (
        total_plan_latency(network, tables, new_kept, {}) if not zero_layers else float("nan")
    )
    trace = StepTrace(
        step=state.step_index + 1,
        budget_ms=budget_ms,
        estimated_ms=estimated,
        true_ms=true,
        layers_at_zero=len(zero_layers),
    )
    if zero_layers:
        raise EmptyLayerResult(
            f"knapsack dropped layers {sorted(zero_layers)} to zero channels at "
            f"budget {budget_ms:.6g} ms",
            layer_ids=sorted(zero_layers),
            trace=[trace],
        )
    new_state = BaselineState(kept=new_kept, step_index=state.step_index + 1,
                              budgets=state.budgets)
    return new_state, trace


def run_halp(problem: Problem, steps: int) -> tuple[PrunePlan, list[StepTrace]]:
    """Iterate the baseline over the exponential schedule down to the budget.

    Returns the final plan plus the per-step (estimated, true) latency trace.
    An :class:`EmptyLayerResult` raised mid-run is re-raised with the trace
    accumulated so far attached.
    """
    network = problem.network
    tables = problem.tables
    importances = problem.importances
    dense = dense_latency(network, tables)
    budgets = exponential_schedule(dense, problem.budget_ms, steps)

    state = BaselineState(
        kept={l.layer_id: l.max_out_channels for l in network.layers},
        step_index=0,
        budgets=budgets,
    )
    trace: list[StepTrace] = []
    for budget in budgets:
        try:
            state, row = halp_step(network, importances, tables, state, budget)
        except EmptyLayerResult as exc:
            exc.trace = trace + (exc.trace or [])
            raise
        trace.append(row)

    kept_map = kept_channel_map(network, importances, state.kept)
    per_layer = {}
    for layer in network.layers:
        lid = layer.layer_id
        per_layer[lid] = LayerPlan(lid, removed=False, kept_count=state.kept[lid],
                                   kept_channel_indices=kept_map[lid])
    objective = sum(
        float(importances[l.layer_id].prefix[state.kept[l.layer_id] - 1])
        for l in network.layers
    )
    plan = PrunePlan(
        per_layer=per_layer,
        removed_blocks=(),
        predicted_latency_ms=trace[-1].true_ms,
        objective=objective,
        gap=float("nan"),
        budget_ms=problem.budget_ms,
        granularity=1,
        solver_status="Baseline",
    )
    return plan, trace


def write_trace_csv(trace: list[StepTrace], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "budget_ms", "estimated_ms", "true_ms", "layers_at_zero"])
        for row in trace:
            w.writerow([row.step, f"{row.budget_ms:.9g}", f"{row.estimated_ms:.9g}",
                        f"{row.true_ms:.9g}", row.layers_at_zero])
