"""Turn a solver solution into a concrete pruning plan and audit it.

The plan is the artifact's output contract: per layer the kept channel ids
(sorted ascending, the order downstream surgery tools slice by), the removed
blocks, and enough metadata (budget, gap, granularity, status) to audit a
plan without re-running the solver. :func:`validate_plan` re-derives the
latency from the plan alone and reports every violation instead of raising.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, InfeasibleSolution, SchemaError
from .importance import LayerImportance
from .latency import LatencyTable
from .netgraph import NetworkSpec
from .solver import Solution


@dataclass(frozen=True)
class LayerPlan:
    layer_id: int
    removed: bool
    kept_count: int
    kept_channel_indices: tuple[int, ...]


@dataclass(frozen=True)
class PrunePlan:
    per_layer: dict[int, LayerPlan]
    removed_blocks: tuple[int, ...]
    predicted_latency_ms: float
    objective: float
    gap: float
    budget_ms: float
    granularity: int
    solver_status: str


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    recomputed_latency_ms: float | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, message: str) -> None:
        self.violations.append(Violation(code, message))


def _raw_scores(imp: LayerImportance) -> np.ndarray:
    """Recover per-channel scores from the ranking and its prefix sums."""
    vals = np.diff(imp.prefix, prepend=0.0)
    scores = np.empty(imp.num_channels)
    scores[np.asarray(imp.sorted_indices) - 1] = vals
    return scores


def kept_channel_map(
    network: NetworkSpec,
    importances: dict[int, LayerImportance],
    counts: dict[int, int],
) -> dict[int, tuple[int, ...]]:
    """Kept channel ids per layer, ascending.

    Uncoupled layers keep their own top-count channels. Coupled layers must
    keep one aligned position set (the residual add joins feature maps by
    position), so a group keeps the top positions of its members' summed
    scores, ties toward the lower channel id.
    """
    group_rank: dict[str, np.ndarray] = {}
    for layer in network.layers:
        g = layer.coupling_group
        if g is None or g in group_rank:
            continue
        total = np.zeros(layer.max_out_channels)
        for other in network.layers:
            if other.coupling_group == g:
                total += _raw_scores(importances[other.layer_id])
        group_rank[g] = np.lexsort((np.arange(total.shape[0]), -total))
    out: dict[int, tuple[int, ...]] = {}
    for layer in network.layers:
        lid = layer.layer_id
        count = counts[lid]
        if layer.coupling_group is not None:
            top = group_rank[layer.coupling_group][:count]
            out[lid] = tuple(sorted(int(i) + 1 for i in top))
        else:
            out[lid] = tuple(sorted(importances[lid].sorted_indices[:count]))
    return out


def extract_plan(
    solution: Solution,
    importances: dict[int, LayerImportance],
    network: NetworkSpec,
    budget_ms: float,
    granularity: int = 1,
) -> PrunePlan:
    """Map kept counts back to concrete channel ids via the importance ranking.

    Layers of removed blocks are marked removed with empty keep lists; their
    solver channel entries are deliberately ignored.
    """
    if solution.status == "Infeasible":
        raise InfeasibleSolution(
            "cannot extract a plan from an infeasible solve "
            f"(minimum achievable latency {solution.latency_ms:.6g} ms)",
            min_latency_ms=solution.latency_ms,
        )
    beta = network.layer2block
    kept_map = kept_channel_map(network, importances, solution.channel_choice)
    per_layer: dict[int, LayerPlan] = {}
    for layer in network.layers:
        lid = layer.layer_id
        b = beta.get(lid)
        if b is not None and solution.block_active.get(b, 1) == 0:
            per_layer[lid] = LayerPlan(lid, removed=True, kept_count=0, kept_channel_indices=())
            continue
        count = solution.channel_choice[lid]
        per_layer[lid] = LayerPlan(lid, removed=False, kept_count=count,
                                   kept_channel_indices=kept_map[lid])
    removed = tuple(sorted(b for b, active in solution.block_active.items() if active == 0))
    return PrunePlan(
        per_layer=per_layer,
        removed_blocks=removed,
        predicted_latency_ms=solution.latency_ms,
        objective=solution.objective,
        gap=solution.gap,
        budget_ms=float(budget_ms),
        granularity=granularity,
        solver_status=solution.status,
    )


def plan_latency(plan: PrunePlan, network: NetworkSpec, tables: dict[int, LatencyTable]) -> float:
    """Total latency recomputed from the plan alone (no solver state)."""
    total = 0.0
    prev = network.input_channels
    for layer in network.layers:
        entry = plan.per_layer[layer.layer_id]
        if entry.removed:
            continue
        total += tables[layer.layer_id].value_at(prev, entry.kept_count)
        prev = entry.kept_count
    return total


def validate_plan(
    plan: PrunePlan,
    network: NetworkSpec,
    tables: dict[int, LatencyTable],
    budget_ms: float | None = None,
) -> ValidationReport:
    """Audit a plan: budget, coupling, block boundaries, index sets.

    Violations become report entries (never exceptions), each naming the
    offending layer, block, or group.
    """
    report = ValidationReport()
    budget = plan.budget_ms if budget_ms is None else budget_ms
    removed_set = set(plan.removed_blocks)

    for layer in network.layers:
        lid = layer.layer_id
        entry = plan.per_layer.get(lid)
        if entry is None:
            report.add("MissingLayer", f"plan has no entry for layer {lid}")
            continue
        in_removed = layer.block_id in removed_set
        if entry.removed != in_removed:
            report.add(
                "RemovalMismatch",
                f"layer {lid}: removed={entry.removed} but block "
                f"{layer.block_id} removal is {in_removed}",
            )
        if entry.removed:
            if entry.kept_count != 0 or entry.kept_channel_indices:
                report.add(
                    "RemovedNotEmpty",
                    f"layer {lid}: removed layers must keep no channels",
                )
            continue
        idx = entry.kept_channel_indices
        if len(idx) != entry.kept_count:
            report.add(
                "IndexCountMismatch",
                f"layer {lid}: kept_count {entry.kept_count} != {len(idx)} indices",
            )
        if len(set(idx)) != len(idx):
            report.add("DuplicateIndices", f"layer {lid}: duplicate kept channel ids")
        if list(idx) != sorted(idx):
            report.add("UnsortedIndices", f"layer {lid}: kept channel ids must ascend")
        if idx and (min(idx) < 1 or max(idx) > layer.max_out_channels):
            report.add(
                "IndexOutOfRange",
                f"layer {lid}: kept ids outside 1..{layer.max_out_channels}",
            )
        if not idx:
            report.add("EmptyActiveLayer", f"layer {lid}: active layer keeps no channels")

    # coupled active layers must keep identical channel sets
    groups: dict[str, list[LayerPlan]] = {}
    for layer in network.layers:
        if layer.coupling_group is None:
            continue
        entry = plan.per_layer.get(layer.layer_id)
        if entry is not None and not entry.removed:
            groups.setdefault(layer.coupling_group, []).append(entry)
    for name, entries in groups.items():
        kept_sets = {e.kept_channel_indices for e in entries}
        if len(kept_sets) > 1:
            report.add(
                "CouplingMismatch",
                f"coupling group {name!r}: members keep differing channel sets",
            )

    # residual adds of surviving blocks need matching widths on both paths
    for block in network.blocks:
        if block.block_id in removed_set:
            continue
        last = plan.per_layer.get(block.member_layers[-1])
        if last is None or last.removed:
            continue
        if block.skip_source_layer == 0:
            skip_count = network.input_channels
        else:
            src = block.skip_source_layer
            while src >= 1:
                e = plan.per_layer.get(src)
                if e is not None and not e.removed:
                    break
                src -= 1
            skip_count = (
                plan.per_layer[src].kept_count if src >= 1 else network.input_channels
            )
        if last.kept_count != skip_count:
            report.add(
                "BlockBoundaryMismatch",
                f"block {block.block_id}: residual add joins {last.kept_count} "
                f"and {skip_count} channels",
            )

    try:
        lat = plan_latency(plan, network, tables)
        report.recomputed_latency_ms = lat
        if lat > budget:
            report.add(
                "BudgetExceeded",
                f"recomputed latency {lat:.9g} ms exceeds budget {budget:.9g} ms "
                f"by {lat - budget:.9g} ms",
            )
    except (IndexOutOfRange, KeyError) as exc:
        report.add("LatencyUncomputable", f"cannot recompute latency: {exc}")

    return report


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "budget_ms", "predicted_latency_ms", "objective", "gap", "solver_status",
    "granularity", "removed_blocks", "layers",
}
_LAYER_KEYS = {"layer_id", "removed", "kept_count", "kept_channel_indices"}


def plan_to_dict(plan: PrunePlan) -> dict:
    return {
        "budget_ms": plan.budget_ms,
        "predicted_latency_ms": plan.predicted_latency_ms,
        "objective": plan.objective,
        "gap": plan.gap,
        "solver_status": plan.solver_status,
        "granularity": plan.granularity,
        "removed_blocks": list(plan.removed_blocks),
        "layers": [
            {
                "layer_id": e.layer_id,
                "removed": e.removed,
                "kept_count": e.kept_count,
                "kept_channel_indices": list(e.kept_channel_indices),
            }
            for _, e in sorted(plan.per_layer.items())
        ],
    }


def plan_from_dict(data: dict) -> PrunePlan:
    if not isinstance(data, dict):
        raise SchemaError("plan file: top level must be an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"plan file: unknown keys {sorted(unknown)}")
    try:
        per_layer = {}
        for entry in data["layers"]:
            unknown = set(entry) - _LAYER_KEYS
            if unknown:
                raise SchemaError(
                    f"plan layer {entry.get('layer_id')}: unknown keys {sorted(unknown)}"
                )
            lp = LayerPlan(
                layer_id=int(entry["layer_id"]),
                removed=bool(entry["removed"]),
                kept_count=int(entry["kept_count"]),
                kept_channel_indices=tuple(int(i) for i in entry["kept_channel_indices"]),
            )
            per_layer[lp.layer_id] = lp
        return PrunePlan(
            per_layer=per_layer,
            removed_blocks=tuple(int(b) for b in data["removed_blocks"]),
            predicted_latency_ms=float(data["predicted_latency_ms"]),
            objective=float(data["objective"]),
            gap=float(data["gap"]),
            budget_ms=float(data["budget_ms"]),
            granularity=int(data["granularity"]),
            solver_status=str(data["solver_status"]),
        )
    except KeyError as exc:
        raise SchemaError(f"plan file: missing required key {exc}") from exc


def dumps_plan(plan: PrunePlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, ensure_ascii=False) + "\n"


def load_plan(path) -> PrunePlan:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"plan file: invalid JSON ({exc})") from exc
    return plan_from_dict(data)


def save_plan(plan: PrunePlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_plan(plan))
