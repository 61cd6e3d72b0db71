"""Joint channel-count and block-removal optimization under a latency budget.

The decision space: one kept-channel count per coupling unit (a coupling
group, or a single uncoupled layer) drawn from the granularity-restricted
allowed set, plus one keep/remove binary per residual block. The objective is
the total importance of kept channels; the constraint is that the summed
per-layer latency, looked up at each layer's (input, output) channel counts,
stays under the budget.

Two solvers share one decision domain:

* :func:`solve_exact` - depth-first enumeration with latency pruning, the
  test oracle for small instances.
* :func:`solve` - branch-and-bound. Each node relaxes the budget constraint
  with a multiplier and solves the relaxed problem exactly by dynamic
  programming along the layer chain (undecided blocks contribute the better
  of their through-path and their bypass). Bisection on the multiplier
  tightens the dual bound; DP argmax paths that fit the budget become
  incumbents. Nodes branch first on block binaries, then on channel-count
  windows, so the search is complete: run with ``target_gap=0`` it proves
  global optimality.

Determinism: ties prefer the larger count, then the lower layer index; block
branches explore keep (z=1) first; equal-objective incumbents prefer lower
latency, then the lexicographically smaller (z, counts) assignment.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EnumerationCapExceeded,
    InvalidBudget,
    LengthMismatch,
    NodeLimitReached,
    UnsupportedCouplingLayout,
)
from .importance import ChannelScores, LayerImportance, aggregate_layer_importance
from .latency import LatencyTable, validate_tables
from .netgraph import NetworkSpec, validate_network

#: block decision value meaning "not fixed yet" inside branch and bound
_FREE = 2

_GAP_EPS = 1e-12
_OPTIMAL_GAP = 1e-9


def allowed_counts(max_channels: int, granularity: int) -> list[int]:
    """Multiples of the granularity up to the full width, plus the width itself."""
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    pts = list(range(granularity, max_channels + 1, granularity))
    if not pts or pts[-1] != max_channels:
        pts.append(max_channels)
    return pts


@dataclass(frozen=True)
class _Unit:
    uid: int
    counts: np.ndarray       # ascending allowed counts, shared by all member layers
    layers: tuple[int, ...]  # member layer ids, ascending


@dataclass(frozen=True)
class _Block:
    block_id: int
    first: int
    last: int


class _Prep:
    """Per-problem arrays the DP and evaluators index into."""

    def __init__(self, network: NetworkSpec, importances: dict[int, LayerImportance],
                 tables: dict[int, LatencyTable], granularity: int):
        self.network = network
        self.tables = tables
        self.importances = importances
        self.L = network.num_layers

        # coupling units: named groups first, then singletons, in first-layer order
        group_layers: dict[str, list[int]] = {}
        for layer in network.layers:
            if layer.coupling_group is not None:
                group_layers.setdefault(layer.coupling_group, []).append(layer.layer_id)
        pinned_groups: set[str] = set()
        pinned_layers: set[int] = set()
        for b in network.blocks:
            if b.skip_source_layer == 0:
                last = network.layer_by_id[b.member_layers[-1]]
                if last.coupling_group is not None:
                    pinned_groups.add(last.coupling_group)
                else:
                    pinned_layers.add(last.layer_id)

        self.units: list[_Unit] = []
        self.unit_of: dict[int, int] = {}
        assigned: dict[str, int] = {}
        for layer in network.layers:
            g = layer.coupling_group
            if g is not None and g in assigned:
                self.unit_of[layer.layer_id] = assigned[g]
                continue
            uid = len(self.units)
            if g is not None:
                members = tuple(group_layers[g])
                pinned = g in pinned_groups
                assigned[g] = uid
            else:
                members = (layer.layer_id,)
                pinned = layer.layer_id in pinned_layers
            if pinned:
                counts = np.asarray([network.input_channels], dtype=int)
            else:
                counts = np.asarray(allowed_counts(layer.max_out_channels, granularity), dtype=int)
            self.units.append(_Unit(uid=uid, counts=counts, layers=members))
            for m in members:
                self.unit_of[m] = uid

        self.block_of: dict[int, int | None] = {
            l.layer_id: l.block_id for l in network.layers
        }
        self.blocks: list[_Block] = [
            _Block(block_id=b.block_id, first=min(b.member_layers), last=max(b.member_layers))
            for b in sorted(network.blocks, key=lambda b: min(b.member_layers))
        ]
        self.block_pos = {b.block_id: i for i, b in enumerate(self.blocks)}

        # per-layer reward vectors and cost submatrices over allowed counts
        self.reward: dict[int, np.ndarray] = {}
        self.cost: dict[int, np.ndarray] = {}
        for layer in network.layers:
            lid = layer.layer_id
            u = self.units[self.unit_of[lid]]
            imp = importances[lid]
            self.reward[lid] = np.ascontiguousarray(imp.prefix[u.counts - 1])
            if lid == 1:
                prev_counts = np.asarray([network.input_channels], dtype=int)
            else:
                prev_counts = self.units[self.unit_of[lid - 1]].counts
            self.cost[lid] = np.ascontiguousarray(tables[lid].value_grid(prev_counts, u.counts))

        self._check_coupling_layout()

    def _check_coupling_layout(self) -> None:
        """The chain DP carries at most one open coupling group at a time."""
        intervals = []
        for u in self.units:
            if len(u.layers) >= 2:
                intervals.append((u.layers[0], u.layers[-1], u.uid))
        intervals.sort()
        for (a0, a1, ua), (b0, b1, ub) in zip(intervals, intervals[1:]):
            if b0 <= a1:
                raise UnsupportedCouplingLayout(
                    f"coupling groups of units {ua} and {ub} interleave "
                    f"([{a0},{a1}] vs [{b0},{b1}]); the chain solver cannot collapse this"
                )
        for first, last, uid in intervals:
            b = self.block_of.get(first)
            if b is not None:
                blk = self.blocks[self.block_pos[b]]
                if last > blk.last:
                    raise UnsupportedCouplingLayout(
                        f"coupling group of unit {uid} starts inside block {b} "
                        f"and extends beyond it"
                    )

    def intervals_for(self, zstate: tuple[int, ...]) -> dict[int, tuple[int, int]]:
        """Open interval per unit: span of members not inside removed blocks."""
        out: dict[int, tuple[int, int]] = {}
        for u in self.units:
            if len(u.layers) < 2:
                continue
            pa = [
                l for l in u.layers
                if self.block_of[l] is None or zstate[self.block_pos[self.block_of[l]]] != 0
            ]
            if len(pa) >= 2:
                out[u.uid] = (pa[0], pa[-1])
        return out

    def canonical_counts(self, partial: dict[int, int]) -> dict[int, int]:
        """Fill units left unassigned (all layers removed) with their maximum."""
        full = dict(partial)
        for u in self.units:
            full.setdefault(u.uid, int(u.counts[-1]))
        return full


@dataclass(frozen=True)
class Problem:
    """A fully cross-validated instance: network + importances + tables + budget."""

    network: NetworkSpec
    importances: dict[int, LayerImportance]
    tables: dict[int, LatencyTable]
    budget_ms: float
    granularity: int = 1
    prep: _Prep = field(repr=False, compare=False, default=None)

    @property
    def num_blocks(self) -> int:
        return len(self.network.blocks)


def build_problem(
    network: NetworkSpec,
    importances: dict[int, LayerImportance] | dict[int, ChannelScores],
    tables: dict[int, LatencyTable],
    budget_ms: float,
    granularity: int = 1,
) -> Problem:
    """Cross-validate all inputs and precompute solver arrays.

    Accepts raw per-channel scores or already-aggregated layer importances.
    """
    network = validate_network(network)
    if budget_ms < 0:
        raise InvalidBudget(f"budget must be >= 0 ms, got {budget_ms}")
    if granularity < 1:
        raise InvalidBudget(f"granularity must be >= 1, got {granularity}")
    validate_tables(network, tables)
    agg: dict[int, LayerImportance] = {}
    for layer in network.layers:
        lid = layer.layer_id
        if lid not in importances:
            raise LengthMismatch(f"no importance scores for layer {lid}")
        item = importances[lid]
        if isinstance(item, ChannelScores):
            agg[lid] = aggregate_layer_importance(item, layer.max_out_channels)
        else:
            if item.num_channels != layer.max_out_channels:
                raise LengthMismatch(
                    f"layer {lid}: importance covers {item.num_channels} channels, "
                    f"layer has {layer.max_out_channels}"
                )
            agg[lid] = item
    prep = _Prep(network, agg, tables, granularity)
    return Problem(
        network=network, importances=agg, tables=tables,
        budget_ms=float(budget_ms), granularity=granularity, prep=prep,
    )


@dataclass(frozen=True)
class Solution:
    channel_choice: dict[int, int]   # layer_id -> kept count (ignored inside removed blocks)
    block_active: dict[int, int]     # block_id -> 0/1
    objective: float
    latency_ms: float
    dual_bound: float
    gap: float
    status: str                      # Optimal | Feasible | Infeasible


@dataclass(frozen=True)
class SolveOptions:
    time_limit_s: float | None = None
    target_gap: float = 0.01
    node_limit: int | None = None


# ---------------------------------------------------------------------------
# shared evaluation
# ---------------------------------------------------------------------------

def _evaluate_units(prep: _Prep, unit_counts: dict[int, int], z: dict[int, int]):
    """(objective, latency) of an assignment; same op order as plan re-evaluation."""
    obj = 0.0
    lat = 0.0
    prev = prep.network.input_channels
    for layer in prep.network.layers:
        lid = layer.layer_id
        b = prep.block_of[lid]
        if b is not None and z.get(b, 1) == 0:
            continue
        c = unit_counts[prep.unit_of[lid]]
        lat += prep.tables[lid].value_at(prev, c)
        obj += float(prep.importances[lid].prefix[c - 1])
        prev = c
    return obj, lat


def _layer_counts(prep: _Prep, unit_counts: dict[int, int]) -> dict[int, int]:
    return {l.layer_id: unit_counts[prep.unit_of[l.layer_id]] for l in prep.network.layers}


# ---------------------------------------------------------------------------
# chain dynamic program
# ---------------------------------------------------------------------------

def _argmax_last(a: np.ndarray, axis: int) -> np.ndarray:
    """Argmax that prefers the highest index (the larger channel count)."""
    n = a.shape[axis]
    return n - 1 - np.argmax(np.flip(a, axis=axis), axis=axis)


class _State:
    """DP state after processing a prefix of the chain.

    kind 'free': val[o, c] over (open-group count, current-layer count).
    kind 'diag': val[o] with the current count equal to the open-group count
    (the last processed layer was a member of the open group).
    """

    __slots__ = ("kind", "open_uid", "val")

    def __init__(self, kind: str, open_uid: int | None, val: np.ndarray):
        self.kind = kind
        self.open_uid = open_uid
        self.val = val


@dataclass
class _DpOut:
    value: float
    unit_counts: dict[int, int]
    z: dict[int, int]


class _ChainDP:
    """One relaxed-subproblem solve: maximize sum(reward - lam * cost)."""

    def __init__(self, prep: _Prep, zstate: tuple[int, ...],
                 domains: tuple[tuple[int, int], ...], lam: float, minimize: bool):
        self.prep = prep
        self.zstate = zstate
        self.domains = domains
        self.lam = lam
        self.minimize = minimize
        self.intervals = prep.intervals_for(zstate)

    # -- slices -------------------------------------------------------------

    def _counts(self, uid: int) -> np.ndarray:
        lo, hi = self.domains[uid]
        return self.prep.units[uid].counts[lo:hi + 1]

    def _w(self, lid: int) -> np.ndarray:
        prep = self.prep
        uid = prep.unit_of[lid]
        lo, hi = self.domains[uid]
        if lid == 1:
            cost = prep.cost[lid][:, lo:hi + 1]
        else:
            plo, phi = self.domains[prep.unit_of[lid - 1]]
            cost = prep.cost[lid][plo:phi + 1, lo:hi + 1]
        if self.minimize:
            return -cost
        return prep.reward[lid][lo:hi + 1][None, :] - self.lam * cost

    # -- forward sweep ------------------------------------------------------

    def run(self) -> tuple[_State, list]:
        prep = self.prep
        state = _State("free", None, np.zeros((1, 1)))
        recs: list = []
        l = 1
        while l <= prep.L:
            b = prep.block_of[l]
            if b is not None:
                zb = self.zstate[prep.block_pos[b]]
                blk = prep.blocks[prep.block_pos[b]]
                if zb == 0:
                    l = blk.last + 1
                    continue
                if zb == _FREE and l == blk.first:
                    state = self._free_block(state, blk, recs)
                    l = blk.last + 1
                    continue
            state = self._layer(state, l, recs)
            l += 1
        return state, recs

    def _free_block(self, entry: _State, blk: _Block, recs: list) -> _State:
        through = entry
        trecs: list = []
        for ml in range(blk.first, blk.last + 1):
            through = self._layer(through, ml, trecs)
        bypass, closed = self._bypass(entry, blk)
        if through.kind != bypass.kind or through.open_uid != bypass.open_uid \
                or through.val.shape != bypass.val.shape:
            raise UnsupportedCouplingLayout(
                f"block {blk.block_id}: removal changes the coupling state shape"
            )
        wins = through.val >= bypass.val  # keep the block on ties
        merged = _State(through.kind, through.open_uid, np.maximum(through.val, bypass.val))
        recs.append(("merge", blk.block_id, trecs, closed, wins))
        return merged

    def _bypass(self, entry: _State, blk: _Block) -> tuple[_State, bool]:
        uid = entry.open_uid
        if uid is not None:
            iv = self.intervals.get(uid)
            if iv is not None and blk.first <= iv[1] <= blk.last:
                assert entry.kind == "diag"
                return _State("free", None, entry.val[None, :]), True
        return entry, False

    def _layer(self, state: _State, l: int, recs: list) -> _State:
        prep = self.prep
        uid = prep.unit_of[l]
        w = self._w(l)
        iv = self.intervals.get(uid)
        coupled = iv is not None and iv[0] != iv[1]

        if not coupled:
            if state.kind == "free":
                t = state.val[:, :, None] + w[None, :, :]
                new = _State("free", state.open_uid, t.max(axis=1))
                recs.append(("plain_free", l, uid, _argmax_last(t, axis=1)))
            else:
                new = _State("free", state.open_uid, state.val[:, None] + w)
                recs.append(("plain_diag", l, uid))
            return new

        if l == iv[0]:  # opening member: pick the group count here
            if state.open_uid is not None:
                raise UnsupportedCouplingLayout(
                    f"layer {l}: coupling group of unit {uid} opens while unit "
                    f"{state.open_uid} is still open"
                )
            assert state.kind == "free" and state.val.shape[0] == 1
            x = state.val[0][:, None] + w
            new = _State("diag", uid, x.max(axis=0))
            recs.append(("open", l, uid, _argmax_last(x, axis=0)))
        else:  # member of the already-open group: count forced
            assert state.open_uid == uid
            if state.kind == "free":
                x = state.val + w.T
                new = _State("diag", uid, x.max(axis=1))
                recs.append(("member_free", l, uid, _argmax_last(x, axis=1)))
            else:
                new = _State("diag", uid, state.val + np.diagonal(w))
                recs.append(("member_diag", l, uid))

        if l == iv[1]:  # closing member: group axis becomes the current axis
            new = _State("free", None, new.val[None, :])
            recs.append(("close", uid))
        return new

    # -- backtrack ----------------------------------------------------------

    def extract(self, final: _State, recs: list) -> _DpOut:
        if final.kind == "free":
            val = final.val
            best = val.max()
            cand = np.argwhere(val == best)
            # prefer the larger count, then the larger open-group count
            o, c = max(cand, key=lambda rc: (rc[1], rc[0]))
            ptr: tuple = ("free", int(o), int(c))
        else:
            val = final.val
            best = val.max()
            o = int(np.argwhere(val == best).max())
            ptr = ("diag", o)

        counts: dict[int, int] = {}
        z: dict[int, int] = {}
        for i, blk in enumerate(self.prep.blocks):
            if self.zstate[i] != _FREE:
                z[blk.block_id] = int(self.zstate[i])

        ptr = self._walk(list(recs), ptr, counts, z)
        assert ptr == ("free", 0, 0), f"backtrack did not reach the chain head: {ptr}"
        return _DpOut(value=float(best), unit_counts=counts, z=z)

    def _walk(self, recs: list, ptr: tuple, counts: dict[int, int], z: dict[int, int]) -> tuple:
        for rec in reversed(recs):
            tag = rec[0]
            if tag == "close":
                assert ptr[0] == "free" and ptr[1] == 0
                ptr = ("diag", ptr[2])
            elif tag == "plain_free":
                _, l, uid, arg = rec
                assert ptr[0] == "free"
                o, c = ptr[1], ptr[2]
                self._set(counts, uid, c)
                ptr = ("free", o, int(arg[o, c]))
            elif tag == "plain_diag":
                _, l, uid = rec
                assert ptr[0] == "free"
                o, c = ptr[1], ptr[2]
                self._set(counts, uid, c)
                ptr = ("diag", o)
            elif tag == "open":
                _, l, uid, arg = rec
                assert ptr[0] == "diag"
                o = ptr[1]
                self._set(counts, uid, o)
                ptr = ("free", 0, int(arg[o]))
            elif tag == "member_free":
                _, l, uid, arg = rec
                assert ptr[0] == "diag"
                o = ptr[1]
                self._set(counts, uid, o)
                ptr = ("free", o, int(arg[o]))
            elif tag == "member_diag":
                _, l, uid = rec
                assert ptr[0] == "diag"
                self._set(counts, uid, ptr[1])
            elif tag == "merge":
                _, block_id, trecs, bypass_closed, wins = rec
                idx = (ptr[1], ptr[2]) if ptr[0] == "free" else (ptr[1],)
                if bool(wins[idx]):
                    z[block_id] = 1
                    ptr = self._walk(trecs, ptr, counts, z)
                else:
                    z[block_id] = 0
                    if bypass_closed:
                        assert ptr[0] == "free" and ptr[1] == 0
                        ptr = ("diag", ptr[2])
            else:  # pragma: no cover
                raise AssertionError(f"unknown record {tag}")
        return ptr

    def _set(self, counts: dict[int, int], uid: int, idx: int) -> None:
        lo, _ = self.domains[uid]
        value = int(self.prep.units[uid].counts[lo + idx])
        prev = counts.get(uid)
        assert prev is None or prev == value
        counts[uid] = value


def _chain_dp(prep: _Prep, zstate: tuple[int, ...], domains: tuple[tuple[int, int], ...],
              lam: float, minimize: bool = False) -> _DpOut:
    dp = _ChainDP(prep, zstate, domains, lam, minimize)
    final, recs = dp.run()
    return dp.extract(final, recs)


# ---------------------------------------------------------------------------
# public single-shot operations
# ---------------------------------------------------------------------------

def _zstate_from_mapping(prep: _Prep, z: dict[int, int]) -> tuple[int, ...]:
    out = []
    for blk in prep.blocks:
        if blk.block_id not in z:
            raise KeyError(f"block decision missing for block {blk.block_id}")
        out.append(1 if z[blk.block_id] else 0)
    return tuple(out)


def _full_domains(prep: _Prep) -> tuple[tuple[int, int], ...]:
    return tuple((0, len(u.counts) - 1) for u in prep.units)


def lagrangian_dp(problem: Problem, z: dict[int, int], lam: float):
    """Exact maximizer of sum(importance - lam * latency) over the active chain.

    Returns (per-layer counts for active layers, relaxed objective, latency of
    the maximizing configuration).
    """
    if lam < 0:
        raise ValueError("multiplier must be >= 0")
    prep = problem.prep
    out = _chain_dp(prep, _zstate_from_mapping(prep, z), _full_domains(prep), lam)
    counts = prep.canonical_counts(out.unit_counts)
    _, lat = _evaluate_units(prep, counts, out.z)
    beta = prep.block_of
    active = {
        l.layer_id: counts[prep.unit_of[l.layer_id]]
        for l in problem.network.layers
        if beta[l.layer_id] is None or out.z.get(beta[l.layer_id], 1) == 1
    }
    return active, out.value, lat


def min_latency(problem: Problem, z: dict[int, int]) -> float:
    """Minimum achievable total latency for fixed block decisions."""
    prep = problem.prep
    out = _chain_dp(prep, _zstate_from_mapping(prep, z), _full_domains(prep), 0.0, minimize=True)
    counts = prep.canonical_counts(out.unit_counts)
    _, lat = _evaluate_units(prep, counts, out.z)
    return lat


# ---------------------------------------------------------------------------
# exact enumeration oracle
# ---------------------------------------------------------------------------

def solve_exact(problem: Problem, enumeration_cap: int = 10_000_000) -> Solution:
    """Global optimum by exhaustive enumeration; the oracle for small instances."""
    prep = problem.prep
    budget = problem.budget_ms
    states = 1
    for u in prep.units:
        states *= len(u.counts)
        if states > enumeration_cap:
            break
    states *= 2 ** len(prep.blocks)
    if states > enumeration_cap:
        raise EnumerationCapExceeded(
            f"~{states:.3g} states exceeds the enumeration cap {enumeration_cap}"
        )

    block_ids = [b.block_id for b in prep.blocks]
    best: tuple | None = None  # (obj, lat, z_tuple, layer_counts_tuple, unit_counts, z)

    for bits in itertools.product((1, 0), repeat=len(block_ids)):
        z = dict(zip(block_ids, bits))
        active = [
            l.layer_id for l in prep.network.layers
            if prep.block_of[l.layer_id] is None or z.get(prep.block_of[l.layer_id]) == 1
        ]
        n = len(active)
        assigned: dict[int, int] = {}

        def rec(pos: int, prev: int, obj: float, lat: float):
            nonlocal best
            if pos == n:
                counts = prep.canonical_counts(assigned)
                key = (
                    -obj, lat, bits,
                    tuple(counts[prep.unit_of[l.layer_id]] for l in prep.network.layers),
                )
                if best is None or key < best[0]:
                    best = (key, dict(counts), dict(z))
                return
            lid = active[pos]
            uid = prep.unit_of[lid]
            table = prep.tables[lid]
            prefix = prep.importances[lid].prefix
            if uid in assigned:
                choices = (assigned[uid],)
                fixed = True
            else:
                choices = prep.units[uid].counts
                fixed = False
            for c in choices:
                step = table.value_at(prev, int(c))
                if lat + step > budget:
                    continue
                if not fixed:
                    assigned[uid] = int(c)
                rec(pos + 1, int(c), obj + float(prefix[c - 1]), lat + step)
                if not fixed:
                    del assigned[uid]

        rec(0, prep.network.input_channels, 0.0, 0.0)

    if best is None:
        zstate = tuple([_FREE] * len(prep.blocks))
        out = _chain_dp(prep, zstate, _full_domains(prep), 0.0, minimize=True)
        counts = prep.canonical_counts(out.unit_counts)
        _, min_lat = _evaluate_units(prep, counts, out.z)
        return Solution(
            channel_choice=_layer_counts(prep, counts),
            block_active=out.z,
            objective=0.0, latency_ms=min_lat, dual_bound=0.0, gap=0.0,
            status="Infeasible",
        )

    _, counts, z = best
    obj, lat = _evaluate_units(prep, counts, z)
    return Solution(
        channel_choice=_layer_counts(prep, counts),
        block_active=z,
        objective=obj, latency_ms=lat, dual_bound=obj, gap=0.0,
        status="Optimal",
    )


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

@dataclass
class _Candidate:
    obj: float
    lat: float
    counts: dict[int, int]  # full unit assignment
    z: dict[int, int]

    def key(self, prep: _Prep):
        zt = tuple(self.z.get(b.block_id, 1) for b in prep.blocks)
        ct = tuple(self.counts[prep.unit_of[l.layer_id]] for l in prep.network.layers)
        return (zt, ct)


def _better(prep: _Prep, a: _Candidate, b: _Candidate | None) -> bool:
    if b is None:
        return True
    if a.obj != b.obj:
        return a.obj > b.obj
    if a.lat != b.lat:
        return a.lat < b.lat
    return a.key(prep) < b.key(prep)


@dataclass
class _NodeResult:
    bound: float
    infeasible: bool
    candidates: list[_Candidate]
    path_lo: _DpOut | None
    path_hi: _DpOut | None
    lam_star: float
    closed: bool


class _Search:
    def __init__(self, problem: Problem, options: SolveOptions):
        self.problem = problem
        self.prep = problem.prep
        self.budget = problem.budget_ms
        self.options = options
        self.incumbent: _Candidate | None = None
        self.nodes = 0
        self.t0 = time.monotonic()

    # -- helpers ------------------------------------------------------------

    def _cand(self, out: _DpOut) -> _Candidate:
        counts = self.prep.canonical_counts(out.unit_counts)
        obj, lat = _evaluate_units(self.prep, counts, out.z)
        return _Candidate(obj=obj, lat=lat, counts=counts, z=out.z)

    def _offer(self, cand: _Candidate) -> None:
        if cand.lat > self.budget:
            return
        if _better(self.prep, cand, self.incumbent):
            improved = self.incumbent is None or cand.obj > self.incumbent.obj
            self.incumbent = cand
            if improved:
                repaired = self._repair(cand)
                if repaired is not None and _better(self.prep, repaired, self.incumbent):
                    self.incumbent = repaired

    def _repair(self, cand: _Candidate) -> _Candidate | None:
        """Greedy lift: raise unit counts (largest first) while budget allows.

        Latency deltas are evaluated incrementally on the transitions a unit
        touches (its member layers and their active successors); the final
        assignment is re-evaluated exactly before being offered.
        """
        prep = self.prep
        z = cand.z
        active = [
            l.layer_id for l in prep.network.layers
            if prep.block_of[l.layer_id] is None or z.get(prep.block_of[l.layer_id], 1) == 1
        ]
        if not active:
            return None
        pos = {lid: i for i, lid in enumerate(active)}
        counts = dict(cand.counts)
        lat = cand.lat
        m0 = prep.network.input_channels

        def contrib(i: int) -> float:
            lid = active[i]
            prev = m0 if i == 0 else counts[prep.unit_of[active[i - 1]]]
            return prep.tables[lid].value_at(prev, counts[prep.unit_of[lid]])

        changed = False
        for u in prep.units:
            cur = counts[u.uid]
            if cur == u.counts[-1]:
                continue
            touched = sorted({
                i for m in u.layers if m in pos
                for i in (pos[m], pos[m] + 1) if i < len(active)
            })
            if not touched:
                continue
            old_sum = sum(contrib(i) for i in touched)
            start = int(np.searchsorted(u.counts, cur))
            lifted = False
            for idx in range(len(u.counts) - 1, start, -1):
                counts[u.uid] = int(u.counts[idx])
                new_sum = sum(contrib(i) for i in touched)
                if lat - old_sum + new_sum <= self.budget:
                    lat = lat - old_sum + new_sum
                    lifted = True
                    changed = True
                    break
            if not lifted:
                counts[u.uid] = cur
        if not changed:
            return None
        obj, lat = _evaluate_units(prep, counts, z)
        if lat > self.budget:
            return None
        return _Candidate(obj=obj, lat=lat, counts=counts, z=z)

    # -- node relaxation ----------------------------------------------------

    def process(self, zstate: tuple[int, ...], domains, warm_lam: float) -> _NodeResult:
        prep = self.prep
        budget = self.budget
        self.nodes += 1

        out_min = _chain_dp(prep, zstate, domains, 0.0, minimize=True)
        cand_min = self._cand(out_min)
        if cand_min.lat > budget:
            return _NodeResult(
                bound=-math.inf, infeasible=True, candidates=[],
                path_lo=None, path_hi=None, lam_star=warm_lam, closed=True,
            )
        candidates = [cand_min]

        out0 = _chain_dp(prep, zstate, domains, 0.0)
        cand0 = self._cand(out0)
        if cand0.lat <= budget:
            # unconstrained optimum fits: node solved exactly
            return _NodeResult(
                bound=out0.value, infeasible=False, candidates=[cand0],
                path_lo=None, path_hi=None, lam_star=0.0, closed=True,
            )

        dual = out0.value  # D(0)
        lam_lo, out_lo, cand_lo = 0.0, out0, cand0

        lam_hi = warm_lam if warm_lam > 0 else 1.0
        out_hi = cand_hi = None
        for _ in range(80):
            out_hi = _chain_dp(prep, zstate, domains, lam_hi)
            cand_hi = self._cand(out_hi)
            d = out_hi.value + lam_hi * budget
            dual = min(dual, d)
            if cand_hi.lat <= budget:
                break
            lam_lo, out_lo, cand_lo = lam_hi, out_hi, cand_hi
            lam_hi *= 4.0
        else:  # pragma: no cover - min-latency path guarantees termination
            raise AssertionError("bracket growth failed despite feasible minimum")
        candidates.append(cand_hi)

        for _ in range(64):
            prev_dual = dual
            lam = 0.5 * (lam_lo + lam_hi)
            out = _chain_dp(prep, zstate, domains, lam)
            cand = self._cand(out)
            dual = min(dual, out.value + lam * budget)
            if cand.lat <= budget:
                lam_hi, out_hi, cand_hi = lam, out, cand
                candidates.append(cand)
            else:
                lam_lo, out_lo, cand_lo = lam, out, cand
            best_local = max(c.obj for c in candidates if c.lat <= budget)
            if dual <= best_local:
                dual = best_local
                break
            if abs(prev_dual - dual) < 1e-9 * max(1.0, abs(dual)):
                break

        best_local = max(c.obj for c in candidates if c.lat <= budget)
        closed = dual <= best_local
        return _NodeResult(
            bound=max(dual, best_local), infeasible=False, candidates=candidates,
            path_lo=out_lo, path_hi=out_hi, lam_star=0.5 * (lam_lo + lam_hi),
            closed=closed,
        )

    # -- branching ----------------------------------------------------------

    def branch(self, zstate, domains, res: _NodeResult):
        prep = self.prep
        free = [i for i, zb in enumerate(zstate) if zb == _FREE]
        if free:
            pick = free[0]
            if res.path_lo is not None and res.path_hi is not None:
                for i in free:
                    bid = prep.blocks[i].block_id
                    if res.path_lo.z.get(bid) != res.path_hi.z.get(bid):
                        pick = i
                        break
            z1 = tuple(1 if i == pick else zb for i, zb in enumerate(zstate))
            z0 = tuple(0 if i == pick else zb for i, zb in enumerate(zstate))
            return [(z1, domains), (z0, domains)]

        # count branching on the unit where the two bracket paths disagree most
        pick_uid, split = None, None
        if res.path_lo is not None and res.path_hi is not None:
            cl = prep.canonical_counts(res.path_lo.unit_counts)
            ch = prep.canonical_counts(res.path_hi.unit_counts)
            gap_best = 0
            for u in prep.units:
                lo, hi = domains[u.uid]
                ilo = min(max(int(np.searchsorted(u.counts, cl[u.uid])), lo), hi)
                ihi = min(max(int(np.searchsorted(u.counts, ch[u.uid])), lo), hi)
                d = abs(ilo - ihi)
                if d > gap_best:
                    gap_best = d
                    pick_uid, split = u.uid, (min(ilo, ihi) + max(ilo, ihi)) // 2
        if pick_uid is None:
            for u in prep.units:
                lo, hi = domains[u.uid]
                if hi > lo:
                    pick_uid, split = u.uid, (lo + hi) // 2
                    break
        if pick_uid is None:
            return []  # fully fixed assignment; relaxation already closed it
        lo, hi = domains[pick_uid]
        split = min(max(split, lo), hi - 1)
        upper = tuple(
            (split + 1, hi) if uid == pick_uid else d
            for uid, d in enumerate(domains)
        )
        lower = tuple(
            (lo, split) if uid == pick_uid else d
            for uid, d in enumerate(domains)
        )
        return [(zstate, upper), (zstate, lower)]

    # -- limits -------------------------------------------------------------

    def out_of_time(self) -> bool:
        lim = self.options.time_limit_s
        return lim is not None and (time.monotonic() - self.t0) >= lim

    def out_of_nodes(self) -> bool:
        lim = self.options.node_limit
        return lim is not None and self.nodes >= lim


def solve(problem: Problem, options: SolveOptions | None = None) -> Solution:
    """Branch-and-bound with Lagrangian chain-DP bounds and a gap certificate."""
    options = options or SolveOptions()
    prep = problem.prep
    budget = problem.budget_ms
    search = _Search(problem, options)

    root_z = tuple([_FREE] * len(prep.blocks))
    root_dom = _full_domains(prep)

    probe = _chain_dp(prep, root_z, root_dom, 0.0, minimize=True)
    probe_cand = search._cand(probe)
    if probe_cand.lat > budget:
        return Solution(
            channel_choice=_layer_counts(prep, probe_cand.counts),
            block_active={b.block_id: probe_cand.z.get(b.block_id, 1) for b in prep.blocks},
            objective=0.0, latency_ms=probe_cand.lat,
            dual_bound=0.0, gap=0.0, status="Infeasible",
        )
    search._offer(probe_cand)

    heap: list = []
    seq = itertools.count()
    res = search.process(root_z, root_dom, warm_lam=0.0)
    for cand in res.candidates:
        search._offer(cand)
    limit_hit = False
    if not res.closed and res.bound > search.incumbent.obj:
        for child in search.branch(root_z, root_dom, res):
            heapq.heappush(heap, (-res.bound, next(seq), child[0], child[1], res.lam_star))

    while heap:
        inc = search.incumbent
        dual_now = max(inc.obj, -heap[0][0])
        gap_now = (dual_now - inc.obj) / max(dual_now, _GAP_EPS)
        if gap_now <= options.target_gap:
            break
        if search.out_of_time() or search.out_of_nodes():
            limit_hit = True
            break
        neg_bound, _, zstate, domains, warm = heapq.heappop(heap)
        if -neg_bound <= search.incumbent.obj:
            continue
        res = search.process(zstate, domains, warm)
        for cand in res.candidates:
            search._offer(cand)
        if res.infeasible or res.closed:
            continue
        bound = min(res.bound, -neg_bound)
        if bound <= search.incumbent.obj:
            continue
        for child in search.branch(zstate, domains, res):
            heapq.heappush(heap, (-bound, next(seq), child[0], child[1], res.lam_star))

    inc = search.incumbent
    if inc is None:
        # cannot happen: the feasibility probe installs an incumbent
        raise NodeLimitReached("no feasible incumbent found before limit")
    dual = inc.obj
    if heap:
        dual = max(dual, -heap[0][0])
    gap = (dual - inc.obj) / max(dual, _GAP_EPS)
    status = "Optimal" if gap <= _OPTIMAL_GAP else "Feasible"
    if limit_hit and status != "Optimal":
        status = "Feasible"
    return Solution(
        channel_choice=_layer_counts(prep, inc.counts),
        block_active={b.block_id: inc.z.get(b.block_id, 1) for b in prep.blocks},
        objective=inc.obj, latency_ms=inc.lat,
        dual_bound=dual, gap=gap, status=status,
    )
