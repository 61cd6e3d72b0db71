"""Latency side of the problem: lookup tables, cost matrices, plan evaluation.

A lookup table T_l(i, j) records the measured latency of layer ``l`` running
with ``i`` active input channels and ``j`` active output channels. Tables may
be measured on a coarse grid (every ``granularity`` channels plus the full
width); intermediate counts are resolved by rounding *up* to the next
measured point, which is pessimistic on monotone hardware so interpolation
can never push a plan over budget.

Also hosts the marginal-cost model used by the stale-input knapsack baseline
(cost of the j-th output channel with the input count frozen) together with
its worst-case error bound, which the test suite checks against brute force.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    PrecedenceViolation,
    SchemaError,
)
from .netgraph import LayerSpec, NetworkSpec


def measured_counts(full: int, granularity: int) -> list[int]:
    """Channel counts at which a table of logical size ``full`` is measured.

    Multiples of the granularity, with the full width always included as the
    last point so the dense configuration is exact.
    """
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    pts = list(range(granularity, full + 1, granularity))
    if not pts or pts[-1] != full:
        pts.append(full)
    return pts


@dataclass(frozen=True)
class LatencyTable:
    layer_id: int
    granularity: int
    row_counts: np.ndarray  # measured input-channel counts, ascending, last == m_{l-1}
    col_counts: np.ndarray  # measured output-channel counts, ascending, last == m_l
    entries: np.ndarray     # (len(row_counts), len(col_counts)) milliseconds

    def __post_init__(self):
        rc = np.asarray(self.row_counts, dtype=int)
        cc = np.asarray(self.col_counts, dtype=int)
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (rc.shape[0], cc.shape[0]):
            raise DimensionMismatch(
                f"layer {self.layer_id}: entries shape {e.shape} does not match "
                f"{rc.shape[0]} x {cc.shape[0]} measured points"
            )
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise DimensionMismatch(
                f"layer {self.layer_id}: latency entries must be finite and >= 0"
            )
        for arr, name in ((rc, "row_counts"), (cc, "col_counts")):
            if arr.shape[0] == 0 or np.any(np.diff(arr) <= 0) or arr[0] < 1:
                raise DimensionMismatch(f"layer {self.layer_id}: invalid {name}")
        e.setflags(write=False)
        rc.setflags(write=False)
        cc.setflags(write=False)
        object.__setattr__(self, "row_counts", rc)
        object.__setattr__(self, "col_counts", cc)
        object.__setattr__(self, "entries", e)

    @property
    def max_in(self) -> int:
        return int(self.row_counts[-1])

    @property
    def max_out(self) -> int:
        return int(self.col_counts[-1])

    def _row_idx(self, i):
        g = self.granularity
        return np.minimum((np.asarray(i) + g - 1) // g - 1, self.row_counts.shape[0] - 1)

    def _col_idx(self, j):
        g = self.granularity
        return np.minimum((np.asarray(j) + g - 1) // g - 1, self.col_counts.shape[0] - 1)

    def value_at(self, i: int, j: int) -> float:
        """T(i, j) with the round-up fill rule for unmeasured counts."""
        nr, nc = self.entries.shape
        if not 1 <= i <= int(self.row_counts[-1]):
            raise IndexOutOfRange(
                f"layer {self.layer_id}: input count {i} outside 1..{self.max_in}"
            )
        if not 1 <= j <= int(self.col_counts[-1]):
            raise IndexOutOfRange(
                f"layer {self.layer_id}: output count {j} outside 1..{self.max_out}"
            )
        g = self.granularity
        r = (i + g - 1) // g - 1
        c = (j + g - 1) // g - 1
        return float(self.entries[r if r < nr else nr - 1, c if c < nc else nc - 1])

    def value_grid(self, i_counts, j_counts) -> np.ndarray:
        """Vectorized T over the product of the given count arrays."""
        i = np.asarray(i_counts, dtype=int)
        j = np.asarray(j_counts, dtype=int)
        if i.size and (i.min() < 1 or i.max() > self.max_in):
            raise IndexOutOfRange(f"layer {self.layer_id}: input counts outside 1..{self.max_in}")
        if j.size and (j.min() < 1 or j.max() > self.max_out):
            raise IndexOutOfRange(f"layer {self.layer_id}: output counts outside 1..{self.max_out}")
        return self.entries[np.ix_(self._row_idx(i), self._col_idx(j))]


@dataclass(frozen=True)
class DeviceModel:
    """Synthetic device for offline testing: affine cost over tile-quantized MACs."""

    fixed_overhead_ms: float = 0.01
    cost_per_mac_ms: float = 1e-9
    tile: int = 1

    def __post_init__(self):
        if self.fixed_overhead_ms < 0:
            raise ValueError("fixed_overhead_ms must be >= 0")
        if self.cost_per_mac_ms <= 0:
            raise ValueError("cost_per_mac_ms must be > 0")
        if self.tile < 1:
            raise ValueError("tile must be >= 1")


def synthesize_table(
    layer: LayerSpec,
    prev_channels: int,
    model: DeviceModel,
    granularity: int = 1,
) -> LatencyTable:
    """Deterministic staircase table for the given layer shape.

    T(i, j) = overhead + cost_per_mac * ceil(i/tile)*tile * ceil(j/tile)*tile
              * K^2 * H * W

    Constant within tile cells and non-decreasing in both counts, so tests
    exercise non-smooth latency landscapes.
    """
    t = model.tile
    rows = np.asarray(measured_counts(prev_channels, granularity), dtype=int)
    cols = np.asarray(measured_counts(layer.max_out_channels, granularity), dtype=int)
    qi = ((rows + t - 1) // t) * t
    qj = ((cols + t - 1) // t) * t
    scale = layer.kernel_size ** 2 * layer.spatial_h * layer.spatial_w
    entries = model.fixed_overhead_ms + model.cost_per_mac_ms * np.outer(qi, qj) * scale
    return LatencyTable(
        layer_id=layer.layer_id,
        granularity=granularity,
        row_counts=rows,
        col_counts=cols,
        entries=entries,
    )


def build_cost_matrix(table: LatencyTable) -> np.ndarray:
    """Dense m_{l-1} x m_l cost matrix; identity on fully measured tables."""
    rows = np.arange(1, table.max_in + 1)
    cols = np.arange(1, table.max_out + 1)
    return table.value_grid(rows, cols)


def bilayer_latency(c_prev: int, c_cur: int, cost_matrix: np.ndarray) -> float:
    """Latency of one layer at (input, output) channel counts.

    Equals y_cur . (y_prev^T . C) for one-hot selectors; the one-hot products
    collapse to a single matrix entry, so this is a plain lookup.
    """
    m_prev, m_cur = cost_matrix.shape
    if not 1 <= c_prev <= m_prev:
        raise IndexOutOfRange(f"input count {c_prev} outside 1..{m_prev}")
    if not 1 <= c_cur <= m_cur:
        raise IndexOutOfRange(f"output count {c_cur} outside 1..{m_cur}")
    return float(cost_matrix[c_prev - 1, c_cur - 1])


def total_plan_latency(
    network: NetworkSpec,
    tables: dict[int, LatencyTable],
    y: dict[int, int],
    z: dict[int, int] | None = None,
) -> float:
    """Total latency of a configuration: sum of per-layer table lookups.

    Layers inside removed blocks (z=0) contribute exactly zero and are
    skipped, so the next active layer reads its input count from the nearest
    active predecessor (the residual skip path).
    """
    z = z or {}
    beta = network.layer2block
    total = 0.0
    prev = network.input_channels
    for layer in network.layers:
        lid = layer.layer_id
        b = beta.get(lid)
        if b is not None and z.get(b, 1) == 0:
            continue
        c = y[lid]
        total += tables[lid].value_at(prev, c)
        prev = c
    return total


def dense_latency(network: NetworkSpec, tables: dict[int, LatencyTable]) -> float:
    """Latency with every block active and every layer at full width."""
    y = {l.layer_id: l.max_out_channels for l in network.layers}
    return total_plan_latency(network, tables, y, {})


# ---------------------------------------------------------------------------
# Stale-input marginal costs (knapsack baseline) and their error bound
# ---------------------------------------------------------------------------

def halp_channel_cost(table: LatencyTable, p_prev: int, j: int) -> float:
    """Marginal latency of the j-th output channel with the input count frozen.

    T(p_prev, j) - T(p_prev, j-1), with T(., 0) defined as 0 so the costs
    telescope to the full row. May be negative on non-monotone measured
    tables; returned as-is.
    """
    if not 1 <= j <= table.max_out:
        raise IndexOutOfRange(f"layer {table.layer_id}: j={j} outside 1..{table.max_out}")
    if not 1 <= p_prev <= table.max_in:
        raise IndexOutOfRange(f"layer {table.layer_id}: p_prev={p_prev} outside 1..{table.max_in}")
    base = table.value_at(p_prev, j - 1) if j > 1 else 0.0
    return table.value_at(p_prev, j) - base


def halp_error_bound(table: LatencyTable, p_prev: int, p_hat_prev: int, j: int) -> float:
    """Worst-case error of the stale-input marginal cost.

    When the true input count p_hat_prev has shrunk below the frozen p_prev,
    the marginal-cost estimate is off by at most
    |T(p,j-1) - T(p_hat,j-1)| + |T(p,j) - T(p_hat,j)|.
    """
    if p_hat_prev > p_prev:
        raise PrecedenceViolation(
            f"layer {table.layer_id}: p_hat_prev={p_hat_prev} exceeds frozen p_prev={p_prev}"
        )
    if j > 1:
        lo = abs(table.value_at(p_prev, j - 1) - table.value_at(p_hat_prev, j - 1))
    else:
        lo = 0.0
    hi = abs(table.value_at(p_prev, j) - table.value_at(p_hat_prev, j))
    return lo + hi


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

_TOP_KEYS = {"layers"}
_LAYER_KEYS = {"layer_id", "granularity", "rows", "cols", "entries"}


def tables_from_dict(data: dict, network: NetworkSpec | None = None) -> dict[int, LatencyTable]:
    """Parse the latency file; when a network is given, pin logical dims to it.

    Coarse tables store measured points only, so the logical width is
    recovered from the network (the last grid point is re-bound to the true
    maximum count). Without a network the last point is assumed to be
    rows*granularity.
    """
    if not isinstance(data, dict):
        raise SchemaError("latency file: top level must be an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"latency file: unknown keys {sorted(unknown)}")
    out: dict[int, LatencyTable] = {}
    try:
        for entry in data["layers"]:
            unknown = set(entry) - _LAYER_KEYS
            if unknown:
                raise SchemaError(
                    f"latency entry {entry.get('layer_id')}: unknown keys {sorted(unknown)}"
                )
            lid = int(entry["layer_id"])
            g = int(entry["granularity"])
            rows = int(entry["rows"])
            cols = int(entry["cols"])
            entries = np.asarray(entry["entries"], dtype=float)
            if entries.shape != (rows, cols):
                raise DimensionMismatch(
                    f"layer {lid}: entries shape {entries.shape} != declared {rows}x{cols}"
                )
            if network is not None:
                layer = network.layer_by_id.get(lid)
                if layer is None:
                    raise DimensionMismatch(f"latency file: layer {lid} not in network")
                m_in = network.prev_max_channels(lid)
                m_out = layer.max_out_channels
                if len(measured_counts(m_in, g)) != rows or len(measured_counts(m_out, g)) != cols:
                    raise DimensionMismatch(
                        f"layer {lid}: {rows}x{cols} measured points do not cover "
                        f"{m_in}x{m_out} channels at granularity {g}"
                    )
                rc = measured_counts(m_in, g)
                cc = measured_counts(m_out, g)
            else:
                rc = [min(k * g, rows * g) for k in range(1, rows + 1)]
                cc = [min(k * g, cols * g) for k in range(1, cols + 1)]
            out[lid] = LatencyTable(
                layer_id=lid,
                granularity=g,
                row_counts=np.asarray(rc, dtype=int),
                col_counts=np.asarray(cc, dtype=int),
                entries=entries,
            )
    except KeyError as exc:
        raise SchemaError(f"latency file: missing required key {exc}") from exc
    return out


def tables_to_dict(tables: dict[int, LatencyTable]) -> dict:
    return {
        "layers": [
            {
                "layer_id": t.layer_id,
                "granularity": t.granularity,
                "rows": int(t.row_counts.shape[0]),
                "cols": int(t.col_counts.shape[0]),
                "entries": [[float(x) for x in row] for row in t.entries],
            }
            for _, t in sorted(tables.items())
        ]
    }


def load_tables(path, network: NetworkSpec | None = None) -> dict[int, LatencyTable]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"latency file: invalid JSON ({exc})") from exc
    return tables_from_dict(data, network)


def save_tables(tables: dict[int, LatencyTable], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tables_to_dict(tables), fh, indent=2)
        fh.write("\n")


def validate_tables(network: NetworkSpec, tables: dict[int, LatencyTable]) -> None:
    """Cross-check table dimensions against the network (DimensionMismatch)."""
    for layer in network.layers:
        t = tables.get(layer.layer_id)
        if t is None:
            raise DimensionMismatch(f"no latency table for layer {layer.layer_id}")
        m_in = network.prev_max_channels(layer.layer_id)
        if t.max_in != m_in or t.max_out != layer.max_out_channels:
            raise DimensionMismatch(
                f"layer {layer.layer_id}: table covers {t.max_in}x{t.max_out}, "
                f"network needs {m_in}x{layer.max_out_channels}"
            )
