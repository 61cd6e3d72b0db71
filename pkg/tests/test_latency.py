import numpy as np
import pytest

from latprune.errors import DimensionMismatch, IndexOutOfRange, PrecedenceViolation
from latprune.latency import (
    DeviceModel,
    LatencyTable,
    bilayer_latency,
    build_cost_matrix,
    dense_latency,
    halp_channel_cost,
    halp_error_bound,
    measured_counts,
    synthesize_table,
    tables_from_dict,
    tables_to_dict,
    total_plan_latency,
)
from latprune.netgraph import effective_predecessor

from conftest import dense_table, make_layer, monotone_tables


def test_dense_cost_matrix_is_identity_over_table():
    entries = np.arange(16, dtype=float).reshape(4, 4)
    t = dense_table(1, entries)
    assert np.array_equal(build_cost_matrix(t), entries)


def test_granular_fill_rounds_up():
    # measured at counts {2, 4} on both axes
    t = LatencyTable(
        layer_id=1, granularity=2,
        row_counts=np.asarray([2, 4]), col_counts=np.asarray([2, 4]),
        entries=np.asarray([[1.0, 2.0], [3.0, 4.0]]),
    )
    assert t.value_at(1, 3) == 2.0  # (ceil(1/2)*2, ceil(3/2)*2) == (2, 4)
    c = build_cost_matrix(t)
    assert c.shape == (4, 4)
    assert c[0, 2] == 2.0
    assert c[3, 3] == 4.0


def test_dense_lookup_oracle():
    rng = np.random.default_rng(3)
    entries = rng.uniform(0, 1, size=(7, 9))
    t = dense_table(1, entries)
    c = build_cost_matrix(t)
    for _ in range(100):
        i = int(rng.integers(1, 8))
        j = int(rng.integers(1, 10))
        assert c[i - 1, j - 1] == entries[i - 1, j - 1]
        assert t.value_at(i, j) == entries[i - 1, j - 1]


def test_bilayer_latency_selects_single_entry():
    entries = np.arange(16, dtype=float).reshape(4, 4)
    assert bilayer_latency(2, 3, entries) == entries[1, 2]
    assert bilayer_latency(4, 4, entries) == entries[3, 3]
    with pytest.raises(IndexOutOfRange):
        bilayer_latency(5, 1, entries)


def test_bilayer_latency_matches_one_hot_dot_product():
    rng = np.random.default_rng(11)
    c = rng.uniform(0, 10, size=(6, 8))
    for _ in range(50):
        i = int(rng.integers(1, 7))
        j = int(rng.integers(1, 9))
        y_prev = np.zeros(6)
        y_prev[i - 1] = 1.0
        y_cur = np.zeros(8)
        y_cur[j - 1] = 1.0
        oracle = float(y_cur @ (y_prev @ c))
        assert abs(bilayer_latency(i, j, c) - oracle) <= 1e-12


def test_total_latency_two_layer_chain(chain3):
    tables = monotone_tables(chain3)
    y = {1: 2, 2: 1, 3: 2}
    expected = (
        tables[1].value_at(2, 2) + tables[2].value_at(2, 1) + tables[3].value_at(1, 2)
    )
    assert total_plan_latency(chain3, tables, y) == expected


def test_total_latency_skips_removed_blocks(block_net):
    tables = monotone_tables(block_net)
    y = {1: 1, 2: 2, 3: 1, 4: 2, 5: 1}
    lat = total_plan_latency(block_net, tables, y, {1: 0})
    expected = (
        tables[1].value_at(2, 1) + tables[2].value_at(1, 2) + tables[5].value_at(2, 1)
    )
    assert lat == expected


def test_total_latency_matches_dot_product_oracle(block_net):
    rng = np.random.default_rng(17)
    tables = monotone_tables(block_net, seed=5)
    for _ in range(25):
        y = {
            l.layer_id: int(rng.integers(1, l.max_out_channels + 1))
            for l in block_net.layers
        }
        for lid in (2, 4):  # coupled layers share a count
            y[lid] = y[2]
        z = {1: int(rng.integers(0, 2))}
        # oracle written as the per-layer one-hot double dot product
        total = 0.0
        for layer in block_net.layers:
            if layer.block_id is not None and z[layer.block_id] == 0:
                continue
            pred = effective_predecessor(block_net, layer.layer_id, z)
            c_prev = block_net.input_channels if pred == 0 else y[pred]
            cm = build_cost_matrix(tables[layer.layer_id])
            y_prev = np.zeros(cm.shape[0])
            y_prev[c_prev - 1] = 1.0
            y_cur = np.zeros(cm.shape[1])
            y_cur[y[layer.layer_id] - 1] = 1.0
            total += float(y_cur @ (y_prev @ cm))
        assert total_plan_latency(block_net, tables, y, z) == pytest.approx(total, abs=1e-12)


def test_block_removal_never_increases_latency_on_monotone_tables(block_net):
    rng = np.random.default_rng(41)
    tables = monotone_tables(block_net, seed=8)
    for _ in range(20):
        y = {
            l.layer_id: int(rng.integers(1, l.max_out_channels + 1))
            for l in block_net.layers
        }
        y[4] = y[2]  # coupled boundary
        with_block = total_plan_latency(block_net, tables, y, {1: 1})
        without = total_plan_latency(block_net, tables, y, {1: 0})
        assert without <= with_block + 1e-12


def test_synthesize_formula():
    layer = make_layer(1, 1, k=1, h=1, w=1)
    t = synthesize_table(layer, 1, DeviceModel(0.01, 1e-6, 1))
    assert t.value_at(1, 1) == pytest.approx(0.01 + 1e-6, rel=1e-15)


def test_synthesize_tile_quantization():
    layer = make_layer(1, 8, k=3, h=4, w=4)
    t = synthesize_table(layer, 8, DeviceModel(0.0, 1e-3, 8))
    assert t.value_at(1, 1) == t.value_at(8, 8)


def test_synthesize_monotone_staircase():
    layer = make_layer(1, 32, k=3, h=8, w=8)
    t = synthesize_table(layer, 32, DeviceModel(0.01, 1e-4, 8))
    c = build_cost_matrix(t)
    assert np.all(np.diff(c, axis=0) >= 0)
    assert np.all(np.diff(c, axis=1) >= 0)
    # staircase: constant inside tile cells
    assert c[0, 0] == c[7, 7]
    assert c[8, 0] > c[7, 0]


def test_dense_latency_is_bottom_right_sum(block_net):
    tables = monotone_tables(block_net)
    expected = 0.0
    prev = block_net.input_channels
    for layer in block_net.layers:
        expected += tables[layer.layer_id].value_at(prev, layer.max_out_channels)
        prev = layer.max_out_channels
    assert dense_latency(block_net, tables) == pytest.approx(expected, abs=1e-9)


def test_halp_cost_base_case():
    t = dense_table(1, [[1.0, 3.0, 3.5]])
    assert halp_channel_cost(t, 1, 1) == 1.0  # T(p, 1) - T(p, 0) with T(., 0) = 0
    assert halp_channel_cost(t, 1, 2) == 2.0


def test_halp_cost_zero_within_tile():
    layer = make_layer(1, 16, k=1, h=2, w=2)
    t = synthesize_table(layer, 8, DeviceModel(0.01, 1e-3, 8))
    assert halp_channel_cost(t, 8, 5) == 0.0


def test_halp_cost_telescopes_exactly():
    layer = make_layer(1, 32, k=3, h=14, w=14)
    for tile in (1, 4, 8):
        t = synthesize_table(layer, 24, DeviceModel(0.05, 1e-3, tile))
        for p in (1, 7, 24):
            total = sum(halp_channel_cost(t, p, j) for j in range(1, 33))
            assert total == t.value_at(p, 32)


def test_error_bound_zero_without_staleness():
    t = dense_table(1, np.arange(12, dtype=float).reshape(3, 4))
    for j in range(1, 5):
        assert halp_error_bound(t, 3, 3, j) == 0.0


def test_error_bound_reads_row_differences():
    layer = make_layer(1, 32, k=1, h=8, w=8)
    t = synthesize_table(layer, 16, DeviceModel(0.01, 1e-3, 8))
    for j in (1, 5, 12, 32):
        lo = abs(t.value_at(16, j - 1) - t.value_at(8, j - 1)) if j > 1 else 0.0
        hi = abs(t.value_at(16, j) - t.value_at(8, j))
        assert halp_error_bound(t, 16, 8, j) == lo + hi


def test_error_bound_dominates_true_error():
    rng = np.random.default_rng(23)
    tables = []
    for i in range(10):
        entries = rng.uniform(0, 5, size=(12, 16))
        if i % 2 == 0:  # half monotone, half arbitrary
            entries = np.cumsum(np.cumsum(entries, axis=0), axis=1) * 0.01
        tables.append(dense_table(i + 1, entries))
    for _ in range(1000):
        t = tables[int(rng.integers(0, len(tables)))]
        p = int(rng.integers(1, 13))
        p_hat = int(rng.integers(1, p + 1))
        j = int(rng.integers(1, 17))
        r_frozen = halp_channel_cost(t, p, j)
        r_true = halp_channel_cost(t, p_hat, j)
        assert abs(r_true - r_frozen) <= halp_error_bound(t, p, p_hat, j) + 1e-15


def test_error_bound_precedence_check():
    t = dense_table(1, [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(PrecedenceViolation):
        halp_error_bound(t, 1, 2, 1)


def test_tables_json_round_trip(block_net):
    tables = monotone_tables(block_net)
    data = tables_to_dict(tables)
    back = tables_from_dict(data, block_net)
    for lid, t in tables.items():
        assert np.array_equal(back[lid].entries, t.entries)


def test_granular_table_round_trip_with_odd_width():
    layer = make_layer(1, 10, k=1, h=2, w=2)
    t = synthesize_table(layer, 7, DeviceModel(0.01, 1e-3, 2), granularity=4)
    assert list(t.row_counts) == [4, 7]
    assert list(t.col_counts) == [4, 8, 10]
    data = tables_to_dict({1: t})
    layers = (make_layer(1, 10, k=1, h=2, w=2),)
    from latprune.netgraph import NetworkSpec, validate_network
    net = validate_network(NetworkSpec(layers=layers, input_channels=7))
    back = tables_from_dict(data, net)[1]
    assert list(back.row_counts) == [4, 7]
    assert list(back.col_counts) == [4, 8, 10]
    assert np.array_equal(back.entries, t.entries)


def test_measured_counts_rules():
    assert measured_counts(8, 2) == [2, 4, 6, 8]
    assert measured_counts(7, 2) == [2, 4, 6, 7]
    assert measured_counts(3, 8) == [3]
    assert measured_counts(5, 1) == [1, 2, 3, 4, 5]


def test_dimension_mismatch_detected(block_net):
    tables = monotone_tables(block_net)
    bad = dict(tables)
    bad[2] = dense_table(2, [[0.1, 0.2], [0.3, 0.4]])
    from latprune.latency import validate_tables
    with pytest.raises(DimensionMismatch, match="layer 2"):
        validate_tables(block_net, bad)
