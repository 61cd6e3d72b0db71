import numpy as np
import pytest

from latprune.importance import ChannelScores
from latprune.latency import LatencyTable
from latprune.netgraph import BlockSpec, LayerSpec, NetworkSpec, validate_network


def make_layer(lid, m, block_id=None, group=None, k=1, h=2, w=2):
    return LayerSpec(
        layer_id=lid, name=f"conv{lid}", max_out_channels=m, kernel_size=k,
        spatial_h=h, spatial_w=w, block_id=block_id, coupling_group=group,
    )


def dense_table(layer_id, entries):
    e = np.asarray(entries, dtype=float)
    return LatencyTable(
        layer_id=layer_id, granularity=1,
        row_counts=np.arange(1, e.shape[0] + 1),
        col_counts=np.arange(1, e.shape[1] + 1),
        entries=e,
    )


@pytest.fixture
def chain3():
    """Three-layer chain, no blocks."""
    return validate_network(NetworkSpec(
        layers=(make_layer(1, 2), make_layer(2, 3), make_layer(3, 2)),
        input_channels=2,
    ))


@pytest.fixture
def block_net():
    """Five layers, one removable block {3, 4} skipped from layer 2."""
    layers = (
        make_layer(1, 2),
        make_layer(2, 3, group="s"),
        make_layer(3, 2, block_id=1),
        make_layer(4, 3, block_id=1, group="s"),
        make_layer(5, 2),
    )
    return validate_network(NetworkSpec(
        layers=layers,
        blocks=(BlockSpec(block_id=1, member_layers=(3, 4), skip_source_layer=2),),
        input_channels=2,
    ))


def uniform_scores(network, value=1.0):
    return {
        l.layer_id: ChannelScores(l.layer_id, np.full(l.max_out_channels, value))
        for l in network.layers
    }


def seeded_scores(network, seed=0):
    rng = np.random.default_rng(seed)
    return {
        l.layer_id: ChannelScores(l.layer_id, rng.uniform(0.1, 1.0, l.max_out_channels))
        for l in network.layers
    }


def monotone_tables(network, seed=0):
    rng = np.random.default_rng(seed)
    tables = {}
    for layer in network.layers:
        m_in = network.prev_max_channels(layer.layer_id)
        r = np.cumsum(rng.uniform(0.05, 0.3, m_in))
        c = np.cumsum(rng.uniform(0.05, 0.3, layer.max_out_channels))
        tables[layer.layer_id] = dense_table(layer.layer_id, 0.1 + np.add.outer(r, c))
    return tables
