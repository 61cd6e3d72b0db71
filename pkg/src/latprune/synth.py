"""Synthetic instances: residual-style networks, device tables, random cases.

Everything here is deterministic given its arguments (plus an explicit seed
for the random generators), so benchmark instances and test fixtures are
reproducible byte for byte.
"""

from __future__ import annotations

import numpy as np

from .importance import ChannelScores
from .latency import DeviceModel, LatencyTable, measured_counts, synthesize_table
from .netgraph import BlockSpec, LayerSpec, NetworkSpec, validate_network


def synthesize_network_tables(
    network: NetworkSpec, model: DeviceModel, granularity: int = 1
) -> dict[int, LatencyTable]:
    """One staircase table per layer, sized from the network."""
    out: dict[int, LatencyTable] = {}
    for layer in network.layers:
        prev = network.prev_max_channels(layer.layer_id)
        out[layer.layer_id] = synthesize_table(layer, prev, model, granularity)
    return out


def residual_network(
    stage_blocks: tuple[int, ...],
    stage_widths: tuple[int, ...],
    stage_inner: tuple[int, ...],
    stage_spatial: tuple[int, ...],
    stem_channels: int = 64,
    stem_kernel: int = 7,
    stem_spatial: int = 112,
    input_channels: int = 3,
) -> NetworkSpec:
    """Chain-of-stages residual network.

    Each stage opens with a projection layer that sets the stage width, then
    runs ``stage_blocks[s]`` removable blocks of three layers (narrow 1x1,
    3x3, wide 1x1). Stage-boundary layers share one coupling group because
    every residual add in the stage joins feature maps of the stage width.
    """
    layers: list[LayerSpec] = []
    blocks: list[BlockSpec] = []

    def add_layer(name, width, kernel, spatial, block_id=None, group=None):
        layers.append(LayerSpec(
            layer_id=len(layers) + 1,
            name=name,
            max_out_channels=width,
            kernel_size=kernel,
            spatial_h=spatial,
            spatial_w=spatial,
            block_id=block_id,
            coupling_group=group,
        ))
        return layers[-1].layer_id

    add_layer("stem", stem_channels, stem_kernel, stem_spatial)
    for s, (n_blocks, width, inner, spatial) in enumerate(
        zip(stage_blocks, stage_widths, stage_inner, stage_spatial), start=1
    ):
        group = f"stage{s}"
        add_layer(f"stage{s}.proj", width, 1, spatial, group=group)
        for b in range(1, n_blocks + 1):
            bid = len(blocks) + 1
            skip = layers[-1].layer_id
            first = add_layer(f"stage{s}.block{b}.conv1", inner, 1, spatial, block_id=bid)
            add_layer(f"stage{s}.block{b}.conv2", inner, 3, spatial, block_id=bid)
            last = add_layer(f"stage{s}.block{b}.conv3", width, 1, spatial,
                             block_id=bid, group=group)
            blocks.append(BlockSpec(block_id=bid, member_layers=tuple(range(first, last + 1)),
                                    skip_source_layer=skip))
    return validate_network(NetworkSpec(
        layers=tuple(layers), blocks=tuple(blocks), input_channels=input_channels,
    ))


def resnet50_shaped() -> NetworkSpec:
    """53 layers, 16 removable blocks, widths up to 2048."""
    return residual_network(
        stage_blocks=(3, 4, 6, 3),
        stage_widths=(256, 512, 1024, 2048),
        stage_inner=(64, 128, 256, 512),
        stage_spatial=(56, 28, 14, 7),
    )


def benchmark_device() -> DeviceModel:
    """Device constants for the wide benchmark instance (tiled, overhead-bearing)."""
    return DeviceModel(fixed_overhead_ms=0.02, cost_per_mac_ms=1e-9, tile=16)


def medium_instance():
    """15-layer, 4-block residual instance sized so deep pruning stays feasible.

    Used for trade-off sweeps: exact solves finish in milliseconds and block
    removals ramp from none to all four as the budget tightens.
    """
    network = residual_network(
        stage_blocks=(2, 2),
        stage_widths=(32, 64),
        stage_inner=(16, 16),
        stage_spatial=(32, 16),
        stem_channels=16,
        stem_kernel=3,
        stem_spatial=64,
    )
    tables = synthesize_network_tables(
        network, DeviceModel(fixed_overhead_ms=0.01, cost_per_mac_ms=2e-8, tile=4), 1
    )
    scores = benchmark_scores(network, seed=11)
    return network, scores, tables


def benchmark_scores(network: NetworkSpec, seed: int = 7) -> dict[int, ChannelScores]:
    """Reproducible positive channel scores for benchmark instances.

    Heavy-tailed per-channel values, so each layer has a few dominant
    channels and a long redundant tail, which is the regime structured
    pruning targets.
    """
    rng = np.random.default_rng(seed)
    out: dict[int, ChannelScores] = {}
    for layer in network.layers:
        v = rng.exponential(scale=1.0, size=layer.max_out_channels)
        out[layer.layer_id] = ChannelScores(layer_id=layer.layer_id, scores=v)
    return out


# ---------------------------------------------------------------------------
# random instances for tests
# ---------------------------------------------------------------------------

def _random_monotone_entries(rng, rows, cols) -> np.ndarray:
    base = rng.uniform(0.01, 0.2)
    r = np.cumsum(rng.uniform(0.0, 0.5, size=len(rows)))
    c = np.cumsum(rng.uniform(0.0, 0.5, size=len(cols)))
    return base + np.add.outer(r, c) + 0.1 * np.outer(r, c)


def random_instance(
    rng: np.random.Generator,
    max_layers: int = 6,
    max_channels: int = 8,
    max_blocks: int = 2,
    granularity: int = 1,
    monotone: bool = True,
    allow_ties: bool = True,
):
    """A random validated (network, scores, tables) triple.

    Blocks are placed on non-overlapping contiguous spans; the layers on both
    sides of each residual add are forced into a shared coupling group with a
    common width, as the validator requires.
    """
    L = int(rng.integers(1, max_layers + 1))
    widths = [int(rng.integers(1, max_channels + 1)) for _ in range(L)]

    spans: list[tuple[int, int]] = []
    attempts = int(rng.integers(0, max_blocks + 1))
    for _ in range(attempts):
        if L < 3:
            break
        a = int(rng.integers(2, L + 1))
        b = min(L, a + int(rng.integers(0, 3)))
        if any(not (b < s or a > e) for s, e in spans):
            continue
        spans.append((a, b))
    spans.sort()

    # union coupling partners: skip source (a-1) with last member (b)
    parent = list(range(L + 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in spans:
        ra, rb = find(a - 1), find(b)
        if ra != rb:
            parent[ra] = rb

    comp: dict[int, list[int]] = {}
    for lid in range(1, L + 1):
        comp.setdefault(find(lid), []).append(lid)
    group_of: dict[int, str] = {}
    for i, (_, members) in enumerate(sorted(comp.items())):
        if len(members) >= 2:
            name = f"g{i}"
            w = int(rng.integers(1, max_channels + 1))
            for m in members:
                group_of[m] = name
                widths[m - 1] = w

    block_of: dict[int, int] = {}
    blocks = []
    for bid, (a, b) in enumerate(spans, start=1):
        for m in range(a, b + 1):
            block_of[m] = bid
        blocks.append(BlockSpec(block_id=bid, member_layers=tuple(range(a, b + 1)),
                                skip_source_layer=a - 1))

    input_channels = int(rng.integers(1, max_channels + 1))
    layers = tuple(
        LayerSpec(
            layer_id=lid,
            name=f"conv{lid}",
            max_out_channels=widths[lid - 1],
            kernel_size=int(rng.integers(1, 4)),
            spatial_h=int(rng.integers(1, 9)),
            spatial_w=int(rng.integers(1, 9)),
            block_id=block_of.get(lid),
            coupling_group=group_of.get(lid),
        )
        for lid in range(1, L + 1)
    )
    network = validate_network(NetworkSpec(
        layers=layers, blocks=tuple(blocks), input_channels=input_channels,
    ))

    scores: dict[int, ChannelScores] = {}
    for layer in network.layers:
        v = rng.uniform(0.0, 1.0, size=layer.max_out_channels)
        if allow_ties and rng.random() < 0.3 and layer.max_out_channels >= 2:
            v[rng.integers(0, layer.max_out_channels)] = v[0]
        scores[layer.layer_id] = ChannelScores(layer_id=layer.layer_id, scores=v)

    tables: dict[int, LatencyTable] = {}
    for layer in network.layers:
        m_in = network.prev_max_channels(layer.layer_id)
        rows = measured_counts(m_in, granularity)
        cols = measured_counts(layer.max_out_channels, granularity)
        if monotone:
            entries = _random_monotone_entries(rng, rows, cols)
        else:
            entries = rng.uniform(0.01, 1.0, size=(len(rows), len(cols)))
        tables[layer.layer_id] = LatencyTable(
            layer_id=layer.layer_id, granularity=granularity,
            row_counts=np.asarray(rows), col_counts=np.asarray(cols),
            entries=entries,
        )
    return network, scores, tables
