"""Network description: layers, removable blocks, and channel-coupling groups.

The solver works on a linearized chain of convolution layers. Residual
structure enters in two ways: a *block* is a contiguous run of layers that a
skip connection allows to be removed as a unit, and a *coupling group* ties
the output-channel decisions of layers whose feature maps are summed by a
residual add (the skip source and the block's last member must keep matching
channel sets).

A ``NetworkSpec`` is immutable after :func:`validate_network`; it is safe to
share across concurrent solver runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

from .errors import (
    BlockBoundaryUncoupled,
    CouplingChannelMismatch,
    DuplicateLayerId,
    InvalidNetwork,
    NonContiguousBlock,
    SchemaError,
)

#: Predecessor id returned for the head of the chain: the network input.
INPUT_SENTINEL = 0


@dataclass(frozen=True)
class LayerSpec:
    layer_id: int
    name: str
    max_out_channels: int
    kernel_size: int
    spatial_h: int
    spatial_w: int
    block_id: int | None = None
    coupling_group: str | None = None

    def __post_init__(self):
        if self.max_out_channels < 1:
            raise InvalidNetwork(f"layer {self.layer_id}: max_out_channels must be >= 1")
        for attr in ("kernel_size", "spatial_h", "spatial_w"):
            if getattr(self, attr) < 1:
                raise InvalidNetwork(f"layer {self.layer_id}: {attr} must be >= 1")


@dataclass(frozen=True)
class BlockSpec:
    block_id: int
    member_layers: tuple[int, ...]
    skip_source_layer: int

    def __post_init__(self):
        object.__setattr__(self, "member_layers", tuple(self.member_layers))
        if self.block_id < 1:
            raise InvalidNetwork(f"block {self.block_id}: block_id must be >= 1")
        if not self.member_layers:
            raise InvalidNetwork(f"block {self.block_id}: no member layers")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    blocks: tuple[BlockSpec, ...] = ()
    input_channels: int = 3
    budget_unit: str = "ms"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.input_channels < 1:
            raise InvalidNetwork("input_channels must be >= 1")

    # -- derived lookups (cached; the spec is frozen so these never go stale) --

    @cached_property
    def layer_by_id(self) -> Mapping[int, LayerSpec]:
        return {l.layer_id: l for l in self.layers}

    @cached_property
    def layer2block(self) -> Mapping[int, int]:
        """beta: layer_id -> block_id, only for layers inside blocks."""
        return {l.layer_id: l.block_id for l in self.layers if l.block_id is not None}

    @cached_property
    def block_by_id(self) -> Mapping[int, BlockSpec]:
        return {b.block_id: b for b in self.blocks}

    @cached_property
    def block2layers(self) -> Mapping[int, tuple[int, ...]]:
        """beta^-1: block_id -> member layer ids."""
        return {b.block_id: b.member_layers for b in self.blocks}

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def prev_max_channels(self, layer_id: int) -> int:
        """Channel capacity feeding ``layer_id`` (m_{l-1}, with m_0 the input)."""
        if layer_id == 1:
            return self.input_channels
        return self.layer_by_id[layer_id - 1].max_out_channels


def validate_network(spec: NetworkSpec) -> NetworkSpec:
    """Check every structural invariant; return the spec unchanged if valid.

    Raises a named :class:`InvalidNetwork` subclass identifying the offending
    layer, block, or coupling group.
    """
    seen: set[int] = set()
    for l in spec.layers:
        if l.layer_id in seen:
            raise DuplicateLayerId(f"layer id {l.layer_id} appears more than once")
        seen.add(l.layer_id)
    expected = set(range(1, len(spec.layers) + 1))
    if seen != expected:
        missing = sorted(expected - seen)
        raise InvalidNetwork(f"layer ids must form 1..{len(spec.layers)}; missing {missing}")
    ordered = sorted(l.layer_id for l in spec.layers)
    actual = [l.layer_id for l in spec.layers]
    if actual != ordered:
        raise InvalidNetwork("layers must be listed in ascending layer_id order")

    by_id = spec.layer_by_id

    seen_blocks: set[int] = set()
    claimed: dict[int, int] = {}
    for b in spec.blocks:
        if b.block_id in seen_blocks:
            raise InvalidNetwork(f"block id {b.block_id} appears more than once")
        seen_blocks.add(b.block_id)
        members = sorted(b.member_layers)
        if list(b.member_layers) != members:
            raise NonContiguousBlock(f"block {b.block_id}: member_layers must be ascending")
        if members != list(range(members[0], members[-1] + 1)):
            raise NonContiguousBlock(f"block {b.block_id}: members {members} are not contiguous")
        for m in members:
            if m not in by_id:
                raise InvalidNetwork(f"block {b.block_id}: member layer {m} does not exist")
            if m in claimed:
                raise InvalidNetwork(
                    f"layer {m} belongs to both block {claimed[m]} and block {b.block_id}"
                )
            claimed[m] = b.block_id
            if by_id[m].block_id != b.block_id:
                raise InvalidNetwork(
                    f"layer {m}: block_id field {by_id[m].block_id!r} disagrees with "
                    f"block {b.block_id} membership"
                )
        if b.skip_source_layer >= members[0]:
            raise InvalidNetwork(
                f"block {b.block_id}: skip source {b.skip_source_layer} must precede "
                f"first member {members[0]}"
            )
        if b.skip_source_layer != members[0] - 1:
            raise InvalidNetwork(
                f"block {b.block_id}: skip source must be the layer immediately "
                f"preceding the first member ({members[0] - 1}), got {b.skip_source_layer}"
            )
        last = by_id[members[-1]]
        if b.skip_source_layer == INPUT_SENTINEL:
            # Residual add against the raw input: the closing layer must be able
            # to produce exactly input_channels channels.
            if last.max_out_channels < spec.input_channels:
                raise CouplingChannelMismatch(
                    f"block {b.block_id}: last member {last.layer_id} cannot match "
                    f"the {spec.input_channels}-channel network input"
                )
        else:
            src = by_id[b.skip_source_layer]
            if last.coupling_group is None or src.coupling_group != last.coupling_group:
                raise BlockBoundaryUncoupled(
                    f"block {b.block_id}: last member {last.layer_id} and skip source "
                    f"{src.layer_id} must share a coupling group (residual add needs "
                    f"matching channel counts)"
                )

    for l in spec.layers:
        if l.block_id is not None and l.layer_id not in claimed:
            raise InvalidNetwork(
                f"layer {l.layer_id} declares block_id {l.block_id} but no such block "
                f"lists it as a member"
            )

    groups: dict[str, list[LayerSpec]] = {}
    for l in spec.layers:
        if l.coupling_group is not None:
            groups.setdefault(l.coupling_group, []).append(l)
    for name, members in groups.items():
        widths = {m.max_out_channels for m in members}
        if len(widths) > 1:
            raise CouplingChannelMismatch(
                f"coupling group {name!r}: members have differing max_out_channels {sorted(widths)}"
            )

    # touch the caches so downstream code never pays for lazy construction
    spec.layer2block
    spec.block2layers
    return spec


def effective_predecessor(spec: NetworkSpec, layer_id: int, z: Mapping[int, int]) -> int:
    """Nearest preceding layer still active under block decisions ``z``.

    Walks over layers whose block is removed (z=0); returns
    :data:`INPUT_SENTINEL` when the chain head is reached. Layers outside any
    block are always active.
    """
    p = layer_id - 1
    beta = spec.layer2block
    while p >= 1:
        b = beta.get(p)
        if b is None or z.get(b, 1) == 1:
            return p
        p -= 1
    return INPUT_SENTINEL


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

_LAYER_KEYS = {
    "layer_id", "name", "max_out_channels", "kernel_size",
    "spatial_h", "spatial_w", "block_id", "coupling_group",
}
_BLOCK_KEYS = {"block_id", "member_layers", "skip_source_layer"}
_TOP_KEYS = {"input_channels", "budget_unit", "layers", "blocks"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")


def network_from_dict(data: dict) -> NetworkSpec:
    if not isinstance(data, dict):
        raise SchemaError("network file: top level must be an object")
    _reject_unknown(data, _TOP_KEYS, "network file")
    try:
        layers = []
        for entry in data["layers"]:
            _reject_unknown(entry, _LAYER_KEYS, f"layer entry {entry.get('layer_id')}")
            layers.append(LayerSpec(
                layer_id=int(entry["layer_id"]),
                name=str(entry["name"]),
                max_out_channels=int(entry["max_out_channels"]),
                kernel_size=int(entry["kernel_size"]),
                spatial_h=int(entry["spatial_h"]),
                spatial_w=int(entry["spatial_w"]),
                block_id=int(entry["block_id"]) if entry.get("block_id") is not None else None,
                coupling_group=entry.get("coupling_group"),
            ))
        blocks = []
        for entry in data.get("blocks", []):
            _reject_unknown(entry, _BLOCK_KEYS, f"block entry {entry.get('block_id')}")
            blocks.append(BlockSpec(
                block_id=int(entry["block_id"]),
                member_layers=tuple(int(m) for m in entry["member_layers"]),
                skip_source_layer=int(entry["skip_source_layer"]),
            ))
    except KeyError as exc:
        raise SchemaError(f"network file: missing required key {exc}") from exc
    spec = NetworkSpec(
        layers=tuple(layers),
        blocks=tuple(blocks),
        input_channels=int(data["input_channels"]),
        budget_unit=str(data.get("budget_unit", "ms")),
    )
    return validate_network(spec)


def network_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for l in spec.layers:
        entry = {
            "layer_id": l.layer_id,
            "name": l.name,
            "max_out_channels": l.max_out_channels,
            "kernel_size": l.kernel_size,
            "spatial_h": l.spatial_h,
            "spatial_w": l.spatial_w,
        }
        if l.block_id is not None:
            entry["block_id"] = l.block_id
        if l.coupling_group is not None:
            entry["coupling_group"] = l.coupling_group
        layers.append(entry)
    blocks = [
        {
            "block_id": b.block_id,
            "member_layers": list(b.member_layers),
            "skip_source_layer": b.skip_source_layer,
        }
        for b in spec.blocks
    ]
    return {
        "input_channels": spec.input_channels,
        "budget_unit": spec.budget_unit,
        "layers": layers,
        "blocks": blocks,
    }


def dumps_network(spec: NetworkSpec) -> str:
    """Canonical serialization: fixed key order, two-space indent, newline-terminated."""
    return json.dumps(network_to_dict(spec), indent=2, ensure_ascii=False) + "\n"


def loads_network(text: str) -> NetworkSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"network file: invalid JSON ({exc})") from exc
    return network_from_dict(data)


def load_network(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return loads_network(fh.read())


def save_network(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_network(spec))
