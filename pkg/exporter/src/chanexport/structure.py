"""Trace a chain-of-blocks residual CNN into the planner's network schema.

Supported family: a linear chain of Conv2d layers (each followed by its
BatchNorm and any unary ops) where residual adds either skip a run of convs
directly (identity shortcut) or through a single projection conv. Projection
convs are linearized to sit immediately before the block they guard, which is
exactly the chain model the planner's network schema encodes. Anything else
raises :class:`UnsupportedTopology`.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

import torch
from torch import nn
from torch.fx import symbolic_trace
from torch.fx.passes.shape_prop import ShapeProp

from .errors import MissingBatchNorm, UnsupportedTopology

_INPUT = "INPUT"

_PASSTHROUGH_MODULES = (
    nn.ReLU, nn.ReLU6, nn.SiLU, nn.GELU, nn.LeakyReLU, nn.Hardswish,
    nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d,
    nn.Dropout, nn.Identity, nn.Flatten, nn.Linear,
)
_PASSTHROUGH_FUNCTIONS = {
    torch.relu, torch.nn.functional.relu, torch.nn.functional.relu6,
    torch.nn.functional.max_pool2d, torch.nn.functional.avg_pool2d,
    torch.nn.functional.adaptive_avg_pool2d, torch.flatten,
    torch.nn.functional.dropout, torch.nn.functional.linear,
}
_ADD_FUNCTIONS = {operator.add, operator.iadd, torch.add}


@dataclass
class TracedLayer:
    name: str
    conv: nn.Conv2d
    src: object = None          # TracedLayer or _INPUT feeding this conv
    bn: nn.BatchNorm2d | None = None
    out_h: int = 0
    out_w: int = 0
    layer_id: int = 0           # assigned after ordering
    block_id: int | None = None
    coupling_group: str | None = None


@dataclass
class TracedBlock:
    members: list[TracedLayer]
    skip: object                # TracedLayer (projection or upstream conv) or _INPUT


@dataclass
class Structure:
    layers: list[TracedLayer]
    blocks: list[TracedBlock]
    input_channels: int

    def layer_named(self, name: str) -> TracedLayer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def _ancestry(origin: object) -> list[object]:
    out = []
    cur = origin
    while cur is not _INPUT:
        out.append(cur)
        cur = cur.src
    out.append(_INPUT)
    return out


def trace_structure(model: nn.Module, input_shape: tuple[int, ...]) -> Structure:
    """Symbolically trace the model and linearize it into the chain schema."""
    model = model.eval()
    try:
        gm = symbolic_trace(model)
    except Exception as exc:
        raise UnsupportedTopology(f"model is not symbolically traceable: {exc}") from exc
    try:
        ShapeProp(gm).propagate(torch.randn(*input_shape))
    except Exception as exc:
        raise UnsupportedTopology(
            f"model forward fails on a {tuple(input_shape)} probe input: {exc}"
        ) from exc
    modules = dict(gm.named_modules())

    origin: dict = {}
    layers: list[TracedLayer] = []
    blocks: list[TracedBlock] = []

    def origin_of(arg):
        if arg not in origin:
            raise UnsupportedTopology(f"cannot resolve data flow into node {arg}")
        return origin[arg]

    for node in gm.graph.nodes:
        if node.op == "placeholder":
            origin[node] = _INPUT
        elif node.op == "get_attr":
            origin[node] = _INPUT  # constants never carry channel structure here
        elif node.op == "call_module":
            mod = modules[node.target]
            src = origin_of(node.args[0])
            if isinstance(mod, nn.Conv2d):
                if mod.groups != 1:
                    raise UnsupportedTopology(
                        f"{node.target}: grouped/depthwise convolutions are unsupported"
                    )
                meta = node.meta.get("tensor_meta")
                layer = TracedLayer(
                    name=str(node.target), conv=mod, src=src,
                    out_h=int(meta.shape[2]), out_w=int(meta.shape[3]),
                )
                layers.append(layer)
                origin[node] = layer
            elif isinstance(mod, (nn.BatchNorm2d, nn.SyncBatchNorm)):
                if isinstance(src, TracedLayer) and src.bn is None:
                    src.bn = mod
                origin[node] = src
            elif isinstance(mod, _PASSTHROUGH_MODULES):
                origin[node] = src
            else:
                raise UnsupportedTopology(f"unsupported module {type(mod).__name__} at {node.target}")
        elif node.op == "call_function":
            if node.target in _ADD_FUNCTIONS:
                origin[node] = _resolve_add(node, origin_of, layers, blocks)
            elif node.target in _PASSTHROUGH_FUNCTIONS or node.target is getattr:
                origin[node] = origin_of(node.args[0])
            else:
                raise UnsupportedTopology(f"unsupported function {node.target} in graph")
        elif node.op == "call_method":
            if node.target == "add":
                origin[node] = _resolve_add(node, origin_of, layers, blocks)
            elif node.target in {"relu", "flatten", "view", "reshape", "mean", "contiguous"}:
                origin[node] = origin_of(node.args[0])
            else:
                raise UnsupportedTopology(f"unsupported method .{node.target}() in graph")
        elif node.op == "output":
            pass
        else:  # pragma: no cover
            raise UnsupportedTopology(f"unsupported graph op {node.op}")

    if not layers:
        raise UnsupportedTopology("no convolution layers found")
    _check_chain(layers, blocks)

    for i, layer in enumerate(layers, start=1):
        layer.layer_id = i
    for bid, block in enumerate(blocks, start=1):
        for m in block.members:
            m.block_id = bid
    _assign_coupling(layers, blocks)

    first = layers[0]
    return Structure(layers=layers, blocks=blocks, input_channels=int(first.conv.in_channels))


def _resolve_add(node, origin_of, layers, blocks):
    args = [a for a in node.args if not isinstance(a, (int, float))]
    if len(args) != 2:
        raise UnsupportedTopology(f"residual add at {node} must join exactly two tensors")
    oa, ob = origin_of(args[0]), origin_of(args[1])
    anc_a, anc_b = _ancestry(oa), _ancestry(ob)
    in_b = set(id(x) for x in anc_b)
    fork = next(x for x in anc_a if id(x) in in_b)
    path_a = anc_a[:anc_a.index(fork)]
    path_b = anc_b[:anc_b.index(fork)]
    # one side is the skip: empty (identity) or a single projection conv
    if len(path_a) <= 1 and len(path_b) >= 1:
        skip_path, branch_path = path_a, path_b
    elif len(path_b) <= 1 and len(path_a) >= 1:
        skip_path, branch_path = path_b, path_a
    else:
        raise UnsupportedTopology(
            f"residual add at {node} joins two multi-layer paths; not a skip connection"
        )
    members = list(reversed(branch_path))
    proj = skip_path[0] if skip_path else None
    if proj is not None and proj.src is not fork:
        raise UnsupportedTopology(
            f"projection path at {node} is deeper than one convolution"
        )
    if any(m.block_id is not None for m in members) or (proj is not None and proj.block_id):
        raise UnsupportedTopology(f"residual adds at {node} overlap an earlier block")

    # linearize: projection conv sits immediately before the block members
    moved = members + ([proj] if proj is not None else [])
    tail_start = min(layers.index(m) for m in moved)
    tail = layers[tail_start:]
    if sorted(map(id, tail)) != sorted(map(id, moved)):
        raise UnsupportedTopology(
            f"layers interleave the residual branch at {node}; not a chain of blocks"
        )
    del layers[tail_start:]
    if proj is not None:
        layers.append(proj)
    layers.extend(members)

    block = TracedBlock(members=members, skip=proj if proj is not None else fork)
    for m in members:
        m.block_id = -1  # claimed; real ids assigned after the walk
    blocks.append(block)
    return members[-1]


def _check_chain(layers, blocks):
    """Every layer must consume its predecessor, modulo block skip rewiring."""
    first_member = {id(b.members[0]): b for b in blocks}
    for i, layer in enumerate(layers):
        prev = layers[i - 1] if i > 0 else _INPUT
        if layer.src is prev:
            continue
        b = first_member.get(id(layer))
        if b is not None:
            # projection was re-seated directly before the block: the member
            # still consumes the fork, which must feed the projection too
            if b.skip is prev and isinstance(prev, TracedLayer) and prev.src is layer.src:
                continue
            if b.skip is layer.src is prev:
                continue
        raise UnsupportedTopology(
            f"layer {layer.name} consumes {getattr(layer.src, 'name', layer.src)}, "
            f"not its chain predecessor; the model branches outside residual skips"
        )


def _assign_coupling(layers, blocks):
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for b in blocks:
        if isinstance(b.skip, TracedLayer):
            union(id(b.skip), id(b.members[-1]))
    by_id = {id(l): l for l in layers}
    groups: dict[int, list[TracedLayer]] = {}
    for l in layers:
        if id(l) in parent:
            groups.setdefault(find(id(l)), []).append(l)
    counter = 0
    for root, members in sorted(groups.items(), key=lambda kv: min(m.layer_id for m in kv[1])):
        if len(members) < 2:
            continue
        counter += 1
        for m in members:
            m.coupling_group = f"g{counter}"
    # matching widths across each residual add is a hard constraint
    for b in blocks:
        if isinstance(b.skip, TracedLayer):
            if b.skip.conv.out_channels != b.members[-1].conv.out_channels:
                raise UnsupportedTopology(
                    f"residual add joins {b.skip.name} ({b.skip.conv.out_channels}ch) with "
                    f"{b.members[-1].name} ({b.members[-1].conv.out_channels}ch)"
                )


def structure_to_network_dict(structure: Structure) -> dict:
    """The planner's network JSON schema."""
    layers = []
    for l in structure.layers:
        k = l.conv.kernel_size
        entry = {
            "layer_id": l.layer_id,
            "name": l.name,
            "max_out_channels": int(l.conv.out_channels),
            "kernel_size": int(k[0] if isinstance(k, (tuple, list)) else k),
            "spatial_h": l.out_h,
            "spatial_w": l.out_w,
        }
        if l.block_id is not None:
            entry["block_id"] = l.block_id
        if l.coupling_group is not None:
            entry["coupling_group"] = l.coupling_group
        layers.append(entry)
    block_entries = []
    for bid, b in enumerate(structure.blocks, start=1):
        block_entries.append({
            "block_id": bid,
            "member_layers": [m.layer_id for m in b.members],
            "skip_source_layer": b.skip.layer_id if isinstance(b.skip, TracedLayer) else 0,
        })
    return {
        "input_channels": structure.input_channels,
        "budget_unit": "ms",
        "layers": layers,
        "blocks": block_entries,
    }


def require_batchnorms(structure: Structure) -> None:
    for l in structure.layers:
        if l.bn is None:
            raise MissingBatchNorm(
                f"layer {l.name} has no trailing BatchNorm; cannot score its channels"
            )
        if l.bn.weight is None or l.bn.bias is None:
            raise MissingBatchNorm(f"layer {l.name}: BatchNorm must be affine")
        if int(l.bn.weight.shape[0]) != int(l.conv.out_channels):
            raise MissingBatchNorm(
                f"layer {l.name}: BatchNorm width {int(l.bn.weight.shape[0])} != "
                f"{int(l.conv.out_channels)} conv channels"
            )
