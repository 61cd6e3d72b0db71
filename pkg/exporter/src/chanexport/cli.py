"""Script entry point: checkpoint in, network + importance JSON out.

The checkpoint is a ``torch.save``-d ``nn.Module`` (the full module, not a
bare state dict, since the graph structure must be traceable). The script
drives the export with synthetic batches and a mean-squared-activation proxy
loss so it runs standalone; pipelines with real data should call
``accumulate_scores`` from the library with their own loader and criterion.
"""

from __future__ import annotations

import argparse
import json
import sys

import torch

from .errors import ExportError
from .scores import accumulate_scores, scores_to_importance_dict
from .structure import structure_to_network_dict, trace_structure


def _parse_shape(text: str) -> tuple[int, ...]:
    dims = tuple(int(x) for x in text.split(","))
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("input shape must be N,C,H,W")
    return dims


def _synthetic_batches(shape, num, seed):
    gen = torch.Generator().manual_seed(seed)
    for _ in range(num):
        yield torch.randn(*shape, generator=gen), None


def _proxy_loss(outputs, _target):
    return outputs.float().pow(2).mean()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="chanexport",
        description="Export a residual CNN checkpoint to pruning-planner JSON files.",
    )
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out-network", required=True)
    ap.add_argument("--out-importance", required=True)
    ap.add_argument("--num-batches", type=int, default=8)
    ap.add_argument("--input-shape", type=_parse_shape, default=(1, 3, 64, 64),
                    help="N,C,H,W used for tracing and synthetic batches")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        model = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
        if not isinstance(model, torch.nn.Module):
            raise ExportError("checkpoint does not contain an nn.Module")
        structure = trace_structure(model, args.input_shape)
        scores, seen = accumulate_scores(
            structure, model,
            _synthetic_batches(args.input_shape, args.num_batches, args.seed),
            _proxy_loss,
            num_batches=args.num_batches,
        )
    except ExportError as exc:
        print(f"chanexport: {exc}", file=sys.stderr)
        return 1

    with open(args.out_network, "w", encoding="utf-8") as fh:
        json.dump(structure_to_network_dict(structure), fh, indent=2)
        fh.write("\n")
    with open(args.out_importance, "w", encoding="utf-8") as fh:
        json.dump(scores_to_importance_dict(scores, seen), fh, indent=2)
        fh.write("\n")
    print(
        f"exported {len(structure.layers)} layers, {len(structure.blocks)} blocks, "
        f"{seen} batches accumulated"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
