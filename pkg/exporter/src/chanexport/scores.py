"""Per-channel saliency accumulation from BatchNorm gradients.

A channel's score for one batch is |grad(weight) * weight + grad(bias) * bias|
of its BatchNorm entry; scores are summed over batches (sum of per-batch
absolute values, so accumulation is order-independent) and the batch count is
recorded alongside.
"""

from __future__ import annotations

from itertools import islice

import numpy as np
import torch

from .errors import GradientUnavailable
from .structure import Structure, require_batchnorms


def batch_taylor_scores(bn: torch.nn.modules.batchnorm._BatchNorm) -> np.ndarray:
    """Per-channel saliency from the currently populated gradients."""
    if bn.weight.grad is None or bn.bias.grad is None:
        raise GradientUnavailable(
            "BatchNorm parameters carry no gradients; run a backward pass first"
        )
    with torch.no_grad():
        s = (bn.weight.grad * bn.weight + bn.bias.grad * bn.bias).abs()
    return s.detach().cpu().double().numpy()


def accumulate_scores(
    structure: Structure,
    model: torch.nn.Module,
    batches,
    loss_fn,
    num_batches: int | None = None,
) -> tuple[dict[int, np.ndarray], int]:
    """Run forward/backward over the batches and sum per-batch channel scores.

    ``batches`` yields (inputs, target) pairs; ``loss_fn(outputs, target)``
    returns the scalar to differentiate. Returns (scores per layer_id, number
    of batches consumed).
    """
    require_batchnorms(structure)
    totals = {
        l.layer_id: np.zeros(int(l.conv.out_channels)) for l in structure.layers
    }
    seen = 0
    for x, target in islice(batches, num_batches):
        model.zero_grad(set_to_none=False)
        loss = loss_fn(model(x), target)
        loss.backward()
        for layer in structure.layers:
            totals[layer.layer_id] += batch_taylor_scores(layer.bn)
        seen += 1
    return totals, seen


def current_grad_scores(structure: Structure) -> dict[int, np.ndarray]:
    """One accumulation step from gradients already present on the model."""
    require_batchnorms(structure)
    return {l.layer_id: batch_taylor_scores(l.bn) for l in structure.layers}


def scores_to_importance_dict(scores: dict[int, np.ndarray], num_batches: int) -> dict:
    """The planner's importance JSON schema."""
    return {
        "layers": [
            {"layer_id": lid, "scores": [float(v) for v in vec]}
            for lid, vec in sorted(scores.items())
        ],
        "num_batches": int(num_batches),
    }
