"""chanexport: bridge PyTorch residual-CNN checkpoints to planner JSON files.

Write-only glue: traces the architecture into the network schema and
accumulates BatchNorm-gradient channel scores into the importance schema.
Never prunes, never edits weights.
"""

from .errors import ExportError, GradientUnavailable, MissingBatchNorm, UnsupportedTopology
from .scores import (
    accumulate_scores,
    batch_taylor_scores,
    current_grad_scores,
    scores_to_importance_dict,
)
from .structure import Structure, structure_to_network_dict, trace_structure

__all__ = [
    "ExportError", "GradientUnavailable", "MissingBatchNorm", "Structure",
    "UnsupportedTopology", "accumulate_scores", "batch_taylor_scores",
    "current_grad_scores", "scores_to_importance_dict",
    "structure_to_network_dict", "trace_structure",
]

__version__ = "0.1.0"
