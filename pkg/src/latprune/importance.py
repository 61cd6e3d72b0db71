"""Per-channel importance ingestion and layer-level aggregation.

Channel scores are non-negative accumulated saliency values (one per output
channel). A layer's value for keeping ``i`` channels is the sum of its ``i``
largest scores, so each layer gets a prefix-sum vector over its descending
score ranking. Ties between equal scores break toward the lower channel
index, which keeps plans and tests reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    KOutOfRange,
    LengthMismatch,
    NegativeScore,
    NonFiniteScore,
    SchemaError,
)


@dataclass(frozen=True)
class ChannelScores:
    layer_id: int
    scores: np.ndarray  # shape (m_l,), non-negative finite floats

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        if self.scores.ndim != 1:
            raise LengthMismatch(f"layer {self.layer_id}: scores must be a flat vector")


@dataclass(frozen=True)
class LayerImportance:
    layer_id: int
    sorted_indices: tuple[int, ...]  # 1-based channel ids, descending score
    prefix: np.ndarray               # prefix[i-1] = sum of the i largest scores

    @property
    def num_channels(self) -> int:
        return len(self.sorted_indices)

    def value_of_count(self, count: int) -> float:
        """Importance of keeping the best ``count`` channels."""
        if not 1 <= count <= self.num_channels:
            raise KOutOfRange(
                f"layer {self.layer_id}: count {count} outside 1..{self.num_channels}"
            )
        return float(self.prefix[count - 1])


def _check_scores(scores: ChannelScores, expected_channels: int | None) -> np.ndarray:
    v = scores.scores
    if expected_channels is not None and v.shape[0] != expected_channels:
        raise LengthMismatch(
            f"layer {scores.layer_id}: got {v.shape[0]} scores, "
            f"expected {expected_channels}"
        )
    if v.shape[0] == 0:
        raise LengthMismatch(f"layer {scores.layer_id}: empty score vector")
    if not np.all(np.isfinite(v)):
        raise NonFiniteScore(f"layer {scores.layer_id}: scores contain NaN/inf")
    if np.any(v < 0):
        raise NegativeScore(f"layer {scores.layer_id}: scores must be >= 0")
    return v


def aggregate_layer_importance(
    scores: ChannelScores, expected_channels: int | None = None
) -> LayerImportance:
    """Rank channels by score (ties: ascending index) and prefix-sum the ranking."""
    v = _check_scores(scores, expected_channels)
    m = v.shape[0]
    # lexsort's last key is primary: descending score, then ascending index
    order = np.lexsort((np.arange(m), -v))
    prefix = np.cumsum(v[order])
    prefix.setflags(write=False)
    return LayerImportance(
        layer_id=scores.layer_id,
        sorted_indices=tuple(int(i) + 1 for i in order),
        prefix=prefix,
    )


def arg_top_k(scores: ChannelScores, k: int) -> list[int]:
    """The ``k`` highest-scoring channel ids (1-based), ranking order."""
    imp = aggregate_layer_importance(scores)
    if not 1 <= k <= imp.num_channels:
        raise KOutOfRange(
            f"layer {scores.layer_id}: k={k} outside 1..{imp.num_channels}"
        )
    return list(imp.sorted_indices[:k])


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

_TOP_KEYS = {"layers", "num_batches"}
_LAYER_KEYS = {"layer_id", "scores"}


def scores_from_dict(data: dict) -> dict[int, ChannelScores]:
    if not isinstance(data, dict):
        raise SchemaError("importance file: top level must be an object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"importance file: unknown keys {sorted(unknown)}")
    out: dict[int, ChannelScores] = {}
    try:
        for entry in data["layers"]:
            unknown = set(entry) - _LAYER_KEYS
            if unknown:
                raise SchemaError(
                    f"importance entry {entry.get('layer_id')}: unknown keys {sorted(unknown)}"
                )
            lid = int(entry["layer_id"])
            if lid in out:
                raise SchemaError(f"importance file: duplicate layer_id {lid}")
            out[lid] = ChannelScores(layer_id=lid, scores=np.asarray(entry["scores"], dtype=float))
    except KeyError as exc:
        raise SchemaError(f"importance file: missing required key {exc}") from exc
    return out


def scores_to_dict(scores: dict[int, ChannelScores], num_batches: int | None = None) -> dict:
    data: dict = {
        "layers": [
            {"layer_id": s.layer_id, "scores": [float(x) for x in s.scores]}
            for _, s in sorted(scores.items())
        ]
    }
    if num_batches is not None:
        data["num_batches"] = int(num_batches)
    return data


def load_scores(path) -> dict[int, ChannelScores]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"importance file: invalid JSON ({exc})") from exc
    return scores_from_dict(data)


def save_scores(scores: dict[int, ChannelScores], path, num_batches: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scores_to_dict(scores, num_batches), fh, indent=2)
        fh.write("\n")
