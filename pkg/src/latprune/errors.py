"""Exception hierarchy for latprune.

Every contract violation raises a named subclass of :class:`LatPruneError`
whose message carries the offending layer/block/group id, so callers (and the
CLI) can report precisely what was wrong without string-matching.
"""

from __future__ import annotations


class LatPruneError(Exception):
    """Base class for all latprune errors."""


class InvalidNetwork(LatPruneError):
    """A network description violates a structural invariant."""


class DuplicateLayerId(InvalidNetwork):
    pass


class NonContiguousBlock(InvalidNetwork):
    pass


class CouplingChannelMismatch(InvalidNetwork):
    pass


class BlockBoundaryUncoupled(InvalidNetwork):
    pass


class SchemaError(LatPruneError):
    """An input file does not match its documented JSON schema."""


class NegativeScore(LatPruneError):
    pass


class NonFiniteScore(LatPruneError):
    pass


class LengthMismatch(LatPruneError):
    pass


class KOutOfRange(LatPruneError):
    pass


class DimensionMismatch(LatPruneError):
    pass


class IndexOutOfRange(LatPruneError):
    pass


class PrecedenceViolation(LatPruneError):
    """Stale input-channel count smaller than the frozen one it replaces."""


class EnumerationCapExceeded(LatPruneError):
    pass


class UnsupportedCouplingLayout(LatPruneError):
    """Coupling groups interleave in a way the chain solver cannot collapse."""


class InvalidBudget(LatPruneError):
    pass


class EmptyLayerResult(LatPruneError):
    """The stale-cost knapsack dropped at least one layer to zero channels.

    Carries the offending layer ids and, when raised mid-run, the step trace
    accumulated so far (``trace`` attribute) so callers can inspect how the
    failure developed instead of silently bumping counts back up.
    """

    def __init__(self, message: str, layer_ids=None, trace=None):
        super().__init__(message)
        self.layer_ids = list(layer_ids or [])
        self.trace = trace


class InfeasibleSolution(LatPruneError):
    """No configuration meets the latency budget; carries the best achievable.

    ``min_latency_ms`` is the smallest total latency over the whole decision
    domain, reported so users can pick a reachable budget.
    """

    def __init__(self, message: str, min_latency_ms: float | None = None):
        super().__init__(message)
        self.min_latency_ms = min_latency_ms


class TimeLimitReached(LatPruneError):
    """Time limit hit before any feasible incumbent was found."""


class NodeLimitReached(LatPruneError):
    """Node limit hit before any feasible incumbent was found."""
