"""Per-call execution counters shared by the index search paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SearchTelemetry:
    distance_evaluations: int = 0
    nodes_visited: int = 0
    centroid_evaluations: int = 0
    predicate_invocations: int = 0
    fallback_used: bool = False


@dataclass(frozen=True)
class SearchResult:
    """Ranked ids with their smaller-is-closer ordering keys."""

    ids: np.ndarray
    distances: np.ndarray
    telemetry: SearchTelemetry

    def __len__(self) -> int:
        return len(self.ids)
