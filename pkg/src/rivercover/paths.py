"""Coverage paths: labeled waypoint sequences shared by all planners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COVERAGE = "coverage"
TRANSIT = "transit"

# A segment earns coverage credit only when BOTH endpoints are COVERAGE
# waypoints; planners therefore always put at least one TRANSIT waypoint on
# every connector (a midpoint is inserted when the connector is a bare hop).


class PlanningError(RuntimeError):
    """Raised when a planner cannot make progress on a map."""


@dataclass
class CoveragePath:
    """Ordered waypoints with coverage/transit labels produced by a planner.

    ``points`` are cell coordinates; ``resolution`` (meters per cell) scales
    them into the map's metric frame.  ``extras`` carries planner-specific
    by-products (triangle areas, cluster ranges, ...) used by metrics,
    diagnostics, and rendering.
    """

    points: np.ndarray
    labels: np.ndarray
    planner_id: str
    resolution: float
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=object).reshape(-1)
        if len(self.points) < 1:
            raise ValueError("a CoveragePath needs at least one waypoint")
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels must have equal length")
        if len(self.points) > 1:
            gaps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
            if (gaps < 1e-12).any():
                raise ValueError("consecutive waypoints must be distinct")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def coverage_mask(self) -> np.ndarray:
        return self.labels == COVERAGE

    def segment_lengths_m(self) -> np.ndarray:
        if len(self.points) < 2:
            return np.zeros(0)
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1) * self.resolution

    def coverage_segment_mask(self) -> np.ndarray:
        """True for segments whose both endpoints are COVERAGE waypoints."""
        cov = self.coverage_mask
        return cov[:-1] & cov[1:]

    def coverage_length_m(self) -> float:
        segs = self.segment_lengths_m()
        return float(segs[self.coverage_segment_mask()].sum()) if len(segs) else 0.0

    def total_length_m(self) -> float:
        return float(self.segment_lengths_m().sum())

    def coverage_runs(self) -> list[np.ndarray]:
        """Maximal runs of consecutive COVERAGE waypoints (the passes)."""
        runs: list[np.ndarray] = []
        cov = self.coverage_mask
        i = 0
        while i < len(cov):
            if cov[i]:
                j = i
                while j + 1 < len(cov) and cov[j + 1]:
                    j += 1
                if j > i:
                    runs.append(self.points[i:j + 1])
                i = j + 1
            else:
                i += 1
        return runs

    def last_coverage_index(self) -> int | None:
        idx = np.flatnonzero(self.coverage_mask)
        return int(idx[-1]) if len(idx) else None


class PathBuilder:
    """Accumulates waypoints, deduplicating coincident consecutive points."""

    def __init__(self) -> None:
        self._pts: list[np.ndarray] = []
        self._labels: list[str] = []

    def add(self, point, label: str) -> None:
        p = np.asarray(point, dtype=float).reshape(2)
        if self._pts and np.linalg.norm(p - self._pts[-1]) < 1e-9:
            return
        self._pts.append(p)
        self._labels.append(label)

    def add_connector_interior(self, points, label: str = TRANSIT) -> None:
        """Append the interior of a connector polyline as TRANSIT waypoints.

        ``points`` includes both endpoints; the start is assumed to be the
        current path tip and the destination is added by the caller with its
        own label.  A midpoint is inserted when the connector is a direct
        two-point hop so that no segment joins two COVERAGE waypoints.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            return
        interior = pts[1:-1]
        if len(interior) == 0 and np.linalg.norm(pts[-1] - pts[0]) > 1e-9:
            interior = (pts[:1] + pts[-1:]) / 2.0
        for p in interior:
            self.add(p, label)

    @property
    def last(self) -> np.ndarray | None:
        return self._pts[-1] if self._pts else None

    def build(self, planner_id: str, resolution: float, params: dict | None = None,
              extras: dict | None = None) -> CoveragePath:
        return CoveragePath(points=np.array(self._pts, dtype=float),
                            labels=np.array(self._labels, dtype=object),
                            planner_id=planner_id, resolution=resolution,
                            params=dict(params or {}), extras=dict(extras or {}))
