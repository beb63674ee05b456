"""Binary river occupancy maps: loading, cleanup, fixtures, and raster IO.

Grid convention used by the whole package: row-major arrays of shape
(height, width), origin at the top-left, x runs rightward along columns,
y runs downward along rows.  A float point (x, y) lies in the cell whose
center is (round(x), round(y)); integer coordinates are cell centers.
Angles are measured with atan2(dy, dx) in this frame.  FREE cells are
water (value 0), OBSTACLE cells are everything else (value 1).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

FREE = 0
OBSTACLE = 1

# 4-connectivity structure for component analysis
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

_METERS_PER_DEG_LAT = 111320.0


class RiverMapError(ValueError):
    """Raised for undecodable rasters, empty rivers, or bad parameters."""


def round_cell(v: float) -> int:
    """Nearest-cell index with half values rounding up (no banker's rounding)."""
    return int(math.floor(v + 0.5))


@dataclass
class GeoAnchor:
    """Geographic anchor: lat/lon of cell (0, 0) and the bearing of the +x axis.

    ``bearing_deg`` is measured clockwise from true north; the +y axis points
    at ``bearing_deg + 90`` (grids are y-down, so the frame stays right-handed
    on the ground).
    """

    lat: float
    lon: float
    bearing_deg: float = 90.0

    def cell_to_latlon(self, x: float, y: float, resolution: float) -> tuple[float, float]:
        bx = math.radians(self.bearing_deg)
        by = math.radians(self.bearing_deg + 90.0)
        east = resolution * (x * math.sin(bx) + y * math.sin(by))
        north = resolution * (x * math.cos(bx) + y * math.cos(by))
        lat = self.lat + north / _METERS_PER_DEG_LAT
        lon = self.lon + east / (_METERS_PER_DEG_LAT * math.cos(math.radians(self.lat)))
        return lat, lon


@dataclass
class RiverMap:
    """Binary occupancy grid of a river reach.

    ``cells`` holds FREE (0) for water and OBSTACLE (1) elsewhere.  After
    construction the FREE region is a single 4-connected component.
    """

    cells: np.ndarray
    resolution: float
    geo_anchor: GeoAnchor | None = None

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise RiverMapError("resolution must be > 0")
        self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2:
            raise RiverMapError("cells must be a 2-D grid")
        bad = ~np.isin(self.cells, (FREE, OBSTACLE))
        if bad.any():
            raise RiverMapError("cells must contain only FREE/OBSTACLE values")
        self.free = self.cells == FREE

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def free_area_cells(self) -> int:
        return int(self.free.sum())

    def in_bounds(self, x: float, y: float) -> bool:
        cx, cy = round_cell(x), round_cell(y)
        return 0 <= cx < self.width and 0 <= cy < self.height

    def is_free(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        return bool(self.free[round_cell(y), round_cell(x)])


@dataclass(frozen=True)
class StartPoint:
    """Launch position in cell coordinates (sub-cell precision allowed)."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def validate_start(rivermap: RiverMap, start: StartPoint) -> None:
    if not rivermap.is_free(start.x, start.y):
        raise RiverMapError(f"start point ({start.x}, {start.y}) is not on a FREE cell")


def _cleanup(free: np.ndarray, hole_fill_frac: float) -> np.ndarray:
    """Keep the largest 4-connected FREE component, fill small enclosed holes."""
    labels, n = ndimage.label(free, structure=_CROSS)
    if n == 0:
        raise RiverMapError("empty FREE region")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    free = labels == (int(np.argmax(sizes)) + 1)

    hole_labels, m = ndimage.label(~free, structure=_CROSS)
    if m:
        border = np.zeros(m + 1, dtype=bool)
        for sl in (hole_labels[0, :], hole_labels[-1, :], hole_labels[:, 0], hole_labels[:, -1]):
            border[np.unique(sl)] = True
        hole_sizes = ndimage.sum_labels(np.ones_like(hole_labels), hole_labels,
                                        index=np.arange(1, m + 1))
        limit = hole_fill_frac * free.sum()
        for lbl in range(1, m + 1):
            if not border[lbl] and hole_sizes[lbl - 1] < limit:
                free = free | (hole_labels == lbl)
    return free


def load_map(raster_bytes: bytes, threshold: int = 128, resolution: float = 1.0,
             geo_anchor: GeoAnchor | None = None, hole_fill_frac: float = 0.001) -> RiverMap:
    """Decode a single-channel raster and threshold it into a RiverMap.

    Pixels with intensity <= threshold become FREE.  Cleanup keeps the
    largest 4-connected FREE component and fills enclosed FREE-region holes
    smaller than ``hole_fill_frac`` of the FREE area.
    """
    try:
        img = Image.open(io.BytesIO(raster_bytes))
        img.load()
    except Exception as exc:
        raise RiverMapError(f"undecodable raster payload: {exc}") from exc
    if img.mode != "L":
        img = img.convert("L")
    intensity = np.asarray(img, dtype=np.uint8)
    free = _cleanup(intensity <= threshold, hole_fill_frac)
    cells = np.where(free, FREE, OBSTACLE).astype(np.uint8)
    return RiverMap(cells=cells, resolution=resolution, geo_anchor=geo_anchor)


def _from_free(free: np.ndarray, resolution: float) -> RiverMap:
    free = _cleanup(free, hole_fill_frac=0.001)
    return RiverMap(cells=np.where(free, FREE, OBSTACLE).astype(np.uint8), resolution=resolution)


def make_rect_river(length: int, width: int, resolution: float = 1.0) -> RiverMap:
    """Axis-aligned length x width FREE rectangle with a 1-cell OBSTACLE border."""
    if length < 3 or width < 3:
        raise RiverMapError("length and width must be >= 3 cells")
    free = np.zeros((width + 2, length + 2), dtype=bool)
    free[1:width + 1, 1:length + 1] = True
    return _from_free(free, resolution)


def make_meander_river(length: int, width: int, amplitude: float, period: float,
                       resolution: float = 1.0) -> RiverMap:
    """Sinusoidal river: cells within width/2 (per column) of the meandering spine.

    The band is measured vertically per column, so the FREE area stays close
    to length*width; the perpendicular channel width shrinks by a factor of
    cos(atan(slope)) on steep reaches.
    """
    if length < 3 or width < 3:
        raise RiverMapError("length and width must be >= 3 cells")
    if period <= 0:
        raise RiverMapError("period must be > 0")
    amplitude = float(abs(amplitude))
    height = int(math.ceil(2 * amplitude)) + width + 2
    y_mid = (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:length + 2]
    spine = y_mid + amplitude * np.sin(2.0 * math.pi * xs / period)
    free = np.abs(ys - spine) <= width / 2.0
    free[:, 0] = False
    free[:, length + 1:] = False
    return _from_free(free, resolution)


def make_two_step_river(length: int, width_upstream: int, width_downstream: int,
                        resolution: float = 1.0) -> RiverMap:
    """Straight river whose width steps from one value to another at mid-length."""
    if length < 4 or min(width_upstream, width_downstream) < 3:
        raise RiverMapError("length must be >= 4 and widths >= 3 cells")
    wmax = max(width_upstream, width_downstream)
    height = wmax + 2
    y_mid = (height - 1) / 2.0
    free = np.zeros((height, length + 2), dtype=bool)
    half = length // 2
    for x0, x1, w in ((1, half + 1, width_upstream), (half + 1, length + 1, width_downstream)):
        lo = int(math.ceil(y_mid - w / 2.0))
        hi = int(math.floor(y_mid + w / 2.0))
        free[lo:hi + 1, x0:x1] = True
    return _from_free(free, resolution)


# ---------------------------------------------------------------------------
# Raster + sidecar IO
# ---------------------------------------------------------------------------

def map_to_pgm_bytes(rivermap: RiverMap) -> bytes:
    """Encode as binary PGM (P5): FREE -> 0 (dark water), OBSTACLE -> 255."""
    pixels = np.where(rivermap.free, 0, 255).astype(np.uint8)
    header = f"P5\n{rivermap.width} {rivermap.height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def sidecar_dict(rivermap: RiverMap, threshold: int = 128) -> dict:
    anchor = rivermap.geo_anchor
    return {
        "resolution": rivermap.resolution,
        "threshold": threshold,
        "geo_anchor": None if anchor is None else
            {"lat": anchor.lat, "lon": anchor.lon, "bearing_deg": anchor.bearing_deg},
    }


def save_map_pgm(rivermap: RiverMap, path: str | Path, threshold: int = 128) -> Path:
    """Write the map as PGM plus a JSON metadata sidecar (same stem, .json)."""
    path = Path(path)
    path.write_bytes(map_to_pgm_bytes(rivermap))
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(sidecar_dict(rivermap, threshold), sort_keys=True, indent=2) + "\n")
    return path


def load_map_file(path: str | Path) -> RiverMap:
    """Load a PGM/PNG raster, honoring its JSON sidecar when present."""
    path = Path(path)
    if not path.exists():
        raise RiverMapError(f"map file not found: {path}")
    resolution, threshold, anchor = 1.0, 128, None
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        resolution = float(meta.get("resolution", 1.0))
        threshold = int(meta.get("threshold", 128))
        ga = meta.get("geo_anchor")
        if ga:
            anchor = GeoAnchor(lat=float(ga["lat"]), lon=float(ga["lon"]),
                               bearing_deg=float(ga.get("bearing_deg", 90.0)))
    return load_map(path.read_bytes(), threshold=threshold, resolution=resolution,
                    geo_anchor=anchor)
