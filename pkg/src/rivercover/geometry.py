"""River geometry: directional bank contours, centerline with widths and
cross-sections, downriver direction, ray casts, and in-river shortest paths.

Everything operates in the grid frame documented in :mod:`rivercover.grids`.
Contours and centerlines are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse import csgraph
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize

from .grids import RiverMap, StartPoint, round_cell, validate_start

SQRT2 = math.sqrt(2.0)

LEFT = -1
RIGHT = 1


class GeometryError(RuntimeError):
    """Geometry extraction or query failed."""


class ContourError(GeometryError):
    """Bank contours could not be extracted (ambiguous inlet/outlet, island)."""


class RayLeftFrame(GeometryError):
    """A cast ray exited the raster frame before hitting an OBSTACLE cell.

    Planners treat this as "end of river reached".
    """


def left_normal(tangent: np.ndarray) -> np.ndarray:
    """Unit normal pointing toward the left bank (y-down frame)."""
    return np.array([tangent[1], -tangent[0]], dtype=float)


def right_normal(tangent: np.ndarray) -> np.ndarray:
    return np.array([-tangent[1], tangent[0]], dtype=float)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

_RAY_STEP = 0.4  # cells; conservative so 1-cell banks cannot be tunneled


def cast_ray(rivermap: RiverMap, origin, direction) -> np.ndarray:
    """First FREE/OBSTACLE interface along a ray, refined to sub-cell precision.

    Returns the last FREE point before the blocking cell (within 1e-4 cells of
    the interface).  Raises :class:`RayLeftFrame` if the ray leaves the raster
    before any OBSTACLE cell blocks it.
    """
    o = np.asarray(origin, dtype=float).reshape(2)
    u = np.asarray(direction, dtype=float).reshape(2)
    norm = float(np.hypot(u[0], u[1]))
    if norm < 1e-12:
        raise GeometryError("ray direction must be nonzero")
    u = u / norm
    if not rivermap.is_free(o[0], o[1]):
        raise GeometryError("ray origin is not on a FREE cell")

    h, w = rivermap.cells.shape
    max_t = 1.5 * (h + w)
    chunk = 128
    t0 = 0.0
    k_t = None
    hit_inbounds = True
    while t0 < max_t and k_t is None:
        ts = t0 + _RAY_STEP * np.arange(1, chunk + 1)
        pts = o[None, :] + ts[:, None] * u[None, :]
        cx = np.floor(pts[:, 0] + 0.5).astype(int)
        cy = np.floor(pts[:, 1] + 0.5).astype(int)
        inb = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        blocked = ~inb
        blocked[inb] = ~rivermap.free[cy[inb], cx[inb]]
        hits = np.flatnonzero(blocked)
        if len(hits):
            k = int(hits[0])
            k_t = float(ts[k])
            hit_inbounds = bool(inb[k])
        else:
            t0 = float(ts[-1])
    if k_t is None:
        raise RayLeftFrame("ray never blocked inside the frame")
    if not hit_inbounds:
        raise RayLeftFrame("ray exited the raster frame before hitting OBSTACLE")

    t_lo = max(0.0, k_t - _RAY_STEP)
    t_hi = k_t
    for _ in range(40):
        mid = 0.5 * (t_lo + t_hi)
        p = o + mid * u
        if rivermap.is_free(p[0], p[1]):
            t_lo = mid
        else:
            t_hi = mid
        if t_hi - t_lo < 1e-5:
            break
    return o + t_lo * u


def cast_ray_to_opposite_bank(rivermap: RiverMap, origin, theta: float) -> np.ndarray:
    """Spec-facing wrapper casting at angle ``theta`` (radians, atan2 frame)."""
    return cast_ray(rivermap, origin, (math.cos(theta), math.sin(theta)))


# ---------------------------------------------------------------------------
# Grid graph and Dijkstra utilities
# ---------------------------------------------------------------------------

def grid_graph(free: np.ndarray) -> csr_matrix:
    """8-connected CSR graph over True cells; diagonal steps cost sqrt(2)."""
    h, w = free.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    rows, cols, data = [], [], []
    for dx, dy, cost in ((1, 0, 1.0), (0, 1, 1.0), (1, 1, SQRT2), (1, -1, SQRT2)):
        ys0 = slice(max(0, -dy), h - max(0, dy))
        ys1 = slice(max(0, dy), h - max(0, -dy))
        xs0 = slice(max(0, -dx), w - max(0, dx))
        xs1 = slice(max(0, dx), w - max(0, -dx))
        mask = free[ys0, xs0] & free[ys1, xs1]
        i = idx[ys0, xs0][mask]
        j = idx[ys1, xs1][mask]
        rows.append(i)
        cols.append(j)
        rows.append(j)
        cols.append(i)
        data.append(np.full(i.size, cost))
        data.append(np.full(i.size, cost))
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    data = np.concatenate(data) if data else np.zeros(0)
    n = h * w
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _flat(x: int, y: int, width: int) -> int:
    return y * width + x


def _unflat(i: int, width: int) -> tuple[int, int]:
    return i % width, i // width


def _dijkstra(graph: csr_matrix, src: int, predecessors: bool = False):
    return csgraph.dijkstra(graph, directed=True, indices=src,
                            return_predecessors=predecessors)


def _farthest(dist: np.ndarray, mask_flat: np.ndarray) -> tuple[int, float]:
    ok = mask_flat & np.isfinite(dist)
    if not ok.any():
        raise GeometryError("no reachable cells")
    d = np.where(ok, dist, -1.0)
    i = int(np.argmax(d))
    return i, float(d[i])


def free_distance_transform(free: np.ndarray) -> np.ndarray:
    """Distance (cells) from each FREE cell center to the nearest non-FREE
    cell center, with the raster frame treated as OBSTACLE."""
    padded = np.pad(free, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


# ---------------------------------------------------------------------------
# Boundary tracing and bank contours
# ---------------------------------------------------------------------------

# Moore neighborhood in clockwise order starting at West (y grows downward)
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {off: k for k, off in enumerate(_MOORE)}


def moore_boundary_trace(free: np.ndarray) -> np.ndarray:
    """Closed boundary loop of the True region, as ordered (x, y) cells.

    The mask must not touch the array border (callers pad).  Spur cells may
    appear more than once, as usual for Moore tracing.
    """
    ys, xs = np.nonzero(free)
    if len(xs) == 0:
        raise GeometryError("empty region")
    order = np.lexsort((xs, ys))
    start = (int(xs[order[0]]), int(ys[order[0]]))
    if len(xs) == 1:
        return np.array([start], dtype=int)

    def is_free(c):
        return bool(free[c[1], c[0]])

    b0 = (start[0] - 1, start[1])  # west of the scan-order first pixel: not free
    loop: list[tuple[int, int]] = []
    cur, back = start, b0
    limit = 4 * len(xs) + 16
    for _ in range(limit):
        loop.append(cur)
        off = (back[0] - cur[0], back[1] - cur[1])
        k0 = _MOORE_INDEX[off]
        nxt = None
        for step in range(1, 9):
            k = (k0 + step) % 8
            cand = (cur[0] + _MOORE[k][0], cur[1] + _MOORE[k][1])
            if is_free(cand):
                nxt = cand
                prev_k = (k0 + step - 1) % 8
                back = (cur[0] + _MOORE[prev_k][0], cur[1] + _MOORE[prev_k][1])
                break
        if nxt is None:
            break  # isolated pixel
        cur = nxt
        if cur == start and back == b0:
            break  # Jacob's stopping criterion: re-entered start the same way
    return np.array(loop, dtype=int)


@dataclass
class BankContours:
    """Shore polylines ordered in the downriver direction.

    ``left_bank`` is the bank on the left-hand side when looking downriver.
    Tangents are unit vectors smoothed over roughly half a river width and
    also point downriver.
    """

    left_bank: np.ndarray
    right_bank: np.ndarray
    left_tangents: np.ndarray = field(repr=False)
    right_tangents: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self._left_tree = cKDTree(self.left_bank)
        self._right_tree = cKDTree(self.right_bank)

    def bank(self, side: int) -> np.ndarray:
        return self.left_bank if side == LEFT else self.right_bank

    def tangents(self, side: int) -> np.ndarray:
        return self.left_tangents if side == LEFT else self.right_tangents

    def nearest(self, side: int, point) -> tuple[int, float]:
        """Index of the nearest bank point on ``side`` and its distance."""
        tree = self._left_tree if side == LEFT else self._right_tree
        d, i = tree.query(np.asarray(point, dtype=float))
        return int(i), float(d)

    def nearest_side(self, point) -> int:
        _, dl = self.nearest(LEFT, point)
        _, dr = self.nearest(RIGHT, point)
        return LEFT if dl <= dr else RIGHT


def _polyline_tangents(pts: np.ndarray, half_window: int) -> np.ndarray:
    n = len(pts)
    t = np.zeros((n, 2))
    for i in range(n):
        a = pts[max(0, i - half_window)]
        b = pts[min(n - 1, i + half_window)]
        v = b - a
        nv = np.hypot(v[0], v[1])
        t[i] = v / nv if nv > 1e-12 else np.array([1.0, 0.0])
    return t


def _frame_touch_runs(free: np.ndarray) -> int:
    h, w = free.shape
    per = np.concatenate([free[0, :], free[1:, -1], free[-1, -2::-1], free[-2:0:-1, 0]])
    if per.all():
        return 1
    if not per.any():
        return 0
    rises = int(np.sum(per & ~np.roll(per, 1)))
    return rises


def _grad_direction(dist: np.ndarray, cell: tuple[int, int]) -> np.ndarray:
    """Unit direction of increasing ``dist`` around a cell (octile field)."""
    h, w = dist.shape
    x0, y0 = cell
    g = np.zeros(2)
    d0 = dist[y0, x0]
    for dx, dy in _MOORE:
        x, y = x0 + dx, y0 + dy
        if 0 <= x < w and 0 <= y < h and np.isfinite(dist[y, x]):
            dd = dist[y, x] - d0
            norm2 = dx * dx + dy * dy
            g += dd * np.array([dx, dy]) / norm2
    n = np.hypot(g[0], g[1])
    return g / n if n > 1e-12 else np.array([1.0, 0.0])


def _march_out(free: np.ndarray, origin: np.ndarray, direction: np.ndarray,
               max_len: float) -> np.ndarray:
    """Last in-region point marching from origin along direction."""
    h, w = free.shape
    p = np.asarray(origin, dtype=float).copy()
    u = np.asarray(direction, dtype=float)
    last = p.copy()
    t = 0.0
    while t < max_len:
        t += 0.5
        q = origin + t * u
        cx, cy = round_cell(q[0]), round_cell(q[1])
        if not (0 <= cx < w and 0 <= cy < h) or not free[cy, cx]:
            break
        last = q
    return last


def extract_bank_contours(rivermap: RiverMap, start: StartPoint, *,
                          graph: csr_matrix | None = None,
                          dt: np.ndarray | None = None) -> BankContours:
    """Trace the FREE boundary and split it into downriver-ordered banks.

    The boundary loop is cut at the two river ends (inlet and outlet), found
    as the geodesically extremal reaches of the FREE region; ``start`` fixes
    which end is upstream.
    """
    validate_start(rivermap, start)
    free = rivermap.free
    h, w = free.shape
    if _frame_touch_runs(free) > 2:
        raise ContourError("FREE region touches the frame on more than two arcs; "
                           "inlet/outlet are ambiguous")

    if dt is None:
        dt = free_distance_transform(free)
    if graph is None:
        graph = grid_graph(free)
    free_flat = free.reshape(-1)

    f0 = int(np.argmax(dt.reshape(-1)))
    d0 = _dijkstra(graph, f0)
    e_a, _ = _farthest(d0, free_flat)
    dist_a = _dijkstra(graph, e_a)
    e_b, d_max = _farthest(dist_a, free_flat)
    dist_b = _dijkstra(graph, e_b)
    if d_max < 3.0:
        raise ContourError("FREE region has no traversable extent")

    w_est = max(2.0, 2.0 * float(dt.max()))

    def cap_center(dist_from_far_end: np.ndarray) -> tuple[int, int]:
        cap = free_flat & np.isfinite(dist_from_far_end) & (dist_from_far_end >= d_max - w_est)
        score = np.where(cap, dt.reshape(-1), -1.0)
        i = int(np.argmax(score))
        return _unflat(i, w)

    c_a = cap_center(dist_b)   # end near e_a: far from e_b
    c_b = cap_center(dist_a)
    g_a = _grad_direction(dist_b.reshape(h, w), c_a)   # outward at end a
    g_b = _grad_direction(dist_a.reshape(h, w), c_b)
    cut_a = _march_out(free, np.array(c_a, dtype=float), g_a, 3.0 * w_est)
    cut_b = _march_out(free, np.array(c_b, dtype=float), g_b, 3.0 * w_est)

    padded = np.pad(free, 1, constant_values=False)
    loop = moore_boundary_trace(padded) - 1
    if len(loop) < 4:
        raise ContourError("boundary too short to form two banks")
    tree = cKDTree(loop.astype(float))
    _, ia = tree.query(cut_a)
    _, ib = tree.query(cut_b)
    ia, ib = int(ia), int(ib)
    if ia == ib:
        ib = (ia + len(loop) // 2) % len(loop)

    def arc(i0: int, i1: int) -> np.ndarray:
        if i0 <= i1:
            return loop[i0:i1 + 1]
        return np.concatenate([loop[i0:], loop[:i1 + 1]], axis=0)

    arc1 = arc(ia, ib)            # oriented end-a -> end-b
    arc2 = arc(ib, ia)[::-1]      # also end-a -> end-b

    vs_cell = (round_cell(start.x), round_cell(start.y))
    vs_flat = _flat(vs_cell[0], vs_cell[1], w)
    upstream_is_a = dist_a[vs_flat] <= dist_b[vs_flat]
    if upstream_is_a:
        cut_up, g_up = cut_a, g_a
    else:
        arc1, arc2 = arc1[::-1], arc2[::-1]
        cut_up, g_up = cut_b, g_b
    downriver = -g_up

    def side_sign(a: np.ndarray) -> float:
        k = int(min(len(a) - 1, max(3, round(w_est))))
        v = a[k].astype(float) - cut_up
        return downriver[0] * v[1] - downriver[1] * v[0]

    if side_sign(arc1) < side_sign(arc2):
        left_pts, right_pts = arc1, arc2
    else:
        left_pts, right_pts = arc2, arc1

    half_window = int(min(60, max(3, w_est / 2)))
    left_pts = left_pts.astype(float)
    right_pts = right_pts.astype(float)
    return BankContours(
        left_bank=left_pts, right_bank=right_pts,
        left_tangents=_polyline_tangents(left_pts, half_window),
        right_tangents=_polyline_tangents(right_pts, half_window),
    )


# ---------------------------------------------------------------------------
# Centerline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossSection:
    """Bank-to-bank segment through a station, perpendicular to the spine."""

    a: np.ndarray   # left-bank endpoint (cells)
    b: np.ndarray   # right-bank endpoint (cells)
    length: float   # meters


@dataclass(frozen=True)
class Station:
    position: np.ndarray
    arc_length: float
    width: float
    cross_section: CrossSection
    tangent_angle: float


@dataclass
class Centerline:
    """Arc-length parameterized river spine with per-station widths."""

    positions: np.ndarray      # (n, 2) cells
    tangents: np.ndarray       # (n, 2) unit vectors, downriver
    widths: np.ndarray         # (n,) meters
    arc_lengths: np.ndarray    # (n,) meters, strictly increasing from 0
    sections_a: np.ndarray     # (n, 2) left-bank endpoints
    sections_b: np.ndarray     # (n, 2) right-bank endpoints
    total_length: float        # meters
    resolution: float

    def __post_init__(self) -> None:
        self._tree = cKDTree(self.positions)

    @property
    def n_stations(self) -> int:
        return len(self.positions)

    def station(self, i: int) -> Station:
        sec = CrossSection(a=self.sections_a[i].copy(), b=self.sections_b[i].copy(),
                           length=float(np.linalg.norm(self.sections_b[i] - self.sections_a[i])
                                        * self.resolution))
        return Station(position=self.positions[i].copy(),
                       arc_length=float(self.arc_lengths[i]),
                       width=float(self.widths[i]), cross_section=sec,
                       tangent_angle=float(math.atan2(self.tangents[i, 1], self.tangents[i, 0])))

    def nearest_station_index(self, point) -> int:
        _, i = self._tree.query(np.asarray(point, dtype=float))
        return int(i)

    def arc_at(self, point) -> float:
        return float(self.arc_lengths[self.nearest_station_index(point)])

    def tangent_at(self, point) -> np.ndarray:
        return self.tangents[self.nearest_station_index(point)].copy()

    def side_of(self, point) -> int:
        """LEFT (-1) or RIGHT (+1) of the spine; ties resolve LEFT."""
        i = self.nearest_station_index(point)
        t = self.tangents[i]
        v = np.asarray(point, dtype=float) - self.positions[i]
        cross = t[0] * v[1] - t[1] * v[0]
        return LEFT if cross <= 0 else RIGHT


def _smooth_polyline(pts: np.ndarray, window: int) -> np.ndarray:
    if window < 3 or len(pts) < 3:
        return pts
    window = min(window | 1, (len(pts) - 1) | 1)
    if window < 3:
        return pts
    pad = window // 2
    padded = np.pad(pts, ((pad, pad), (0, 0)), mode="edge")
    kernel = np.ones(window) / window
    out = np.empty_like(pts, dtype=float)
    for c in range(2):
        out[:, c] = np.convolve(padded[:, c], kernel, mode="valid")
    return out


def _resample_polyline(pts: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    if total < 1e-9:
        return pts[:1].astype(float)
    targets = np.arange(0.0, total, step)
    if total - targets[-1] > 0.25 * step:
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    out = np.empty((len(targets), 2))
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    return out


def _tangents_of(pts: np.ndarray, k: int = 1) -> np.ndarray:
    n = len(pts)
    t = np.zeros((n, 2))
    for i in range(n):
        a = pts[max(0, i - k)]
        b = pts[min(n - 1, i + k)]
        v = b - a
        nv = np.hypot(v[0], v[1])
        t[i] = v / nv if nv > 1e-12 else (t[i - 1] if i else np.array([1.0, 0.0]))
    return t


def _section_through(rivermap: RiverMap, point: np.ndarray,
                     tangent: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    try:
        a = cast_ray(rivermap, point, left_normal(tangent))
        b = cast_ray(rivermap, point, right_normal(tangent))
    except GeometryError:
        return None
    return a, b


def extract_centerline(rivermap: RiverMap, contours: BankContours,
                       station_step: float, *, dt: np.ndarray | None = None) -> Centerline:
    """Skeletonize the FREE region, prune to the single longest path, extend it
    to the river ends, and resample it into stations with cross-sections."""
    if station_step <= 0:
        raise GeometryError("station_step must be > 0")
    free = rivermap.free
    h, w = free.shape
    res = rivermap.resolution
    if dt is None:
        dt = free_distance_transform(free)

    skel = skeletonize(free)
    if not skel.any():
        raise GeometryError("skeleton is empty")
    sgraph = grid_graph(skel)
    skel_flat = skel.reshape(-1)
    s0 = int(np.argmax(np.where(skel_flat, dt.reshape(-1), -1.0)))
    d0 = _dijkstra(sgraph, s0)
    f1, _ = _farthest(d0, skel_flat)
    d1, pred = _dijkstra(sgraph, f1, predecessors=True)
    f2, best = _farthest(d1, skel_flat)
    if not np.isfinite(best) or best <= 0:
        raise GeometryError("skeleton has no path connecting inlet to outlet")

    chain = []
    node = f2
    while node != -9999 and node >= 0:
        chain.append(_unflat(node, w))
        if node == f1:
            break
        node = int(pred[node])
    pts = np.array(chain[::-1], dtype=float)

    # trim low-clearance tips: the longest path keeps diagonal spurs into the
    # end-cap corners, which would corrupt end tangents
    def dt_of(p) -> float:
        return float(dt[round_cell(p[1]), round_cell(p[0])])

    med_clear = float(np.median([dt_of(p) for p in pts]))
    while len(pts) > 10 and dt_of(pts[0]) < 0.85 * med_clear:
        pts = pts[1:]
    while len(pts) > 10 and dt_of(pts[-1]) < 0.85 * med_clear:
        pts = pts[:-1]

    med_width_cells = 2.0 * med_clear
    window = int(max(3, min(51, round(0.75 * med_width_cells))))
    pts = _smooth_polyline(pts, window)
    pts = _resample_polyline(pts, 1.0)

    # recenter twice: points move to cross-section midpoints; large jumps mean
    # the local tangent was bad, so those corrections are rejected
    k_t = int(max(2, min(10, round(med_width_cells / 4))))
    max_shift = 0.5 * med_clear
    for _ in range(2):
        tangents = _tangents_of(pts, k_t)
        for i in range(len(pts)):
            sec = _section_through(rivermap, pts[i], tangents[i])
            if sec is not None:
                mid = 0.5 * (sec[0] + sec[1])
                if (rivermap.is_free(mid[0], mid[1])
                        and np.linalg.norm(mid - pts[i]) <= max_shift):
                    pts[i] = mid

    # extend both ends along their tangents to the river end caps
    def extend(pts: np.ndarray, at_start: bool) -> np.ndarray:
        k = min(k_t + 1, len(pts) - 1)
        tang = pts[0] - pts[k] if at_start else pts[-1] - pts[-1 - k]
        n = np.hypot(tang[0], tang[1])
        if n < 1e-9:
            return pts
        tang = tang / n
        p = pts[0] if at_start else pts[-1]
        added = []
        for _ in range(int(3 * med_width_cells) + 8):
            q = p + tang
            if not rivermap.is_free(q[0], q[1]):
                break
            sec = _section_through(rivermap, q, tang)
            if sec is None:
                break
            q2 = 0.5 * (sec[0] + sec[1])
            if not rivermap.is_free(q2[0], q2[1]):
                q2 = q
            if float(np.dot(q2 - p, tang)) < 0.3:
                break
            added.append(q2)
            p = q2
        if not added:
            return pts
        add = np.array(added)
        return np.concatenate([add[::-1], pts]) if at_start else np.concatenate([pts, add])

    pts = extend(pts, at_start=True)
    pts = extend(pts, at_start=False)

    upstream_ref = 0.5 * (contours.left_bank[0] + contours.right_bank[0])
    if np.linalg.norm(pts[-1] - upstream_ref) < np.linalg.norm(pts[0] - upstream_ref):
        pts = pts[::-1]

    stations = _resample_polyline(pts, station_step / res)
    if len(stations) < 2:
        stations = np.vstack([pts[0], pts[-1]])
    tangents = _tangents_of(stations, 1)

    pos, sa, sb = [], [], []
    for i in range(len(stations)):
        sec = _section_through(rivermap, stations[i], tangents[i])
        if sec is None:
            continue
        a, b = sec
        mid = 0.5 * (a + b)
        if (not rivermap.is_free(mid[0], mid[1])
                or np.linalg.norm(mid - stations[i]) > max_shift):
            mid = stations[i]
        pos.append(mid)
        sa.append(a)
        sb.append(b)
    if len(pos) < 2:
        raise GeometryError("could not form centerline stations")
    pos = np.array(pos)
    sa = np.array(sa)
    sb = np.array(sb)
    tangents = _tangents_of(pos, 1)
    widths = np.linalg.norm(sb - sa, axis=1) * res
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))]) * res

    keep = np.concatenate([[True], np.diff(arc) > 1e-9])
    pos, tangents, widths, arc = pos[keep], tangents[keep], widths[keep], arc[keep]
    sa, sb = sa[keep], sb[keep]

    return Centerline(positions=pos, tangents=tangents, widths=widths,
                      arc_lengths=arc, sections_a=sa, sections_b=sb,
                      total_length=float(arc[-1]), resolution=res)


def downriver_direction(centerline: Centerline, at) -> float:
    """Downriver tangent angle (radians) at the station nearest ``at``."""
    i = centerline.nearest_station_index(at)
    t = centerline.tangents[i]
    return float(math.atan2(t[1], t[0]))


# ---------------------------------------------------------------------------
# In-river shortest paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShortestPath:
    """Line-of-sight simplified grid shortest path.

    ``length_m`` is the simplified polyline length; ``grid_length_m`` is the
    unsimplified 8-connected optimum (cell-center metric) that the smoothing
    started from.
    """

    points: np.ndarray
    length_m: float
    grid_length_m: float


def _line_of_sight(free: np.ndarray, p: np.ndarray, q: np.ndarray) -> bool:
    d = float(np.hypot(*(q - p)))
    n = int(math.ceil(d / 0.25)) + 1
    ts = np.linspace(0.0, 1.0, n)
    xs = np.floor(p[0] + ts * (q[0] - p[0]) + 0.5).astype(int)
    ys = np.floor(p[1] + ts * (q[1] - p[1]) + 0.5).astype(int)
    h, w = free.shape
    if (xs < 0).any() or (xs >= w).any() or (ys < 0).any() or (ys >= h).any():
        return False
    return bool(free[ys, xs].all())


def _collapse_collinear(pts: np.ndarray) -> np.ndarray:
    if len(pts) <= 2:
        return pts
    keep = [0]
    for i in range(1, len(pts) - 1):
        u = pts[i] - pts[keep[-1]]
        v = pts[i + 1] - pts[i]
        if abs(u[0] * v[1] - u[1] * v[0]) > 1e-9:
            keep.append(i)
    keep.append(len(pts) - 1)
    return pts[keep]


def _los_simplify(free: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = _collapse_collinear(pts)
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _line_of_sight(free, pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


def in_river_shortest_path(rivermap: RiverMap, a, b,
                           graph: csr_matrix | None = None) -> ShortestPath:
    """Shortest 8-connected FREE path from a to b, line-of-sight simplified.

    Symmetric by construction: the search always runs from the lexicographically
    smaller endpoint, so length(a, b) == length(b, a) exactly.
    """
    pa = np.asarray(a, dtype=float).reshape(2)
    pb = np.asarray(b, dtype=float).reshape(2)
    for p in (pa, pb):
        if not rivermap.is_free(p[0], p[1]):
            raise GeometryError(f"endpoint {tuple(p)} is not FREE")
    if np.linalg.norm(pa - pb) < 1e-12:
        return ShortestPath(points=pa.reshape(1, 2).copy(), length_m=0.0, grid_length_m=0.0)

    res = rivermap.resolution
    w = rivermap.width
    ca = (round_cell(pa[0]), round_cell(pa[1]))
    cb = (round_cell(pb[0]), round_cell(pb[1]))
    if ca == cb:
        pts = np.vstack([pa, pb])
        d = float(np.linalg.norm(pb - pa)) * res
        return ShortestPath(points=pts, length_m=d, grid_length_m=d)

    swap = (ca[1], ca[0], pa[1], pa[0]) > (cb[1], cb[0], pb[1], pb[0])
    if swap:
        pa, pb, ca, cb = pb, pa, cb, ca

    if graph is None:
        graph = grid_graph(rivermap.free)
    src = _flat(ca[0], ca[1], w)
    dst = _flat(cb[0], cb[1], w)
    dist, pred = _dijkstra(graph, src, predecessors=True)
    if not np.isfinite(dist[dst]):
        raise GeometryError("no FREE path between endpoints (map invariant violated)")

    chain = []
    node = dst
    while node != -9999 and node >= 0:
        chain.append(_unflat(node, w))
        if node == src:
            break
        node = int(pred[node])
    cells = np.array(chain[::-1], dtype=float)

    pts = [pa]
    if np.linalg.norm(cells[0] - pa) > 1e-9:
        pts.append(cells[0])
    pts.extend(cells[1:-1])
    if np.linalg.norm(cells[-1] - pb) > 1e-9:
        pts.append(cells[-1])
    pts.append(pb)
    poly = _los_simplify(rivermap.free, np.array(pts))

    if swap:
        poly = poly[::-1].copy()
    length = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum()) * res
    return ShortestPath(points=poly, length_m=length, grid_length_m=float(dist[dst]) * res)


# ---------------------------------------------------------------------------
# Frame: shared geometry bundle for planners
# ---------------------------------------------------------------------------

@dataclass
class RiverFrame:
    """Precomputed geometry (graph, contours, centerline) reused by planners."""

    rivermap: RiverMap
    start: StartPoint
    contours: BankContours
    centerline: Centerline
    dt: np.ndarray
    graph: csr_matrix

    def shortest_path(self, a, b) -> ShortestPath:
        return in_river_shortest_path(self.rivermap, a, b, graph=self.graph)

    @property
    def station_step_m(self) -> float:
        if self.centerline.n_stations < 2:
            return self.rivermap.resolution
        return float(np.median(np.diff(self.centerline.arc_lengths)))


def default_station_step(rivermap: RiverMap, spacing: float | None = None) -> float:
    base = 2.0 * rivermap.resolution
    if spacing is not None:
        return max(base, spacing / 2.0)
    return base


def build_frame(rivermap: RiverMap, start: StartPoint,
                station_step: float | None = None) -> RiverFrame:
    validate_start(rivermap, start)
    step = station_step if station_step is not None else default_station_step(rivermap)
    dt = free_distance_transform(rivermap.free)
    graph = grid_graph(rivermap.free)
    contours = extract_bank_contours(rivermap, start, graph=graph, dt=dt)
    centerline = extract_centerline(rivermap, contours, step, dt=dt)
    return RiverFrame(rivermap=rivermap, start=start, contours=contours,
                      centerline=centerline, dt=dt, graph=graph)
