"""Planar polygon primitives: area, convex hull, intersection area, overlap match.

All coordinates are float64 pixels. Polygons are immutable, validated at
construction and stored counter-clockwise (positive shoelace area).
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

FUSE_TOL = 1e-9
AREA_TOL = 1e-9


class GeometryError(ValueError):
    pass


class EmptyInput(GeometryError):
    pass


class CollinearInput(GeometryError):
    pass


class DegeneratePolygon(GeometryError):
    pass


class Point(NamedTuple):
    x: float
    y: float


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(pts: np.ndarray) -> float:
    # relative to the first vertex; keeps precision for small far-away shapes
    x, y = pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _fuse(pts: np.ndarray) -> np.ndarray:
    keep = [pts[0]]
    for p in pts[1:]:
        if np.hypot(*(p - keep[-1])) >= FUSE_TOL:
            keep.append(p)
    while len(keep) > 1 and np.hypot(*(keep[0] - keep[-1])) < FUSE_TOL:
        keep.pop()
    return np.array(keep, dtype=np.float64)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and \
            ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True

    def on_segment(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return ((d1 == 0 and on_segment(q1, q2, p1)) or (d2 == 0 and on_segment(q1, q2, p2))
            or (d3 == 0 and on_segment(p1, p2, q1)) or (d4 == 0 and on_segment(p1, p2, q2)))


def _is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    if n == 3:
        return True
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


class Polygon:
    """Simple polygon with at least three vertices, normalized to CCW order.

    Vertices closer than ``FUSE_TOL`` are fused; polygons whose area is below
    ``AREA_TOL`` or whose edges cross are rejected with `DegeneratePolygon`.
    """

    __slots__ = ("_pts", "_area")

    def __init__(self, vertices: Iterable[Sequence[float]]):
        pts = np.array([tuple(v) for v in vertices], dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise EmptyInput("polygon needs at least 3 vertices, got 0")
        if not np.all(np.isfinite(pts)):
            raise DegeneratePolygon("polygon has non-finite coordinates")
        pts = _fuse(pts)
        if len(pts) < 3:
            raise DegeneratePolygon(f"polygon needs at least 3 distinct vertices, got {len(pts)}")
        area = _signed_area(pts)
        if abs(area) < AREA_TOL:
            raise DegeneratePolygon(f"polygon area {abs(area):.3g} below tolerance")
        if area < 0:
            pts = pts[::-1].copy()
        if not _is_simple(pts):
            raise DegeneratePolygon("polygon edges self-intersect")
        pts.setflags(write=False)
        self._pts = pts
        self._area = abs(area)

    @property
    def vertices(self) -> np.ndarray:
        """(n, 2) read-only float64 array of CCW vertices."""
        return self._pts

    def points(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self._pts]

    @property
    def area(self) -> float:
        return self._area

    def __len__(self) -> int:
        return len(self._pts)

    def __repr__(self) -> str:
        return f"Polygon({self._pts.tolist()!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self._pts, other._pts)

    def __hash__(self) -> int:
        return hash(self._pts.tobytes())

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        lo = self._pts.min(axis=0)
        hi = self._pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def centroid(self) -> Point:
        p = self._pts
        q = np.roll(p, -1, axis=0)
        c = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        a = c.sum() / 2.0
        cx = ((p[:, 0] + q[:, 0]) * c).sum() / (6.0 * a)
        cy = ((p[:, 1] + q[:, 1]) * c).sum() / (6.0 * a)
        return Point(float(cx), float(cy))

    def is_convex(self) -> bool:
        p = self._pts
        a = np.roll(p, 1, axis=0)
        b = np.roll(p, -1, axis=0)
        cr = (p[:, 0] - a[:, 0]) * (b[:, 1] - p[:, 1]) - (p[:, 1] - a[:, 1]) * (b[:, 0] - p[:, 0])
        return bool(np.all(cr >= -AREA_TOL))

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        """Vectorized point-in-polygon (boundary counts as inside within ``tol``)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        on_edge = np.zeros(len(pts), dtype=bool)
        v = self._pts
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
            ex, ey = x2 - x1, y2 - y1
            seg2 = ex * ex + ey * ey
            t = np.clip(((x - x1) * ex + (y - y1) * ey) / seg2, 0.0, 1.0)
            d2 = (x1 + t * ex - x) ** 2 + (y1 + t * ey - y) ** 2
            on_edge |= d2 <= tol * tol
        return inside | on_edge


def as_polygon(p) -> Polygon:
    return p if isinstance(p, Polygon) else Polygon(p)


def polygon_area(p: Polygon) -> float:
    """Absolute shoelace area."""
    return as_polygon(p).area


def convex_hull(points: Iterable[Sequence[float]]) -> Polygon:
    """Monotone-chain convex hull; collinear boundary points are dropped."""
    pts = np.array([tuple(p) for p in points], dtype=np.float64).reshape(-1, 2)
    if len(pts) < 1:
        raise EmptyInput("convex hull of an empty point set")
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        raise CollinearInput(f"need 3 non-collinear points, got {len(uniq)} distinct")

    def half(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3 or abs(_signed_area(np.array(hull))) < AREA_TOL:
        raise CollinearInput("all points lie on one line")
    return Polygon(hull)


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by the CCW convex polygon ``clip``."""
    out = subject
    n = len(clip)
    for i in range(n):
        if len(out) == 0:
            break
        c1, c2 = clip[i], clip[(i + 1) % n]
        ex, ey = c2[0] - c1[0], c2[1] - c1[1]
        side = ex * (out[:, 1] - c1[1]) - ey * (out[:, 0] - c1[0])
        nxt = []
        m = len(out)
        for j in range(m):
            s, e = out[j - 1], out[j]
            ss, se = side[j - 1], side[j]
            if se >= 0:
                if ss < 0:
                    t = ss / (ss - se)
                    nxt.append(s + t * (e - s))
                nxt.append(e)
            elif ss >= 0:
                t = ss / (ss - se)
                nxt.append(s + t * (e - s))
        out = np.array(nxt, dtype=np.float64).reshape(-1, 2)
    return out


def _area_of(pts: np.ndarray) -> float:
    return abs(_signed_area(pts)) if len(pts) >= 3 else 0.0


def triangulate(p: Polygon) -> list[np.ndarray]:
    """Ear-clipping triangulation of a simple CCW polygon into (3, 2) arrays."""
    verts = [np.asarray(v) for v in as_polygon(p).vertices]
    tris: list[np.ndarray] = []
    guard = 0
    while len(verts) > 3:
        n = len(verts)
        clipped = False
        for i in range(n):
            a, b, c = verts[i - 1], verts[i], verts[(i + 1) % n]
            cr = _cross(a, b, c)
            if abs(cr) <= AREA_TOL:
                del verts[i]  # collinear vertex adds no area
                clipped = True
                break
            if cr < 0:
                continue
            ear = True
            for k in range(n):
                if k in (i - 1 if i else n - 1, i, (i + 1) % n):
                    continue
                q = verts[k]
                if _cross(a, b, q) >= 0 and _cross(b, c, q) >= 0 and _cross(c, a, q) >= 0:
                    ear = False
                    break
            if ear:
                tris.append(np.array([a, b, c]))
                del verts[i]
                clipped = True
                break
        guard += 1
        if not clipped or guard > 10_000:
            raise DegeneratePolygon("ear clipping failed; polygon is not simple")
    if abs(_cross(*verts)) > AREA_TOL:
        tris.append(np.array(verts))
    return tris


def _convex_pieces(p: Polygon) -> list[np.ndarray]:
    return [p.vertices] if p.is_convex() else triangulate(p)


def intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of ``a`` ∩ ``b``; concave inputs are triangulated first."""
    a, b = as_polygon(a), as_polygon(b)
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    if ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0:
        return 0.0
    origin = a.vertices[0]
    total = 0.0
    for pa in _convex_pieces(a):
        for pb in _convex_pieces(b):
            total += _area_of(_clip_convex(pa - origin, pb - origin))
    return min(total, a.area, b.area)


def geometric_match(g: Polygon, p: Polygon, threshold: float = 0.4) -> tuple[bool, float]:
    """Overlap score ``max(I/area(g), I/area(p))`` and whether it exceeds ``threshold``."""
    g, p = as_polygon(g), as_polygon(p)
    inter = intersection_area(g, p)
    score = max(inter / g.area, inter / p.area)
    return score > threshold, score
