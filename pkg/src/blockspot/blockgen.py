"""Block-level label generation from word/line annotations.

Each instance gets a feature vector built from its normalized outline
(position) and a pooled appearance descriptor of its crop (visual). DBSCAN
groups the vectors, and every group becomes one block whose outline is the
convex hull of its members.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geometry import Polygon, convex_hull
from .tokenizer import as_raster, resize, to_rgb


class EmptyCrop(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TextInstance:
    polygon: Polygon
    text: str
    ignore: bool = False

    def __post_init__(self):
        if not self.text and not self.ignore:
            raise ValueError("only ignored instances may have empty text")


@dataclass(frozen=True)
class TextBlock:
    polygon: Polygon
    members: list[int]
    text: str
    ignore: bool = False


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int
    channels: int = 3


@dataclass
class BlockGenConfig:
    eps: float = 0.3
    min_pts: int = 1
    k: int = 8
    d: int = 64
    position_weight: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        if self.k < 4:
            raise ValueError(f"k must be >= 4, got {self.k}")
        if self.position_weight < 0:
            raise ValueError("position_weight must be >= 0")


# --------------------------------------------------------------------------
# position features


def resample_outline(vertices: np.ndarray, k: int) -> np.ndarray:
    """``k`` points equally spaced by arc length along the closed outline,
    starting at the first vertex."""
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(k) * (cum[-1] / k)
    return np.stack([np.interp(s, cum, closed[:, 0]), np.interp(s, cum, closed[:, 1])], axis=1)


def _canonical_start(vertices: np.ndarray) -> np.ndarray:
    # begin at the top-left-most vertex so equal outlines give equal features
    key = vertices[:, 0] + vertices[:, 1]
    start = int(np.lexsort((vertices[:, 1], key))[0])
    return np.roll(vertices, -start, axis=0)


def position_features(inst: TextInstance, dims: ImageDims, k: int = 8) -> np.ndarray:
    """Outline resampled to ``k`` points, divided by (width, height).

    Returns ``[x_0/w, y_0/h, x_1/w, y_1/h, ...]`` of length ``2k`` in [0, 1].
    Vertices outside the image are clamped first.
    """
    if k < 4:
        raise ValueError(f"k must be >= 4, got {k}")
    v = np.array(inst.polygon.vertices, dtype=np.float64)
    v[:, 0] = np.clip(v[:, 0], 0, dims.width)
    v[:, 1] = np.clip(v[:, 1], 0, dims.height)
    pts = resample_outline(_canonical_start(v), k)
    return (pts / np.array([dims.width, dims.height], dtype=np.float64)).ravel()


# --------------------------------------------------------------------------
# visual features


class FeatureExtractor(Protocol):
    dim: int
    input_size: tuple[int, int]

    def __call__(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) image in [0, 1] -> (rows, cols, dim) feature map."""


class HistogramExtractor:
    """Deterministic stand-in for a learned backbone.

    Splits the preprocessed crop into a ``grid`` x ``grid`` cell map. Each
    cell holds a per-channel intensity histogram (``(dim - 4) / 3`` bins per
    channel) and a 4-bin magnitude-weighted gradient-orientation histogram,
    each normalized by the cell's pixel count.
    """

    def __init__(self, dim: int = 64, grid: int = 4, input_size: tuple[int, int] = (32, 128)):
        if dim <= 4 or (dim - 4) % 3:
            raise ValueError("dim must be 4 + 3 * bins_per_channel")
        self.dim = dim
        self.grid = grid
        self.input_size = input_size
        self.color_bins = (dim - 4) // 3

    def __call__(self, image: np.ndarray) -> np.ndarray:
        img = to_rgb(image)
        h, w, _ = img.shape
        gray = img.mean(axis=2)
        gy, gx = np.gradient(gray)
        mag = np.hypot(gx, gy)
        ori = np.mod(np.arctan2(gy, gx), np.pi)
        obin = np.minimum((ori / (np.pi / 4)).astype(int), 3)
        cbin = np.minimum((img * self.color_bins).astype(int), self.color_bins - 1)
        rows = np.array_split(np.arange(h), self.grid)
        cols = np.array_split(np.arange(w), self.grid)
        out = np.zeros((self.grid, self.grid, self.dim))
        nb = self.color_bins
        for i, r in enumerate(rows):
            for j, c in enumerate(cols):
                n = len(r) * len(c)
                cell = cbin[r[0]:r[-1] + 1, c[0]:c[-1] + 1]
                for ch in range(3):
                    out[i, j, ch * nb:(ch + 1) * nb] = np.bincount(
                        cell[:, :, ch].ravel(), minlength=nb) / n
                out[i, j, 3 * nb:] = np.bincount(
                    obin[r[0]:r[-1] + 1, c[0]:c[-1] + 1].ravel(),
                    weights=mag[r[0]:r[-1] + 1, c[0]:c[-1] + 1].ravel(), minlength=4) / n
        return out


def visual_features(crop, extractor: FeatureExtractor | None = None) -> np.ndarray:
    """Resize to the extractor's input, run it, and average-pool over cells."""
    extractor = extractor or HistogramExtractor()
    img = as_raster(crop)
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise EmptyCrop(f"crop has zero area: {img.shape}")
    img = np.clip(to_rgb(resize(img, *extractor.input_size)), 0.0, 1.0)
    fmap = np.asarray(extractor(img), dtype=np.float64)
    vec = fmap.reshape(-1, fmap.shape[-1]).mean(axis=0)
    if vec.shape != (extractor.dim,):
        raise DimensionMismatch(f"extractor returned {vec.shape}, expected ({extractor.dim},)")
    return vec


def combine_features(pos: np.ndarray, vis: np.ndarray, position_weight: float = 1.0) -> np.ndarray:
    """L2-normalize both parts, weight the position part, concatenate."""
    def unit(v):
        n = np.linalg.norm(v)
        return v / n if n > 0 else v
    return np.concatenate([position_weight * unit(pos), unit(vis)])


# --------------------------------------------------------------------------
# clustering


def dbscan(features, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN over Euclidean distance; noise points get their own labels.

    Points are scanned in index order, so a border point reachable from two
    clusters joins the one discovered first. Cluster labels are numbered in
    discovery order; noise singletons are numbered after all clusters.
    """
    rows = [np.asarray(f, dtype=np.float64).ravel() for f in features]
    if not rows:
        raise ValueError("dbscan needs at least one feature vector")
    if len({len(r) for r in rows}) != 1:
        raise DimensionMismatch("feature vectors differ in length")
    if not eps > 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    x = np.stack(rows)
    n = len(x)
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    near = d2 <= eps * eps
    core = near.sum(axis=1) >= min_pts
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            if not core[j]:
                continue
            for nb in np.flatnonzero(near[j]):
                if labels[nb] == -1:
                    labels[nb] = cluster
                    frontier.append(nb)
        cluster += 1
    for i in np.flatnonzero(labels == -1):
        labels[i] = cluster
        cluster += 1
    return labels


# --------------------------------------------------------------------------
# merging


def reading_order(polygons: Sequence[Polygon]) -> list[int]:
    """Indices in top-to-bottom, left-to-right order.

    Two boxes share a line when their vertical extents overlap by at least
    half the smaller height; lines are ordered by mean center height and
    members within a line by centroid x.
    """
    if not polygons:
        return []
    spans = []
    for p in polygons:
        x0, y0, x1, y1 = p.bounds()
        spans.append((y0, y1, p.centroid().x))
    order = sorted(range(len(polygons)), key=lambda i: ((spans[i][0] + spans[i][1]) / 2, spans[i][2], i))
    lines: list[list[int]] = []
    for i in order:
        y0, y1, _ = spans[i]
        placed = False
        if lines:
            for j in lines[-1]:
                a0, a1, _ = spans[j]
                overlap = min(y1, a1) - max(y0, a0)
                if overlap >= 0.5 * min(y1 - y0, a1 - a0):
                    lines[-1].append(i)
                    placed = True
                    break
        if not placed:
            lines.append([i])
    out = []
    for line in lines:
        out.extend(sorted(line, key=lambda i: (spans[i][2], i)))
    return out


def join_in_reading_order(polygons: Sequence[Polygon], texts: Sequence[str]) -> str:
    return " ".join(texts[i] for i in reading_order(polygons) if texts[i])


def merge_blocks(instances: Sequence[TextInstance], labels: Sequence[int]) -> list[TextBlock]:
    """One block per distinct label, in order of each label's first instance."""
    if len(instances) != len(labels):
        raise ValueError("instances and labels differ in length")
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    blocks = []
    for members in groups.values():
        pts = np.vstack([instances[i].polygon.vertices for i in members])
        polys = [instances[i].polygon for i in members]
        ordered = [members[j] for j in reading_order(polys)]
        text = " ".join(instances[i].text for i in ordered if instances[i].text)
        blocks.append(TextBlock(convex_hull(pts), ordered, text))
    return blocks


def instance_features(image, inst: TextInstance, dims: ImageDims, cfg: BlockGenConfig,
                      extractor: FeatureExtractor | None = None) -> np.ndarray:
    from .dataset_io import crop_polygon

    pos = position_features(inst, dims, cfg.k)
    vis = visual_features(crop_polygon(image, inst.polygon), extractor)
    return combine_features(pos, vis, cfg.position_weight)


def generate_blocks(record, cfg: BlockGenConfig | None = None, image=None,
                    image_root=None, extractor: FeatureExtractor | None = None):
    """Return a copy of ``record`` with ``blocks`` filled in.

    Ignored instances skip clustering and come out as one ignored block each,
    after the clustered blocks. ``image`` may be passed to avoid reading it
    from ``record.image`` (resolved against ``image_root``).
    """
    from .dataset_io import read_image

    cfg = cfg or BlockGenConfig()
    if extractor is None:
        extractor = HistogramExtractor(dim=cfg.d)
    active = [i for i, inst in enumerate(record.instances) if not inst.ignore]
    blocks: list[TextBlock] = []
    if active:
        if image is None:
            image = read_image(record.image_path(image_root))
        dims = ImageDims(record.width, record.height)
        feats = [instance_features(image, record.instances[i], dims, cfg, extractor) for i in active]
        labels = dbscan(feats, cfg.eps, cfg.min_pts)
        for blk in merge_blocks([record.instances[i] for i in active], labels):
            blocks.append(dataclasses.replace(blk, members=[active[j] for j in blk.members]))
    for i, inst in enumerate(record.instances):
        if inst.ignore:
            blocks.append(TextBlock(inst.polygon, [i], inst.text, ignore=True))
    return dataclasses.replace(record, blocks=blocks)
