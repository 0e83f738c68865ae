"""Slow, independent reference computations used to check the fast paths."""

import math
from functools import lru_cache

import numpy as np


# --- geometry ---------------------------------------------------------------

def brute_force_hull(points):
    """Hull vertex set by testing every directed edge against every point, O(n^3)."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    n = len(pts)
    verts = set()
    for i in range(n):
        d = pts - pts[i]  # (n, 2)
        # cross[j, k] = (p_j - p_i) x (p_k - p_i)
        cross = d[:, None, 0] * d[None, :, 1] - d[:, None, 1] * d[None, :, 0]
        dot = (d[:, None, :] * d[None, :, :]).sum(-1)
        len2 = (d * d).sum(-1)
        for j in range(n):
            if j == i:
                continue
            c = cross[j]
            if np.any(c < -1e-12):
                continue
            # collinear points must lie inside the segment for the edge to be maximal
            col = np.abs(c) <= 1e-12
            if np.any(col & ((dot[j] < -1e-12) | (dot[j] > len2[j] + 1e-12))):
                continue
            verts.add(tuple(pts[i]))
            verts.add(tuple(pts[j]))
    return verts


def _inside_convex(poly, x, y):
    """Half-plane test against a CCW convex polygon (boundary inclusive)."""
    v = np.asarray(poly, dtype=np.float64)
    inside = np.ones(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
        inside &= (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) >= 0
    return inside


def _stratified(bounds, n_side, rng):
    x0, y0, x1, y1 = bounds
    gx, gy = np.meshgrid(np.arange(n_side), np.arange(n_side))
    u = (gx.ravel() + rng.random(n_side * n_side)) / n_side
    w = (gy.ravel() + rng.random(n_side * n_side)) / n_side
    return x0 + u * (x1 - x0), y0 + w * (y1 - y0), (x1 - x0) * (y1 - y0)


def mc_area(poly, rng, n_side=1000):
    """Jittered-grid Monte-Carlo area of a convex CCW polygon (n_side^2 samples)."""
    v = np.asarray(poly)
    b = (*v.min(axis=0), *v.max(axis=0))
    x, y, box = _stratified(b, n_side, rng)
    return box * _inside_convex(v, x, y).mean()


def mc_intersection(a, b, rng, n_side=1000):
    a, b = np.asarray(a), np.asarray(b)
    lo = np.maximum(a.min(axis=0), b.min(axis=0))
    hi = np.minimum(a.max(axis=0), b.max(axis=0))
    if np.any(hi <= lo):
        return 0.0
    x, y, box = _stratified((*lo, *hi), n_side, rng)
    return box * (_inside_convex(a, x, y) & _inside_convex(b, x, y)).mean()


def random_convex(rng, center=(0.0, 0.0), scale=1.0, k=None):
    """Convex polygon with vertices on a random rotated ellipse, CCW."""
    k = k or int(rng.integers(3, 12))
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    ax, ay = rng.uniform(0.5, 1.5, size=2) * scale
    rot = rng.uniform(0, np.pi)
    x, y = ax * np.cos(ang), ay * np.sin(ang)
    c, s = np.cos(rot), np.sin(rot)
    pts = np.stack([c * x - s * y + center[0], s * x + c * y + center[1]], axis=1)
    return pts


# --- strings ------------------------------------------------------------------

def recursive_edit_distance(a, b):
    """Levenshtein distance straight from its recursive definition."""

    @lru_cache(maxsize=None)
    def ed(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(ed(i - 1, j) + 1, ed(i, j - 1) + 1,
                   ed(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return ed(len(a), len(b))


# --- clustering ---------------------------------------------------------------

def brute_force_dbscan_partition(x, eps, min_pts):
    """Partition from density-reachability computed by boolean transitive closure.

    Border points shared by several clusters go to the cluster whose lowest
    core index is smallest; noise points are singletons.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    near = dist <= eps
    core = near.sum(axis=1) >= min_pts
    reach = near & core[:, None] & core[None, :]
    np.fill_diagonal(reach, core)
    for k in range(n):  # Warshall
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    clusters = {}
    for i in np.flatnonzero(core):
        key = int(np.flatnonzero(reach[i])[0])
        clusters.setdefault(key, set()).add(int(i))
    cores = {key: frozenset(members) for key, members in clusters.items()}
    assigned = {i for members in cores.values() for i in members}
    for i in range(n):
        if core[i]:
            continue
        # only core points make a border point reachable
        owners = [key for key, members in cores.items() if any(near[i, j] for j in members)]
        if owners:
            clusters[min(owners)].add(i)
            assigned.add(i)
    parts = [frozenset(m) for m in clusters.values()]
    parts += [frozenset([i]) for i in range(n) if i not in assigned]
    return set(parts)


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(g) for g in groups.values()}


# --- attention / training -------------------------------------------------------

def scalar_attention(q, k, v, mask, d):
    """Masked attention with explicit loops, one query at a time."""
    nq, nk, dv = q.shape[0], k.shape[0], v.shape[1]
    out = np.zeros((nq, dv))
    for i in range(nq):
        logits = []
        for j in range(nk):
            if mask[i][j]:
                logits.append(sum(q[i, t] * k[j, t] for t in range(q.shape[1])) / math.sqrt(d))
            else:
                logits.append(None)
        mx = max(l for l in logits if l is not None)
        w = [math.exp(l - mx) if l is not None else 0.0 for l in logits]
        z = sum(w)
        for j in range(nk):
            for t in range(dv):
                out[i, t] += w[j] / z * v[j, t]
    return out


def bilinear_reference(img, h, w):
    """Half-pixel-center bilinear sampling written pixel by pixel."""
    H, W, C = img.shape
    out = np.zeros((h, w, C))
    for y in range(h):
        sy = min(max((y + 0.5) * H / h - 0.5, 0.0), H - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, H - 1)
        fy = sy - y0
        for x in range(w):
            sx = min(max((x + 0.5) * W / w - 0.5, 0.0), W - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, W - 1)
            fx = sx - x0
            out[y, x] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences for every entry of every tensor in ``params.tensors``."""
    out = {}
    for name, t in params.tensors.items():
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            lp = loss_fn()
            t[idx] = old - h
            lm = loss_fn()
            t[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def grad_errors(analytic, numeric, floor=1e-6):
    """(tensor-norm relative error, worst entrywise relative error) for one tensor."""
    diff = analytic - numeric
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    entry = np.abs(diff) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.linalg.norm(diff) / denom), float(entry.max())
