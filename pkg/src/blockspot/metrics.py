"""Block-level spotting metrics: Normalized Score (NS) and Generalized F (GF).

NS pairs every ground-truth box with its best-overlapping prediction and
vice versa, merges pairs that share a box into groups, and pools edit
distances over the concatenated group texts across the whole dataset:

    NS = 1 - sum(ED(g_i, p_i)) / sum(max(len(g_i), len(p_i)))

NS scores depend on the annotation style of the dataset they are computed
on and are not comparable across datasets.

GF counts a ground-truth word as spotted when a prediction overlaps it with
``max(I/area(g), I/area(p)) > T`` and the word appears as one whitespace
token of that prediction's transcription.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .blockgen import TextInstance, reading_order
from .geometry import Polygon, geometric_match, intersection_area

GF_THRESHOLD = 0.4

_EDGE_JUNK = re.compile(r"^[^A-Z0-9]+|[^A-Z0-9]+$")


class InvalidThreshold(ValueError):
    pass


@dataclass(frozen=True)
class SpottingResult:
    polygon: Polygon
    text: str


@dataclass(frozen=True)
class MatchPair:
    gt_index: int | None
    pred_index: int | None

    def __post_init__(self):
        if self.gt_index is None and self.pred_index is None:
            raise ValueError("a match pair needs at least one side")


@dataclass
class MatchGroup:
    gt_indices: list[int]
    pred_indices: list[int]
    gt_text: str
    pred_text: str
    ignored: bool = False


def normalize_text(s: str, enabled: bool = True) -> str:
    """NFC, uppercase, then strip leading/trailing characters outside [A-Z0-9]."""
    if not enabled:
        return s
    return _EDGE_JUNK.sub("", unicodedata.normalize("NFC", s).upper())


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs over code points."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _score_matrix(G, P) -> np.ndarray:
    s = np.zeros((len(G), len(P)))
    for i, g in enumerate(G):
        for j, p in enumerate(P):
            s[i, j] = geometric_match(g.polygon, p.polygon)[1]
    return s


def _best(scores: np.ndarray, dists: np.ndarray) -> int | None:
    if scores.size == 0 or scores.max() <= 0:
        return None
    # highest score, then nearest centroid, then lowest index
    order = np.lexsort((np.arange(len(scores)), dists, -scores))
    return int(order[0])


def pair_match(G: Sequence[TextInstance], P: Sequence[SpottingResult],
               scores: np.ndarray | None = None) -> list[MatchPair]:
    """Nearest-partner pairs in both directions; boxes with no overlap stay one-sided."""
    if scores is None:
        scores = _score_matrix(G, P)
    gc = np.array([g.polygon.centroid() for g in G]).reshape(-1, 2)
    pc = np.array([p.polygon.centroid() for p in P]).reshape(-1, 2)
    dist = np.hypot(*(gc[:, None, :] - pc[None, :, :]).transpose(2, 0, 1)) if len(G) and len(P) \
        else np.zeros((len(G), len(P)))
    pairs: set[tuple] = set()
    for i in range(len(G)):
        j = _best(scores[i], dist[i])
        if j is not None:
            pairs.add((i, j))
    for j in range(len(P)):
        i = _best(scores[:, j], dist[:, j])
        if i is not None:
            pairs.add((i, j))
    matched_g = {i for i, _ in pairs}
    matched_p = {j for _, j in pairs}
    out = [MatchPair(i, j) for i, j in sorted(pairs)]
    out += [MatchPair(i, None) for i in range(len(G)) if i not in matched_g]
    out += [MatchPair(None, j) for j in range(len(P)) if j not in matched_p]
    return out


def _join(items, indices, normalize: bool, skip=()) -> str:
    idx = [i for i in indices if i not in skip]
    ordered = [idx[k] for k in reading_order([items[i].polygon for i in idx])]
    parts = [normalize_text(items[i].text, normalize) for i in ordered]
    return " ".join(p for p in parts if p)


def merge_matches(pairs: Sequence[MatchPair], G: Sequence[TextInstance],
                  P: Sequence[SpottingResult], normalize: bool = True) -> list[MatchGroup]:
    """Union-find over pairs sharing a box; texts are joined in reading order.

    Ignored ground truth contributes no text; a group whose ground truth is
    entirely ignored is flagged ``ignored``.
    """
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for pr in pairs:
        nodes = [n for n in (("g", pr.gt_index), ("p", pr.pred_index)) if n[1] is not None]
        for n in nodes:
            find(n)
        if len(nodes) == 2:
            parent[find(nodes[0])] = find(nodes[1])
    comps: dict = {}
    for node in list(parent):
        comps.setdefault(find(node), []).append(node)
    ignored_gt = {i for i, g in enumerate(G) if getattr(g, "ignore", False)}
    groups = []
    for nodes in comps.values():
        gi = sorted(i for kind, i in nodes if kind == "g")
        pi = sorted(i for kind, i in nodes if kind == "p")
        groups.append(MatchGroup(
            gi, pi,
            _join(G, gi, normalize, ignored_gt),
            _join(P, pi, normalize),
            ignored=bool(gi) and all(i in ignored_gt for i in gi)))
    groups.sort(key=lambda g: (g.gt_indices[0] if g.gt_indices else float("inf"),
                               g.pred_indices[0] if g.pred_indices else -1))
    return groups


def image_groups(G, P, normalize: bool = True) -> list[MatchGroup]:
    return merge_matches(pair_match(G, P), G, P, normalize)


def ns_sums(groups: Sequence[MatchGroup]) -> tuple[int, int]:
    """(pooled edit distance, pooled max length) over non-ignored groups."""
    ed = total = 0
    for g in groups:
        if g.ignored:
            continue
        ed += edit_distance(g.gt_text, g.pred_text)
        total += max(len(g.gt_text), len(g.pred_text))
    return ed, total


def normalized_score(dataset: Sequence[tuple[Sequence, Sequence]], normalize: bool = True) -> float:
    """NS pooled over every merged group of every image; 1.0 for an empty dataset."""
    ed = total = 0
    for G, P in dataset:
        e, t = ns_sums(image_groups(G, P, normalize))
        ed += e
        total += t
    return 1.0 if total == 0 else 1.0 - ed / total


@dataclass
class GFCounts:
    correct: int = 0
    gt_words: int = 0
    pred_tokens: int = 0

    def __iadd__(self, other: "GFCounts") -> "GFCounts":
        self.correct += other.correct
        self.gt_words += other.gt_words
        self.pred_tokens += other.pred_tokens
        return self

    def prf(self) -> tuple[float, float, float]:
        if self.gt_words == 0 and self.pred_tokens == 0:
            return 1.0, 1.0, 1.0
        p = self.correct / self.pred_tokens if self.pred_tokens else 0.0
        r = self.correct / self.gt_words if self.gt_words else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f


def _check_threshold(threshold: float) -> None:
    if not 0.0 < threshold < 1.0:
        raise InvalidThreshold(f"threshold must lie in (0, 1), got {threshold}")


def gf_counts(G: Sequence[TextInstance], P: Sequence[SpottingResult],
              threshold: float = GF_THRESHOLD, normalize: bool = True,
              scores: np.ndarray | None = None) -> GFCounts:
    """Per-image GF tallies.

    Ground-truth words are visited in reading order; each tries its
    overlapping predictions from best score down and consumes the first
    unused equal token. Predictions that overlap only ignored ground truth
    are left out of the token count.
    """
    _check_threshold(threshold)
    if scores is None:
        scores = _score_matrix(G, P)
    hit = scores > threshold
    valid = [i for i, g in enumerate(G) if not g.ignore]
    ignored = [i for i, g in enumerate(G) if g.ignore]
    tokens = []
    for p in P:
        toks = [normalize_text(t, normalize) for t in p.text.split()]
        tokens.append([t for t in toks if t])
    used = [[False] * len(t) for t in tokens]
    dropped = {j for j in range(len(P))
               if not hit[valid, j].any() and hit[ignored, j].any()} if len(G) else set()
    counts = GFCounts(gt_words=len(valid),
                      pred_tokens=sum(len(t) for j, t in enumerate(tokens) if j not in dropped))
    order = [valid[k] for k in reading_order([G[i].polygon for i in valid])]
    for i in order:
        word = normalize_text(G[i].text, normalize)
        cands = sorted(np.flatnonzero(hit[i]), key=lambda j: (-scores[i, j], j))
        for j in cands:
            k = next((k for k, t in enumerate(tokens[j]) if t == word and not used[j][k]), None)
            if k is not None:
                used[j][k] = True
                counts.correct += 1
                break
    return counts


def generalized_f(dataset: Sequence[tuple[Sequence, Sequence]], threshold: float = GF_THRESHOLD,
                  normalize: bool = True) -> tuple[float, float, float]:
    """Micro-averaged (precision, recall, gf) over the dataset."""
    _check_threshold(threshold)
    total = GFCounts()
    for G, P in dataset:
        total += gf_counts(G, P, threshold, normalize)
    return total.prf()


def word_f_measure(dataset, iou: float = 0.5, normalize: bool = True) -> tuple[float, float, float]:
    """Classical one-to-one word F-measure: greedy IoU > ``iou`` matching plus exact text."""
    total = GFCounts()
    for G, P in dataset:
        valid = [g for g in G if not g.ignore]
        cands = []
        for i, g in enumerate(valid):
            for j, p in enumerate(P):
                inter = intersection_area(g.polygon, p.polygon)
                u = g.polygon.area + p.polygon.area - inter
                if u > 0 and inter / u > iou:
                    cands.append((-inter / u, i, j))
        used_g, used_p = set(), set()
        correct = 0
        for _, i, j in sorted(cands):
            if i in used_g or j in used_p:
                continue
            used_g.add(i)
            used_p.add(j)
            correct += normalize_text(valid[i].text, normalize) == normalize_text(P[j].text, normalize)
        total += GFCounts(correct, len(valid), len(P))
    return total.prf()


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    ns: float | None = None
    gf_precision: float | None = None
    gf_recall: float | None = None
    gf: float | None = None
    threshold: float = GF_THRESHOLD
    per_image: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = []
        if self.ns is not None:
            lines.append(f"NS  {self.ns:.4f}")
            lines.append("    (NS depends on the dataset's annotation granularity; "
                         "it is not comparable across datasets)")
        if self.gf is not None:
            lines.append(f"GF  {self.gf:.4f}  precision {self.gf_precision:.4f}  "
                         f"recall {self.gf_recall:.4f}  (T={self.threshold})")
        lines.append(f"images {len(self.per_image)}")
        return "\n".join(lines) + "\n"


def evaluate(dataset: Sequence[tuple[Sequence, Sequence]], protocol: str = "both",
             threshold: float = GF_THRESHOLD, normalize: bool = True,
             names: Sequence[str] | None = None) -> EvalReport:
    """Run NS and/or GF and collect per-image diagnostics."""
    if protocol not in ("ns", "gf", "both"):
        raise ValueError(f"unknown protocol {protocol!r}")
    _check_threshold(threshold)
    report = EvalReport(threshold=threshold)
    ed_sum = len_sum = 0
    gf_total = GFCounts()
    for k, (G, P) in enumerate(dataset):
        scores = _score_matrix(G, P)
        diag: dict = {"image": names[k] if names else k, "gt": len(G), "pred": len(P)}
        if protocol in ("ns", "both"):
            groups = merge_matches(pair_match(G, P, scores), G, P, normalize)
            e, t = ns_sums(groups)
            ed_sum += e
            len_sum += t
            diag.update(groups=len(groups), edit_distance=e, max_length=t)
        if protocol in ("gf", "both"):
            c = gf_counts(G, P, threshold, normalize, scores)
            gf_total += c
            diag.update(correct=c.correct, gt_words=c.gt_words, pred_tokens=c.pred_tokens)
        report.per_image.append(diag)
    if protocol in ("ns", "both"):
        report.ns = 1.0 if len_sum == 0 else 1.0 - ed_sum / len_sum
    if protocol in ("gf", "both"):
        report.gf_precision, report.gf_recall, report.gf = gf_total.prf()
    return report
