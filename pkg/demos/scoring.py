"""Normalized score vs generalized F on a few hand-made cases.

Run: python demos/scoring.py
"""
from blockspot.blockgen import TextInstance
from blockspot.geometry import Polygon
from blockspot.metrics import SpottingResult, generalized_f, normalized_score, word_f_measure


def box(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


gt = [TextInstance(box(10, 10, 60, 30), "HONG"),
      TextInstance(box(70, 10, 120, 30), "KONG"),
      TextInstance(box(130, 10, 180, 30), "CITY")]

# one block prediction spanning the whole sign, with one wrong word
block = [SpottingResult(box(5, 5, 185, 35), "HONG LONG CITY")]
print("block prediction")
print("  NS", round(normalized_score([(gt, block)]), 4))
print("  GF", [round(v, 4) for v in generalized_f([(gt, block)])])
print("  word F", [round(v, 4) for v in word_f_measure([(gt, block)])])  # a block never matches a single word box

# word-level predictions: GF and the classical measure agree here
words = [SpottingResult(g.polygon, g.text) for g in gt]
words[1] = SpottingResult(gt[1].polygon, "LONG")
print("word predictions")
print("  GF", [round(v, 4) for v in generalized_f([(gt, words)])])
print("  word F", [round(v, 4) for v in word_f_measure([(gt, words)])])

# NS pools characters, so longer images weigh more; it is not comparable across datasets
print("single char miss", normalized_score([([TextInstance(box(0, 0, 9, 9), "A")],
                                              [SpottingResult(box(0, 0, 9, 9), "B")])]))
