"""Small hand-built evaluation scenes shared by several test modules."""

from blockspot.blockgen import TextInstance
from blockspot.geometry import Polygon
from blockspot.metrics import SpottingResult


def rect(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def three_word_sign(pred_text="HONG LONG CITY"):
    """Three ground-truth words on one line, one predicted block around all of them.

    With the default prediction two of the three words are read correctly.
    """
    gt = [TextInstance(rect(10, 10, 60, 30), "HONG"),
          TextInstance(rect(70, 10, 120, 30), "KONG"),
          TextInstance(rect(130, 10, 180, 30), "CITY")]
    pred = [SpottingResult(rect(5, 5, 185, 35), pred_text)]
    return gt, pred


def record_dicts(gt, pred, image="sign.png", width=200, height=50):
    """JSONL-ready dicts for the ground truth and the predictions of one image."""
    def poly(p):
        return [[float(x), float(y)] for x, y in p.vertices]
    g = {"image": image, "width": width, "height": height,
         "instances": [{"polygon": poly(i.polygon), "text": i.text, "ignore": i.ignore} for i in gt]}
    p = {"image": image, "width": width, "height": height,
         "instances": [{"polygon": poly(r.polygon), "text": r.text} for r in pred]}
    return g, p
