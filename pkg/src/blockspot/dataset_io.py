"""Annotation JSONL, image files, block cropping and synthetic recognizer data.

One annotation record per line::

    {"image": "img_1.png", "width": 640, "height": 360,
     "instances": [{"polygon": [[x, y], ...], "text": "KONG", "ignore": false}],
     "blocks": [{"polygon": [[x, y], ...], "members": [0, 1], "text": "HONG KONG",
                 "ignore": false}]}

``blocks`` is optional; it is written by block generation.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .blockgen import TextBlock, TextInstance
from .geometry import GeometryError, Polygon
from .tokenizer import INPUT_HEIGHT, INPUT_WIDTH, PATCH_HEIGHT, PATCH_WIDTH, as_raster, resize


class SchemaError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingImage(FileNotFoundError):
    pass


class EmptyIntersection(ValueError):
    pass


@dataclass
class AnnotationRecord:
    image: str
    width: int
    height: int
    instances: list[TextInstance] = field(default_factory=list)
    blocks: list[TextBlock] | None = None

    def image_path(self, root=None) -> Path:
        p = Path(self.image)
        return p if root is None or p.is_absolute() else Path(root) / p


# a record whose ``blocks`` field has been filled in
BlockAnnotationRecord = AnnotationRecord


def _clamp_polygon(coords, width: int, height: int) -> Polygon:
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    pts[:, 0] = np.clip(pts[:, 0], 0, width)
    pts[:, 1] = np.clip(pts[:, 1], 0, height)
    return Polygon(pts)


def _record_from_obj(obj, line: int | None) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line)
    try:
        image = obj["image"]
        width, height = obj["width"], obj["height"]
        raw_instances = obj.get("instances", [])
    except KeyError as exc:
        raise SchemaError(f"missing field {exc.args[0]!r}", line) from None
    if not isinstance(image, str):
        raise SchemaError("'image' must be a string", line)
    if not (isinstance(width, int) and isinstance(height, int)) or width <= 0 or height <= 0:
        raise SchemaError("'width' and 'height' must be positive integers", line)
    try:
        instances = []
        for inst in raw_instances:
            ignore = bool(inst.get("ignore", False))
            text = inst.get("text", "")
            if not isinstance(text, str):
                raise SchemaError("instance 'text' must be a string", line)
            poly = _clamp_polygon(inst["polygon"], width, height)
            instances.append(TextInstance(poly, text, ignore))
        blocks = None
        if "blocks" in obj and obj["blocks"] is not None:
            blocks = []
            for blk in obj["blocks"]:
                members = [int(m) for m in blk["members"]]
                if any(not 0 <= m < len(instances) for m in members):
                    raise SchemaError("block member index out of range", line)
                poly = _clamp_polygon(blk["polygon"], width, height)
                blocks.append(TextBlock(poly, members, blk.get("text", ""),
                                        bool(blk.get("ignore", False))))
    except SchemaError:
        raise
    except (GeometryError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad polygon or instance: {exc}", line) from None
    return AnnotationRecord(image, width, height, instances, blocks)


def _num(v: float):
    v = float(v)
    return int(v) if v.is_integer() else v


def _poly_json(p: Polygon):
    return [[_num(x), _num(y)] for x, y in p.vertices]


def record_to_obj(rec: AnnotationRecord) -> dict:
    obj = {
        "image": rec.image,
        "width": rec.width,
        "height": rec.height,
        "instances": [{"polygon": _poly_json(i.polygon), "text": i.text, "ignore": i.ignore}
                      for i in rec.instances],
    }
    if rec.blocks is not None:
        obj["blocks"] = [{"polygon": _poly_json(b.polygon), "members": list(b.members),
                          "text": b.text, "ignore": b.ignore} for b in rec.blocks]
    return obj


def dumps_record(rec: AnnotationRecord) -> str:
    """Canonical single-line JSON for one record."""
    return json.dumps(record_to_obj(rec), ensure_ascii=False, separators=(",", ":"))


def parse_annotations(lines: Iterable[str]) -> list[AnnotationRecord]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from None
        records.append(_record_from_obj(obj, lineno))
    return records


def load_annotations(path) -> list[AnnotationRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh)


def save_annotations(records: Iterable[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


# --------------------------------------------------------------------------
# images


def read_image(path) -> np.ndarray:
    """PNG or binary PPM/PGM to a float64 (H, W, 3) array in [0, 1]."""
    from PIL import Image

    path = Path(path)
    if not path.exists():
        raise MissingImage(str(path))
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def write_png(path, img) -> None:
    from PIL import Image

    arr = as_raster(img)
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if u8.shape[2] == 1 else "RGB"
    Image.fromarray(u8[:, :, 0] if mode == "L" else u8, mode=mode).save(path, format="PNG")


def crop_polygon(image, polygon: Polygon) -> np.ndarray:
    """Bounding-box crop clamped to the image; pixels whose centers fall
    outside ``polygon`` take the mean color of the crop's outer ring."""
    img = as_raster(image)
    h, w, _ = img.shape
    x0, y0, x1, y1 = polygon.bounds()
    c0, r0 = max(int(np.floor(x0)), 0), max(int(np.floor(y0)), 0)
    c1, r1 = min(int(np.ceil(x1)), w), min(int(np.ceil(y1)), h)
    if c1 <= c0 or r1 <= r0:
        raise EmptyIntersection(f"polygon bounds {polygon.bounds()} miss the {w}x{h} image")
    crop = img[r0:r1, c0:c1].copy()
    ch, cw = crop.shape[:2]
    ring = np.ones((ch, cw), dtype=bool)
    ring[1:-1, 1:-1] = False
    fill = crop[ring].mean(axis=0)
    yy, xx = np.mgrid[r0:r1, c0:c1]
    centers = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
    inside = polygon.contains(centers).reshape(ch, cw)
    crop[~inside] = fill
    return crop


def crop_block(image, polygon: Polygon, height: int = INPUT_HEIGHT,
               width: int = INPUT_WIDTH) -> np.ndarray:
    """Block cutting resized to the recognizer input (64x256 by default)."""
    return resize(crop_polygon(image, polygon), height, width)


# --------------------------------------------------------------------------
# synthetic recognizer corpus

SYNTH_CHARS = string.ascii_uppercase + string.digits
GRID_ROWS = INPUT_HEIGHT // PATCH_HEIGHT
GRID_COLS = INPUT_WIDTH // PATCH_WIDTH


def glyph(ch: str) -> np.ndarray:
    """Fixed 8x8 binary bitmap derived from the character code; space is blank."""
    if ch == " ":
        return np.zeros((PATCH_HEIGHT, PATCH_WIDTH))
    rng = np.random.default_rng([0x61796C67, ord(ch)])
    bits = rng.random((PATCH_HEIGHT, PATCH_WIDTH)) < 0.5
    bits[0, 0] = True  # never blank, so a glyph is always distinguishable from a space
    return bits.astype(np.float64)


@dataclass
class SynthSample:
    image: np.ndarray
    text: str
    words: list[tuple[str, Polygon]]


def synth_sample(seed: int, max_words: int = 5, max_chars: int = 8) -> SynthSample:
    """Seeded 64x256 rendering of 1-5 random words, one glyph per 8x8 patch.

    Words run left to right with one blank patch between them and wrap to
    the next patch row when they would overflow. Background and ink gray
    levels and the starting row are drawn per sample.
    """
    rng = np.random.default_rng(seed)
    words = ["".join(rng.choice(list(SYNTH_CHARS), size=int(rng.integers(1, max_chars + 1))))
             for _ in range(int(rng.integers(1, max_words + 1)))]
    cells = []  # (row, col) of each word start
    row, col = 0, 0
    for i, word in enumerate(words):
        if i:
            if col + 1 + len(word) > GRID_COLS:
                row, col = row + 1, 0
            else:
                col += 1
        cells.append((row, col))
        col += len(word)
    start_row = int(rng.integers(0, GRID_ROWS - row))
    bg = float(rng.uniform(0.0, 0.3))
    ink = float(rng.uniform(0.7, 1.0))
    canvas = np.zeros((INPUT_HEIGHT, INPUT_WIDTH))
    boxes = []
    for word, (r, c) in zip(words, cells):
        r += start_row
        y = r * PATCH_HEIGHT
        for k, ch in enumerate(word):
            x = (c + k) * PATCH_WIDTH
            canvas[y:y + PATCH_HEIGHT, x:x + PATCH_WIDTH] = glyph(ch)
        x0, x1 = c * PATCH_WIDTH, (c + len(word)) * PATCH_WIDTH
        boxes.append((word, Polygon([(x0, y), (x1, y), (x1, y + PATCH_HEIGHT), (x0, y + PATCH_HEIGHT)])))
    # quantized to 8-bit levels so a PNG round trip is lossless
    image = np.rint((bg + (ink - bg) * canvas) * 255.0) / 255.0
    return SynthSample(np.repeat(image[:, :, None], 3, axis=2), " ".join(words), boxes)
