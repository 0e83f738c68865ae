"""Visual and language tokenization for the recognizer.

Images are float arrays of shape (H, W, C) with intensities in [0, 1].
"""

from __future__ import annotations

import json
import string
from typing import Iterable, Sequence

import numpy as np

INPUT_HEIGHT = 64
INPUT_WIDTH = 256
PATCH_HEIGHT = 8
PATCH_WIDTH = 8

PAD = "[PAD]"
SEP = "[SEP]"
EOS = "[EOS]"
SPECIALS = (PAD, SEP, EOS)

DEFAULT_CHARSET = string.ascii_uppercase + string.digits + " "


class IndivisibleDims(ValueError):
    pass


class UnknownSymbol(KeyError):
    pass


class UnknownId(KeyError):
    pass


def as_raster(img) -> np.ndarray:
    """Coerce to a float64 (H, W, C) array; uint8 input is scaled to [0, 1]."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    return arr


def to_rgb(img) -> np.ndarray:
    arr = as_raster(img)
    return np.repeat(arr, 3, axis=2) if arr.shape[2] == 1 else arr


def patch_count(h: int, w: int, hp: int = PATCH_HEIGHT, wp: int = PATCH_WIDTH) -> int:
    if h % hp or w % wp:
        raise IndivisibleDims(f"{h}x{w} image is not divisible into {hp}x{wp} patches")
    return (h * w) // (hp * wp)


def patch_image(img, hp: int = PATCH_HEIGHT, wp: int = PATCH_WIDTH) -> np.ndarray:
    """Split into non-overlapping patches in raster order.

    Returns an (m, hp*wp*C) array; each row is one patch flattened channel-last.
    """
    arr = as_raster(img)
    h, w, c = arr.shape
    patch_count(h, w, hp, wp)
    grid = arr.reshape(h // hp, hp, w // wp, wp, c).transpose(0, 2, 1, 3, 4)
    return grid.reshape(-1, hp * wp * c)


def unpatch(patches: np.ndarray, h: int, w: int, hp: int = PATCH_HEIGHT,
            wp: int = PATCH_WIDTH) -> np.ndarray:
    c = patches.shape[1] // (hp * wp)
    grid = patches.reshape(h // hp, w // wp, hp, wp, c).transpose(0, 2, 1, 3, 4)
    return grid.reshape(h, w, c)


def resize(img, height: int, width: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    if height <= 0 or width <= 0:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    arr = as_raster(img)
    h, w, _ = arr.shape
    if (h, w) == (height, width):
        return arr.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


class Vocab:
    """Character vocabulary with the specials [PAD], [SEP], [EOS] at ids 0, 1, 2."""

    def __init__(self, chars: Iterable[str] = DEFAULT_CHARSET):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("vocabulary characters must be unique")
        for ch in chars:
            if ch in SPECIALS or len(ch) != 1:
                raise ValueError(f"invalid vocabulary symbol {ch!r}")
        self.symbols: list[str] = list(SPECIALS) + chars
        self._index = {s: i for i, s in enumerate(self.symbols)}

    pad_id = 0
    sep_id = 1
    eos_id = 2

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.symbols == other.symbols

    @property
    def chars(self) -> list[str]:
        return self.symbols[len(SPECIALS):]

    def encode(self, s: str) -> list[int]:
        return encode_text(s, self)

    def decode(self, ids: Iterable[int]) -> str:
        return decode_text(ids, self)

    def to_json(self) -> str:
        return json.dumps(self.symbols, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        symbols = json.loads(text)
        if list(symbols[:len(SPECIALS)]) != list(SPECIALS):
            raise ValueError("serialized vocab must start with [PAD], [SEP], [EOS]")
        return cls(symbols[len(SPECIALS):])


def encode_text(s: str, vocab: Vocab) -> list[int]:
    """Per-character ids; no specials are added."""
    ids = []
    for ch in s:
        try:
            ids.append(vocab._index[ch])
        except KeyError:
            raise UnknownSymbol(ch) from None
        if ids[-1] < len(SPECIALS):
            raise UnknownSymbol(ch)
    return ids


def decode_text(ids: Iterable[int], vocab: Vocab) -> str:
    """Inverse of `encode_text`. Stops at [EOS]; [PAD] and [SEP] are skipped."""
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise UnknownId(i)
        if i == vocab.eos_id:
            break
        if i in (vocab.pad_id, vocab.sep_id):
            continue
        out.append(vocab.symbols[i])
    return "".join(out)


def sequence_layout(n_visual: int, n_language: int) -> tuple[int, int]:
    """(v_n, total) for ``n_visual`` patches, one [SEP] and ``n_language`` tokens."""
    return n_visual + 1, n_visual + 1 + n_language


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out
