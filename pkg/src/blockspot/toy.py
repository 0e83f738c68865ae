"""Toy recognizer experiments on the synthetic glyph corpus.

The model settings here are sized for a single CPU core: a 2-layer,
32-wide decoder learns the 64-sample corpus in a few hundred steps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dataset_io, tokenizer, uvlm

TOY_MODEL = dict(d_model=32, n_layers=2, n_heads=2, d_ff=64, max_len=320)
TOY_OPTIM = dict(lr=3e-3, batch_size=16, steps=1000, eval_every=25, warmup_steps=50,
                 schedule="cosine")


def ordered_map(fn, items, threads: int = 1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order is kept."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def synth_corpus(count: int, seed: int, threads: int = 1) -> list[dataset_io.SynthSample]:
    """``count`` samples; sample ``i`` is seeded with ``[seed, i]``."""
    return ordered_map(lambda i: dataset_io.synth_sample([seed, i]), range(count), threads)


def corpus_batch(samples, vocab: tokenizer.Vocab, dtype=np.float32) -> uvlm.Batch:
    batch = uvlm.make_batch([tokenizer.patch_image(s.image) for s in samples],
                            [vocab.encode(s.text) for s in samples], vocab)
    batch.patches = batch.patches.astype(dtype)
    return batch


@dataclass
class ToyRun:
    mask: str
    seed: int
    result: uvlm.TrainResult
    vocab: tokenizer.Vocab
    data: uvlm.Batch

    def steps_to(self, accuracy: float) -> int | None:
        return self.result.steps_to(accuracy)


def train_toy(mask: str = "uvlm", seed: int = 0, samples: int = 64, corpus_seed: int = 0,
              stop_accuracy: float | None = 0.99, model: dict | None = None,
              optim: dict | None = None, callback=None) -> ToyRun:
    """Train a fresh toy model on the synthetic corpus.

    ``seed`` drives the initialization and minibatch order; the corpus is
    fixed by ``corpus_seed`` so runs with different seeds see the same data.
    """
    vocab = tokenizer.Vocab()
    data = corpus_batch(synth_corpus(samples, corpus_seed), vocab)
    cfg = uvlm.ModelConfig(vocab_size=len(vocab), patch_dim=data.patches.shape[2],
                           **{**TOY_MODEL, **(model or {})})
    opt = uvlm.OptimConfig(**{**TOY_OPTIM, **(optim or {})}, stop_accuracy=stop_accuracy)
    params = uvlm.init_params(cfg, seed=seed)
    result = uvlm.train(params, data, opt, seed=seed, mask_kind=mask, callback=callback)
    return ToyRun(mask, seed, result, vocab, data)
