"""Train the small recognizer on synthetic glyph strips and read them back.

Compares the unified mask (patches see each other) with a plain causal mask.
Takes a couple of minutes on one core.

Run: python demos/toy_recognizer.py
"""
from blockspot import toy
from blockspot.tokenizer import patch_image
from blockspot.uvlm import DecodeConfig, decode, greedy_decode

runs = {}
for mask in ("uvlm", "causal"):
    runs[mask] = r = toy.train_toy(mask, seed=0, samples=32, stop_accuracy=0.99,
                                   optim=dict(steps=600))
    print(f"{mask:6s} steps to 95%: {r.steps_to(0.95)}  to 99%: {r.steps_to(0.99)}")

run = runs["uvlm"]
params = run.result.params
for s in toy.synth_corpus(3, seed=0):
    x = patch_image(s.image)
    beam = decode(params, x, run.vocab, DecodeConfig(beam_width=4))
    greedy = greedy_decode(params, x, run.vocab)
    print(f"{s.text!r:30} beam={beam.text!r} greedy={greedy.text!r}")

# a sample the model never saw: 32 strips are only enough to memorize, not to read
s = toy.synth_corpus(1, seed=99)[0]
print("unseen:", repr(s.text), "->", repr(decode(params, patch_image(s.image), run.vocab).text))
