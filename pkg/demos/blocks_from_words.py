"""Group word annotations of a synthetic image into text blocks.

Run: python demos/blocks_from_words.py
"""
from blockspot.blockgen import BlockGenConfig, TextInstance, dbscan, generate_blocks
from blockspot.dataset_io import AnnotationRecord, synth_sample

# DBSCAN on its own: two tight groups and a straggler
labels = dbscan([[0.0], [0.1], [0.2], [5.0], [5.1], [9.0]], eps=0.5, min_pts=2)
print("labels", labels.tolist())  # the straggler becomes its own cluster

s = synth_sample(7)
print("text:", s.text)
rec = AnnotationRecord(image="synth.png", width=s.image.shape[1], height=s.image.shape[0],
                       instances=[TextInstance(p, t) for t, p in s.words])

for eps in (1e-6, 0.5, 10.0):
    out = generate_blocks(rec, BlockGenConfig(eps=eps), image=s.image)
    print(f"eps={eps:g}:", [b.text for b in out.blocks])
