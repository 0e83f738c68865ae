"""Block-level scene text spotting toolkit.

Modules:

- ``geometry``: polygons, convex hulls, intersection areas, overlap matching
- ``blockgen``: instance features, DBSCAN, merging instances into text blocks
- ``tokenizer``: image patches and the character vocabulary
- ``uvlm``: numpy vision-language decoder with unified attention masks
- ``metrics``: normalized score and generalized F-measure
- ``dataset_io``: annotation JSONL, images, block crops, synthetic data
- ``cli``: the ``blockspot`` command
"""

__version__ = "0.1.0"
