"""Inspect the hierarchy attention maps of a trained checkpoint.

Run:  python3 demos/03_inspect_attention.py <checkpoint.hdt> <test_manifest.json>
(e.g. the artifacts produced by demos/02_train_toy.py). Prints, per
spatial-temporal block, the channel-averaged attention weight each
hierarchy layer receives per class.
"""

import sys

import numpy as np

from hdgcn.data import DatasetManifest, load_arrays
from hdgcn.network import HDGCN

if len(sys.argv) != 3:
    sys.exit(__doc__)

model = HDGCN.load(sys.argv[1])
manifest = DatasetManifest.load(sys.argv[2])
x, y = load_arrays(manifest, stream="joint", com=model.config.com,
                   window=model.config.window)

print(f"model: {len(model.blocks)} blocks, hierarchy depth {model.decomp.n_h}, "
      f"{model.adjacency.n_l} layers per block\n")

for cls, name in enumerate(manifest.classes):
    sel = np.nonzero(y == cls)[0][:16]
    model.predict_proba(x[sel])
    print(f"class {cls} ({name}):")
    for b, att in enumerate(model.attention_maps()):
        if att is None:
            continue
        per_layer = att.mean(axis=(0, 1))  # average over samples and channels
        bars = "  ".join(f"L{k}:{v:.2f}" for k, v in enumerate(per_layer))
        print(f"  block {b}: {bars}")
    print()
