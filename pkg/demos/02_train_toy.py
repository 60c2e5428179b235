"""Generate the synthetic motion dataset and train a small model on it.

Run:  python3 demos/02_train_toy.py [out_dir]
Takes a few minutes on one CPU core; prints per-epoch metrics and stops
early once test top-1 reaches 95%.
"""

import sys
from pathlib import Path

from hdgcn.data import DatasetManifest, generate_synthetic, load_arrays
from hdgcn.network import HDGCN, ModelConfig
from hdgcn.training import TrainConfig, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/toy")
ds = out / "dataset"

print("generating synthetic dataset (8 classes, 800 train / 200 test) ...")
train_manifest, test_manifest = generate_synthetic(ds, seed=0)
tm = DatasetManifest.load(train_manifest)
em = DatasetManifest.load(test_manifest)
print(f"classes: {tm.classes}")

x, y = load_arrays(tm, stream="joint", com="belly", window=16)
xe, ye = load_arrays(em, stream="joint", com="belly", window=16)
print(f"train {x.shape}, test {xe.shape}")

model_cfg = ModelConfig(topology="ntu25", com="belly", num_classes=8,
                        window=16, channels=(16, 16, 32), strides=(1, 1, 2),
                        seed=0)
train_cfg = TrainConfig(epochs=30, warmup_epochs=5, batch_size=32, seed=0)
model = HDGCN(model_cfg)
print(f"model: {sum(p.size for p in model.parameters()):,} parameters")

state, history = train(model, (x, y), train_cfg, out_dir=out / "run",
                       eval_xy=(xe, ye), quiet=False, target_top1=0.95)
print(f"\nbest test top-1: {state.best_metric:.4f} after {state.epoch} epochs")
print(f"checkpoints and metrics.csv in {out / 'run'}/")
