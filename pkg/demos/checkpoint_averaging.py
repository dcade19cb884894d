"""Average the best checkpoints of a simulated training run.

Checkpoints hold noisy copies of a target weight matrix; the noise shrinks
with validation loss, so averaging the best ten lands closer to the target
than any single checkpoint.

Run: python3 demos/checkpoint_averaging.py
"""

import tempfile
from pathlib import Path

import numpy as np

from clinasr.checkpoints import CheckpointMeta, TensorFile, read_tensor_file, top_k_average, write_tensor_file

work = Path(tempfile.mkdtemp(prefix="clinasr-ckpt-"))
rng = np.random.default_rng(0)
target = rng.normal(size=(64, 64))
metas = []
for i in range(40):
    step = (i + 1) * 1000
    loss = 1.0 / (1.0 + 0.1 * i) + 0.02 * rng.standard_normal()
    weights = target + loss * rng.normal(size=target.shape)
    path = write_tensor_file(TensorFile({"proj.weight": weights}), work / f"step{step}.tf")
    metas.append(CheckpointMeta(str(path), step, loss))

best = min(metas, key=lambda m: m.val_loss)
avg = top_k_average(metas, retain=20, average=10, out=work / "averaged.tf")
best_weights = read_tensor_file(best.path).entries["proj.weight"]
err_best = np.sqrt(np.mean((best_weights - target) ** 2))
err_avg = np.sqrt(np.mean((avg.entries["proj.weight"] - target) ** 2))
print(f"best single checkpoint: step {best.step}, val loss {best.val_loss:.3f}, RMS error to target {err_best:.3f}")
print(f"averaged {len(avg.sources)} checkpoints, RMS error to target {err_avg:.3f}")
