"""A shortened lambda sweep on the synthetic dataset, printed as a summary table.

Uses 1500 steps instead of the default 5000 so it finishes in a few minutes.
Run: python demos/small_sweep.py
"""

import logging

from compressible_features import harness
from compressible_features.data import DatasetSpec, generate_synthetic
from compressible_features.training import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")

dataset = generate_synthetic(DatasetSpec())
result = harness.sweep(dataset, (1e-3, 1e-1, 1.0), (0,), TrainConfig(steps=1500))
raw = dataset.x_val.shape[0] * 128 * 4
print(harness.report_table(result.records, raw_bytes=raw))

for r in result.records:
    if r.method == "ours":
        print(f"lambda {r.lam:g}: {r.bits_per_example:.0f} bits/example, val error {r.val_error:.2f}%")
