"""Two-phase sampling with bias correction, against pure random sampling.

The demo table is adversarial on purpose: the measure is correlated with how
densely a block is packed with valid records, which is exactly what a density
planner selects on. Records from planner-picked blocks are therefore not
representative, and the estimate needs the survey-sampling correction.

Run:  python3 demos/04_aggregate_estimation.py
"""

import tempfile
from pathlib import Path

import numpy as np

from anyk import (DimAttr, Leaf, Schema, baseline_bitmap_random, build_indexes,
                  clustered_binary, estimate_report, two_phase_sample,
                  write_table)

workdir = Path(tempfile.mkdtemp(prefix="anyk_demo_"))
rng = np.random.default_rng(3)
n = 200_000
rpb = 8 * 1024 // 12  # record width: one uint32 dim + one float64 measure

flag = clustered_binary(n, 0.10, 48.0, rng)
# measure tied to the local density of valid records: crowded pockets carry
# systematically larger values
block_of = np.arange(n) // rpb
block_density = np.bincount(block_of, weights=flag) / np.bincount(block_of)
measure = rng.normal(100, 5, n) + 120 * block_density[block_of]

schema = Schema([DimAttr("flag", ("0", "1"))], ["m"])
store = write_table(workdir / "skew.tbl", schema, flag.reshape(-1, 1),
                    measure.reshape(-1, 1), block_size=8 * 1024)
index = build_indexes(store, with_bitmaps=True, path=None)

pred = Leaf("flag", "1")
rows = store.read_all()
true_mu = rows["m"][rows["flag"] == 1].mean()
valid_estimate = index.estimate_valid_count(pred)
print(f"true AVG(m) over valid records: {true_mu:.3f} "
      f"({int(valid_estimate)} valid records)\n")

k = 2000
print(f"{'scheme':34s} {'estimate':>9s} {'err':>7s} {'blocks':>7s}")

# pure any-k: fast, but it reads the densest (highest-measure) pockets first
store.reset_blocks_fetched()
design, aggs = two_phase_sample(index, pred, k, 0.0, "density", store,
                                measure="m", seed=0)
rep = estimate_report(design, aggs, valid_estimate, estimator="ratio",
                      variance_mode="plugin")
print(f"{'any-k only (alpha=0)':34s} {rep.mu_hat:9.3f} "
      f"{abs(rep.mu_hat - true_mu):7.3f} {store.blocks_fetched:7d}")

# two-phase: a slice of uniform block draws makes the correction possible
for alpha in (0.1, 0.3):
    for estimator in ("ht", "ratio"):
        store.reset_blocks_fetched()
        design, aggs = two_phase_sample(index, pred, k, alpha, "density", store,
                                        measure="m", seed=0)
        rep = estimate_report(design, aggs, valid_estimate, estimator=estimator,
                              variance_mode="plugin")
        label = f"two-phase alpha={alpha} {estimator}"
        print(f"{label:34s} {rep.mu_hat:9.3f} "
              f"{abs(rep.mu_hat - true_mu):7.3f} {store.blocks_fetched:7d}"
              f"   (+/- {2 * np.sqrt(rep.var_mu):.3f} at 2 sigma)")

# the gold standard: uniform random records, one block fetch per record
store.reset_blocks_fetched()
records, metrics = baseline_bitmap_random(store, index, pred, k, seed=0)
print(f"{'bitmap-random baseline':34s} {records['m'].mean():9.3f} "
      f"{abs(records['m'].mean() - true_mu):7.3f} {metrics['blocks_fetched']:7d}")

print("\npure any-k overshoots because its sample comes from the crowded")
print("pockets; the two-phase designs recover near-random accuracy at a small")
print("fraction of the random baseline's block fetches.")
