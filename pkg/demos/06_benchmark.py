"""The benchmark grid: planners vs first-to-k baselines on block counts.

Run:  python3 demos/06_benchmark.py
"""

import tempfile
from pathlib import Path

from anyk import DeviceProfile, SyntheticSpec, build_indexes, generate_clustered
from anyk.bench import run_bench

workdir = Path(tempfile.mkdtemp(prefix="anyk_demo_"))
spec = SyntheticSpec(n_records=500_000, n_dims=4, density=0.10,
                     mean_run_length=32.0, seed=21)
store = generate_clustered(spec, workdir / "bench.tbl", block_size=32 * 1024)
index = build_indexes(store, with_bitmaps=True, with_lossy=True)

config = {
    "queries": ["SELECT ANY-K(1) FROM bench WHERE d0='1' AND d1='1'"],
    "algorithms": ["density", "locality", "hybrid", "bitmap", "lossy", "disk"],
    "rates": [0.001, 0.01, 0.05],
    "trials": 5,
}
report = run_bench(store, index, config, DeviceProfile.hdd_default())

print(f"table: {store.n_blocks} blocks; index memory: "
      f"{report.memory['densitymap_bytes'] / 1024:.1f} KiB density maps vs "
      f"{report.memory['bitmap_bytes'] / 1024:.1f} KiB bitmaps\n")
print(f"{'algorithm':10s} {'rate':>6s} {'k':>6s} {'blocks':>8s} "
      f"{'modeled ms':>11s} {'records':>8s}")
for row in report.rows:
    print(f"{row['algorithm']:10s} {row['rate']:6.3f} {row['k']:6d} "
          f"{row['blocks_fetched']:8.1f} {row['modeled_cost_ms']:11.1f} "
          f"{row['records_returned']:8.0f}")

out = workdir / "report"
report.write_csv(f"{out}.csv")
report.write_json(f"{out}.json")
print(f"\nwrote {out}.csv and {out}.json")
print("trials are trimmed (fastest and slowest dropped) before averaging.")
