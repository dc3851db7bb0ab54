"""The piecewise seek-cost model, plan costing, and device profiling.

Run:  python3 demos/03_cost_model.py
"""

import tempfile
from pathlib import Path

import numpy as np

from anyk import (DeviceProfile, SyntheticSpec, generate_clustered, plan_cost,
                  profile_device, rand_io)

hdd = DeviceProfile.hdd_default()
ssd = DeviceProfile.ssd_default()

print("cost of fetching block j right after block i, by distance |j - i|:\n")
print("distance:   " + "".join(f"{d:>7d}" for d in (0, 1, 2, 5, 10, 11, 100)))
for name, prof in (("hdd", hdd), ("ssd", ssd)):
    row = "".join(f"{rand_io(prof, 0, d):7.2f}" for d in (0, 1, 2, 5, 10, 11, 100))
    print(f"{name} (ms):   {row}")

print("\nplan costs under the HDD model:")
for bids in ([5], [5, 6, 7], [5, 6, 7, 100], [100, 1, 83, 3], [1, 3, 83, 100]):
    print(f"  {str(bids):22s} -> {plan_cost(hdd, bids):6.2f} ms")
print("(sorting the fetch order turns back-and-forth seeks into one sweep)")

# profiling fits the model from timed fetches; here a synthetic latency
# function stands in for a real device
workdir = Path(tempfile.mkdtemp(prefix="anyk_demo_"))
store = generate_clustered(SyntheticSpec(n_records=50_000, n_dims=1, seed=0),
                           workdir / "t.tbl", block_size=2048)


def synthetic_latency(store, i, j):
    d = abs(j - i)
    return 2.0 if d <= 1 else min(12.0, 2.0 + (d - 1) * 10.0 / 15.0)


fitted = profile_device(store, samples=3, timer=synthetic_latency)
print(f"\nfitted profile from the synthetic device: seq={fitted.seq_ms:.2f} ms, "
      f"plateau={fitted.plateau_ms:.2f} ms, threshold={fitted.near_limit} blocks")
print(f"ground truth:                             seq=2.00 ms, "
      f"plateau=12.00 ms, threshold=16 blocks")
print("\nprofile as config:\n" + fitted.to_json())
