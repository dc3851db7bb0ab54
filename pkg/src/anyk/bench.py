"""Benchmark harness: algorithm x query x sampling-rate grid with trial trimming."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from .costmodel import DeviceProfile
from .index import IndexSet
from .planners import (BASELINES, PLANNERS, baseline_bitmap_scan,
                       baseline_disk_scan, baseline_lossy_scan, execute)
from .query_lang import parse_query

__all__ = ["BenchReport", "run_bench", "run_algorithm"]

_COLUMNS = ["algorithm", "query", "rate", "k", "blocks_fetched", "modeled_cost_ms",
            "records_returned", "wall_time_ms", "densitymap_bytes", "bitmap_bytes"]


@dataclass
class BenchReport:
    rows: list
    memory: dict

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows)

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump({"memory": self.memory, "rows": self.rows}, f, indent=2)


def run_algorithm(store, index: IndexSet, pred, k: int, algorithm: str,
                  profile: DeviceProfile):
    if algorithm in PLANNERS:
        return execute(store, index, pred, k, algorithm=algorithm, profile=profile)
    if algorithm == "bitmap":
        return baseline_bitmap_scan(store, index, pred, k, profile)
    if algorithm == "lossy":
        return baseline_lossy_scan(store, index, pred, k, profile)
    if algorithm == "disk":
        return baseline_disk_scan(store, pred, k, profile)
    raise ValueError(f"unknown algorithm {algorithm!r}; "
                     f"expected one of {PLANNERS + BASELINES}")


def run_bench(store, index: IndexSet, config: dict,
              profile: DeviceProfile | None = None) -> BenchReport:
    """Run the configured grid and average the trimmed trials.

    ``config`` keys: ``queries`` (query texts), ``algorithms``, ``rates``
    (fractions of the estimated valid count; k is derived per query), and
    optional ``trials`` (default 5). Each cell runs its trials sequentially;
    the fastest and slowest are dropped when three or more ran.
    """
    profile = profile or DeviceProfile.hdd_default()
    algorithms = config.get("algorithms", list(PLANNERS + BASELINES))
    rates = config.get("rates", [0.01])
    trials = int(config.get("trials", 5))
    memory = index.memory_breakdown()

    rows = []
    for query_text in config["queries"]:
        ast = parse_query(query_text)
        pred = ast.predicate
        valid_estimate = index.estimate_valid_count(pred)
        for algorithm in algorithms:
            for rate in rates:
                k = max(1, int(round(rate * valid_estimate)))
                samples = []
                for _ in range(trials):
                    store.reset_blocks_fetched()
                    t0 = time.perf_counter()
                    result = run_algorithm(store, index, pred, k, algorithm, profile)
                    wall = (time.perf_counter() - t0) * 1000.0
                    samples.append((wall, result.metrics, len(result.records)))
                if len(samples) >= 3:
                    samples.sort(key=lambda s: s[0])
                    samples = samples[1:-1]
                rows.append({
                    "algorithm": algorithm,
                    "query": query_text,
                    "rate": rate,
                    "k": k,
                    "blocks_fetched": float(np.mean([s[1]["blocks_fetched"] for s in samples])),
                    "modeled_cost_ms": float(np.mean([s[1]["modeled_cost_ms"] for s in samples])),
                    "records_returned": float(np.mean([s[2] for s in samples])),
                    "wall_time_ms": float(np.mean([s[0] for s in samples])),
                    "densitymap_bytes": memory["densitymap_bytes"],
                    "bitmap_bytes": memory.get("bitmap_bytes", 0),
                })
    return BenchReport(rows, memory)
