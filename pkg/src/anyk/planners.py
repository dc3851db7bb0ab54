"""Block planners for any-k retrieval, the execute/replan loop, and baselines.

All planners are pure functions of the index snapshot, the predicate, and k:
they return a :class:`BlockPlan` naming which blocks to fetch. ``execute``
owns the fetch loop, treating already-fetched blocks as zero-density and
replanning until enough valid records have been found.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .costmodel import DeviceProfile, plan_cost
from .errors import PlanBudgetError
from .index import IndexSet
from .predicate import eval_leaf_values, leaves
from .storage import scan_valid

__all__ = [
    "BlockPlan",
    "PlannerStats",
    "ExecuteResult",
    "density_optimal",
    "locality_optimal",
    "io_optimal",
    "hybrid",
    "fetch_order",
    "execute",
    "baseline_bitmap_scan",
    "baseline_lossy_scan",
    "baseline_disk_scan",
    "PLANNERS",
    "BASELINES",
]

PLANNERS = ("density", "locality", "io", "hybrid")
BASELINES = ("bitmap", "lossy", "disk")


@dataclass
class PlannerStats:
    """Operation counters for complexity instrumentation."""

    positions_visited: int = 0
    candidate_ops: int = 0
    comparisons: int = 0

    def total(self) -> int:
        return self.positions_visited + self.candidate_ops + self.comparisons


@dataclass
class BlockPlan:
    """Ordered block choice of a planner with its estimated yield."""

    bids: np.ndarray
    densities: np.ndarray
    tau_hat: float
    feasible: bool
    algorithm: str
    cost: float | None = None
    stats: PlannerStats | None = None

    def __len__(self):
        return len(self.bids)


@dataclass
class ExecuteResult:
    records: np.ndarray
    metrics: dict
    feasible: bool
    fetched_bids: list = field(default_factory=list)


def _as_block_records(block_records, n_blocks) -> np.ndarray:
    if np.isscalar(block_records):
        return np.full(n_blocks, int(block_records), dtype=np.int64)
    return np.asarray(block_records, dtype=np.int64)


def _sorted_entries(sorted_map):
    if isinstance(sorted_map, tuple):
        return np.asarray(sorted_map[0]), np.asarray(sorted_map[1])
    return np.asarray(sorted_map.bids), np.asarray(sorted_map.densities)


def _aggregate(pred, values):
    if pred is None:
        return values[0]
    return eval_leaf_values(pred, values)


def density_optimal(sorted_maps, pred, k: int, block_records,
                    stats: PlannerStats | None = None) -> BlockPlan:
    """Threshold-style planner emitting blocks in non-increasing combined density.

    Walks the per-leaf sorted density maps in lockstep, maintaining a running
    threshold (the combined density of the current sorted positions, an upper
    bound for every unseen block) and a candidate heap keyed density desc /
    block id asc. A candidate is emitted once its combined density reaches the
    threshold; emission stops when the estimated yield covers k. Zero-density
    blocks are never emitted, so exhaustion yields a partial plan.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    entries = [_sorted_entries(sm) for sm in sorted_maps]
    if not entries:
        raise ValueError("need at least one sorted density map")
    n_blocks = len(entries[0][1])
    block_records = _as_block_records(block_records, n_blocks)
    stats = stats if stats is not None else PlannerStats()

    # scatter back to unsorted leaf arrays for per-block combination
    leaf_arrays = []
    for bids, dens in entries:
        arr = np.empty(n_blocks, dtype=np.float64)
        arr[bids] = dens
        leaf_arrays.append(arr)

    seen = np.zeros(n_blocks, dtype=bool)
    heap: list = []
    out_bids: list = []
    out_dens: list = []
    tau_hat = 0.0

    def emit(density, bid) -> bool:
        nonlocal tau_hat
        out_bids.append(bid)
        out_dens.append(density)
        tau_hat += density * block_records[bid]
        return tau_hat >= k

    done = False
    for i in range(n_blocks):
        threshold = _aggregate(pred, [dens[i] for _, dens in entries])
        stats.positions_visited += len(entries)
        for bids, _ in entries:
            bid = int(bids[i])
            if not seen[bid]:
                seen[bid] = True
                combined = _aggregate(pred, [arr[bid] for arr in leaf_arrays])
                if combined > 0.0:
                    heapq.heappush(heap, (-combined, bid))
                    stats.candidate_ops += 1
                    stats.comparisons += max(1, int(math.log2(len(heap) + 1)))
        while heap and -heap[0][0] >= threshold:
            neg, bid = heapq.heappop(heap)
            stats.candidate_ops += 1
            stats.comparisons += max(1, int(math.log2(len(heap) + 2)))
            if emit(-neg, bid):
                done = True
                break
        if done:
            break

    # drain leftovers (float rounding can leave candidates a hair under the
    # final threshold even though every block has been seen)
    while not done and heap:
        neg, bid = heapq.heappop(heap)
        stats.candidate_ops += 1
        if emit(-neg, bid):
            done = True

    return BlockPlan(np.array(out_bids, dtype=np.int64),
                     np.array(out_dens, dtype=np.float64),
                     tau_hat, tau_hat >= k, "density", stats=stats)


def locality_optimal(combined_map, k: int, block_records) -> BlockPlan:
    """Smallest contiguous block window whose estimated yield covers k.

    Sliding-window pass over the combined density map; among equal-length
    windows the smallest start wins. If no window reaches k the full range is
    returned, flagged infeasible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    m = np.asarray(combined_map, dtype=np.float64)
    n_blocks = len(m)
    block_records = _as_block_records(block_records, n_blocks)
    prefix = np.concatenate(([0.0], np.cumsum(m * block_records)))

    best = None
    start = 0
    end = 0
    while True:
        while end < n_blocks and prefix[end] - prefix[start] < k:
            end += 1
        if prefix[end] - prefix[start] < k:
            break
        while prefix[end] - prefix[start] >= k:
            if best is None or end - start < best[1] - best[0]:
                best = (start, end)
            start += 1
        if end >= n_blocks:
            break

    if best is None:
        bids = np.arange(n_blocks, dtype=np.int64)
        return BlockPlan(bids, m.copy(), float(prefix[-1]), False, "locality")
    lo, hi = best
    bids = np.arange(lo, hi, dtype=np.int64)
    return BlockPlan(bids, m[lo:hi].copy(), float(prefix[hi] - prefix[lo]),
                     True, "locality")


_SEED = -1
_FAR = -2


def estimated_block_counts(combined_map, block_records) -> np.ndarray:
    """Per-block estimated valid records, rounded up so plans never undercount."""
    m = np.asarray(combined_map, dtype=np.float64)
    block_records = _as_block_records(block_records, len(m))
    return np.maximum(np.ceil(m * block_records - 1e-9), 0).astype(np.int64)


def io_optimal(combined_map, k: int, profile: DeviceProfile, block_records,
               cell_budget: int = 10 ** 8) -> BlockPlan:
    """Dynamic program over (records still needed, last block fetched).

    Finds the block subset minimizing the modeled fetch cost of covering k
    estimated valid records: the predecessor of each chosen block is either
    within the device's near-seek range (exact seek cost) or anywhere before
    it (constant plateau cost). The first block fetched always costs the
    sequential constant, matching ``plan_cost``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    m = np.asarray(combined_map, dtype=np.float64)
    n_blocks = len(m)
    block_records = _as_block_records(block_records, n_blocks)
    s = estimated_block_counts(m, block_records)
    total = int(s.sum())
    if total == 0:
        return BlockPlan(np.empty(0, np.int64), np.empty(0), 0.0, False, "io", cost=0.0)

    k_eff = min(k, total)
    t = profile.near_limit
    if n_blocks * max(k_eff, 1) * max(t, 1) > cell_budget:
        raise PlanBudgetError(
            f"DP table of {n_blocks} blocks x {k_eff} records x {t} distance "
            f"exceeds the cell budget ({cell_budget}); use the hybrid planner instead")

    seq_cost = profile.seq_ms
    plateau = profile.plateau_ms
    near_cost = profile.cost_at(np.arange(1, t + 1))

    inf = np.inf
    c = np.full((k_eff + 1, n_blocks), inf)
    opt = np.full((k_eff + 1, n_blocks), inf)
    par = np.full((k_eff + 1, n_blocks), _SEED, dtype=np.int32)
    take = np.zeros((k_eff + 1, n_blocks), dtype=bool)

    for i in range(n_blocks):
        si = int(s[i])
        cap = min(si, k_eff)
        c[: cap + 1, i] = seq_cost
        if si < k_eff:
            lo = si + 1
            cands = []
            parents = []
            for back in range(1, min(t, i) + 1):
                j = i - back
                cands.append(c[1: k_eff - si + 1, j] + near_cost[back - 1])
                parents.append(j)
            if i - t - 1 >= 0:
                cands.append(opt[1: k_eff - si + 1, i - t - 1] + plateau)
                parents.append(_FAR)
            if cands:
                stacked = np.vstack(cands)
                arg = np.argmin(stacked, axis=0)
                c[lo:, i] = stacked[arg, np.arange(stacked.shape[1])]
                par[lo:, i] = np.array(parents, dtype=np.int32)[arg]
        if i == 0:
            opt[:, 0] = c[:, 0]
            take[:, 0] = np.isfinite(c[:, 0])
        else:
            better = c[:, i] < opt[:, i - 1]
            opt[:, i] = np.where(better, c[:, i], opt[:, i - 1])
            take[:, i] = better

    best = float(opt[k_eff, n_blocks - 1])
    if not np.isfinite(best):
        bids = np.flatnonzero(s > 0).astype(np.int64)
        return BlockPlan(bids, m[bids], float((m * block_records)[bids].sum()),
                         False, "io", cost=plan_cost(profile, bids))

    # walk parents back from Opt(k_eff, last block); "opt" states may skip the
    # current block, "c" states have it in the plan
    chosen = []
    s_need, i = k_eff, n_blocks - 1
    taking = False
    while s_need > 0 and i >= 0:
        if not taking:
            if take[s_need, i]:
                taking = True
            else:
                i -= 1
            continue
        chosen.append(i)
        parent = int(par[s_need, i])
        s_need -= int(s[i])
        if s_need <= 0 or parent == _SEED:
            break
        if parent == _FAR:
            i = i - t - 1
            taking = False
        else:
            i = parent

    bids = np.array(sorted(chosen), dtype=np.int64)
    tau_hat = float((m[bids] * block_records[bids]).sum())
    return BlockPlan(bids, m[bids], tau_hat, k_eff == k, "io", cost=best)


def fetch_order(plan: BlockPlan) -> BlockPlan:
    """Reorder a plan's blocks ascending by id to minimize seek distance."""
    order = np.argsort(plan.bids, kind="stable")
    return BlockPlan(plan.bids[order], plan.densities[order], plan.tau_hat,
                     plan.feasible, plan.algorithm, cost=plan.cost, stats=plan.stats)


def hybrid(sorted_maps, combined_map, pred, k: int, profile: DeviceProfile,
           block_records, stats: PlannerStats | None = None) -> BlockPlan:
    """Run both extreme planners, cost their fetch-ordered plans, keep the cheaper.

    Ties go to the locality plan.
    """
    do_plan = fetch_order(density_optimal(sorted_maps, pred, k, block_records, stats))
    lo_plan = locality_optimal(combined_map, k, block_records)
    do_cost = plan_cost(profile, do_plan.bids)
    lo_cost = plan_cost(profile, lo_plan.bids)
    if lo_cost <= do_cost:
        lo_plan.cost = lo_cost
        lo_plan.algorithm = "hybrid"
        return lo_plan
    do_plan.cost = do_cost
    do_plan.algorithm = "hybrid"
    return do_plan


# ---------------------------------------------------------------------------
# execution loop

def _sorted_from_arrays(arrays):
    out = []
    for arr in arrays:
        order = np.argsort(-arr, kind="stable")
        out.append((order.astype(np.int64), arr[order]))
    return out


def _plan_once(algorithm, leaf_arrays, combined, pred, k, profile, block_records):
    if algorithm == "density":
        return fetch_order(density_optimal(_sorted_from_arrays(leaf_arrays), pred,
                                           k, block_records))
    if algorithm == "locality":
        return locality_optimal(combined, k, block_records)
    if algorithm == "io":
        return io_optimal(combined, k, profile, block_records)
    if algorithm == "hybrid":
        return hybrid(_sorted_from_arrays(leaf_arrays), combined, pred, k,
                      profile, block_records)
    raise ValueError(f"unknown planner {algorithm!r}; expected one of {PLANNERS}")


def execute(store, index: IndexSet, pred, k: int, algorithm: str = "density",
            profile: DeviceProfile | None = None) -> ExecuteResult:
    """Plan, fetch, and scan until k valid records are in hand.

    Each round plans over the not-yet-fetched blocks (fetched blocks count as
    zero density), fetches the plan in ascending block order, and scans for
    actual matches; blocks whose estimate is zero are skipped since exact
    per-leaf densities make a zero estimate a guarantee of zero matches. The
    loop ends when k records are found or no positive-density block remains,
    in which case the partial result is flagged infeasible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    profile = profile or DeviceProfile.hdd_default()
    n_blocks = index.n_blocks
    block_records = index.block_records

    if pred is None:
        leaf_arrays = [np.ones(n_blocks, dtype=np.float64)]
    else:
        leaf_arrays = [arr.copy() for arr in index.leaf_maps_for(pred)]

    collected = []
    found = 0
    rounds = 0
    fetched_bids: list = []
    modeled = 0.0
    planned_blocks = 0
    feasible = True

    while found < k:
        combined = _aggregate(pred, leaf_arrays)
        if combined.max(initial=0.0) <= 0.0:
            feasible = False
            break
        rounds += 1
        plan = _plan_once(algorithm, leaf_arrays, combined, pred, k - found,
                          profile, block_records)
        planned_blocks += len(plan)
        fetched_round = []
        for bid, dens in zip(plan.bids, plan.densities):
            if dens <= 0.0:
                continue
            block = store.read_block(int(bid))
            matches = scan_valid(block, pred, store.schema)
            fetched_round.append(int(bid))
            for arr in leaf_arrays:
                arr[bid] = 0.0
            if len(matches):
                collected.append(matches)
                found += len(matches)
            if found >= k:
                break
        fetched_bids.extend(fetched_round)
        modeled += plan_cost(profile, fetched_round)
        if not fetched_round:
            feasible = False
            break

    if collected:
        records = np.concatenate(collected)[:k]
    else:
        records = np.empty(0, dtype=store.schema.dtype)
    metrics = {
        "algorithm": algorithm,
        "k": k,
        "blocks_fetched": len(fetched_bids),
        "planned_blocks": planned_blocks,
        "modeled_cost_ms": modeled,
        "actual_valid_found": found,
        "replans": max(rounds - 1, 0),
    }
    return ExecuteResult(records, metrics, feasible and found >= k, fetched_bids)


# ---------------------------------------------------------------------------
# first-to-k baselines

def _finish(store, algorithm, k, collected, found, fetched_bids, profile):
    if collected:
        records = np.concatenate(collected)[:k]
    else:
        records = np.empty(0, dtype=store.schema.dtype)
    metrics = {
        "algorithm": algorithm,
        "k": k,
        "blocks_fetched": len(fetched_bids),
        "planned_blocks": len(fetched_bids),
        "modeled_cost_ms": plan_cost(profile or DeviceProfile.hdd_default(), fetched_bids),
        "actual_valid_found": found,
        "replans": 0,
    }
    return ExecuteResult(records, metrics, found >= k, list(fetched_bids))


def baseline_bitmap_scan(store, index: IndexSet, pred, k: int,
                         profile: DeviceProfile | None = None) -> ExecuteResult:
    """Combine per-record bitmaps, take the first k set bits, fetch their blocks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    packed = index.combined_bitmap(pred)
    bits = np.unpackbits(packed, count=store.total_records).view(bool)
    positions = np.flatnonzero(bits)[:k]
    rpb = store.records_per_block
    fetched = []
    collected = []
    for bid in np.unique(positions // rpb):
        block = store.read_block(int(bid))
        fetched.append(int(bid))
        local = positions[(positions >= bid * rpb) & (positions < bid * rpb + len(block))] - bid * rpb
        collected.append(block[local])
    return _finish(store, "bitmap", k, collected, len(positions), fetched, profile)


def baseline_lossy_scan(store, index: IndexSet, pred, k: int,
                        profile: DeviceProfile | None = None) -> ExecuteResult:
    """Fetch blocks whose lossy bit is set, in ascending order, until k matches."""
    if k < 1:
        raise ValueError("k must be >= 1")
    packed = index.combined_lossy(pred)
    candidates = np.flatnonzero(np.unpackbits(packed, count=index.n_blocks))
    fetched = []
    collected = []
    found = 0
    for bid in candidates:
        block = store.read_block(int(bid))
        fetched.append(int(bid))
        matches = scan_valid(block, pred, store.schema)
        if len(matches):
            collected.append(matches)
            found += len(matches)
        if found >= k:
            break
    return _finish(store, "lossy", k, collected, found, fetched, profile)


def baseline_disk_scan(store, pred, k: int,
                       profile: DeviceProfile | None = None) -> ExecuteResult:
    """Sequential scan from block zero until k valid records are found."""
    if k < 1:
        raise ValueError("k must be >= 1")
    fetched = []
    collected = []
    found = 0
    for bid in range(store.n_blocks):
        block = store.read_block(bid)
        fetched.append(bid)
        matches = scan_valid(block, pred, store.schema)
        if len(matches):
            collected.append(matches)
            found += len(matches)
        if found >= k:
            break
    return _finish(store, "disk", k, collected, found, fetched, profile)
