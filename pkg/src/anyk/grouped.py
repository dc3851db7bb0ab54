"""Grouped any-k retrieval and key-foreign-key joins reduced to grouping.

The grouped planner scores each block by the predicate density times the
per-group remaining-need weights, fetches a batch of top blocks, updates the
per-group tallies from the records actually found, and repeats. Joins on a
unique key reduce to grouping the foreign table by the key values present in
the primary table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costmodel import DeviceProfile, plan_cost
from .errors import ValidationError
from .index import IndexSet
from .storage import scan_valid

__all__ = [
    "GroupState",
    "GroupDensitySet",
    "combined_group_density",
    "combined_group_map",
    "GroupedResult",
    "grouped_anyk",
    "JoinResult",
    "join_anyk",
    "baseline_shared_scan",
    "baseline_bitmap_combined",
]


@dataclass
class GroupState:
    """Per-group progress of an iterative grouped run."""

    group_attrs: tuple
    combos: list                 # list of value tuples, one per group
    k: int
    blocks_per_round: int = 10
    weighting: str = "inverse_frequency"   # or "plain"
    retrieved: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.retrieved is None:
            self.retrieved = np.zeros(len(self.combos), dtype=np.int64)
        if self.weighting not in ("plain", "inverse_frequency"):
            raise ValueError("weighting must be 'plain' or 'inverse_frequency'")
        if self.blocks_per_round < 1:
            raise ValueError("blocks_per_round must be >= 1")


@dataclass
class GroupDensitySet:
    """Density inputs of the grouped priority: predicate map, per-group maps."""

    pred_map: np.ndarray          # (n_blocks,)
    group_maps: np.ndarray        # (n_groups, n_blocks)
    records_per_block: int

    @property
    def frequencies(self) -> np.ndarray:
        """Overall frequency of each group, the block-average of its densities."""
        return self.group_maps.mean(axis=1)


def _group_weights(gds: GroupDensitySet, state: GroupState) -> np.ndarray:
    need = np.maximum(state.k - state.retrieved, 0).astype(np.float64)
    expected = gds.group_maps * gds.records_per_block
    return np.minimum(need[:, None], expected)


def combined_group_map(gds: GroupDensitySet, state: GroupState) -> np.ndarray:
    """Per-block priority: predicate density times remaining-need group weights.

    Plain mode sums min(k - retrieved, density * records_per_block) over the
    groups and normalizes by records_per_block, keeping the result in [0, 1].
    Inverse-frequency mode additionally weights each group by the reciprocal
    of its overall frequency (rare groups dominate the priority) and
    renormalizes by the weight total so the range is preserved. Groups with
    zero frequency contribute nothing.
    """
    w = _group_weights(gds, state)
    rpb = gds.records_per_block
    if state.weighting == "plain":
        score = w.sum(axis=0) / rpb
    else:
        freq = gds.frequencies
        present = freq > 0
        if not present.any():
            return np.zeros_like(gds.pred_map)
        inv = np.zeros_like(freq)
        inv[present] = 1.0 / freq[present]
        score = (inv[:, None] * w).sum(axis=0) / inv.sum() / rpb
    return gds.pred_map * score


def combined_group_density(block_id: int, gds: GroupDensitySet, state: GroupState) -> float:
    return float(combined_group_map(gds, state)[block_id])


@dataclass
class GroupedResult:
    records: dict                # group key -> structured array (at most k rows)
    counts: dict                 # group key -> records found (uncapped)
    infeasible: list             # group keys with zero density everywhere
    metrics: dict
    feasible: bool


def _combo_lookup(schema, group_attrs, combos):
    """Dense code-tuple -> group index table (-1 for untracked combos)."""
    shape = tuple(len(schema.dim(a).values) for a in group_attrs)
    table = np.full(shape, -1, dtype=np.int64)
    for gi, combo in enumerate(combos):
        codes = tuple(schema.code_of(a, v) for a, v in zip(group_attrs, combo))
        table[codes] = gi
    return table


def _select_blocks(priorities, psi, planner):
    positive = np.flatnonzero(priorities > 0)
    if len(positive) == 0:
        return np.empty(0, dtype=np.int64)
    if planner == "density":
        order = np.argsort(-priorities, kind="stable")
        return np.sort(order[: min(psi, len(positive))])
    if planner == "locality":
        # best contiguous window of psi blocks by total priority, then keep
        # only its positive entries
        width = min(psi, len(priorities))
        sums = np.convolve(priorities, np.ones(width), mode="valid")
        start = int(np.argmax(sums))
        window = np.arange(start, start + width)
        window = window[priorities[window] > 0]
        if len(window) == 0:
            order = np.argsort(-priorities, kind="stable")
            return np.sort(order[:1])
        return window
    raise ValueError("grouped planner must be 'density' or 'locality'")


def grouped_anyk(store, index: IndexSet, pred, group_attrs, k: int,
                 psi: int = 10, planner: str = "density",
                 weighting: str = "inverse_frequency", group_values=None,
                 max_groups: int = 4096,
                 profile: DeviceProfile | None = None) -> GroupedResult:
    """Retrieve k valid records for every group value, sharing block fetches.

    Each round recomputes the combined priorities (fetched blocks forced to
    zero), fetches the ``psi`` best blocks in ascending order, and advances
    the per-group tallies by the records actually found. Groups whose density
    is zero everywhere are flagged infeasible and do not block termination.
    Multiple grouping attributes are handled as value combinations with
    product densities, capped at ``max_groups`` combinations.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(group_attrs, str):
        group_attrs = (group_attrs,)
    group_attrs = tuple(group_attrs)
    schema = store.schema
    profile = profile or DeviceProfile.hdd_default()

    if group_values is None:
        combos = [(v,) for v in schema.dim(group_attrs[0]).values]
        for attr in group_attrs[1:]:
            combos = [c + (v,) for c in combos for v in schema.dim(attr).values]
    else:
        combos = [(v,) if isinstance(v, str) else tuple(v) for v in group_values]
    if len(combos) > max_groups:
        raise ValueError(f"{len(combos)} group combinations exceed the cap of {max_groups}")

    single = len(group_attrs) == 1
    keys = [c[0] if single else c for c in combos]

    pred_map = index.combined_map(pred)
    group_maps = np.empty((len(combos), index.n_blocks))
    for gi, combo in enumerate(combos):
        dens = np.ones(index.n_blocks)
        for attr, value in zip(group_attrs, combo):
            dens = dens * index.maps[(attr, value)]
        group_maps[gi] = dens

    gds = GroupDensitySet(pred_map, group_maps, store.records_per_block)
    state = GroupState(group_attrs, combos, k, psi, weighting)
    lookup = _combo_lookup(schema, group_attrs, combos)

    reachable = (group_maps * pred_map).max(axis=1) > 0
    infeasible = [keys[gi] for gi in np.flatnonzero(~reachable)]
    # unreachable groups will never gain records; don't let them stall the loop
    state.retrieved[~reachable] = k

    buckets = [[] for _ in combos]
    bucket_rows = np.zeros(len(combos), dtype=np.int64)
    fetched = np.zeros(index.n_blocks, dtype=bool)
    fetched_bids: list = []
    rounds = 0
    modeled = 0.0

    while (state.retrieved < k).any():
        priorities = combined_group_map(gds, state)
        priorities[fetched] = 0.0
        batch = _select_blocks(priorities, psi, planner)
        if len(batch) == 0:
            break
        rounds += 1
        for bid in batch:
            block = store.read_block(int(bid))
            fetched[bid] = True
            fetched_bids.append(int(bid))
            matches = scan_valid(block, pred, schema)
            if not len(matches):
                continue
            codes = tuple(matches[a].astype(np.int64) for a in group_attrs)
            gidx = lookup[codes]
            tracked = gidx >= 0
            if not tracked.any():
                continue
            state.retrieved += np.bincount(gidx[tracked], minlength=len(combos))
            for gi in np.unique(gidx[tracked]):
                if bucket_rows[gi] < k:
                    rows = matches[gidx == gi]
                    buckets[gi].append(rows)
                    bucket_rows[gi] += len(rows)
        modeled += plan_cost(profile, batch)

    records = {}
    counts = {}
    true_retrieved = state.retrieved.copy()
    true_retrieved[~reachable] = 0
    for gi, key in enumerate(keys):
        counts[key] = int(true_retrieved[gi])
        if buckets[gi]:
            records[key] = np.concatenate(buckets[gi])[:k]
        else:
            records[key] = np.empty(0, dtype=schema.dtype)
    feasible = all(counts[keys[gi]] >= k for gi in np.flatnonzero(reachable)) and not infeasible
    metrics = {
        "algorithm": f"grouped_{planner}",
        "k": k,
        "psi": psi,
        "weighting": weighting,
        "n_groups": len(combos),
        "blocks_fetched": len(fetched_bids),
        "rounds": rounds,
        "density_recomputes": rounds,
        "modeled_cost_ms": modeled,
    }
    return GroupedResult(records, counts, infeasible, metrics, feasible)


# ---------------------------------------------------------------------------
# key-foreign-key join

@dataclass
class JoinResult:
    pairs: dict                  # join value -> (primary record, foreign records)
    counts: dict
    infeasible: list
    metrics: dict
    feasible: bool


def join_anyk(primary_store, foreign_store, foreign_index: IndexSet,
              join_attr: str, pred, k: int, psi: int = 10,
              planner: str = "density",
              weighting: str = "inverse_frequency") -> JoinResult:
    """k joined records per join value, via grouping the foreign table.

    The primary table is scanned once to build a hash table on the join
    attribute (which must be unique there); grouped retrieval then runs on
    the foreign table with the primary-key values as the groups. Join values
    with no foreign match come back empty and flagged infeasible.
    """
    primary = {}
    pschema = primary_store.schema
    for bid in range(primary_store.n_blocks):
        block = primary_store.read_block(bid)
        for row in block:
            value = pschema.value_of(join_attr, int(row[join_attr]))
            if value in primary:
                raise ValidationError(f"duplicate primary key {value!r} on {join_attr!r}")
            primary[value] = row

    fschema = foreign_store.schema
    keyed = [v for v in primary if fschema.has_value(join_attr, v)]
    missing = [v for v in primary if not fschema.has_value(join_attr, v)]

    grouped = grouped_anyk(foreign_store, foreign_index, pred, (join_attr,), k,
                           psi=psi, planner=planner, weighting=weighting,
                           group_values=keyed)

    pairs = {}
    counts = {}
    for value in primary:
        foreign_rows = grouped.records.get(value,
                                           np.empty(0, dtype=fschema.dtype))
        pairs[value] = (primary[value], foreign_rows)
        counts[value] = len(foreign_rows)
    infeasible = list(grouped.infeasible) + missing
    metrics = dict(grouped.metrics)
    metrics["algorithm"] = f"join_{planner}"
    metrics["primary_blocks_fetched"] = primary_store.n_blocks
    metrics["blocks_fetched"] += primary_store.n_blocks
    return JoinResult(pairs, counts, infeasible, metrics,
                      grouped.feasible and not missing)


# ---------------------------------------------------------------------------
# grouped first-to-k baselines

def _grouped_targets(schema, group_attrs, group_values):
    if isinstance(group_attrs, str):
        group_attrs = (group_attrs,)
    if group_values is None:
        combos = [(v,) for v in schema.dim(group_attrs[0]).values]
        for attr in group_attrs[1:]:
            combos = [c + (v,) for c in combos for v in schema.dim(attr).values]
    else:
        combos = [(v,) if isinstance(v, str) else tuple(v) for v in group_values]
    single = len(group_attrs) == 1
    keys = [c[0] if single else c for c in combos]
    return tuple(group_attrs), combos, keys


def baseline_shared_scan(store, pred, group_attrs, k: int, group_values=None):
    """One sequential scan shared by all groups, stopping when all have k."""
    group_attrs, combos, keys = _grouped_targets(store.schema, group_attrs, group_values)
    lookup = _combo_lookup(store.schema, group_attrs, combos)
    retrieved = np.zeros(len(combos), dtype=np.int64)
    fetched = 0
    for bid in range(store.n_blocks):
        block = store.read_block(bid)
        fetched += 1
        matches = scan_valid(block, pred, store.schema)
        if len(matches):
            codes = tuple(matches[a].astype(np.int64) for a in group_attrs)
            gidx = lookup[codes]
            tracked = gidx >= 0
            if tracked.any():
                retrieved += np.bincount(gidx[tracked], minlength=len(combos))
        if (retrieved >= k).all():
            break
    counts = {key: int(min(retrieved[gi], k)) for gi, key in enumerate(keys)}
    return {"algorithm": "shared_scan", "k": k, "blocks_fetched": fetched,
            "counts": counts}


def baseline_bitmap_combined(store, index: IndexSet, pred, group_attrs, k: int,
                             group_values=None):
    """Bitmap-driven shared scan: per-group bitmaps ORed, saturated groups dropped.

    Walks blocks in ascending order, skipping any block that holds no record
    of a still-unsaturated group; a fetched block credits every unsaturated
    group with its records there.
    """
    group_attrs, combos, keys = _grouped_targets(store.schema, group_attrs, group_values)
    if index.bitmaps is None:
        raise ValueError("bitmap-combined baseline needs an index built with bitmaps")
    pred_bits = np.unpackbits(index.combined_bitmap(pred),
                              count=store.total_records).view(bool)

    # per-group per-block match counts, derived from the record-level bitmaps
    n_groups = len(combos)
    rpb = store.records_per_block
    block_of = np.arange(store.total_records, dtype=np.int64) // rpb
    counts_matrix = np.zeros((n_groups, store.n_blocks), dtype=np.int64)
    for gi, combo in enumerate(combos):
        bits = pred_bits.copy()
        for attr, value in zip(group_attrs, combo):
            bits &= np.unpackbits(index.bitmaps[(attr, value)],
                                  count=store.total_records).view(bool)
        if bits.any():
            counts_matrix[gi] = np.bincount(block_of[bits], minlength=store.n_blocks)

    retrieved = np.zeros(n_groups, dtype=np.int64)
    unreachable = counts_matrix.sum(axis=1) == 0
    retrieved[unreachable] = k
    fetched = 0
    for bid in range(store.n_blocks):
        active = retrieved < k
        if not active.any():
            break
        if counts_matrix[active, bid].sum() == 0:
            continue
        store.read_block(bid)
        fetched += 1
        retrieved[active] += counts_matrix[active, bid]
    retrieved[unreachable] = 0
    counts = {key: int(min(retrieved[gi], k)) for gi, key in enumerate(keys)}
    return {"algorithm": "bitmap_combined", "k": k, "blocks_fetched": fetched,
            "counts": counts}
