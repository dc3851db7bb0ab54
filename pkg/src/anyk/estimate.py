"""Two-phase sampling and bias-corrected aggregate estimation.

Most of a k-record sample is collected by an any-k planner (cheap but biased
toward dense blocks); a configurable fraction comes from uniformly drawn
blocks. Because the resulting block inclusion probabilities are known, an
unequal-probability estimator can undo the bias: the Horvitz-Thompson
estimator weights each block's measure sum by the inverse of its inclusion
probability, and the ratio estimator divides the HT total by the HT estimate
of the valid-record count for lower variance at the price of a small bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .index import IndexSet
from .planners import execute
from .predicate import eval_records

__all__ = [
    "SampleDesign",
    "BlockAggregates",
    "EstimateReport",
    "two_phase_sample",
    "block_aggregates",
    "inclusion_prob",
    "joint_inclusion_prob",
    "ht_estimate",
    "ht_variance",
    "ratio_estimate",
    "ratio_variance",
    "estimate_report",
    "baseline_bitmap_random",
]


@dataclass(frozen=True)
class SampleDesign:
    """Block partition of a two-phase sample.

    ``candidate_blocks`` holds every block with positive estimated density,
    ``planned_blocks`` those chosen by the any-k planner (always included),
    and ``random_blocks`` the uniform without-replacement draws from the rest.
    """

    candidate_blocks: frozenset
    planned_blocks: frozenset
    random_blocks: frozenset
    alpha: float
    k: int

    def __post_init__(self):
        if self.planned_blocks & self.random_blocks:
            raise ValueError("planned and random block sets must be disjoint")
        if not (self.planned_blocks | self.random_blocks) <= self.candidate_blocks:
            raise ValueError("sampled blocks must come from the candidate set")

    @property
    def sampled_blocks(self) -> frozenset:
        return self.planned_blocks | self.random_blocks


@dataclass
class BlockAggregates:
    """Per-block measure sums and valid-record counts for fetched blocks."""

    measure: str
    sums: dict        # bid -> sum of measure over valid records
    counts: dict      # bid -> number of valid records

    def blocks(self):
        return self.sums.keys()


@dataclass
class EstimateReport:
    estimator: str
    tau_hat: float
    mu_hat: float
    var_tau: float | None
    var_mu: float | None
    valid_count: float
    n_planned: int
    n_random: int
    variance_mode: str | None = None
    variance_clamped: bool = False


def block_aggregates(store, pred, measure: str, bids,
                     counted: bool = False) -> BlockAggregates:
    """Measure sums and match counts per block.

    Uses uncounted decodes by default: aggregates over already-fetched blocks
    are bookkeeping, not new I/O. Pass ``counted=True`` to charge the reads.
    """
    sums, counts = {}, {}
    for bid in bids:
        block = store.read_block(int(bid)) if counted else store.peek_block(int(bid))
        mask = eval_records(pred, block, store.schema)
        sums[int(bid)] = float(block[measure][mask].sum())
        counts[int(bid)] = int(mask.sum())
    return BlockAggregates(measure, sums, counts)


def two_phase_sample(index: IndexSet, pred, k: int, alpha: float, planner: str,
                     store, measure: str | None = None, seed: int = 0):
    """Collect (1-alpha)k records via a planner and alpha*k via random blocks.

    Returns the sample design and per-block aggregates for every sampled
    block. Random blocks are drawn uniformly without replacement from the
    positive-density blocks the planner did not take, until their actual
    record yield reaches alpha*k or the pool runs dry.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1); pure random sampling is a baseline, "
                         "not a two-phase design")
    if k < 1:
        raise ValueError("k must be >= 1")
    measure = measure or store.schema.measures[0]
    combined = index.combined_map(pred)
    candidates = frozenset(np.flatnonzero((combined > 0) & (index.block_records > 0)).tolist())
    if not candidates:
        raise InfeasibleError("no block has positive estimated density for this predicate")

    k_planned = math.ceil((1.0 - alpha) * k)
    planned: frozenset
    if k_planned >= 1:
        result = execute(store, index, pred, k_planned, algorithm=planner)
        planned = frozenset(result.fetched_bids)
    else:
        planned = frozenset()

    rng = np.random.default_rng(seed)
    pool = np.array(sorted(candidates - planned), dtype=np.int64)
    target_random = math.ceil(alpha * k)
    drawn = []
    got = 0
    if target_random > 0 and len(pool):
        for bid in rng.permutation(pool):
            block = store.read_block(int(bid))
            got += int(eval_records(pred, block, store.schema).sum())
            drawn.append(int(bid))
            if got >= target_random:
                break

    design = SampleDesign(candidates, planned, frozenset(drawn), alpha, k)
    aggregates = block_aggregates(store, pred, measure, sorted(design.sampled_blocks))
    return design, aggregates


# ---------------------------------------------------------------------------
# inclusion probabilities

def _random_prob(design: SampleDesign) -> float:
    pool = len(design.candidate_blocks) - len(design.planned_blocks)
    if pool <= 0:
        return 0.0
    return len(design.random_blocks) / pool


def inclusion_prob(design: SampleDesign, bid: int) -> float:
    """Probability that a block enters the sample under the two-phase design."""
    if bid in design.planned_blocks:
        return 1.0
    if bid in design.candidate_blocks:
        return _random_prob(design)
    return 0.0


def joint_inclusion_prob(design: SampleDesign, i: int, j: int) -> float:
    """Probability that blocks i and j are both sampled.

    Planner blocks are certain; a planner block pairs with a random-eligible
    block at that block's own probability; two random-eligible blocks pair at
    the without-replacement product. Defined over the design classes, so it
    is meaningful for unsampled candidate blocks too.
    """
    if i == j:
        return inclusion_prob(design, i)
    pi, pj = inclusion_prob(design, i), inclusion_prob(design, j)
    if pi == 0.0 or pj == 0.0:
        return 0.0
    i_planned = i in design.planned_blocks
    j_planned = j in design.planned_blocks
    if i_planned and j_planned:
        return 1.0
    if i_planned or j_planned:
        return _random_prob(design)
    pool = len(design.candidate_blocks) - len(design.planned_blocks)
    r = len(design.random_blocks)
    if pool <= 1:
        return 0.0
    return _random_prob(design) * (r - 1) / (pool - 1)


# ---------------------------------------------------------------------------
# estimators

def _sampled_vectors(design: SampleDesign, aggregates: BlockAggregates):
    bids = sorted(design.sampled_blocks)
    missing = [b for b in bids if b not in aggregates.sums]
    if missing:
        raise ValueError(f"aggregates missing for sampled blocks {missing[:5]}")
    tau = np.array([aggregates.sums[b] for b in bids])
    cnt = np.array([aggregates.counts[b] for b in bids], dtype=np.float64)
    pi = np.array([inclusion_prob(design, b) for b in bids])
    return bids, tau, cnt, pi


def ht_estimate(design: SampleDesign, aggregates: BlockAggregates,
                valid_count: float) -> EstimateReport:
    """Horvitz-Thompson total and mean: block sums weighted by 1/probability."""
    if valid_count <= 0:
        raise ValueError("valid_count must be positive")
    _, tau, _, pi = _sampled_vectors(design, aggregates)
    tau_hat = float((tau / pi).sum())
    return EstimateReport("ht", tau_hat, tau_hat / valid_count, None, None,
                          valid_count, len(design.planned_blocks),
                          len(design.random_blocks))


def ratio_estimate(design: SampleDesign, aggregates: BlockAggregates,
                   valid_count: float) -> EstimateReport:
    """Ratio-of-HT estimator: lower variance, small bias shrinking with sample size."""
    _, tau, cnt, pi = _sampled_vectors(design, aggregates)
    denom = float((cnt / pi).sum())
    if denom <= 0:
        raise InfeasibleError("no valid records in the sampled blocks")
    mu_hat = float((tau / pi).sum()) / denom
    return EstimateReport("ratio", mu_hat * valid_count, mu_hat, None, None,
                          valid_count, len(design.planned_blocks),
                          len(design.random_blocks))


def _variance_quadratic(design: SampleDesign, bids, values) -> float:
    """Sum_i ((1-pi)/pi) v_i^2 + sum_{i != j} ((pi_ij - pi_i pi_j)/(pi_i pi_j)) v_i v_j."""
    pi = np.array([inclusion_prob(design, b) for b in bids])
    n = len(bids)
    pij = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            pij[a, b] = joint_inclusion_prob(design, bids[a], bids[b])
    outer = np.outer(pi, pi)
    coef = (pij - outer) / outer
    np.fill_diagonal(coef, (1.0 - pi) / pi)
    v = np.asarray(values, dtype=np.float64)
    return float(v @ coef @ v)


def _variance_blocks(design, aggregates, mode):
    if mode == "exact":
        missing = [b for b in sorted(design.candidate_blocks) if b not in aggregates.sums]
        if missing:
            raise ValueError(
                f"exact variance needs aggregates for every candidate block; missing {missing[:5]}")
        return sorted(design.candidate_blocks)
    if mode == "plugin":
        return sorted(design.sampled_blocks)
    raise ValueError("mode must be 'exact' or 'plugin'")


def ht_variance(design: SampleDesign, aggregates: BlockAggregates,
                valid_count: float, mode: str = "exact"):
    """Variance of the HT total and mean.

    ``exact`` mode sums over every candidate block and is unbiased, which
    requires block sums for unsampled blocks (test harnesses only). ``plugin``
    mode restricts the sums to sampled blocks and is an approximation.
    Numerically negative results are clamped to zero and flagged.
    """
    bids = _variance_blocks(design, aggregates, mode)
    var_tau = _variance_quadratic(design, bids, [aggregates.sums[b] for b in bids])
    clamped = var_tau < 0
    var_tau = max(var_tau, 0.0)
    return var_tau, var_tau / valid_count ** 2, clamped


def ratio_variance(design: SampleDesign, aggregates: BlockAggregates,
                   mu: float, valid_count: float, mode: str = "exact"):
    """Variance of the ratio mean and total, from block sums centered at mu.

    In ``exact`` mode mu should be the true mean; ``plugin`` mode centers at
    the ratio estimate itself and restricts sums to sampled blocks.
    """
    bids = _variance_blocks(design, aggregates, mode)
    centered = [aggregates.sums[b] - mu for b in bids]
    var_mu = _variance_quadratic(design, bids, centered) / valid_count ** 2
    clamped = var_mu < 0
    var_mu = max(var_mu, 0.0)
    return var_mu, var_mu * valid_count ** 2, clamped


def estimate_report(design: SampleDesign, aggregates: BlockAggregates,
                    valid_count: float, estimator: str = "ht",
                    variance_mode: str = "plugin") -> EstimateReport:
    """Point estimate plus variance in one report (production entry point)."""
    if estimator == "ht":
        rep = ht_estimate(design, aggregates, valid_count)
        var_tau, var_mu, clamped = ht_variance(design, aggregates, valid_count,
                                               mode=variance_mode)
    elif estimator == "ratio":
        rep = ratio_estimate(design, aggregates, valid_count)
        var_mu, var_tau, clamped = ratio_variance(design, aggregates, rep.mu_hat,
                                                  valid_count, mode=variance_mode)
    else:
        raise ValueError("estimator must be 'ht' or 'ratio'")
    rep.var_tau, rep.var_mu = var_tau, var_mu
    rep.variance_mode = variance_mode
    rep.variance_clamped = clamped
    return rep


# ---------------------------------------------------------------------------
# pure-random baseline

def baseline_bitmap_random(store, index: IndexSet, pred, k: int, seed: int = 0):
    """Uniform k records from the combined bitmap, fetching one block per record.

    Every sampled record costs a block fetch (record-level random access), so
    repeated blocks are charged repeatedly; that is the point of comparison.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    packed = index.combined_bitmap(pred)
    positions = np.flatnonzero(np.unpackbits(packed, count=store.total_records))
    rng = np.random.default_rng(seed)
    if k < len(positions):
        positions = np.sort(rng.choice(positions, size=k, replace=False))
    rpb = store.records_per_block
    rows = []
    for pos in positions:
        block = store.read_block(int(pos // rpb))
        rows.append(block[int(pos % rpb)])
    records = np.array(rows, dtype=store.schema.dtype) if rows else \
        np.empty(0, dtype=store.schema.dtype)
    metrics = {
        "algorithm": "bitmap_random",
        "k": k,
        "blocks_fetched": len(positions),
        "distinct_blocks": len(np.unique(positions // rpb)) if len(positions) else 0,
        "actual_valid_found": len(positions),
    }
    return records, metrics
