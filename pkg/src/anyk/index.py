"""Block-level density indexes and the bitmap baselines.

For every (attribute, value) pair the index stores one density map: an array
with one entry per block giving the exact fraction of that block's records
matching the value (the last, possibly short, block is normalized by its
actual record count). A sorted companion orders (block id, density) pairs by
density descending, ties broken by ascending block id. Optional per-record
bitmaps and per-block lossy bitmaps back the baseline scan strategies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestError, UnknownValueError
from .predicate import And, Leaf, Or, leaves

__all__ = [
    "DensityMap",
    "SortedDensityMap",
    "IndexSet",
    "build_indexes",
    "density_map_bytes",
    "bitmap_bytes",
]

_MAGIC = b"ANYKIDX\x00"
_VERSION = 1
_FLAG_BITMAPS = 1
_FLAG_LOSSY = 2


@dataclass(frozen=True)
class DensityMap:
    attr: str
    value: str
    densities: np.ndarray  # one fraction in [0, 1] per block


@dataclass(frozen=True)
class SortedDensityMap:
    """Permutation of a density map ordered by density desc, block id asc."""

    attr: str
    value: str
    bids: np.ndarray
    densities: np.ndarray


def _sort_map(densities: np.ndarray):
    order = np.argsort(-densities, kind="stable").astype(np.uint32)
    return order, densities[order]


def density_map_bytes(n_blocks: int, n_values: int) -> int:
    """Closed-form density-map index size: one float64 per block per value."""
    return n_blocks * n_values * 8


def bitmap_bytes(n_records: int, n_values: int) -> float:
    """Closed-form uncompressed bitmap size: one bit per record per value."""
    return n_records * n_values / 8


class IndexSet:
    """All density maps (and optional bitmaps) for one table.

    Immutable after build; safe to share across concurrent query sessions.
    """

    def __init__(self, block_records: np.ndarray, total_records: int,
                 maps: dict, bitmaps: dict | None = None, lossy: dict | None = None):
        self.block_records = np.asarray(block_records, dtype=np.int64)
        self.n_blocks = len(self.block_records)
        self.total_records = int(total_records)
        self.maps = maps            # (attr, value) -> densities ndarray
        self.bitmaps = bitmaps      # (attr, value) -> packed uint8 bits, or None
        self.lossy = lossy          # (attr, value) -> packed uint8 per-block bits, or None
        self.sorted = {key: _sort_map(d) for key, d in maps.items()}

    # -- construction -------------------------------------------------------

    @classmethod
    def from_arrays(cls, maps: dict, block_records, bitmaps=None, lossy=None) -> "IndexSet":
        """Build an in-memory index from raw density arrays (mainly for tests)."""
        maps = {k: np.asarray(v, dtype=np.float64) for k, v in maps.items()}
        block_records = np.asarray(block_records, dtype=np.int64)
        return cls(block_records, int(block_records.sum()), maps, bitmaps, lossy)

    # -- lookups ------------------------------------------------------------

    def _densities(self, attr: str, value: str) -> np.ndarray:
        try:
            return self.maps[(attr, value)]
        except KeyError:
            raise UnknownValueError(f"no density map for {attr!r} = {value!r}") from None

    def density_map(self, attr: str, value: str) -> DensityMap:
        return DensityMap(attr, value, self._densities(attr, value))

    def sorted_map(self, attr: str, value: str) -> SortedDensityMap:
        if (attr, value) not in self.sorted:
            raise UnknownValueError(f"no density map for {attr!r} = {value!r}")
        bids, dens = self.sorted[(attr, value)]
        return SortedDensityMap(attr, value, bids, dens)

    def leaf_maps_for(self, pred) -> list:
        return [self._densities(lf.attr, lf.value) for lf in leaves(pred)]

    def sorted_maps_for(self, pred) -> list:
        """Sorted (bids, densities) pairs aligned with the predicate's leaves."""
        return [self.sorted[(lf.attr, lf.value)] for lf in leaves(pred)]

    # -- density combination ------------------------------------------------

    def combined_map(self, pred, clamp: bool = True) -> np.ndarray:
        """Estimated per-block valid fraction for an AND/OR predicate tree.

        AND multiplies child densities, OR adds them; the sum is clamped to
        1.0 by default to keep the fraction semantics (the raw sum is still
        an upper bound and available with clamp=False).
        """
        if pred is None:
            return np.ones(self.n_blocks, dtype=np.float64)
        return self._combine(pred, clamp)

    def _combine(self, pred, clamp):
        if isinstance(pred, Leaf):
            return self._densities(pred.attr, pred.value)
        parts = [self._combine(c, clamp) for c in pred.children]
        if isinstance(pred, And):
            out = parts[0].copy()
            for p in parts[1:]:
                out *= p
            return out
        if isinstance(pred, Or):
            out = parts[0].copy()
            for p in parts[1:]:
                out += p
            return np.minimum(out, 1.0) if clamp else out
        raise TypeError(f"not a predicate node: {pred!r}")

    def combine_density(self, pred, bid: int, clamp: bool = True) -> float:
        if not 0 <= bid < self.n_blocks:
            raise IndexError(f"block id {bid} out of range [0, {self.n_blocks})")
        if pred is None:
            return 1.0
        return float(self._combine_at(pred, bid, clamp))

    def _combine_at(self, pred, bid, clamp):
        if isinstance(pred, Leaf):
            return float(self._densities(pred.attr, pred.value)[bid])
        parts = [self._combine_at(c, bid, clamp) for c in pred.children]
        if isinstance(pred, And):
            out = 1.0
            for p in parts:
                out *= p
            return out
        total = sum(parts)
        return min(total, 1.0) if clamp else total

    def estimate_valid_count(self, pred) -> float:
        """Estimated number of valid records: sum of density x block records."""
        return float(np.dot(self.combined_map(pred), self.block_records))

    # -- bitmap combination --------------------------------------------------

    def combined_bitmap(self, pred) -> np.ndarray:
        """Packed per-record bitmap of the predicate (bitwise AND/OR of leaves)."""
        if self.bitmaps is None:
            raise UnknownValueError("index was built without bitmaps")
        if pred is None:
            nbytes = -(-self.total_records // 8)
            out = np.full(nbytes, 0xFF, dtype=np.uint8)
            return _mask_tail(out, self.total_records)
        return self._combine_bits(pred, self.bitmaps)

    def combined_lossy(self, pred) -> np.ndarray:
        """Packed per-block lossy bitmap of the predicate."""
        if self.lossy is None:
            raise UnknownValueError("index was built without lossy bitmaps")
        if pred is None:
            nbytes = -(-self.n_blocks // 8)
            out = np.full(nbytes, 0xFF, dtype=np.uint8)
            return _mask_tail(out, self.n_blocks)
        return self._combine_bits(pred, self.lossy)

    def _combine_bits(self, pred, table):
        if isinstance(pred, Leaf):
            try:
                return table[(pred.attr, pred.value)]
            except KeyError:
                raise UnknownValueError(
                    f"no bitmap for {pred.attr!r} = {pred.value!r}") from None
        parts = [self._combine_bits(c, table) for c in pred.children]
        out = parts[0].copy()
        for p in parts[1:]:
            if isinstance(pred, And):
                out &= p
            else:
                out |= p
        return out

    # -- accounting ----------------------------------------------------------

    def memory_breakdown(self) -> dict:
        out = {
            "densitymap_bytes": sum(d.nbytes for d in self.maps.values()),
            "sorted_bytes": sum(b.nbytes for b, _ in self.sorted.values()),
        }
        if self.bitmaps is not None:
            out["bitmap_bytes"] = sum(b.nbytes for b in self.bitmaps.values())
        if self.lossy is not None:
            out["lossy_bytes"] = sum(b.nbytes for b in self.lossy.values())
        return out

    # -- persistence ----------------------------------------------------------

    def save(self, path, schema):
        keys = sorted(self.maps, key=lambda k: (_attr_idx(schema, k[0]), schema.code_of(*k)))
        flags = (_FLAG_BITMAPS if self.bitmaps is not None else 0) | \
                (_FLAG_LOSSY if self.lossy is not None else 0)
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<QQQQQ", _VERSION, self.n_blocks,
                                self.total_records, len(keys), flags))
            f.write(self.block_records.astype("<u4").tobytes())
            for key in keys:
                attr, value = key
                f.write(struct.pack("<QQ", _attr_idx(schema, attr), schema.code_of(attr, value)))
                f.write(self.maps[key].astype("<f8").tobytes())
                f.write(self.sorted[key][0].astype("<u4").tobytes())
                if self.bitmaps is not None:
                    f.write(self.bitmaps[key].tobytes())
                if self.lossy is not None:
                    f.write(self.lossy[key].tobytes())

    @classmethod
    def load(cls, path, schema) -> "IndexSet":
        buf = Path(path).read_bytes()
        if buf[:8] != _MAGIC:
            raise IngestError("not an index file (bad magic)")
        version, n_blocks, total, n_entries, flags = struct.unpack_from("<QQQQQ", buf, 8)
        if version != _VERSION:
            raise IngestError(f"unsupported index version {version}")
        pos = 8 + 40
        block_records = np.frombuffer(buf, "<u4", n_blocks, pos).astype(np.int64)
        pos += 4 * n_blocks
        bit_bytes = -(-total // 8)
        lossy_bytes = -(-n_blocks // 8)
        maps, bitmaps, lossy = {}, {}, {}
        for _ in range(n_entries):
            attr_idx, code = struct.unpack_from("<QQ", buf, pos)
            pos += 16
            dim = schema.dims[attr_idx]
            key = (dim.name, dim.values[code])
            maps[key] = np.frombuffer(buf, "<f8", n_blocks, pos).copy()
            pos += 8 * n_blocks
            pos += 4 * n_blocks  # sorted permutation is recomputed on load
            if flags & _FLAG_BITMAPS:
                bitmaps[key] = np.frombuffer(buf, np.uint8, bit_bytes, pos).copy()
                pos += bit_bytes
            if flags & _FLAG_LOSSY:
                lossy[key] = np.frombuffer(buf, np.uint8, lossy_bytes, pos).copy()
                pos += lossy_bytes
        return cls(block_records, total,
                   maps,
                   bitmaps if flags & _FLAG_BITMAPS else None,
                   lossy if flags & _FLAG_LOSSY else None)


def _attr_idx(schema, attr):
    for i, d in enumerate(schema.dims):
        if d.name == attr:
            return i
    raise UnknownValueError(f"no dimension attribute named {attr!r}")


def _mask_tail(packed: np.ndarray, n_bits: int) -> np.ndarray:
    rem = n_bits % 8
    if rem and len(packed):
        packed[-1] &= np.uint8(0xFF << (8 - rem))
    return packed


def build_indexes(store, with_bitmaps: bool = False, with_lossy: bool = False,
                  path="auto") -> IndexSet:
    """Scan a table once and build exact per-block densities for every value.

    The result is persisted next to the table file by default; pass
    ``path=None`` to skip persistence.
    """
    schema = store.schema
    rows = store.read_all()
    lam = store.n_blocks
    block_records = store.block_records
    block_of = np.arange(store.total_records, dtype=np.int64) // store.records_per_block

    maps = {}
    bitmaps = {} if with_bitmaps else None
    lossy = {} if with_lossy else None
    for dim in schema.dims:
        codes = rows[dim.name].astype(np.int64) if store.total_records else np.empty(0, np.int64)
        card = len(dim.values)
        if lam:
            counts = np.bincount(block_of * card + codes, minlength=lam * card)
            counts = counts.reshape(lam, card)
            dens = counts / block_records[:, None]
        else:
            dens = np.zeros((0, card))
        for code, value in enumerate(dim.values):
            key = (dim.name, value)
            maps[key] = np.ascontiguousarray(dens[:, code])
            if with_bitmaps:
                bitmaps[key] = np.packbits(codes == code)
            if with_lossy:
                lossy[key] = np.packbits(dens[:, code] > 0)

    index = IndexSet(block_records, store.total_records, maps, bitmaps, lossy)
    if path == "auto":
        path = Path(store.path).with_suffix(".idx")
    if path is not None:
        index.save(path, schema)
    return index
