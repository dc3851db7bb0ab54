"""Row-oriented block storage: fixed-width records packed into fixed-size blocks.

File layout (little-endian, all header counts 64-bit unsigned):

    magic "ANYKTBL\\x00" | version | block_size | n_dims | n_measures | total_records
    per dimension: name | cardinality | dictionary (value strings)
    per measure:   name
    data: ceil(total_records / records_per_block) blocks of exactly block_size
          bytes, each holding records_per_block packed records (the last block
          holds the remainder), any unused tail bytes zeroed.

Records are dictionary-coded: every dimension value is a uint32 code into the
schema dictionary; measures are float64. The fixed record width makes the
records-per-block count constant, which everything downstream relies on.
"""

from __future__ import annotations

import csv
import mmap
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, IngestError, UnknownValueError
from .predicate import eval_records

__all__ = [
    "DEFAULT_BLOCK_SIZE",
    "DimAttr",
    "Schema",
    "BlockStore",
    "SyntheticSpec",
    "write_table",
    "ingest_csv",
    "generate_clustered",
    "clustered_binary",
    "clustered_categorical",
    "zipf_probabilities",
    "scan_valid",
]

DEFAULT_BLOCK_SIZE = 256 * 1024

_MAGIC = b"ANYKTBL\x00"
_VERSION = 1
_DIM_WIDTH = 4   # uint32 dictionary code
_MEASURE_WIDTH = 8  # float64


@dataclass(frozen=True)
class DimAttr:
    """A categorical dimension attribute with its value dictionary."""

    name: str
    values: tuple
    cardinality: int = 0

    def __post_init__(self):
        card = self.cardinality or max(2, len(self.values))
        if card < 2:
            raise ValueError(f"dimension {self.name!r}: cardinality must be >= 2")
        if len(self.values) > card:
            raise ValueError(f"dimension {self.name!r}: more values than cardinality")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"dimension {self.name!r}: duplicate dictionary values")
        object.__setattr__(self, "cardinality", card)
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))


class Schema:
    """Dimension and measure attributes of a table; owns the value dictionaries."""

    def __init__(self, dims, measures, frozen: bool = True):
        self.dims = [d if isinstance(d, DimAttr) else DimAttr(*d) for d in dims]
        self.measures = list(measures)
        self.frozen = frozen
        names = [d.name for d in self.dims] + self.measures
        if len(set(names)) != len(names):
            raise ValueError("duplicate attribute names in schema")
        self._codes = {d.name: {v: i for i, v in enumerate(d.values)} for d in self.dims}

    @property
    def record_width(self) -> int:
        return _DIM_WIDTH * len(self.dims) + _MEASURE_WIDTH * len(self.measures)

    @property
    def dtype(self) -> np.dtype:
        fields = [(d.name, "<u4") for d in self.dims]
        fields += [(m, "<f8") for m in self.measures]
        return np.dtype(fields)

    @property
    def attr_names(self):
        return [d.name for d in self.dims] + list(self.measures)

    def dim(self, name: str) -> DimAttr:
        for d in self.dims:
            if d.name == name:
                return d
        raise UnknownValueError(f"no dimension attribute named {name!r}")

    def code_of(self, attr: str, value: str) -> int:
        try:
            return self._codes[attr][value]
        except KeyError:
            raise UnknownValueError(f"{attr!r} = {value!r} is not in the dictionary") from None

    def value_of(self, attr: str, code: int) -> str:
        return self.dim(attr).values[code]

    def has_value(self, attr: str, value: str) -> bool:
        return attr in self._codes and value in self._codes[attr]


@dataclass
class SyntheticSpec:
    """Parameters for the clustered synthetic generator.

    Each dimension attribute is a binary 0/1 column whose 1s appear in
    geometric-length runs at random positions; ``density`` fixes the overall
    fraction of 1s exactly (up to rounding). Measures are independent normals.
    """

    n_records: int
    n_dims: int
    density: float | list = 0.10
    mean_run_length: float = 8.0
    measures: list = field(default_factory=lambda: [(0.0, 1.0), (100.0, 25.0)])
    seed: int = 0

    def densities(self):
        if np.isscalar(self.density):
            return [float(self.density)] * self.n_dims
        if len(self.density) != self.n_dims:
            raise ValueError("density list length must equal n_dims")
        return [float(d) for d in self.density]


# ---------------------------------------------------------------------------
# header serialization

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<Q", len(raw)) + raw


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def u64(self) -> int:
        (v,) = struct.unpack_from("<Q", self.buf, self.pos)
        self.pos += 8
        return v

    def string(self) -> str:
        n = self.u64()
        s = bytes(self.buf[self.pos:self.pos + n]).decode("utf-8")
        self.pos += n
        return s


def _pack_header(schema: Schema, block_size: int, total_records: int) -> bytes:
    parts = [_MAGIC, struct.pack("<QQQQQ", _VERSION, block_size,
                                 len(schema.dims), len(schema.measures), total_records)]
    for d in schema.dims:
        parts.append(_pack_str(d.name))
        parts.append(struct.pack("<QQ", d.cardinality, len(d.values)))
        for v in d.values:
            parts.append(_pack_str(v))
    for m in schema.measures:
        parts.append(_pack_str(m))
    return b"".join(parts)


def _parse_header(buf):
    if bytes(buf[:8]) != _MAGIC:
        raise IngestError("not a table file (bad magic)")
    r = _Reader(buf)
    r.pos = 8
    version = r.u64()
    if version != _VERSION:
        raise IngestError(f"unsupported table version {version}")
    block_size = r.u64()
    n_dims = r.u64()
    n_measures = r.u64()
    total = r.u64()
    dims = []
    for _ in range(n_dims):
        name = r.string()
        card = r.u64()
        n_vals = r.u64()
        values = tuple(r.string() for _ in range(n_vals))
        dims.append(DimAttr(name, values, card))
    measures = [r.string() for _ in range(n_measures)]
    schema = Schema(dims, measures, frozen=True)
    return schema, block_size, total, r.pos


# ---------------------------------------------------------------------------
# block store

class BlockStore:
    """Read handle over a packed table file; the unit of all I/O is one block.

    Each open store is one session: ``blocks_fetched`` counts ``read_block``
    calls on this handle and drives all block-count metrics. The file itself
    is immutable after writing, so concurrent readers are safe.
    """

    def __init__(self, path, schema, block_size, total_records, data_offset, buf):
        self.path = Path(path)
        self.schema = schema
        self.block_size = block_size
        self.total_records = total_records
        self.records_per_block = block_size // schema.record_width
        if self.records_per_block < 1:
            raise ValueError("block_size smaller than one record")
        self.n_blocks = -(-total_records // self.records_per_block) if total_records else 0
        self._data_offset = data_offset
        self._buf = buf
        self.blocks_fetched = 0

    @classmethod
    def open(cls, path) -> "BlockStore":
        f = open(path, "rb")
        buf = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) if Path(path).stat().st_size else b""
        f.close()
        schema, block_size, total, offset = _parse_header(buf)
        return cls(path, schema, block_size, total, offset, buf)

    @property
    def block_records(self) -> np.ndarray:
        """Per-block record counts; only the last block may be short."""
        rpb, lam, n = self.records_per_block, self.n_blocks, self.total_records
        counts = np.full(lam, rpb, dtype=np.int64)
        if lam:
            counts[-1] = n - rpb * (lam - 1)
        return counts

    def block_record_count(self, bid: int) -> int:
        if bid == self.n_blocks - 1:
            return self.total_records - self.records_per_block * (self.n_blocks - 1)
        return self.records_per_block

    def read_block(self, bid: int) -> np.ndarray:
        if not 0 <= bid < self.n_blocks:
            raise IndexError(f"block id {bid} out of range [0, {self.n_blocks})")
        self.blocks_fetched += 1
        offset = self._data_offset + bid * self.block_size
        return np.frombuffer(self._buf, dtype=self.schema.dtype,
                             count=self.block_record_count(bid), offset=offset)

    def peek_block(self, bid: int) -> np.ndarray:
        """Decode a block without touching the fetch counter (bookkeeping only)."""
        if not 0 <= bid < self.n_blocks:
            raise IndexError(f"block id {bid} out of range [0, {self.n_blocks})")
        offset = self._data_offset + bid * self.block_size
        return np.frombuffer(self._buf, dtype=self.schema.dtype,
                             count=self.block_record_count(bid), offset=offset)

    def read_all(self) -> np.ndarray:
        """Sequential decode of the whole table (does not touch the fetch counter)."""
        parts = []
        for bid in range(self.n_blocks):
            offset = self._data_offset + bid * self.block_size
            parts.append(np.frombuffer(self._buf, dtype=self.schema.dtype,
                                       count=self.block_record_count(bid), offset=offset))
        if not parts:
            return np.empty(0, dtype=self.schema.dtype)
        return np.concatenate(parts)

    def reset_blocks_fetched(self):
        self.blocks_fetched = 0

    def close(self):
        if isinstance(self._buf, mmap.mmap):
            self._buf.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def scan_valid(block: np.ndarray, pred, schema: Schema) -> np.ndarray:
    """Records of a decoded block satisfying the predicate, in stored order."""
    return block[eval_records(pred, block, schema)]


# ---------------------------------------------------------------------------
# writers

def write_table(path, schema: Schema, dim_codes, measure_values,
                block_size: int = DEFAULT_BLOCK_SIZE) -> BlockStore:
    """Pack column arrays into a table file and return an open store.

    ``dim_codes`` is (n, n_dims) integer codes, ``measure_values`` (n, n_measures)
    floats; either may be empty-width. Codes are validated against the dictionaries.
    """
    dim_codes = np.asarray(dim_codes, dtype=np.uint32)
    measure_values = np.asarray(measure_values, dtype=np.float64)
    n = dim_codes.shape[0] if dim_codes.size else measure_values.shape[0]
    if dim_codes.size == 0:
        dim_codes = dim_codes.reshape(n, len(schema.dims))
    if measure_values.size == 0:
        measure_values = measure_values.reshape(n, len(schema.measures))
    for j, d in enumerate(schema.dims):
        if dim_codes.shape[0] and dim_codes[:, j].max(initial=0) >= len(d.values):
            raise ValueError(f"dimension {d.name!r}: code out of dictionary range")

    rpb = block_size // schema.record_width
    if rpb < 1:
        raise ValueError("block_size smaller than one record")
    lam = -(-n // rpb) if n else 0

    rows = np.empty(n, dtype=schema.dtype)
    for j, d in enumerate(schema.dims):
        rows[d.name] = dim_codes[:, j]
    for j, m in enumerate(schema.measures):
        rows[m] = measure_values[:, j]

    header = _pack_header(schema, block_size, n)
    payload = rows.tobytes()
    width = schema.record_width
    out = np.zeros(lam * block_size, dtype=np.uint8)
    src = np.frombuffer(payload, dtype=np.uint8)
    for bid in range(lam):
        lo = bid * rpb * width
        hi = min(n * width, (bid + 1) * rpb * width)
        out[bid * block_size: bid * block_size + (hi - lo)] = src[lo:hi]

    with open(path, "wb") as f:
        f.write(header)
        f.write(out.tobytes())
    return BlockStore.open(path)


def ingest_csv(path, schema: Schema, block_size: int = DEFAULT_BLOCK_SIZE,
               out_path=None) -> BlockStore:
    """Load a CSV (header row required) into a packed table file.

    Columns must match the schema order (dimensions then measures). Dimension
    values missing from the dictionary are appended unless the schema is
    frozen, in which case ingestion fails naming the offending line.
    """
    path = Path(path)
    out_path = Path(out_path) if out_path else path.with_suffix(".tbl")
    expected = schema.attr_names
    values = {d.name: list(d.values) for d in schema.dims}
    code_maps = {d.name: {v: i for i, v in enumerate(d.values)} for d in schema.dims}
    dim_cols = [[] for _ in schema.dims]
    measure_cols = [[] for _ in schema.measures]

    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file: missing CSV header row") from None
        if [h.strip() for h in header] != expected:
            raise IngestError(f"line 1: CSV columns {header} do not match schema {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise IngestError(f"line {lineno}: expected {len(expected)} columns, got {len(row)}")
            for j, d in enumerate(schema.dims):
                cell = row[j]
                codes = code_maps[d.name]
                if cell not in codes:
                    if schema.frozen:
                        raise IngestError(
                            f"line {lineno}: value {cell!r} not in frozen dictionary of {d.name!r}")
                    codes[cell] = len(values[d.name])
                    values[d.name].append(cell)
                dim_cols[j].append(codes[cell])
            for j in range(len(schema.measures)):
                cell = row[len(schema.dims) + j]
                try:
                    measure_cols[j].append(float(cell))
                except ValueError:
                    raise IngestError(f"line {lineno}: bad measure value {cell!r}") from None

    final = Schema(
        [DimAttr(d.name, tuple(values[d.name]), max(d.cardinality, len(values[d.name])))
         for d in schema.dims],
        schema.measures,
        frozen=True,
    )
    n = len(dim_cols[0]) if dim_cols else len(measure_cols[0]) if measure_cols else 0
    dims = np.array(dim_cols, dtype=np.uint32).T if dim_cols else np.empty((n, 0), np.uint32)
    meas = np.array(measure_cols, dtype=np.float64).T if measure_cols else np.empty((n, 0), np.float64)
    if n == 0:
        dims = np.empty((0, len(schema.dims)), np.uint32)
        meas = np.empty((0, len(schema.measures)), np.float64)
    return write_table(out_path, final, dims, meas, block_size)


# ---------------------------------------------------------------------------
# synthetic generation

def clustered_binary(n: int, density: float, mean_run_length: float,
                     rng: np.random.Generator) -> np.ndarray:
    """0/1 column with exactly round(density*n) ones laid out in geometric runs."""
    if not 0.0 < density < 1.0:
        raise GenerationError(f"density must be in (0, 1), got {density}")
    if mean_run_length < 1.0:
        raise GenerationError("mean run length must be >= 1")
    ones = int(round(density * n))
    if ones < 1 or ones >= n:
        raise GenerationError(f"density {density} infeasible for {n} records")

    lengths = []
    total = 0
    while total < ones:
        draw = rng.geometric(1.0 / mean_run_length, size=max(16, int(2 * ones / mean_run_length)))
        lengths.append(draw)
        total += int(draw.sum())
    runs = np.concatenate(lengths)
    cut = int(np.searchsorted(np.cumsum(runs), ones)) + 1
    runs = runs[:cut].astype(np.int64)
    runs[-1] -= int(runs.sum()) - ones

    n_runs = len(runs)
    zeros = n - ones
    if zeros < n_runs - 1:
        raise GenerationError(
            f"density {density} with run length {mean_run_length} infeasible for {n} records")
    # interior gaps get one zero so runs stay distinct; leftover zeros spread randomly
    slack = zeros - (n_runs - 1)
    gaps = rng.multinomial(slack, np.full(n_runs + 1, 1.0 / (n_runs + 1)))
    gaps[1:-1] += 1

    seg_lens = np.empty(2 * n_runs + 1, dtype=np.int64)
    seg_lens[0::2] = gaps
    seg_lens[1::2] = runs
    seg_vals = np.zeros(2 * n_runs + 1, dtype=np.uint8)
    seg_vals[1::2] = 1
    return np.repeat(seg_vals, seg_lens)


def clustered_categorical(n: int, probs, mean_run_length: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Categorical codes emitted in geometric-length runs with run values ~ probs."""
    probs = np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    if mean_run_length < 1.0:
        raise GenerationError("mean run length must be >= 1")
    lengths = []
    total = 0
    while total < n:
        draw = rng.geometric(1.0 / mean_run_length, size=max(16, int(2 * n / mean_run_length)))
        lengths.append(draw)
        total += int(draw.sum())
    runs = np.concatenate(lengths)
    cut = int(np.searchsorted(np.cumsum(runs), n)) + 1
    runs = runs[:cut].astype(np.int64)
    runs[-1] -= int(runs.sum()) - n
    vals = rng.choice(len(probs), size=len(runs), p=probs).astype(np.uint32)
    return np.repeat(vals, runs)


def zipf_probabilities(n_values: int, exponent: float) -> np.ndarray:
    """Zipf mass over ranks 1..n_values with the given exponent."""
    p = 1.0 / np.arange(1, n_values + 1, dtype=np.float64) ** exponent
    return p / p.sum()


def generate_clustered(spec: SyntheticSpec, path,
                       block_size: int = DEFAULT_BLOCK_SIZE) -> BlockStore:
    """Write a clustered synthetic table per ``spec`` and return the open store.

    Deterministic for a fixed seed: the same spec writes a byte-identical file.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_records
    dims = np.empty((n, spec.n_dims), dtype=np.uint32)
    for j, dens in enumerate(spec.densities()):
        dims[:, j] = clustered_binary(n, dens, spec.mean_run_length, rng)
    meas = np.empty((n, len(spec.measures)), dtype=np.float64)
    for j, (mu, sigma) in enumerate(spec.measures):
        meas[:, j] = rng.normal(mu, sigma, size=n)
    schema = Schema(
        [DimAttr(f"d{j}", ("0", "1")) for j in range(spec.n_dims)],
        [f"m{j}" for j in range(len(spec.measures))],
    )
    return write_table(path, schema, dims, meas, block_size)
