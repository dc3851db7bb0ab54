import sys

import numpy as np
import pytest

from anyk import DimAttr, IndexSet, Schema, SyntheticSpec, build_indexes, generate_clustered


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per release criterion, after capture ends."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

# two-attribute density maps over 9 blocks of 100 records, used across tests
D_A1 = np.array([0.2, 0.1, 0.3, 0.4, 0.5, 0.7, 0.8, 0.9, 0.0])
D_A2 = np.array([0.1, 0.3, 0.0, 0.9, 0.6, 0.7, 0.1, 0.8, 0.2])
COMBINED_AND = np.array([0.02, 0.03, 0.0, 0.36, 0.3, 0.49, 0.08, 0.72, 0.0])


@pytest.fixture(scope="session")
def fig_index():
    return IndexSet.from_arrays({("a1", "v1"): D_A1, ("a2", "v2"): D_A2},
                                np.full(9, 100))


@pytest.fixture(scope="session")
def small_table(tmp_path_factory):
    """20k-row clustered synthetic table with bitmap and lossy indexes."""
    path = tmp_path_factory.mktemp("store") / "small.tbl"
    spec = SyntheticSpec(n_records=20_000, n_dims=3, density=0.10,
                         mean_run_length=12.0, seed=5)
    store = generate_clustered(spec, path, block_size=2048)
    index = build_indexes(store, with_bitmaps=True, with_lossy=True)
    return store, index


def tiny_schema(n_dims=2, n_measures=1):
    dims = [DimAttr(f"d{i}", ("0", "1")) for i in range(n_dims)]
    return Schema(dims, [f"m{i}" for i in range(n_measures)])
