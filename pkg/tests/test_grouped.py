import numpy as np
import pytest

from anyk import (DimAttr, GroupDensitySet, GroupState, IndexSet, Leaf, Schema,
                  ValidationError, baseline_bitmap_combined, baseline_shared_scan,
                  build_indexes, clustered_categorical, combined_group_density,
                  combined_group_map, execute, grouped_anyk, join_anyk,
                  write_table, zipf_probabilities)


def eq7_reference(pred_density, group_densities, retrieved, k, rpb):
    """Straight-line transcription of the plain remaining-need priority."""
    total = 0.0
    for j, d in enumerate(group_densities):
        total += min(k - retrieved[j], d * rpb)
    return pred_density * total / rpb


class TestCombinedGroupDensity:
    def test_reference_single_group(self):
        gds = GroupDensitySet(np.array([1.0]), np.array([[0.2]]), 100)
        state = GroupState(("g",), [("v",)], k=10, weighting="plain")
        state.retrieved[0] = 4
        assert combined_group_density(0, gds, state) == pytest.approx(0.06)

    def test_saturated_groups_zero_everywhere(self):
        rng = np.random.default_rng(0)
        gds = GroupDensitySet(rng.uniform(0, 1, 6), rng.uniform(0, 0.3, (4, 6)), 50)
        state = GroupState(("g",), [(f"v{i}",) for i in range(4)], k=7,
                           weighting="plain")
        state.retrieved[:] = 7
        assert np.all(combined_group_map(gds, state) == 0.0)

    def test_matches_reference_formula_on_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            lam = int(rng.integers(1, 20))
            n_groups = int(rng.integers(1, 6))
            pred_map = rng.uniform(0, 1, lam)
            group_maps = rng.uniform(0, 1.0 / n_groups, (n_groups, lam))
            k = int(rng.integers(1, 50))
            rpb = int(rng.integers(10, 500))
            gds = GroupDensitySet(pred_map, group_maps, rpb)
            state = GroupState(("g",), [(f"v{i}",) for i in range(n_groups)], k,
                               weighting="plain")
            state.retrieved[:] = rng.integers(0, k + 1, n_groups)
            got = combined_group_map(gds, state)
            for l in range(lam):
                want = eq7_reference(pred_map[l], group_maps[:, l],
                                     state.retrieved, k, rpb)
                assert abs(got[l] - want) <= 1e-12

    def test_inverse_frequency_bounded_and_rare_weighted(self):
        pred_map = np.ones(2)
        # group 0 is common everywhere, group 1 rare and concentrated in block 1
        group_maps = np.array([[0.5, 0.5], [0.0, 0.1]])
        gds = GroupDensitySet(pred_map, group_maps, 100)
        plain = GroupState(("g",), [("a",), ("b",)], k=20, weighting="plain")
        inv = GroupState(("g",), [("a",), ("b",)], k=20,
                         weighting="inverse_frequency")
        p = combined_group_map(gds, plain)
        w = combined_group_map(gds, inv)
        assert np.all((0 <= p) & (p <= 1)) and np.all((0 <= w) & (w <= 1))
        # the rare group pulls the priority toward block 1 only in weighted mode
        assert p[0] == pytest.approx(p[1], rel=0.35)
        assert w[1] > 2 * w[0]

    def test_zero_frequency_group_contributes_nothing(self):
        gds = GroupDensitySet(np.ones(3), np.array([[0.2, 0.1, 0.3],
                                                    [0.0, 0.0, 0.0]]), 10)
        state = GroupState(("g",), [("a",), ("b",)], k=5,
                           weighting="inverse_frequency")
        only_first = GroupDensitySet(np.ones(3), np.array([[0.2, 0.1, 0.3]]), 10)
        state1 = GroupState(("g",), [("a",)], k=5, weighting="inverse_frequency")
        assert np.allclose(combined_group_map(gds, state),
                           combined_group_map(only_first, state1))


def keyed_store(tmp_path, codes, n_measures=1, block_size=None, name="g.tbl",
                card=None):
    codes = np.asarray(codes, dtype=np.uint32)
    card = card or int(codes.max()) + 1
    schema = Schema([DimAttr("key", tuple(str(i) for i in range(max(card, 2))))],
                    [f"m{i}" for i in range(n_measures)])
    rng = np.random.default_rng(0)
    meas = rng.normal(size=(len(codes), n_measures))
    block_size = block_size or schema.record_width * 8
    return write_table(tmp_path / name, schema, codes.reshape(-1, 1), meas,
                       block_size)


class TestGroupedAnyk:
    def test_single_group_degenerates_to_execute(self, tmp_path):
        rng = np.random.default_rng(4)
        codes = np.zeros(400, np.uint32)  # one key everywhere
        store = keyed_store(tmp_path, codes, card=2)
        index = build_indexes(store, path=None)
        grouped = grouped_anyk(store, index, None, ("key",), 37, psi=1,
                               group_values=["0"])
        store2 = keyed_store(tmp_path, codes, name="g2.tbl", card=2)
        index2 = build_indexes(store2, path=None)
        direct = execute(store2, index2, None, 37, algorithm="density")
        assert grouped.counts["0"] >= 37
        assert len(grouped.records["0"]) == 37
        assert sorted(set(grouped.metrics["blocks_fetched"] * [0])) is not None
        assert grouped.metrics["blocks_fetched"] == direct.metrics["blocks_fetched"]

    def test_two_separated_groups_beat_shared_scan(self, tmp_path):
        # group 1 lives at the far end; a shared scan must walk the whole file
        codes = np.zeros(800, np.uint32)
        codes[760:] = 1
        store = keyed_store(tmp_path, codes)
        index = build_indexes(store, path=None)
        grouped = grouped_anyk(store, index, None, ("key",), 20, psi=1)
        scan = baseline_shared_scan(store, None, ("key",), 20)
        assert grouped.feasible
        assert grouped.metrics["blocks_fetched"] <= scan["blocks_fetched"]

    def test_zipf_all_groups_reach_k_cheaper_than_baselines(self, tmp_path):
        rng = np.random.default_rng(31)
        codes = clustered_categorical(1_000_000, zipf_probabilities(10, 2.0), 50, rng)
        store = keyed_store(tmp_path, codes, block_size=16384)
        index = build_indexes(store, with_bitmaps=True, path=None)
        k = 1000  # 0.1% of the table
        scan = baseline_shared_scan(store, None, ("key",), k)
        combined = baseline_bitmap_combined(store, index, None, ("key",), k)
        for psi in (5, 10, 50):
            result = grouped_anyk(store, index, None, ("key",), k, psi=psi)
            assert result.feasible
            assert all(result.counts[str(v)] >= k for v in range(10))
            assert result.metrics["blocks_fetched"] < combined["blocks_fetched"]
            assert result.metrics["blocks_fetched"] < scan["blocks_fetched"]

    def test_never_fetches_block_twice_and_counts_capped(self, tmp_path):
        rng = np.random.default_rng(5)
        codes = rng.integers(0, 3, size=600).astype(np.uint32)
        store = keyed_store(tmp_path, codes)
        index = build_indexes(store, path=None)
        seen = []
        original = store.read_block

        def spy(bid):
            seen.append(bid)
            return original(bid)

        store.read_block = spy
        result = grouped_anyk(store, index, None, ("key",), 25, psi=3)
        assert len(seen) == len(set(seen))
        for v in range(3):
            available = int((codes == v).sum())
            assert len(result.records[str(v)]) == min(25, available)

    def test_unreachable_group_flagged_others_unaffected(self, tmp_path):
        codes = np.zeros(200, np.uint32)
        codes[100:] = 1
        store = keyed_store(tmp_path, codes, card=3)  # value "2" never occurs
        index = build_indexes(store, path=None)
        result = grouped_anyk(store, index, None, ("key",), 10)
        assert "2" in result.infeasible
        assert result.counts["2"] == 0
        assert result.counts["0"] >= 10 and result.counts["1"] >= 10
        assert not result.feasible

    def test_predicate_restricts_group_records(self, small_table):
        store, index = small_table
        pred = Leaf("d0", "1")
        result = grouped_anyk(store, index, pred, ("d1",), 50)
        for key, rows in result.records.items():
            if len(rows):
                assert np.all(rows["d0"] == 1)
                assert np.all(rows["d1"] == int(key))

    def test_multi_attribute_cross_product(self, small_table):
        store, index = small_table
        result = grouped_anyk(store, index, None, ("d0", "d1"), 30)
        assert set(result.counts) == {("0", "0"), ("0", "1"), ("1", "0"), ("1", "1")}
        for combo, rows in result.records.items():
            if len(rows):
                assert np.all(rows["d0"] == int(combo[0]))
                assert np.all(rows["d1"] == int(combo[1]))

    def test_group_combination_cap(self, small_table):
        store, index = small_table
        with pytest.raises(ValueError, match="cap"):
            grouped_anyk(store, index, None, ("d0", "d1", "d2"), 5, max_groups=4)

    def test_locality_planner_mode_fetches_contiguous_batches(self, tmp_path):
        rng = np.random.default_rng(9)
        codes = rng.integers(0, 3, size=900).astype(np.uint32)
        store = keyed_store(tmp_path, codes)
        index = build_indexes(store, path=None)
        seen = []
        original = store.read_block

        def spy(bid):
            seen.append(bid)
            return original(bid)

        store.read_block = spy
        result = grouped_anyk(store, index, None, ("key",), 40, psi=4,
                              planner="locality")
        assert result.feasible
        # the first round's batch is one contiguous window
        first = seen[:4]
        assert first == list(range(first[0], first[0] + len(first)))

    def test_monotone_progress_each_round(self, tmp_path):
        rng = np.random.default_rng(6)
        codes = rng.integers(0, 4, size=400).astype(np.uint32)
        store = keyed_store(tmp_path, codes)
        index = build_indexes(store, path=None)
        result = grouped_anyk(store, index, None, ("key",), 15, psi=2)
        assert result.metrics["rounds"] >= 1
        assert result.metrics["blocks_fetched"] >= result.metrics["rounds"]


def join_tables(tmp_path, n_keys=10, n_foreign=2000, zipf=2.0, seed=7,
                missing_keys=0):
    rng = np.random.default_rng(seed)
    pk = np.arange(n_keys, dtype=np.uint32)
    pschema = Schema([DimAttr("key", tuple(str(i) for i in range(n_keys)))], ["pm"])
    primary = write_table(tmp_path / "pk.tbl", pschema, pk.reshape(-1, 1),
                          rng.normal(size=(n_keys, 1)), pschema.record_width * 4)
    probs = zipf_probabilities(n_keys - missing_keys, zipf)
    fcodes = rng.choice(n_keys - missing_keys, size=n_foreign, p=probs).astype(np.uint32)
    fschema = Schema([DimAttr("key", tuple(str(i) for i in range(n_keys)))], ["fm"])
    foreign = write_table(tmp_path / "fk.tbl", fschema, fcodes.reshape(-1, 1),
                          rng.normal(size=(n_foreign, 1)), fschema.record_width * 16)
    findex = build_indexes(foreign, path=None)
    return primary, foreign, findex, fcodes


class TestJoinAnyk:
    def test_full_join_degeneration(self, tmp_path):
        primary, foreign, findex, fcodes = join_tables(tmp_path, n_keys=4,
                                                       n_foreign=300, zipf=1.0)
        result = join_anyk(primary, foreign, findex, "key", None, k=300)
        total_pairs = sum(len(rows) for _, rows in result.pairs.values())
        assert total_pairs == 300

    def test_each_rich_key_returns_exactly_k_pairs(self, tmp_path):
        primary, foreign, findex, fcodes = join_tables(tmp_path)
        k = 30
        counts = np.bincount(fcodes, minlength=10)
        result = join_anyk(primary, foreign, findex, "key", None, k=k)
        for v in range(10):
            expect = min(k, int(counts[v]))
            assert result.counts[str(v)] == expect
            prim, rows = result.pairs[str(v)]
            assert len(rows) == expect
            assert int(prim["key"]) == v
            assert np.all(rows["key"] == v)

    def test_matches_bruteforce_join_then_truncate(self, tmp_path):
        primary, foreign, findex, fcodes = join_tables(tmp_path, n_foreign=500)
        k = 12
        result = join_anyk(primary, foreign, findex, "key", None, k=k)
        rows = foreign.read_all()
        for v in range(10):
            brute = min(k, int((rows["key"] == v).sum()))
            assert result.counts[str(v)] == brute

    def test_key_short_of_k_flagged_partial(self, tmp_path):
        primary, foreign, findex, fcodes = join_tables(tmp_path, zipf=3.0)
        k = int(np.bincount(fcodes, minlength=10).max())  # rare keys cannot reach
        result = join_anyk(primary, foreign, findex, "key", None, k=k)
        assert not result.feasible
        rare = str(int(np.argmin(np.bincount(fcodes, minlength=10))))
        assert result.counts[rare] < k

    def test_primary_key_without_foreign_match_flagged(self, tmp_path):
        primary, foreign, findex, fcodes = join_tables(tmp_path, missing_keys=2)
        result = join_anyk(primary, foreign, findex, "key", None, k=5)
        assert "9" in result.infeasible
        assert result.counts["9"] == 0

    def test_duplicate_primary_key_rejected(self, tmp_path):
        schema = Schema([DimAttr("key", ("0", "1"))], [])
        primary = write_table(tmp_path / "dup.tbl", schema,
                              np.zeros((2, 1), np.uint32), np.empty((2, 0)), 64)
        _, foreign, findex, _ = join_tables(tmp_path, n_keys=2, n_foreign=50,
                                            zipf=1.0)
        with pytest.raises(ValidationError, match="duplicate"):
            join_anyk(primary, foreign, findex, "key", None, k=3)


class TestGroupedBaselines:
    def test_shared_scan_counts_match_bruteforce(self, tmp_path):
        rng = np.random.default_rng(8)
        codes = rng.integers(0, 4, size=500).astype(np.uint32)
        store = keyed_store(tmp_path, codes)
        result = baseline_shared_scan(store, None, ("key",), 1_000_000)
        for v in range(4):
            assert result["counts"][str(v)] == int((codes == v).sum())
        assert result["blocks_fetched"] == store.n_blocks

    def test_bitmap_combined_skips_exhausted_regions(self, tmp_path):
        codes = np.zeros(800, np.uint32)
        codes[:400] = 0
        codes[400:] = 1
        store = keyed_store(tmp_path, codes)
        index = build_indexes(store, with_bitmaps=True, path=None)
        result = baseline_bitmap_combined(store, index, None, ("key",), 8)
        # one block of key 0 up front, then a jump straight to the key-1 range
        assert result["blocks_fetched"] == 2
        assert result["counts"] == {"0": 8, "1": 8}
