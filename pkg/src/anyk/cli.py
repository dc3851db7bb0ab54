"""Command-line surface: gen, ingest, index, query, estimate, join, profile, bench.

Exit codes: 0 ok, 2 parse error, 3 infeasible query, 4 budget or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import estimate as est_mod
from .costmodel import DeviceProfile, profile_device
from .errors import (AnykError, InfeasibleError, PlanBudgetError,
                     QueryParseError, UnknownValueError)
from .grouped import grouped_anyk, join_anyk
from .index import IndexSet, build_indexes
from .query_lang import parse_query
from .storage import (DEFAULT_BLOCK_SIZE, BlockStore, DimAttr, Schema,
                      SyntheticSpec, generate_clustered, ingest_csv)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_BUDGET_IO = 4


def _common(parser):
    parser.add_argument("--table", help="path to the table file")
    parser.add_argument("--index", dest="index_path", help="path to the index file")
    parser.add_argument("--profile", default="hdd",
                        help="device profile: hdd, ssd, or a profile JSON path")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=("json", "csv", "text"), default="json")


def _load_profile(spec: str) -> DeviceProfile:
    if spec == "hdd":
        return DeviceProfile.hdd_default()
    if spec == "ssd":
        return DeviceProfile.ssd_default()
    return DeviceProfile.from_json(Path(spec).read_text())


def _open_table(args) -> BlockStore:
    if not args.table:
        raise AnykError("--table is required")
    return BlockStore.open(args.table)


def _open_index(args, store) -> IndexSet:
    path = Path(args.index_path) if args.index_path else Path(store.path).with_suffix(".idx")
    if not path.exists():
        raise AnykError(f"no index at {path}; run the `index` subcommand first")
    return IndexSet.load(path, store.schema)


def _emit(args, payload: dict):
    if args.format == "text":
        for key, value in payload.items():
            print(f"{key}: {value}")
    elif args.format == "csv":
        import csv as csv_mod
        writer = csv_mod.writer(sys.stdout)
        writer.writerow(payload.keys())
        writer.writerow(v if np.isscalar(v) else json.dumps(v, default=str)
                        for v in payload.values())
    else:
        print(json.dumps(payload, indent=2, default=str))


def _cmd_gen(args):
    spec = SyntheticSpec(
        n_records=args.rows, n_dims=args.dims, density=args.density,
        mean_run_length=args.run_length,
        measures=[(0.0, 1.0), (100.0, 25.0)][: args.measures], seed=args.seed)
    store = generate_clustered(spec, args.out, block_size=args.block_size)
    _emit(args, {"table": str(store.path), "records": store.total_records,
                 "blocks": store.n_blocks, "records_per_block": store.records_per_block})
    return EXIT_OK


def _cmd_ingest(args):
    raw = json.loads(Path(args.schema).read_text())
    dims = [DimAttr(d["name"], tuple(d.get("values", ())), d.get("cardinality", 0))
            for d in raw["dimensions"]]
    schema = Schema(dims, raw.get("measures", []), frozen=raw.get("frozen", False))
    store = ingest_csv(args.csv, schema, block_size=args.block_size, out_path=args.out)
    _emit(args, {"table": str(store.path), "records": store.total_records,
                 "blocks": store.n_blocks})
    return EXIT_OK


def _cmd_index(args):
    store = _open_table(args)
    out = args.out or Path(store.path).with_suffix(".idx")
    index = build_indexes(store, with_bitmaps=args.with_bitmaps,
                          with_lossy=args.with_lossy, path=out)
    payload = {"index": str(out), "entries": len(index.maps)}
    payload.update(index.memory_breakdown())
    _emit(args, payload)
    return EXIT_OK


def _cmd_query(args):
    store = _open_table(args)
    index = _open_index(args, store)
    profile = _load_profile(args.profile)
    ast = parse_query(args.query)
    ast.algorithm = args.algorithm
    if ast.kind == "estimate":
        return _run_estimate(args, store, index, ast)
    if ast.group_by:
        result = grouped_anyk(store, index, ast.predicate, ast.group_by, ast.k,
                              psi=args.psi, planner=args.algorithm
                              if args.algorithm in ("density", "locality") else "density",
                              profile=profile)
        payload = dict(result.metrics)
        payload["per_group_counts"] = result.counts
        payload["infeasible_groups"] = result.infeasible
        _emit(args, payload)
        return EXIT_OK if result.feasible else EXIT_INFEASIBLE
    result = bench_mod.run_algorithm(store, index, ast.predicate, ast.k,
                                     args.algorithm, profile)
    _emit(args, result.metrics)
    if args.show and len(result.records):
        for row in result.records[: args.show]:
            print(row)
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def _run_estimate(args, store, index, ast, agg=None, measure=None):
    agg = agg or (ast.aggregate[0] if ast.aggregate else "AVG")
    measure = measure or (ast.aggregate[1] if ast.aggregate else store.schema.measures[0])
    alpha = args.alpha if args.alpha is not None else (ast.alpha or 0.1)
    estimator = args.estimator or ast.estimator or "ht"
    k = args.k or 1000
    planner = args.algorithm if args.algorithm in ("density", "locality", "io", "hybrid") \
        else "density"
    group_attr = ast.group_by[0] if ast.group_by else None
    t0 = time.perf_counter()
    store.reset_blocks_fetched()

    def one(pred):
        design, aggregates = est_mod.two_phase_sample(
            index, pred, k, alpha, planner, store,
            measure=measure, seed=args.seed)
        valid = index.estimate_valid_count(pred)
        rep = est_mod.estimate_report(design, aggregates, valid,
                                      estimator=estimator, variance_mode="plugin")
        value = rep.tau_hat if agg == "SUM" else rep.mu_hat
        variance = rep.var_tau if agg == "SUM" else rep.var_mu
        return {"estimate": value, "variance": variance,
                "estimator": estimator, "valid_count_estimate": valid,
                "n_planned_blocks": rep.n_planned, "n_random_blocks": rep.n_random,
                "variance_mode": rep.variance_mode}

    from .predicate import And, Leaf
    if group_attr is None:
        payload = one(ast.predicate)
    else:
        groups = {}
        for value in store.schema.dim(group_attr).values:
            leaf = Leaf(group_attr, value)
            pred = leaf if ast.predicate is None else And(ast.predicate, leaf)
            try:
                groups[value] = one(pred)
            except InfeasibleError:
                groups[value] = {"estimate": None, "variance": None, "infeasible": True}
        payload = {"groups": groups}
    payload["aggregate"] = f"{agg}({measure})"
    payload["alpha"] = alpha
    payload["k"] = k
    payload["blocks_fetched"] = store.blocks_fetched
    payload["elapsed"] = (time.perf_counter() - t0) * 1000.0
    _emit(args, payload)
    return EXIT_OK


def _cmd_estimate(args):
    store = _open_table(args)
    index = _open_index(args, store)
    if args.query:
        ast = parse_query(args.query)
    else:
        from .query_lang import QueryAst
        pred = None
        if args.where:
            inner = parse_query(f"SELECT ANY-K(1) FROM t WHERE {args.where}")
            pred = inner.predicate
        ast = QueryAst("estimate", args.table or "t", predicate=pred)
    return _run_estimate(args, store, index, ast, agg=args.agg, measure=args.measure)


def _cmd_join(args):
    primary = BlockStore.open(args.primary)
    foreign = BlockStore.open(args.foreign)
    index_path = Path(args.index_path) if args.index_path else Path(foreign.path).with_suffix(".idx")
    if not index_path.exists():
        raise AnykError(f"no index at {index_path}; run the `index` subcommand on the foreign table first")
    index = IndexSet.load(index_path, foreign.schema)
    pred = None
    if args.where:
        pred = parse_query(f"SELECT ANY-K(1) FROM t WHERE {args.where}").predicate
    result = join_anyk(primary, foreign, index, args.on, pred, args.k,
                       psi=args.psi, planner=args.algorithm
                       if args.algorithm in ("density", "locality") else "density")
    payload = dict(result.metrics)
    payload["per_key_counts"] = result.counts
    payload["infeasible_keys"] = result.infeasible
    _emit(args, payload)
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def _cmd_profile(args):
    store = _open_table(args)
    prof = profile_device(store, samples=args.samples)
    out = args.out or "device_profile.json"
    Path(out).write_text(prof.to_json())
    _emit(args, {"profile": out, "seq_ms": prof.seq_ms,
                 "plateau_ms": prof.plateau_ms, "near_limit": prof.near_limit})
    return EXIT_OK


def _cmd_bench(args):
    store = _open_table(args)
    index = _open_index(args, store)
    config = json.loads(Path(args.config).read_text())
    report = bench_mod.run_bench(store, index, config, _load_profile(args.profile))
    prefix = args.out or "bench_report"
    report.write_csv(f"{prefix}.csv")
    report.write_json(f"{prefix}.json")
    if args.format == "text":
        for row in report.rows:
            print(row)
    else:
        print(json.dumps({"rows": len(report.rows), "csv": f"{prefix}.csv",
                          "json": f"{prefix}.json"}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anyk",
                                     description="Block-skipping any-k query engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a clustered synthetic table")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=1_000_000)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--density", type=float, default=0.10)
    p.add_argument("--run-length", type=float, default=8.0)
    p.add_argument("--measures", type=int, default=2)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("ingest", help="load a CSV into a packed table file")
    _common(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True, help="schema JSON path")
    p.add_argument("--out")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("index", help="build density maps (and optional bitmaps)")
    _common(p)
    p.add_argument("--out")
    p.add_argument("--with-bitmaps", action="store_true")
    p.add_argument("--with-lossy", action="store_true")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="run an ANY-K query")
    _common(p)
    p.add_argument("query")
    p.add_argument("--algorithm", default="density",
                   choices=("density", "locality", "io", "hybrid",
                            "bitmap", "lossy", "disk"))
    p.add_argument("--psi", type=int, default=10)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--estimator", choices=("ht", "ratio"))
    p.add_argument("--show", type=int, default=0, help="print this many result rows")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("estimate", help="two-phase aggregate estimation")
    _common(p)
    p.add_argument("query", nargs="?")
    p.add_argument("--where")
    p.add_argument("--agg", type=str.upper, choices=("AVG", "SUM"))
    p.add_argument("--measure")
    p.add_argument("--alpha", type=float)
    p.add_argument("--estimator", choices=("ht", "ratio"))
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--algorithm", default="density",
                   choices=("density", "locality", "io", "hybrid"))
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("join", help="any-k per join value over a key-foreign-key join")
    _common(p)
    p.add_argument("--primary", required=True)
    p.add_argument("--foreign", required=True)
    p.add_argument("--on", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--psi", type=int, default=10)
    p.add_argument("--where")
    p.add_argument("--algorithm", default="density")
    p.set_defaults(func=_cmd_join)

    p = sub.add_parser("profile", help="measure a device profile")
    _common(p)
    p.add_argument("--out")
    p.add_argument("--samples", type=int, default=5)
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("bench", help="run the benchmark grid from a config file")
    _common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output path prefix")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (QueryParseError, UnknownValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PlanBudgetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET_IO
    except AnykError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET_IO


if __name__ == "__main__":
    sys.exit(main())
