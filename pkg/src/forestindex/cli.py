"""Command line front end.

Commands: ``build`` turns a relation file into a snapshot, ``query``
renders prompts from a snapshot, ``bench`` and ``ablate`` drive the
benchmark harness, ``fprate`` measures raw fingerprint collisions.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 bad data, 5 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback

from .baselines import bloom_build, bloom_locate, improved_bloom_locate, naive_locate
from .bench import (
    ALGORITHMS,
    build_cuckoo_index,
    fp_rate_experiment,
    gen_workload,
    load_config,
    run_benchmark,
    synth_forest,
    write_report,
)
from .cuckoo import CuckooIndex, ExpansionFailedError
from .forest import (
    Forest,
    MultipleParentsError,
    RelationFormatError,
    Tree,
    canonical_label,
    filter_relations,
    build_forest,
    hierarchy_chain,
    load_relations,
)
from .retrieval import (
    DEFAULT_SYSTEM_PROMPT,
    DEFAULT_TEMPLATE,
    BadTemplateError,
    ContextBundle,
    EntityContext,
    Occurrence,
    StaleAddressError,
    generate_context,
    render_prompt,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_INTERNAL = 5

SNAPSHOT_FORMAT = "forestindex-snapshot-v1"


def _forest_to_dict(forest: Forest) -> dict:
    return {
        "trees": [
            {
                "labels": tree.labels,
                "parents": tree.parents,
                "root": tree.root,
                "source_id": tree.source_id,
            }
            for tree in forest.trees
        ]
    }


def _forest_from_dict(data: dict) -> Forest:
    trees = []
    for td in data["trees"]:
        labels = list(td["labels"])
        parents = [None if p is None else int(p) for p in td["parents"]]
        children: list[list[int]] = [[] for _ in labels]
        for node, parent in enumerate(parents):
            if parent is not None:
                children[parent].append(node)
        trees.append(Tree(labels, parents, children, int(td["root"]), td.get("source_id")))
    return Forest(trees)


def write_snapshot(path: str, forest: Forest, index: CuckooIndex) -> None:
    bundle = {
        "format": SNAPSHOT_FORMAT,
        "forest": _forest_to_dict(forest),
        "index": index.to_snapshot(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle, fh, ensure_ascii=False, separators=(",", ":"))


def read_snapshot(path: str) -> tuple[Forest, CuckooIndex]:
    with open(path, "r", encoding="utf-8") as fh:
        bundle = json.load(fh)
    if bundle.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"unsupported snapshot format {bundle.get('format')!r}")
    return _forest_from_dict(bundle["forest"]), CuckooIndex.from_snapshot(bundle["index"])


def _cmd_build(args: argparse.Namespace) -> int:
    tuples = load_relations(args.input)
    forest = build_forest(filter_relations(tuples))
    index = build_cuckoo_index(forest, seed=args.seed)
    write_snapshot(args.snapshot, forest, index)
    stats = index.stats()
    print(
        f"built {len(forest.trees)} trees, {forest.total_nodes()} nodes, "
        f"{stats.entry_count} entities, load {stats.load_factor:.4f} "
        f"-> {args.snapshot}"
    )
    return EXIT_OK


def _baseline_bundle(
    forest: Forest, algo: str, entities: list[str], n: int, query_text: str
) -> ContextBundle:
    # Baseline retrievers fetch addresses; hierarchy context then comes
    # straight from the forest, like the cuckoo path but without an index.
    ann = None
    if algo in ("bloom", "bloom2"):
        ann = bloom_build(forest)
    seen: set[str] = set()
    contexts = []
    missing = []
    for raw in entities:
        label = canonical_label(raw)
        if not label or label in seen:
            continue
        seen.add(label)
        if algo == "naive":
            addrs = naive_locate(forest, label)
        elif algo == "bloom":
            addrs = bloom_locate(ann, label)
        else:
            addrs = improved_bloom_locate(ann, label)
        if not addrs:
            missing.append(label)
            continue
        occurrences = tuple(
            Occurrence(addr, *map(tuple, hierarchy_chain(forest, addr, n)))
            for addr in addrs
        )
        contexts.append(EntityContext(label, occurrences))
    return ContextBundle(query_text, tuple(contexts), tuple(missing))


def _cmd_query(args: argparse.Namespace) -> int:
    forest, index = read_snapshot(args.snapshot)
    template = DEFAULT_TEMPLATE
    if args.template:
        with open(args.template, "r", encoding="utf-8") as fh:
            template = fh.read().strip("\n")
    if args.queries == "-":
        lines = sys.stdin.read().splitlines()
    else:
        with open(args.queries, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    prompts: list[str] = []
    for line in lines:
        if not line.strip():
            continue
        entities = [part for part in line.split("\t") if part.strip()]
        if args.algo == "cuckoo":
            bundle = generate_context(index, forest, entities, n=args.n, query_text=line)
        else:
            bundle = _baseline_bundle(forest, args.algo, entities, args.n, line)
        prompts.append(render_prompt(bundle, args.system_prompt, template))
    text = "\n---\n".join(prompts) + ("\n" if prompts else "")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _apply_overrides(args: argparse.Namespace):
    config = load_config(args.config)
    rounds = args.rounds if args.rounds is not None else config.rounds
    algorithms = config.algorithms
    if args.algo:
        algorithms = tuple(args.algo)
    forest_spec = config.forest
    workload_spec = config.workload
    index_seed = config.index_seed
    if args.seed is not None:
        # One seed drives every random choice: forest shape, workload
        # sampling, and victim selection inside the index.
        forest_spec = dataclasses.replace(forest_spec, seed=args.seed)
        workload_spec = dataclasses.replace(workload_spec, seed=args.seed + 1)
        index_seed = args.seed + 2
    return config, forest_spec, workload_spec, rounds, algorithms, index_seed


def _cmd_bench(args: argparse.Namespace) -> int:
    config, forest_spec, workload_spec, rounds, algorithms, index_seed = (
        _apply_overrides(args)
    )
    forest = synth_forest(forest_spec)
    workload = gen_workload(forest, workload_spec)
    report = run_benchmark(
        forest,
        workload,
        algorithms=algorithms,
        rounds=rounds,
        sorting_enabled=not args.no_sort,
        bits_per_element=config.bits_per_element,
        hash_count=config.hash_count,
        index_seed=index_seed,
    )
    write_report(report, args.output)
    for algorithm in algorithms:
        mean_ns = report.mean_time_ns(algorithm)
        ok = all(r.correct for r in report.rows if r.algorithm == algorithm)
        print(
            f"{algorithm}: mean {mean_ns / 1e6:.3f} ms/query over {rounds} rounds, "
            f"correct={'yes' if ok else 'NO'}"
        )
    print(f"report -> {args.output}")
    return EXIT_OK if report.all_correct() else EXIT_INTERNAL


def _cmd_ablate(args: argparse.Namespace) -> int:
    config, forest_spec, workload_spec, rounds, algorithms, index_seed = (
        _apply_overrides(args)
    )
    if "cuckoo" not in algorithms:
        algorithms = algorithms + ("cuckoo",)
    forest = synth_forest(forest_spec)
    workload = gen_workload(forest, workload_spec)
    base = args.output[:-4] if args.output.endswith(".csv") else args.output
    paths = {}
    for label, sorting in (("sorted", True), ("unsorted", False)):
        report = run_benchmark(
            forest,
            workload,
            algorithms=("cuckoo",),
            rounds=rounds,
            sorting_enabled=sorting,
            bits_per_element=config.bits_per_element,
            hash_count=config.hash_count,
            index_seed=index_seed,
        )
        path = f"{base}.{label}.csv"
        write_report(report, path)
        paths[label] = path
        first = report.mean_time_ns("cuckoo", rounds=slice(0, 1))
        rest = (
            report.mean_time_ns("cuckoo", rounds=slice(1, None))
            if rounds > 1
            else float("nan")
        )
        print(
            f"{label}: round 1 mean {first / 1e3:.2f} us/query, "
            f"rounds 2+ mean {rest / 1e3:.2f} us/query -> {path}"
        )
    return EXIT_OK


def _cmd_fprate(args: argparse.Namespace) -> int:
    result = fp_rate_experiment(
        bucket_count=args.bucket_count,
        entity_count=args.entities,
        probe_count=args.probes,
        seed=args.seed,
    )
    print(
        f"raw fingerprint matches: {result.raw_matches}/{result.probe_count} "
        f"= {result.raw_rate:.6f}"
    )
    print(
        f"expected (all slots full): {result.expected_full_buckets:.6f} "
        f"(sigma {result.sigma_full_buckets:.6f})"
    )
    print(
        f"expected (at load {result.load_factor:.4f}): "
        f"{result.expected_at_load:.6f} (sigma {result.sigma_at_load:.6f})"
    )
    print(f"wrong lookup results after label check: {result.wrong_results}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(result), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forestindex",
        description="Entity lookup across hierarchy-tree forests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="ingest relations, write a snapshot")
    p_build.add_argument("--input", required=True, help="relation file (tsv)")
    p_build.add_argument("--snapshot", required=True, help="snapshot output path")
    p_build.add_argument("--seed", type=int, default=0)
    p_build.set_defaults(func=_cmd_build)

    p_query = sub.add_parser("query", help="render prompts for query entities")
    p_query.add_argument("--snapshot", required=True)
    p_query.add_argument(
        "--queries",
        default="-",
        help="query file, one query per line, tab-separated entities ('-' = stdin)",
    )
    p_query.add_argument("--output", default=None, help="default stdout")
    p_query.add_argument("--n", type=int, default=3, help="hierarchy levels per side")
    p_query.add_argument("--algo", choices=ALGORITHMS, default="cuckoo")
    p_query.add_argument("--template", default=None, help="template file")
    p_query.add_argument("--system-prompt", default=DEFAULT_SYSTEM_PROMPT)
    p_query.set_defaults(func=_cmd_query)

    p_bench = sub.add_parser("bench", help="run the benchmark harness")
    p_bench.add_argument("--config", required=True, help="key=value config file")
    p_bench.add_argument("--output", required=True, help="CSV report path")
    p_bench.add_argument("--rounds", type=int, default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument(
        "--algo", action="append", choices=ALGORITHMS, default=None,
        help="restrict to an algorithm (repeatable)",
    )
    p_bench.add_argument("--no-sort", action="store_true")
    p_bench.set_defaults(func=_cmd_bench)

    p_ablate = sub.add_parser(
        "ablate", help="benchmark cuckoo with sorting on and off"
    )
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--output", required=True, help="base CSV path")
    p_ablate.add_argument("--rounds", type=int, default=None)
    p_ablate.add_argument("--seed", type=int, default=None)
    p_ablate.add_argument("--algo", action="append", choices=ALGORITHMS, default=None)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_fp = sub.add_parser("fprate", help="measure raw fingerprint collisions")
    p_fp.add_argument("--bucket-count", type=int, default=1024)
    p_fp.add_argument("--entities", type=int, default=3148)
    p_fp.add_argument("--probes", type=int, default=100000)
    p_fp.add_argument("--seed", type=int, default=7)
    p_fp.add_argument("--output", default=None, help="optional JSON result path")
    p_fp.set_defaults(func=_cmd_fprate)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        RelationFormatError,
        MultipleParentsError,
        StaleAddressError,
        BadTemplateError,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ExpansionFailedError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
