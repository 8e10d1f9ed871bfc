"""Benchmark harness: synthetic forests, skewed workloads, timed retrieval.

Timing covers only the locate step (query labels in, address lists out).
Structure construction, result verification, and reporting all happen
outside the timed region. Every timed result is checked against the
exact label index, so a fast-but-wrong retriever cannot score.
"""

from __future__ import annotations

import csv
import random
import time
from dataclasses import dataclass, field
from math import sqrt
from statistics import mean

from .baselines import (
    DEFAULT_BITS_PER_ELEMENT,
    DEFAULT_HASH_COUNT,
    BloomAnnotatedForest,
    bloom_build,
    bloom_locate_stats,
    improved_bloom_locate_stats,
    naive_locate_stats,
)
from .cuckoo import (
    BUCKET_SLOTS,
    FINGERPRINT_MASK,
    CuckooIndex,
    InsertResult,
)
from .forest import Forest, NodeAddress, Tree, canonical_label

ALGORITHMS = ("naive", "bloom", "bloom2", "cuckoo")


@dataclass(frozen=True)
class ForestSpec:
    """Shape of a synthetic forest.

    Trees are uniformly random recursive trees: each new node picks its
    parent uniformly among nodes that still have fewer than max_branching
    children. Labels are drawn from a fixed vocabulary; with probability
    cross_tree_overlap a node instead reuses a label already assigned
    somewhere, picked proportionally to how often it already occurs. That
    rich-get-richer rule reproduces the heavy-tailed entity frequencies
    of extracted corpora, where a few entities recur across many trees.
    """

    tree_count: int
    nodes_per_tree: int
    max_branching: int = 3
    vocabulary_size: int = 50000
    cross_tree_overlap: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class WorkloadSpec:
    """Query workload: fixed-size entity lists sampled from the forest.

    Labels are ranked by occurrence count (ties lexicographic) and drawn
    with replacement with probability proportional to rank**-skew. Zero
    skew is uniform over distinct present labels.
    """

    query_count: int
    entities_per_query: int
    skew: float = 0.0
    seed: int = 0


def synth_forest(spec: ForestSpec) -> Forest:
    """Deterministically generate a forest matching the spec."""
    if spec.tree_count < 1 or spec.nodes_per_tree < 1:
        raise ValueError("tree_count and nodes_per_tree must be positive")
    if spec.max_branching < 1:
        raise ValueError("max_branching must be positive")
    if not (0.0 <= spec.cross_tree_overlap <= 1.0):
        raise ValueError("cross_tree_overlap must be in [0, 1]")
    rng = random.Random(spec.seed)
    width = len(str(max(spec.vocabulary_size - 1, 1)))
    assigned: list[str] = []  # every assignment so far, for weighted reuse
    trees: list[Tree] = []
    for t in range(spec.tree_count):
        n = spec.nodes_per_tree
        parents: list[int | None] = [None] * n
        children: list[list[int]] = [[] for _ in range(n)]
        open_parents = [0]
        for node in range(1, n):
            slot = rng.randrange(len(open_parents))
            parent = open_parents[slot]
            parents[node] = parent
            children[parent].append(node)
            if len(children[parent]) >= spec.max_branching:
                open_parents[slot] = open_parents[-1]
                open_parents.pop()
            open_parents.append(node)
        labels: list[str] = []
        for _ in range(n):
            if assigned and rng.random() < spec.cross_tree_overlap:
                label = assigned[rng.randrange(len(assigned))]
            else:
                label = f"entity_{rng.randrange(spec.vocabulary_size):0{width}d}"
            labels.append(label)
            assigned.append(label)
        trees.append(Tree(labels, parents, children, root=0, source_id=t))
    return Forest(trees)


def label_popularity(forest: Forest) -> list[tuple[str, int]]:
    """Distinct labels with occurrence counts, most frequent first."""
    index = forest.label_index()
    return sorted(
        ((label, len(addrs)) for label, addrs in index.items()),
        key=lambda item: (-item[1], item[0]),
    )


def gen_workload(forest: Forest, spec: WorkloadSpec) -> list[list[str]]:
    """Sample queries of present labels, Zipf-weighted by popularity rank."""
    if spec.query_count < 1 or spec.entities_per_query < 1:
        raise ValueError("query_count and entities_per_query must be positive")
    if spec.skew < 0:
        raise ValueError("skew must be non-negative")
    ranked = [label for label, _count in label_popularity(forest)]
    if not ranked:
        raise ValueError("forest has no labels")
    rng = random.Random(spec.seed)
    cum_weights: list[float] = []
    total = 0.0
    for rank in range(1, len(ranked) + 1):
        total += rank ** -spec.skew
        cum_weights.append(total)
    return [
        rng.choices(ranked, cum_weights=cum_weights, k=spec.entities_per_query)
        for _ in range(spec.query_count)
    ]


def build_cuckoo_index(
    forest: Forest,
    sort_on_touch: bool = True,
    seed: int = 0,
    bucket_count: int | None = None,
) -> CuckooIndex:
    """Index every distinct forest label with its full address list."""
    oracle = forest.label_index()
    if bucket_count is None:
        bucket_count = 1024
    index = CuckooIndex(
        bucket_count=bucket_count, sort_on_touch=sort_on_touch, seed=seed
    )
    for label, addrs in oracle.items():
        result = index.insert(label, addrs)
        if result != InsertResult.INSERTED:
            raise RuntimeError(f"index build failed for {label!r}: {result}")
    return index


@dataclass(frozen=True)
class BenchRow:
    algorithm: str
    tree_count: int
    entities_per_query: int
    round: int
    mean_time_ns: int
    p95_time_ns: int
    visits: int
    correct: bool


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def mean_time_ns(self, algorithm: str, rounds: slice | None = None) -> float:
        """Mean of per-round mean times for one algorithm."""
        times = [r.mean_time_ns for r in self.rows if r.algorithm == algorithm]
        if rounds is not None:
            times = times[rounds]
        if not times:
            raise ValueError(f"no rows for algorithm {algorithm!r}")
        return mean(times)

    def all_correct(self) -> bool:
        return all(r.correct for r in self.rows)


def _drive_naive(forest: Forest):
    def run(labels: list[str]):
        results = []
        visits = 0
        seen: set[str] = set()
        for label in labels:
            if label in seen:
                continue
            seen.add(label)
            addrs, st = naive_locate_stats(forest, label)
            visits += st.visits
            results.append((label, addrs))
        return results, visits

    return run


def _drive_bloom(ann: BloomAnnotatedForest, improved: bool):
    locate = improved_bloom_locate_stats if improved else bloom_locate_stats

    def run(labels: list[str]):
        results = []
        work = 0
        seen: set[str] = set()
        for label in labels:
            if label in seen:
                continue
            seen.add(label)
            addrs, st = locate(ann, label)
            work += st.visits + st.probes
            results.append((label, addrs))
        return results, work

    return run


def _drive_cuckoo(index: CuckooIndex):
    def run(labels: list[str]):
        results = []
        probes_before = index.slot_probes
        seen: set[str] = set()
        for label in labels:
            if label in seen:
                continue
            seen.add(label)
            head = index.lookup_and_touch(canonical_label(label))
            results.append((label, head.addresses() if head is not None else []))
        return results, index.slot_probes - probes_before

    return run


def run_benchmark(
    forest: Forest,
    workload: list[list[str]],
    algorithms: tuple[str, ...] = ALGORITHMS,
    rounds: int = 100,
    sorting_enabled: bool = True,
    bits_per_element: int = DEFAULT_BITS_PER_ELEMENT,
    hash_count: int = DEFAULT_HASH_COUNT,
    index_seed: int = 0,
) -> BenchReport:
    """Time each algorithm over the workload for the given rounds.

    Each query is timed individually with the monotonic clock; a round is
    one pass over the whole workload. Per round and algorithm the report
    records mean and p95 query time, total work counters, and whether
    every returned address list matched the exact index. Queries are
    deduplicated inside the timed region, identically for every
    algorithm.
    """
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"unknown algorithms: {sorted(unknown)}")
    if rounds < 1:
        raise ValueError("rounds must be positive")
    if not workload:
        raise ValueError("workload is empty")

    oracle = forest.label_index()
    drivers = {}
    if "naive" in algorithms:
        drivers["naive"] = _drive_naive(forest)
    if "bloom" in algorithms or "bloom2" in algorithms:
        ann = bloom_build(forest, bits_per_element, hash_count)
        if "bloom" in algorithms:
            drivers["bloom"] = _drive_bloom(ann, improved=False)
        if "bloom2" in algorithms:
            drivers["bloom2"] = _drive_bloom(ann, improved=True)
    if "cuckoo" in algorithms:
        index = build_cuckoo_index(forest, sort_on_touch=sorting_enabled, seed=index_seed)
        drivers["cuckoo"] = _drive_cuckoo(index)

    expected = {
        label: oracle.get(canonical_label(label), [])
        for query in workload
        for label in query
    }

    tree_count = len(forest.trees)
    entities_per_query = len(workload[0])
    clock = time.perf_counter_ns
    # Rounds are interleaved across algorithms so that drift in machine
    # load lands on every algorithm equally rather than biasing whichever
    # one happened to run last.
    rows_by_algorithm: dict[str, list[BenchRow]] = {a: [] for a in algorithms}
    for round_no in range(1, rounds + 1):
        for algorithm in algorithms:
            drive = drivers[algorithm]
            times: list[int] = []
            round_work = 0
            correct = True
            for query in workload:
                t0 = clock()
                results, work = drive(query)
                times.append(clock() - t0)
                round_work += work
                for label, addrs in results:
                    if list(addrs) != expected[label]:
                        correct = False
            times.sort()
            p95 = times[min(len(times) - 1, int(0.95 * len(times)))]
            rows_by_algorithm[algorithm].append(
                BenchRow(
                    algorithm=algorithm,
                    tree_count=tree_count,
                    entities_per_query=entities_per_query,
                    round=round_no,
                    mean_time_ns=int(mean(times)),
                    p95_time_ns=int(p95),
                    visits=round_work,
                    correct=correct,
                )
            )
    report = BenchReport()
    for algorithm in algorithms:
        report.rows.extend(rows_by_algorithm[algorithm])
    return report


_CSV_HEADER = [
    "algorithm",
    "tree_count",
    "entities_per_query",
    "round",
    "mean_time_ns",
    "p95_time_ns",
    "visits",
    "correct",
]


def write_report(report: BenchReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for row in report.rows:
            writer.writerow(
                [
                    row.algorithm,
                    row.tree_count,
                    row.entities_per_query,
                    row.round,
                    row.mean_time_ns,
                    row.p95_time_ns,
                    row.visits,
                    "true" if row.correct else "false",
                ]
            )


def read_report(path: str) -> BenchReport:
    report = BenchReport()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_HEADER:
            raise ValueError(f"unexpected report header: {header}")
        for row in reader:
            report.rows.append(
                BenchRow(
                    algorithm=row[0],
                    tree_count=int(row[1]),
                    entities_per_query=int(row[2]),
                    round=int(row[3]),
                    mean_time_ns=int(row[4]),
                    p95_time_ns=int(row[5]),
                    visits=int(row[6]),
                    correct=row[7] == "true",
                )
            )
    return report


@dataclass(frozen=True)
class FpRateResult:
    """Raw fingerprint collision measurement against analytic expectation.

    expected_full_buckets is the rate the formula 1 - (1 - 1/4095)^8
    predicts when all eight probed slots are occupied; expected_at_load
    scales the exponent by the measured load factor, which is what the
    overall rate tracks when the table is not saturated. The full_pair_*
    fields restrict the measurement to probes whose two candidate
    buckets were actually full, the population the eight-slot formula
    describes exactly. Sigmas are binomial standard deviations of the
    corresponding rate estimate.
    """

    probe_count: int
    raw_matches: int
    raw_rate: float
    wrong_results: int
    load_factor: float
    expected_full_buckets: float
    expected_at_load: float
    sigma_full_buckets: float
    sigma_at_load: float
    full_pair_probes: int
    full_pair_matches: int
    full_pair_rate: float
    sigma_full_pairs: float


def fp_rate_experiment(
    bucket_count: int = 1024,
    entity_count: int = 3148,
    probe_count: int = 100000,
    seed: int = 7,
) -> FpRateResult:
    """Measure absent-key fingerprint matches at a fixed table geometry.

    Inserts entity_count random distinct labels (expansion disabled so
    the geometry holds), probes with labels guaranteed absent, and counts
    how often a fingerprint matched before the label check rejected it.
    Also confirms the label check rejected every one of them: the
    wrong_results field counts absent-key lookups that returned an entry.
    """
    rng = random.Random(seed)
    index = CuckooIndex(bucket_count=bucket_count, expansion_enabled=False, seed=seed)
    inserted = 0
    while inserted < entity_count:
        label = f"member_{rng.getrandbits(48):012x}"
        result = index.insert(label, [NodeAddress(0, inserted)])
        if result == InsertResult.INSERTED:
            inserted += 1
        elif result == InsertResult.FAILED:
            raise RuntimeError(
                f"table filled up after {inserted} of {entity_count} inserts"
            )
    raw_matches = 0
    wrong = 0
    full_slots = 2 * BUCKET_SLOTS
    full_probes = 0
    full_matches = 0
    for i in range(probe_count):
        probe = f"absent_{i:09d}"
        matched = index.raw_fingerprint_match(probe)
        if matched:
            raw_matches += 1
        if index.candidate_fill(probe) == full_slots:
            full_probes += 1
            if matched:
                full_matches += 1
        if index.lookup(probe) is not None:
            wrong += 1
    load = index.load_factor()
    p_full = 1.0 - (1.0 - 1.0 / FINGERPRINT_MASK) ** full_slots
    p_load = 1.0 - (1.0 - 1.0 / FINGERPRINT_MASK) ** (full_slots * load)
    return FpRateResult(
        probe_count=probe_count,
        raw_matches=raw_matches,
        raw_rate=raw_matches / probe_count,
        wrong_results=wrong,
        load_factor=load,
        expected_full_buckets=p_full,
        expected_at_load=p_load,
        sigma_full_buckets=sqrt(p_full * (1.0 - p_full) / probe_count),
        sigma_at_load=sqrt(p_load * (1.0 - p_load) / probe_count),
        full_pair_probes=full_probes,
        full_pair_matches=full_matches,
        full_pair_rate=full_matches / full_probes if full_probes else 0.0,
        sigma_full_pairs=(
            sqrt(p_full * (1.0 - p_full) / full_probes) if full_probes else 0.0
        ),
    )


_CONFIG_KEYS = {
    "tree_count": int,
    "nodes_per_tree": int,
    "max_branching": int,
    "vocabulary_size": int,
    "cross_tree_overlap": float,
    "forest_seed": int,
    "query_count": int,
    "entities_per_query": int,
    "skew": float,
    "workload_seed": int,
    "rounds": int,
    "algorithms": str,
    "bits_per_element": int,
    "hash_count": int,
    "index_seed": int,
}

_CONFIG_DEFAULTS = {
    "max_branching": 3,
    "vocabulary_size": 50000,
    "cross_tree_overlap": 0.0,
    "forest_seed": 0,
    "skew": 0.0,
    "workload_seed": 0,
    "rounds": 100,
    "algorithms": ",".join(ALGORITHMS),
    "bits_per_element": DEFAULT_BITS_PER_ELEMENT,
    "hash_count": DEFAULT_HASH_COUNT,
    "index_seed": 0,
}

_CONFIG_REQUIRED = ("tree_count", "nodes_per_tree", "query_count", "entities_per_query")


@dataclass(frozen=True)
class BenchConfig:
    forest: ForestSpec
    workload: WorkloadSpec
    rounds: int
    algorithms: tuple[str, ...]
    bits_per_element: int
    hash_count: int
    index_seed: int


def parse_config(text: str, source: str = "<memory>") -> BenchConfig:
    """Parse a key=value benchmark config. ``#`` starts a comment."""
    values: dict[str, object] = dict(_CONFIG_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
    missing = [key for key in _CONFIG_REQUIRED if key not in values]
    if missing:
        raise ValueError(f"{source}: missing required keys: {', '.join(missing)}")
    algorithms = tuple(
        name.strip() for name in str(values["algorithms"]).split(",") if name.strip()
    )
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"{source}: unknown algorithms: {sorted(unknown)}")
    return BenchConfig(
        forest=ForestSpec(
            tree_count=values["tree_count"],
            nodes_per_tree=values["nodes_per_tree"],
            max_branching=values["max_branching"],
            vocabulary_size=values["vocabulary_size"],
            cross_tree_overlap=values["cross_tree_overlap"],
            seed=values["forest_seed"],
        ),
        workload=WorkloadSpec(
            query_count=values["query_count"],
            entities_per_query=values["entities_per_query"],
            skew=values["skew"],
            seed=values["workload_seed"],
        ),
        rounds=values["rounds"],
        algorithms=algorithms,
        bits_per_element=values["bits_per_element"],
        hash_count=values["hash_count"],
        index_seed=values["index_seed"],
    )


def load_config(path: str) -> BenchConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=path)
