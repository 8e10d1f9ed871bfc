"""Entity lookup across forests of hierarchy trees.

The package answers one question fast: given an entity label, where does
it occur across a large collection of hierarchy trees? A cuckoo-filter
index with temperature-sorted buckets and block-list address storage
carries the fast path; naive traversal and Bloom-annotated traversal
serve as baselines; a harness benchmarks all of them on synthetic
forests and renders retrieved hierarchy context into prompts.
"""

from .baselines import (
    BloomAnnotatedForest,
    BloomFilter,
    bloom_build,
    bloom_locate,
    improved_bloom_locate,
    naive_locate,
)
from .bench import (
    BenchReport,
    BenchRow,
    ForestSpec,
    WorkloadSpec,
    fp_rate_experiment,
    gen_workload,
    run_benchmark,
    synth_forest,
    write_report,
)
from .cuckoo import (
    BlockListHead,
    CuckooIndex,
    ExpansionFailedError,
    InsertResult,
    append_address,
    candidate_indices,
    fingerprint,
    hash64,
)
from .forest import (
    Forest,
    InvalidAddressError,
    MultipleParentsError,
    NodeAddress,
    RelationFormatError,
    RelationTuple,
    Tree,
    TreeNode,
    build_forest,
    canonical_label,
    filter_relations,
    forest_from_relations,
    hierarchy_chain,
    load_relations,
    locate_all,
    parse_relations,
)
from .retrieval import (
    BadTemplateError,
    ContextBundle,
    EntityContext,
    Occurrence,
    StaleAddressError,
    generate_context,
    render_prompt,
)

__version__ = "0.1.0"
