"""Entity forests: relation ingestion, cleanup, tree construction, traversal.

A forest is an ordered list of rooted trees with string-labeled nodes.
Input arrives as (tree_id, parent, child, seq) relation tuples, typically
extracted from documents, so the module also owns the cleanup pass that
turns noisy relation sets into well-formed trees.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple


class RelationFormatError(ValueError):
    """A relation line or tuple could not be parsed."""


class MultipleParentsError(ValueError):
    """A node would acquire two parents; the relation set is malformed."""


class InvalidAddressError(IndexError):
    """A NodeAddress points outside the forest."""


def canonical_label(text: str) -> str:
    """Normalize a label to NFC and trim surrounding whitespace.

    Labels are compared by byte equality after this step; there is no
    case folding.
    """
    return unicodedata.normalize("NFC", text).strip()


@dataclass(frozen=True)
class RelationTuple:
    """One extracted parent/child relation.

    seq is the extraction order and is used to break ties deterministically
    during cleanup (duplicate collapse and cycle breaking).
    """

    tree_id: object
    parent: str
    child: str
    seq: int


class NodeAddress(NamedTuple):
    """Position of one node: (tree index in forest, node index in tree)."""

    tree: int
    node: int


@dataclass(frozen=True)
class TreeNode:
    """Read-only view of one node."""

    label: str
    parent: int | None
    children: tuple[int, ...]


class Tree:
    """One rooted tree stored as parallel arrays in first-seen node order."""

    __slots__ = ("labels", "parents", "children", "root", "source_id")

    def __init__(
        self,
        labels: list[str],
        parents: list[int | None],
        children: list[list[int]],
        root: int,
        source_id: object = None,
    ):
        self.labels = labels
        self.parents = parents
        self.children = children
        self.root = root
        self.source_id = source_id

    def __len__(self) -> int:
        return len(self.labels)

    def node(self, index: int) -> TreeNode:
        return TreeNode(
            self.labels[index], self.parents[index], tuple(self.children[index])
        )


class Forest:
    """Ordered list of trees plus an exact label index used as the oracle."""

    def __init__(self, trees: list[Tree]):
        self.trees = trees
        self._label_index: dict[str, list[NodeAddress]] | None = None

    def __len__(self) -> int:
        return len(self.trees)

    def total_nodes(self) -> int:
        return sum(len(t) for t in self.trees)

    def node_at(self, addr: NodeAddress) -> TreeNode:
        check_address(self, addr)
        return self.trees[addr.tree].node(addr.node)

    def label_index(self) -> dict[str, list[NodeAddress]]:
        """Exact map from label to every address holding it.

        Built by one exhaustive scan and cached. Scanning trees in order
        and nodes in index order yields (tree, node) lexicographic address
        lists without an extra sort.
        """
        if self._label_index is None:
            index: dict[str, list[NodeAddress]] = {}
            for t, tree in enumerate(self.trees):
                for n, label in enumerate(tree.labels):
                    index.setdefault(label, []).append(NodeAddress(t, n))
            self._label_index = index
        return self._label_index

    def labels(self) -> Iterator[str]:
        """Distinct labels present in the forest."""
        return iter(self.label_index())


def check_address(forest: Forest, addr: NodeAddress) -> None:
    tree, node = addr
    if not (0 <= tree < len(forest.trees)) or not (0 <= node < len(forest.trees[tree])):
        raise InvalidAddressError(f"address {addr!r} outside forest")


def locate_all(forest: Forest, label: str) -> list[NodeAddress]:
    """Every address whose node label equals the query, lexicographic order.

    This is the exact reference answer the probabilistic retrievers are
    checked against. The query label is canonicalized the same way stored
    labels were.
    """
    return list(forest.label_index().get(canonical_label(label), ()))


def parse_relations(lines: Iterable[str], source: str = "<memory>") -> list[RelationTuple]:
    """Parse tab-separated relation lines into tuples.

    Format: ``tree_id<TAB>parent_label<TAB>child_label`` with ``#`` starting
    a comment line. seq is the zero-based line number, so file order is the
    extraction order. Blank lines are skipped. A malformed line raises
    RelationFormatError naming the source and line.
    """
    out: list[RelationTuple] = []
    for lineno, raw in enumerate(lines):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise RelationFormatError(
                f"{source}:{lineno + 1}: expected 3 tab-separated fields, got {len(parts)}"
            )
        tree_id, parent, child = parts
        parent = canonical_label(parent)
        child = canonical_label(child)
        if not tree_id.strip():
            raise RelationFormatError(f"{source}:{lineno + 1}: empty tree id")
        if not parent or not child:
            raise RelationFormatError(f"{source}:{lineno + 1}: empty label")
        out.append(RelationTuple(tree_id.strip(), parent, child, lineno))
    return out


def load_relations(path: str) -> list[RelationTuple]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_relations(fh, source=path)


def _canonical_tuple(rel: RelationTuple) -> RelationTuple:
    parent = canonical_label(rel.parent)
    child = canonical_label(rel.child)
    if parent == rel.parent and child == rel.child:
        return rel
    return RelationTuple(rel.tree_id, parent, child, rel.seq)


def _reachable(adj: dict[str, set[str]], start: str, goal: str) -> bool:
    # Iterative DFS; graphs here are small extraction outputs.
    stack = [start]
    seen = {start}
    while stack:
        node = stack.pop()
        for nxt in adj.get(node, ()):
            if nxt == goal:
                return True
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return False


def _strongly_connected(nodes: list[str], adj: dict[str, set[str]]) -> list[list[str]]:
    """Tarjan's algorithm, iterative to dodge recursion limits."""
    index_of: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[list[str]] = []
    counter = 0

    for root in nodes:
        if root in index_of:
            continue
        work = [(root, iter(sorted(adj.get(root, ()))))]
        index_of[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index_of:
                    index_of[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(sorted(adj.get(nxt, ())))))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index_of[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index_of[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp.append(member)
                    if member == node:
                        break
                components.append(comp)
    return components


def filter_relations(tuples: Iterable[RelationTuple]) -> list[RelationTuple]:
    """Clean a relation set so that each tree_id group describes a forest.

    Per tree_id, in order:

    1. drop self-loops (parent equals child after canonicalization),
    2. collapse duplicate (parent, child) edges, keeping the smallest seq,
    3. drop transitive shortcuts: walking edges in seq order, an edge
       (u, w) is dropped when w is already reachable from u through a path
       of length at least 2 over the edges still live at that point,
    4. break remaining cycles by repeatedly removing the largest-seq edge
       that lies on a cycle, until acyclic.

    The result keeps the original tuple order and is idempotent: filtering
    a filtered set changes nothing.
    """
    canon = [_canonical_tuple(t) for t in tuples]
    by_tree: dict[object, list[RelationTuple]] = {}
    tree_order: list[object] = []
    for rel in canon:
        if rel.tree_id not in by_tree:
            by_tree[rel.tree_id] = []
            tree_order.append(rel.tree_id)
        by_tree[rel.tree_id].append(rel)

    kept: list[RelationTuple] = []
    for tree_id in tree_order:
        group = sorted(by_tree[tree_id], key=lambda r: r.seq)

        # Steps 1 and 2: self-loops and duplicate edges.
        survivors: list[RelationTuple] = []
        seen_edges: set[tuple[str, str]] = set()
        for rel in group:
            if rel.parent == rel.child:
                continue
            edge = (rel.parent, rel.child)
            if edge in seen_edges:
                continue
            seen_edges.add(edge)
            survivors.append(rel)

        # Step 3: transitive shortcuts against the currently-live edge set.
        adj: dict[str, set[str]] = {}
        for rel in survivors:
            adj.setdefault(rel.parent, set()).add(rel.child)
        reduced: list[RelationTuple] = []
        for rel in survivors:
            adj[rel.parent].discard(rel.child)
            if _reachable(adj, rel.parent, rel.child):
                continue  # shortcut; leave it removed from adj
            adj[rel.parent].add(rel.child)
            reduced.append(rel)

        # Step 4: break cycles, largest seq first.
        alive: dict[tuple[str, str], RelationTuple] = {
            (r.parent, r.child): r for r in reduced
        }
        while True:
            adj = {}
            nodes: list[str] = []
            seen_nodes: set[str] = set()
            for parent, child in alive:
                adj.setdefault(parent, set()).add(child)
                for lbl in (parent, child):
                    if lbl not in seen_nodes:
                        seen_nodes.add(lbl)
                        nodes.append(lbl)
            comp_id: dict[str, int] = {}
            comp_size: dict[int, int] = {}
            for cid, comp in enumerate(_strongly_connected(nodes, adj)):
                comp_size[cid] = len(comp)
                for lbl in comp:
                    comp_id[lbl] = cid
            # An edge lies on a cycle iff both endpoints share a strongly
            # connected component with more than one member.
            cycle_edges = [
                rel
                for (parent, child), rel in alive.items()
                if comp_id[parent] == comp_id[child] and comp_size[comp_id[parent]] > 1
            ]
            if not cycle_edges:
                break
            worst = max(cycle_edges, key=lambda r: r.seq)
            del alive[(worst.parent, worst.child)]
        kept.extend(sorted(alive.values(), key=lambda r: r.seq))

    kept.sort(key=lambda r: r.seq)
    return kept


def build_forest(tuples: Iterable[RelationTuple]) -> Forest:
    """Assemble trees from filtered relation tuples.

    One tree per (tree_id, connected component); disjoint components that
    share a tree_id are promoted to separate trees. Node arrays keep
    first-seen order within their component. A node with two parents
    raises MultipleParentsError since filtering cannot repair that.
    """
    by_tree: dict[object, list[RelationTuple]] = {}
    tree_order: list[object] = []
    for rel in tuples:
        rel = _canonical_tuple(rel)
        if rel.tree_id not in by_tree:
            by_tree[rel.tree_id] = []
            tree_order.append(rel.tree_id)
        by_tree[rel.tree_id].append(rel)

    trees: list[Tree] = []
    for tree_id in tree_order:
        group = sorted(by_tree[tree_id], key=lambda r: r.seq)

        order: list[str] = []  # first-seen label order
        seen: set[str] = set()
        parent_of: dict[str, str] = {}
        child_sets: dict[str, list[str]] = {}
        for rel in group:
            for lbl in (rel.parent, rel.child):
                if lbl not in seen:
                    seen.add(lbl)
                    order.append(lbl)
            if rel.child in parent_of and parent_of[rel.child] != rel.parent:
                raise MultipleParentsError(
                    f"tree {tree_id!r}: node {rel.child!r} has parents "
                    f"{parent_of[rel.child]!r} and {rel.parent!r}"
                )
            parent_of[rel.child] = rel.parent
            child_sets.setdefault(rel.parent, []).append(rel.child)

        # Undirected connected components over the group's labels.
        comp_of: dict[str, int] = {}
        comp_members: list[list[str]] = []
        for lbl in order:
            if lbl in comp_of:
                continue
            comp = len(comp_members)
            members: list[str] = []
            stack = [lbl]
            comp_of[lbl] = comp
            while stack:
                cur = stack.pop()
                members.append(cur)
                neighbors = list(child_sets.get(cur, ()))
                if cur in parent_of:
                    neighbors.append(parent_of[cur])
                for nxt in neighbors:
                    if nxt not in comp_of:
                        comp_of[nxt] = comp
                        stack.append(nxt)
            comp_members.append(members)

        for comp in range(len(comp_members)):
            members = [lbl for lbl in order if comp_of[lbl] == comp]
            pos = {lbl: i for i, lbl in enumerate(members)}
            labels = list(members)
            parents: list[int | None] = [None] * len(members)
            children: list[list[int]] = [[] for _ in members]
            for lbl in members:
                if lbl in parent_of:
                    parents[pos[lbl]] = pos[parent_of[lbl]]
            for lbl in members:
                for ch in child_sets.get(lbl, ()):
                    children[pos[lbl]].append(pos[ch])
            roots = [i for i, p in enumerate(parents) if p is None]
            if len(roots) != 1:
                # Filtered input guarantees exactly one root per component;
                # anything else means the tuples skipped filtering.
                raise MultipleParentsError(
                    f"tree {tree_id!r}: component has {len(roots)} roots; "
                    "run filter_relations first"
                )
            trees.append(Tree(labels, parents, children, roots[0], source_id=tree_id))
    return Forest(trees)


def forest_from_relations(tuples: Iterable[RelationTuple]) -> Forest:
    """Full ingestion pipeline: filter then build."""
    return build_forest(filter_relations(tuples))


def hierarchy_chain(
    forest: Forest, addr: NodeAddress, n: int
) -> tuple[list[str], list[str]]:
    """Labels of at most n ancestors (nearest first) and n descendants.

    Descendants come in breadth-first order, so the nearest level fills
    first. n of zero yields two empty lists.
    """
    check_address(forest, addr)
    if n < 0:
        raise ValueError("n must be non-negative")
    tree = forest.trees[addr.tree]
    up: list[str] = []
    cur = tree.parents[addr.node]
    while cur is not None and len(up) < n:
        up.append(tree.labels[cur])
        cur = tree.parents[cur]
    down: list[str] = []
    queue = list(tree.children[addr.node])
    head = 0
    while head < len(queue) and len(down) < n:
        node = queue[head]
        head += 1
        down.append(tree.labels[node])
        queue.extend(tree.children[node])
    return up, down
