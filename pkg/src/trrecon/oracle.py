"""Exact dated SPR distance by exhaustive search, for small trees.

Trees are held as a map from leaf-cluster bitmask to date. Moves are
enumerated over every prune node, every regraft edge and every regraft date
that lands in a distinct position relative to the dates already present, so
no reachable ordering of dates is skipped. Visited trees are deduplicated by
topology plus the rank order of their dates.

The search is iterative deepening with an admissible bound: the undated
rooted SPR distance to the target, read from a table built by breadth-first
search around the target.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .sprbridge import SprOp, apply_scenario, apply_spr
from .treemodel import DatedTree, topology_newick, with_root_edge

__all__ = [
    "LeafMismatch",
    "OracleResult",
    "spr_distance_bfs",
    "certify",
    "dated_neighbors",
    "random_spr_walk",
]


class LeafMismatch(ValueError):
    pass


@dataclass
class OracleResult:
    distance: int | None
    witness: list[SprOp] = field(default_factory=list)
    states: int = 0

    @property
    def exceeds(self) -> bool:
        return self.distance is None

    def as_dict(self) -> dict:
        return {
            "distance": self.distance if self.distance is not None else "exceeds dmax",
            "witness": [op.as_dict() for op in self.witness],
            "states": self.states,
        }


class _Space:
    def __init__(self, labels: list[str]):
        self.labels = sorted(labels)
        self.bit = {x: 1 << i for i, x in enumerate(self.labels)}
        self.full = (1 << len(self.labels)) - 1
        self.leaves = [1 << i for i in range(len(self.labels))]

    def clusters_of(self, tree: DatedTree) -> dict[int, Fraction]:
        masks: dict[int, int] = {}
        for v in tree.postorder():
            if tree.is_leaf(v):
                masks[v] = self.bit[tree.label[v]]
            else:
                masks[v] = 0
                for c in tree.children[v]:
                    masks[v] |= masks[c]
        return {
            masks[v]: tree.tau[v]
            for v in tree.nodes()
            if len(tree.children[v]) == 2
        }

    def names(self, mask: int) -> frozenset[str]:
        return frozenset(x for x in self.labels if self.bit[x] & mask)


def _parent_of(mask: int, internal) -> int | None:
    best = None
    for c in internal:
        if c != mask and c & mask == mask and (best is None or c.bit_count() < best.bit_count()):
            best = c
    return best


def _prune(internal: dict[int, Fraction], a: int):
    """Remove the subtree a; return (pruned clusters, its old parent, sibling)."""
    p = _parent_of(a, internal)
    sib = p ^ a
    out = {}
    for c, d in internal.items():
        if c == p:
            continue
        out[c ^ a if c & p == p else c] = d
    return out, p, sib


def _regraft(pruned: dict[int, Fraction], lower: int, a: int, d) -> dict[int, Fraction]:
    out = {}
    for c, dc in pruned.items():
        if c & lower == lower and c != lower:
            out[c | a] = dc
        else:
            out[c] = dc
    out[lower | a] = d
    return out


def dated_neighbors(space: _Space, internal: dict[int, Fraction]):
    """Yield (op masks, new clusters) for every valid dated SPR move."""
    nodes = list(internal) + space.leaves
    date = lambda c: internal.get(c, Fraction(0))
    values = sorted({Fraction(0), *internal.values()})
    points = values + [(x + y) / 2 for x, y in zip(values, values[1:])]
    points.sort()
    parent = {c: _parent_of(c, internal) for c in nodes}
    for a in nodes:
        if a == space.full:
            continue
        pruned, _, _ = _prune(internal, a)
        ta = date(a)
        for b in nodes:
            b2 = parent[b]
            if b & a or b2 is None:
                continue
            hi = date(b2)
            lo = date(b)
            if not ta < hi:
                continue
            for d in points:
                if d >= hi:
                    break
                if d > lo and d > ta:
                    yield (a, b, d), _regraft(pruned, b, a, d)


def random_spr_walk(tree: DatedTree, moves: int, rng) -> tuple[DatedTree, list[SprOp]]:
    """Apply ``moves`` uniformly chosen dated SPR moves, starting from ``tree``."""
    space = _Space(tree.leaf_labels)
    ops = []
    for _ in range(moves):
        options = [m for m, _ in dated_neighbors(space, space.clusters_of(tree))]
        a, b, d = rng.choice(options)
        op = SprOp(space.names(a), space.names(b), d)
        tree = apply_spr(tree, op)
        ops.append(op)
    return tree, ops


def _undated_neighbors(space: _Space, clusters: frozenset[int]):
    # Regrafting above the root is allowed here so that the move set is
    # symmetric and distances from the target bound distances to it.
    internal = {c: 0 for c in clusters}
    nodes = list(clusters) + space.leaves
    for a in nodes:
        if a == space.full:
            continue
        pruned, p, sib = _prune(internal, a)
        for b in nodes:
            if b & ~a == 0 or b == p or b == sib:
                continue
            lower = b ^ a if b & a == a else b
            yield frozenset(_regraft(pruned, lower, a, 0))


def _order_key(internal: dict[int, Fraction]) -> frozenset:
    ranks = {d: i for i, d in enumerate(sorted(set(internal.values())))}
    return frozenset((c, ranks[d]) for c, d in internal.items())


def _distance_table(space: _Space, target: frozenset[int], radius: int) -> dict:
    table = {target: 0}
    frontier = [target]
    for depth in range(1, radius + 1):
        nxt = []
        for t in frontier:
            for u in _undated_neighbors(space, t):
                if u not in table:
                    table[u] = depth
                    nxt.append(u)
        frontier = nxt
    return table


def spr_distance_bfs(tree: DatedTree, target: DatedTree, dmax: int) -> OracleResult:
    """Minimum number of dated SPR moves turning ``tree`` into ``target``'s topology.

    ``tree`` is used with its own dates (a root edge is added if missing);
    ``target`` is compared by leaf-labelled topology only.
    """
    tree = with_root_edge(tree)
    if sorted(tree.leaf_labels) != sorted(target.leaf_labels):
        raise LeafMismatch("trees have different leaf labels")
    space = _Space(tree.leaf_labels)
    start = space.clusters_of(tree)
    goal = frozenset(space.clusters_of(target))
    table = _distance_table(space, goal, max(dmax - 1, 0))
    cap = max(dmax - 1, 0) + 1
    result = OracleResult(None)

    def h(clusters) -> int:
        return table.get(frozenset(clusters), cap)

    for bound in range(dmax + 1):
        seen: dict[frozenset, int] = {}
        path: list = []

        def dfs(state, g) -> bool:
            result.states += 1
            if frozenset(state) == goal:
                return True
            if g + h(state) > bound:
                return False
            key = _order_key(state)
            if seen.get(key, bound + 1) <= g:
                return False
            seen[key] = g
            for move, nxt in dated_neighbors(space, state):
                path.append(move)
                if dfs(nxt, g + 1):
                    return True
                path.pop()
            return False

        if dfs(start, 0):
            result.distance = bound
            result.witness = [
                SprOp(space.names(a), space.names(b), d) for a, b, d in path
            ]
            return result
    return result


def certify(
    gene: DatedTree,
    species: DatedTree,
    phi: Mapping[str, str] | None,
    k: int,
    seed: int = 0,
    dmax: int | None = None,
) -> dict:
    """Run the solver and the exhaustive search and compare their answers."""
    from .solver import solve_with_stats
    from .sprbridge import rank_dated
    from .recon import weight

    rec, stats = solve_with_stats(gene, species, phi, k, seed)
    target = gene
    if phi is not None:
        from .treemodel import make_tree

        target = make_tree(
            {v: gene.children[v] for v in gene.nodes()},
            gene.root,
            {v: (phi[gene.label[v]] if gene.is_leaf(v) else None) for v in gene.nodes()},
            {v: gene.tau[v] for v in gene.nodes()},
        )
    start = rank_dated(species)
    res = spr_distance_bfs(start, target, k if dmax is None else dmax)
    solver_weight = None if rec is None else int(weight(rec))
    witness_ok = None
    if res.distance is not None:
        end = apply_scenario(start, res.witness)
        witness_ok = topology_newick(end) == topology_newick(target)
    return {
        "solver_weight": solver_weight,
        "oracle_distance": res.distance,
        "agree": solver_weight == res.distance,
        "witness_replays": witness_ok,
        "branch_nodes": stats.branch_nodes,
        "oracle_states": res.states,
    }
