"""Dated SPR operations and the translation between reconciliations and scenarios.

Nodes are addressed by their leaf cluster, which stays meaningful across the
rebuilt trees of a scenario. An operation prunes the edge above ``prune`` and
regrafts it on the edge above ``regraft`` at date ``date``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .recon import Event, Reconciliation, classify_events, validate
from .treemodel import DatedTree, make_tree, subdivide, topology_newick

__all__ = [
    "SprError",
    "DateViolation",
    "EdgeNotFound",
    "NotTR",
    "TransfersNotAdjusted",
    "ScenarioInvalid",
    "SprOp",
    "SprScenario",
    "apply_spr",
    "apply_scenario",
    "rank_dated",
    "recon_to_scenario",
    "scenario_to_recon",
    "solve_spr",
]


class SprError(ValueError):
    pass


class DateViolation(SprError):
    pass


class EdgeNotFound(SprError):
    pass


class NotTR(SprError):
    pass


class TransfersNotAdjusted(SprError):
    pass


class ScenarioInvalid(SprError):
    pass


@dataclass(frozen=True)
class SprOp:
    prune: frozenset[str]
    regraft: frozenset[str]
    date: Fraction

    def as_dict(self, tree: DatedTree | None = None) -> dict:
        out = {
            "prune": sorted(self.prune),
            "regraft": sorted(self.regraft),
            "rank": _num(self.date),
        }
        if tree is not None:
            a1 = _node_by_cluster(tree)[self.prune]
            b1 = _node_by_cluster(tree)[self.regraft]
            out["prune"] = [sorted(tree.cluster(tree.parent[a1])), sorted(self.prune)]
            b2 = tree.parent[b1]
            out["regraft"] = [sorted(tree.cluster(b2)) if b2 is not None else None,
                              sorted(self.regraft)]
        return out


def _num(x: Fraction):
    x = Fraction(x)
    return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass
class SprScenario:
    start: DatedTree
    ops: list[SprOp] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ops)

    def trees(self) -> list[DatedTree]:
        out = [self.start]
        for op in self.ops:
            out.append(apply_spr(out[-1], op))
        return out

    def end(self) -> DatedTree:
        return self.trees()[-1]

    def coloring(self) -> list[tuple[dict, dict]]:
        """Edge and node colors after each operation, as op indices.

        Edges are keyed by the cluster below them. Op i colors the edge above
        the moved subtree and the new node it hangs from; an edge that is
        split or merged by a later move keeps its color.
        """
        edges: dict[frozenset[str], int] = {}
        nodes: dict[frozenset[str], int] = {}
        out = []
        for i, (op, tree) in enumerate(zip(self.ops, self.trees())):
            a = op.prune
            a1 = _node_by_cluster(tree)[a]
            p = tree.cluster(tree.parent[a1])
            sib = p - a
            if p in edges:
                edges[sib] = edges.pop(p)
            nodes.pop(p, None)
            edges = {(k - a if k > p else k): c for k, c in edges.items()}
            nodes = {(k - a if k > p else k): c for k, c in nodes.items()}
            b = op.regraft
            edges = {(k | a if k > b else k): c for k, c in edges.items()}
            nodes = {(k | a if k > b else k): c for k, c in nodes.items()}
            if b in edges:
                edges[b | a] = edges[b]
            edges[a] = i
            nodes[b | a] = i
            out.append((dict(edges), dict(nodes)))
        return out

    def as_dict(self) -> dict:
        trees = self.trees()
        return {
            "length": len(self.ops),
            "ops": [op.as_dict(t) for op, t in zip(self.ops, trees)],
        }


def _node_by_cluster(tree: DatedTree) -> dict[frozenset[str], int]:
    return {tree.cluster(v): v for v in tree.nodes() if len(tree.children[v]) != 1}


def apply_spr(tree: DatedTree, op: SprOp) -> DatedTree:
    """Prune the edge above ``op.prune`` and regraft it above ``op.regraft``."""
    where = _node_by_cluster(tree)
    if op.prune not in where or op.regraft not in where:
        raise EdgeNotFound("no node with the given cluster")
    a1, b1 = where[op.prune], where[op.regraft]
    a2 = tree.parent[a1]
    if a2 is None or len(tree.children[a2]) != 2:
        raise EdgeNotFound("cannot prune the top of the tree")
    if tree.is_ancestor(a1, b1):
        raise EdgeNotFound("regraft edge lies inside the pruned subtree")
    if tree.is_ancestor(b1, a1):
        raise EdgeNotFound("regraft edge lies above the pruned subtree")
    b2 = tree.parent[b1]
    if b2 is None or len(tree.children[b2]) != 2:
        raise EdgeNotFound("no edge above the regraft node")
    d = Fraction(op.date)
    tau = tree.tau
    if not tau[a1] < tau[b2]:
        raise DateViolation("pruned subtree is not younger than the regraft edge")
    if not (tau[a1] < d and tau[b1] < d < tau[b2]):
        raise DateViolation(f"regraft date {d} outside the allowed range")

    children = {v: list(tree.children[v]) for v in tree.nodes()}
    dates: dict[object, Fraction] = {v: tau[v] for v in tree.nodes()}
    (sib,) = [c for c in children[a2] if c != a1]
    up = tree.parent[a2]
    root = tree.root
    if up is None:
        root = sib
    else:
        children[up][children[up].index(a2)] = sib
    del children[a2]
    lower = b1
    parent = {c: v for v, kids in children.items() for c in kids}
    over = parent.get(lower)
    children["new"] = [lower, a1]
    dates["new"] = d
    if over is None:
        root = "new"
    else:
        children[over][children[over].index(lower)] = "new"
    labels = {v: tree.label[v] for v in tree.nodes()}
    return make_tree(children, root, labels, dates, "gene")


def apply_scenario(tree: DatedTree, ops) -> DatedTree:
    for op in ops:
        tree = apply_spr(tree, op)
    return tree


def rank_dated(species: DatedTree) -> DatedTree:
    """The species tree with a root edge, re-dated by subdivision ranks."""
    sub = subdivide(species)
    t = sub.tree
    return make_tree(
        {v: t.children[v] for v in t.nodes()},
        t.root,
        {v: t.label[v] for v in t.nodes()},
        {v: sub.rank[v] for v in t.nodes()},
        "species",
    )


# ------------------------------------------------- reconciliation to scenario

_TR_EVENTS = {
    Event.ROOT,
    Event.EXTANT,
    Event.SPECIATION,
    Event.TRANSFER_PARENT,
    Event.TRANSFER_CHILD,
    Event.FREE_LOSS,
}


def _refined_dates(r: Reconciliation) -> dict[int, Fraction]:
    """Real dates for G' that respect ranks, tree order and replaced losses.

    Nodes sharing an odd rank are spread inside the open interval around it
    in a topological order: a child comes before its parent, and a
    transferred lineage comes before the parent of the loss it replaces.
    """
    after: dict[int, set[int]] = {x: set() for x in r.nodes()}
    for x in r.nodes():
        p = r.parent[x]
        if p is not None:
            after[x].add(p)
    for c, l in r.replaced.items():
        after[c].add(r.parent[l])
    layers: dict[int, list[int]] = {}
    for x in r.nodes():
        layers.setdefault(r.tau(x), []).append(x)
    out: dict[int, Fraction] = {}
    for rank, xs in layers.items():
        if rank % 2 == 0:
            for x in xs:
                out[x] = Fraction(rank)
            continue
        members = set(xs)
        indeg = {x: 0 for x in xs}
        for x in xs:
            for y in after[x] & members:
                indeg[y] += 1
        ready = sorted(x for x in xs if indeg[x] == 0)
        order = []
        while ready:
            x = ready.pop(0)
            order.append(x)
            for y in sorted(after[x] & members):
                indeg[y] -= 1
                if indeg[y] == 0:
                    ready.append(y)
        if len(order) != len(xs):
            raise NotTR(f"cyclic time constraints at rank {rank}")
        step = Fraction(2, len(xs) + 1)
        for j, x in enumerate(order):
            out[x] = rank - 1 + (j + 1) * step
    return out


class _Partial:
    """The trees between S and G obtained by keeping a subset of transfers."""

    def __init__(self, r: Reconciliation):
        self.r = r
        self.dates = _refined_dates(r)
        self.moves = sorted(r.transfers(), key=lambda e: (self.dates[e[0]], e))
        for _, c in self.moves:
            if c not in r.replaced:
                raise NotTR(f"transfer into {c} replaces no lineage")

    def shape(self, kept: frozenset) -> dict[int, list[int]]:
        r = self.r
        kids = {x: list(r.children[x]) for x in r.nodes()}
        for p, c in self.moves:
            l = r.replaced[c]
            kids[r.parent[l]].remove(l)
            if (p, c) not in kept:
                kids[p].remove(c)
                kids[r.parent[l]].append(c)
        return kids

    def tree(self, kept: frozenset):
        """The compressed tree and, per G' node, the cluster of its lineage."""
        r, kids = self.r, self.shape(kept)
        children: dict[int, list[int]] = {}
        label: dict[int, str | None] = {}
        top: dict[int, int | None] = {}
        for x in reversed(_preorder(r.root, kids)):
            alive = [top[c] for c in kids[x] if top[c] is not None]
            if not kids[x]:
                top[x] = x if r.in_gene(x) else None
                if top[x] is not None:
                    children[x] = []
                    label[x] = r.phi[r.gene.label[r.gene_of[x]]]
            elif len(alive) == 2 or (x == r.root and alive):
                top[x] = x
                children[x] = alive
                label[x] = None
            else:
                top[x] = alive[0] if alive else None
        if top[r.root] != r.root:
            raise NotTR("extension has no surviving root lineage")
        t = make_tree(children, r.root, label, {x: self.dates[x] for x in children}, "gene")
        return t, top, children, label

    def op(self, kept: frozenset, move) -> SprOp | None:
        p, c = move
        _, top, children, label = self.tree(kept)
        if top[p] is None or top[c] is None:
            return None
        clusters = _clusters(children, label, self.r.root)
        return SprOp(clusters[top[c]], clusters[top[p]], self.dates[p])


def _preorder(root: int, kids: Mapping[int, list[int]]) -> list[int]:
    out, stack = [], [root]
    while stack:
        x = stack.pop()
        out.append(x)
        stack.extend(kids[x])
    return out


def _clusters(children, label, root) -> dict[int, frozenset[str]]:
    out: dict[int, frozenset[str]] = {}
    for x in reversed(_preorder(root, children)):
        if children[x]:
            out[x] = frozenset().union(*(out[c] for c in children[x]))
        else:
            out[x] = frozenset({label[x]})
    return out


def _dated_clusters(tree: DatedTree) -> set:
    return {(tree.cluster(v), tree.tau[v]) for v in tree.nodes() if not tree.is_leaf(v)}


def recon_to_scenario(r: Reconciliation) -> SprScenario:
    """A dated SPR scenario from S to G with one operation per transfer.

    Each transfer is applied as a prune of the transferred lineage from the
    position of the loss it replaces, regrafted at the date of its parent.
    Application orders are searched depth first; every step is replayed with
    :func:`apply_spr` and checked against the expected intermediate tree.
    """
    r = classify_events(r.copy())
    problems = validate(r)
    if problems:
        raise NotTR(f"invalid reconciliation: {problems[0]}")
    bad = sorted({e.value for e in r.events.values()} - {e.value for e in _TR_EVENTS})
    if bad:
        raise NotTR(f"events outside T_R: {', '.join(bad)}")
    part = _Partial(r)
    start = part.tree(frozenset())[0]
    if _dated_clusters(start) != _dated_clusters(rank_dated(r.species.tree)):
        raise NotTR("removing every transfer does not give back the species tree")

    dead: set[frozenset] = set()
    ops: list[SprOp] = []

    def extend(kept: frozenset, tree: DatedTree) -> bool:
        if len(kept) == len(part.moves):
            return True
        if kept in dead:
            return False
        for move in part.moves:
            if move in kept:
                continue
            op = part.op(kept, move)
            if op is None:
                continue
            try:
                nxt = apply_spr(tree, op)
            except SprError:
                continue
            want = part.tree(kept | {move})[0]
            if _dated_clusters(nxt) != _dated_clusters(want):
                continue
            ops.append(op)
            if extend(kept | {move}, nxt):
                return True
            ops.pop()
        dead.add(kept)
        return False

    if not extend(frozenset(), start):
        raise TransfersNotAdjusted("no order of the transfers is a valid dated SPR scenario")
    return SprScenario(start, ops)


# ------------------------------------------------- scenario to reconciliation


def _relabel(gene: DatedTree, phi: Mapping[str, str]) -> DatedTree:
    return make_tree(
        {v: gene.children[v] for v in gene.nodes()},
        gene.root,
        {v: (phi[gene.label[v]] if gene.is_leaf(v) else None) for v in gene.nodes()},
        {v: gene.tau[v] for v in gene.nodes()},
    )


def scenario_to_recon(
    species: DatedTree,
    gene: DatedTree,
    sc: SprScenario,
    phi: Mapping[str, str] | None = None,
    seed: int = 0,
) -> Reconciliation:
    """A T_R reconciliation of ``gene`` with weight at most the scenario length."""
    from .solver import solve

    target = gene if phi is None else _relabel(gene, phi)
    try:
        end = sc.end()
    except SprError as exc:
        raise ScenarioInvalid(f"scenario does not replay: {exc}") from exc
    if topology_newick(end) != topology_newick(target):
        raise ScenarioInvalid("scenario does not end at the gene tree")
    if _dated_clusters(sc.start) != _dated_clusters(rank_dated(species)):
        raise ScenarioInvalid("scenario does not start at the species tree")
    r = solve(gene, species, phi, len(sc), seed)
    if r is None:
        raise ScenarioInvalid(
            f"no T_R reconciliation of weight at most {len(sc)} exists for this scenario"
        )
    return r


def solve_spr(start: DatedTree, target: DatedTree, k: int, seed: int = 0) -> SprScenario | None:
    """A shortest dated SPR scenario of length at most k, via the solver."""
    from .solver import solve

    if sorted(start.leaf_labels) != sorted(target.leaf_labels):
        raise SprError("trees have different leaf labels")
    r = solve(target, start, None, k, seed)
    if r is None:
        return None
    return recon_to_scenario(r)
