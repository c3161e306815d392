"""Reconciliations of a gene tree with a subdivided species tree.

The extended gene tree G' is stored as parent/children dictionaries keyed by
integer node ids. G' nodes that stand for gene-tree nodes reuse the gene
tree's own ids, so ``gene_of[x] == x`` for them; added nodes get fresh ids
above ``len(gene)``. Losses are explicit leaves of G'.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping

from .treemodel import (
    DatedTree,
    Loc,
    Subdivision,
    make_tree,
    parse_newick,
    serialize_newick,
    subdivide,
    with_root_edge,
)

__all__ = [
    "Event",
    "DEFAULT_COSTS",
    "Reconciliation",
    "ReconError",
    "Unclassifiable",
    "AmbiguousConfiguration",
    "InvalidNode",
    "Violation",
    "classify_events",
    "validate",
    "event_counts",
    "weight",
    "weight_of_subtree",
    "reduce_extension",
    "Reduction",
    "to_json",
    "from_json",
]

SCHEMA_VERSION = 1


class Event(str, Enum):
    SPECIATION = "speciation"
    DUPLICATION = "duplication"
    TRANSFER_PARENT = "transfer_parent"
    TRANSFER_CHILD = "transfer_child"
    LOSS = "loss"
    FREE_LOSS = "free_loss"
    CONVERSION = "conversion"
    EXTANT = "extant"
    ROOT = "root"


DEFAULT_COSTS: dict[str, Fraction] = {
    "speciation": Fraction(0),
    "duplication": Fraction(1),
    "transfer": Fraction(1),
    "replacement_transfer": Fraction(1),
    "loss": Fraction(1),
    "free_loss": Fraction(0),
    "conversion": Fraction(1),
}


class ReconError(ValueError):
    pass


class Unclassifiable(ReconError):
    pass


class AmbiguousConfiguration(ReconError):
    pass


class InvalidNode(ReconError):
    pass


@dataclass
class Reconciliation:
    """Extended gene tree G', its mapping rho into S', and event labels.

    ``replaced`` pairs each replacement transfer child with the free loss it
    replaces; ``converted`` pairs conversions with their free losses.
    """

    species: Subdivision
    gene: DatedTree
    phi: dict[str, str]
    parent: dict[int, int | None] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    gene_of: dict[int, int | None] = field(default_factory=dict)
    rho: dict[int, Loc] = field(default_factory=dict)
    replaced: dict[int, int] = field(default_factory=dict)
    converted: dict[int, int] = field(default_factory=dict)
    allowed: frozenset[str] = frozenset({"T_R"})
    costs: dict[str, Fraction] = field(default_factory=lambda: dict(DEFAULT_COSTS))
    events: dict[int, Event] = field(default_factory=dict)
    root: int | None = None
    next_id: int = 0

    @classmethod
    def empty(
        cls,
        species: Subdivision,
        gene: DatedTree,
        phi: Mapping[str, str] | None = None,
    ) -> "Reconciliation":
        gene = with_root_edge(gene)
        if phi is None:
            phi = {gene.label[g]: gene.label[g] for g in gene.leaves()}
        return cls(species, gene, dict(phi), next_id=len(gene))

    def copy(self) -> "Reconciliation":
        return copy.deepcopy(self)

    # -- construction helpers

    def add(self, loc: Loc, gene: int | None = None) -> int:
        x = gene if gene is not None else self.next_id
        if gene is None:
            self.next_id += 1
        if x in self.parent:
            raise InvalidNode(f"node {x} already present")
        self.parent[x] = None
        self.children[x] = []
        self.gene_of[x] = gene
        self.rho[x] = loc
        return x

    def link(self, p: int, c: int):
        if self.parent[c] is not None:
            self.children[self.parent[c]].remove(c)
        self.parent[c] = p
        self.children[p].append(c)

    def unlink(self, c: int):
        p = self.parent[c]
        if p is not None:
            self.children[p].remove(c)
        self.parent[c] = None

    def remove(self, x: int):
        """Delete a node that has no children and no parent."""
        assert not self.children[x] and self.parent[x] is None
        for d in (self.parent, self.children, self.gene_of, self.rho, self.events):
            d.pop(x, None)
        self.replaced = {c: l for c, l in self.replaced.items() if x not in (c, l)}
        self.converted = {c: l for c, l in self.converted.items() if x not in (c, l)}

    def suppress(self, x: int):
        """Remove a node with one child, joining the child to x's parent."""
        (c,) = self.children[x]
        p = self.parent[x]
        self.unlink(c)
        if p is not None:
            idx = self.children[p].index(x)
            self.children[p][idx] = c
            self.parent[c] = p
            self.parent[x] = None
        elif self.root == x:
            self.root = c
        self.remove(x)

    # -- queries

    def nodes(self) -> list[int]:
        return sorted(self.parent)

    def tau(self, x: int) -> int:
        return self.rho[x].rank

    def in_gene(self, x: int) -> bool:
        return self.gene_of.get(x) is not None

    def is_transfer_edge(self, p: int, c: int) -> bool:
        return not self.species.comparable(self.rho[p], self.rho[c])

    def postorder(self) -> list[int]:
        out: list[int] = []
        stack = [(self.root, False)]
        while stack:
            x, done = stack.pop()
            if done:
                out.append(x)
                continue
            stack.append((x, True))
            stack.extend((c, False) for c in reversed(self.children[x]))
        return out

    def subtree(self, x: int) -> list[int]:
        out, stack = [], [x]
        while stack:
            y = stack.pop()
            out.append(y)
            stack.extend(self.children[y])
        return out

    def lost_nodes(self) -> set[int]:
        """Nodes with no gene-tree leaf below them."""
        alive: dict[int, bool] = {}
        for x in self.postorder():
            if self.children[x]:
                alive[x] = any(alive[c] for c in self.children[x])
            else:
                alive[x] = self.in_gene(x)
        return {x for x, a in alive.items() if not a}

    def transfers(self) -> list[tuple[int, int]]:
        """Transfer edges (parent, child) in node-id order of the child."""
        out = []
        for x in self.nodes():
            p = self.parent[x]
            if p is not None and self.is_transfer_edge(p, x):
                out.append((p, x))
        return out

    def is_horizontal(self, p: int, c: int) -> bool:
        return self.tau(p) == self.tau(c)


# ---------------------------------------------------------------- events


def _below_child(sub: Subdivision, v: int, loc: Loc) -> int | None:
    """Which child of species node v lies above loc, if any."""
    if loc.rank >= sub.rank[v]:
        return None
    for s in sub.tree.children[v]:
        if sub.tree.is_ancestor(s, loc.species):
            return s
    return None


def _classify(r: Reconciliation, x: int, free: set[int]) -> Event:
    sub = r.species
    kids = r.children[x]
    loc = r.rho[x]
    if x == r.root:
        if len(kids) == 1 and loc == sub.root_loc:
            return Event.ROOT
        raise Unclassifiable(f"root {x} must have one child and sit at the species root")
    if not kids:
        g = r.gene_of[x]
        if g is not None:
            if r.gene.is_leaf(g):
                return Event.EXTANT
            raise Unclassifiable(f"gene node {g} is a leaf of the extension")
        return Event.FREE_LOSS if x in free else Event.LOSS
    if len(kids) == 1:
        p = r.parent[x]
        if loc.is_edge and r.is_transfer_edge(p, x):
            return Event.TRANSFER_CHILD
        raise Unclassifiable(f"node {x} has one child but no incoming transfer")
    if len(kids) != 2:
        raise Unclassifiable(f"node {x} has {len(kids)} children")
    crossing = [c for c in kids if r.is_transfer_edge(x, c)]
    if len(crossing) == 2:
        raise Unclassifiable(f"node {x} sends two transfers")
    matches = []
    if crossing and loc.is_edge:
        matches.append(Event.TRANSFER_PARENT)
    if not crossing and sub.is_speciation(loc):
        sides = {_below_child(sub, loc.species, r.rho[c]) for c in kids}
        if None not in sides and len(sides) == 2:
            matches.append(Event.SPECIATION)
    if not crossing and loc.is_edge:
        if all(sub.leq(r.rho[c], loc) for c in kids):
            matches.append(Event.CONVERSION if x in r.converted else Event.DUPLICATION)
    if not matches:
        raise Unclassifiable(f"node {x} at {loc} matches no event")
    if len(matches) > 1:
        raise AmbiguousConfiguration(f"node {x} matches {matches}")
    return matches[0]


def classify_events(r: Reconciliation) -> Reconciliation:
    """Label every node of G' with the event its local mapping satisfies."""
    free = set(r.replaced.values()) | set(r.converted.values())
    r.events = {x: _classify(r, x, free) for x in r.nodes()}
    return r


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    code: str
    nodes: tuple[int, ...]
    message: str

    def as_dict(self) -> dict:
        return {"code": self.code, "nodes": list(self.nodes), "message": self.message}


def _occupancy(r: Reconciliation, lost: set[int]) -> list[Violation]:
    """At most one non-lost lineage may enter each subdivision edge from
    below or leave it from above."""
    sub = r.species
    tree = sub.tree
    # per species edge and side, the odd-rank intervals each lineage crosses
    spans: dict[tuple[str, int], list[tuple[int, int, int]]] = {}
    for c in r.nodes():
        p = r.parent[c]
        if p is None or c in lost or r.is_transfer_edge(p, c):
            continue
        lo, hi = r.rho[c], r.rho[p]
        v = lo.species
        while True:
            if v != tree.root:
                a = lo.rank if v == lo.species else sub.rank[v]
                b = min(hi.rank, sub.upper(v) - 1)
                bounds = (("bottom", max(a, lo.rank + 1), b), ("top", a, min(b, hi.rank - 1)))
                for side, x, y in bounds:
                    x += 1 - x % 2
                    y -= 1 - y % 2
                    if x <= y:
                        spans.setdefault((side, v), []).append((x, y, c))
            if v == hi.species or v == tree.root or sub.upper(v) >= hi.rank:
                break
            v = tree.parent[v]
    table: dict[tuple[str, Loc], list[int]] = {}
    for (side, v), items in spans.items():
        items.sort()
        reach, clash = -1, False
        for x, y, _ in items:
            clash = clash or x <= reach
            reach = max(reach, y)
        if not clash:
            continue
        for x, y, c in items:
            for rank in range(x, y + 1, 2):
                table.setdefault((side, Loc(v, rank)), []).append(c)
    out = []
    for where in ("bottom", "top"):
        for loc in sorted(l for w, l in table if w == where):
            lineages = table[(where, loc)]
            if len(lineages) > 1:
                out.append(
                    Violation(
                        "occupancy",
                        tuple(sorted(lineages)),
                        f"{len(lineages)} lineages cross the {where} of edge {loc}",
                    )
                )
    return out


def validate(r: Reconciliation) -> list[Violation]:
    """Every violated invariant, as data. An empty list means valid."""
    out: list[Violation] = []
    sub, gene = r.species, r.gene

    # structure
    if r.root is None or r.root not in r.parent or r.parent[r.root] is not None:
        return [Violation("structure", (), "missing root")]
    reach = r.subtree(r.root)
    if len(reach) != len(r.parent) or len(set(reach)) != len(reach):
        return [Violation("structure", (), "extension is not a single tree")]
    for x in r.nodes():
        for c in r.children[x]:
            if r.parent[c] != x:
                out.append(Violation("structure", (x, c), "parent/child mismatch"))
        if not sub.is_valid(r.rho[x]):
            out.append(Violation("mapping", (x,), f"invalid location {r.rho[x]}"))
    if out:
        return out

    # G' is an extension of G
    missing = [g for g in gene.nodes() if r.gene_of.get(g) != g]
    if missing:
        out.append(Violation("extension", tuple(missing), "gene nodes missing"))
        return out
    lost = r.lost_nodes()
    for x in r.nodes():
        g = r.gene_of[x]
        if g is not None and g != gene.root:
            y = r.parent[x]
            while y is not None and r.gene_of[y] is None:
                y = r.parent[y]
            if y != gene.parent[g]:
                out.append(Violation("extension", (x,), "gene ancestry not preserved"))
        elif g is None and x not in lost:
            live = [c for c in r.children[x] if c not in lost]
            if len(live) != 1:
                out.append(
                    Violation("extension", (x,), "added node must have one non-lost child")
                )
    if r.root != gene.root:
        out.append(Violation("extension", (r.root,), "root of G' must be the gene root"))

    # mapping
    if r.rho[r.root] != sub.root_loc:
        out.append(Violation("mapping", (r.root,), "root not mapped to the species root"))
    for g in gene.leaves():
        want = r.phi.get(gene.label[g])
        if want is None:
            out.append(Violation("mapping", (g,), "leaf missing from phi"))
            continue
        if r.rho[g] != Loc(sub.tree.leaf(want), 0):
            out.append(Violation("mapping", (g,), "leaf not mapped by phi"))
    for x in r.nodes():
        p = r.parent[x]
        if p is None:
            continue
        if r.tau(x) > r.tau(p):
            out.append(Violation("order", (p, x), "child dated above its parent"))
        elif not r.is_transfer_edge(p, x) and not sub.leq(r.rho[x], r.rho[p]):
            out.append(Violation("order", (p, x), "child not below its parent"))

    # events
    try:
        classify_events(r)
    except ReconError as exc:
        out.append(Violation("event", (), str(exc)))
        return out

    for c, l in r.replaced.items():
        if r.events.get(c) != Event.TRANSFER_CHILD:
            out.append(Violation("pairing", (c,), "paired node is not a transfer child"))
        if l not in r.parent or r.children[l] or r.gene_of[l] is not None:
            out.append(Violation("pairing", (c, l), "replaced node is not a loss"))
        elif r.rho[l] != r.rho[c]:
            out.append(Violation("pairing", (c, l), "replaced loss elsewhere"))
    if len(set(r.replaced.values())) != len(r.replaced):
        out.append(Violation("pairing", (), "a loss is replaced twice"))
    for d, l in r.converted.items():
        if r.rho.get(l) != r.rho[d]:
            out.append(Violation("pairing", (d, l), "conversion loss elsewhere"))

    if r.allowed == frozenset({"T_R"}):
        for x, e in sorted(r.events.items()):
            if e == Event.TRANSFER_CHILD and x not in r.replaced:
                out.append(
                    Violation("transfer", (x,), "transfer without replaced loss")
                )
            elif e in (Event.DUPLICATION, Event.CONVERSION):
                out.append(Violation("event", (x,), f"{e.value} not allowed"))
            elif e == Event.LOSS:
                out.append(Violation("event", (x,), "unpaired loss not allowed"))
        out.extend(_occupancy(r, lost))
    return out


# ---------------------------------------------------------------- weight


def event_counts(r: Reconciliation, nodes: Iterable[int] | None = None) -> dict[str, int]:
    """Per-kind event counts; transfers are counted once, at their parent."""
    if not r.events:
        classify_events(r)
    counts = {k: 0 for k in DEFAULT_COSTS}
    for x in r.nodes() if nodes is None else nodes:
        e = r.events[x]
        if e == Event.SPECIATION:
            counts["speciation"] += 1
        elif e == Event.DUPLICATION:
            counts["duplication"] += 1
        elif e == Event.CONVERSION:
            counts["conversion"] += 1
        elif e == Event.LOSS:
            counts["loss"] += 1
        elif e == Event.FREE_LOSS:
            counts["free_loss"] += 1
        elif e == Event.TRANSFER_PARENT:
            (c,) = [c for c in r.children[x] if r.is_transfer_edge(x, c)]
            counts["replacement_transfer" if c in r.replaced else "transfer"] += 1
    return counts


def _priced(r: Reconciliation, counts: Mapping[str, int]) -> Fraction:
    return sum((Fraction(r.costs[k]) * n for k, n in counts.items()), Fraction(0))


def weight(r: Reconciliation) -> Fraction:
    """Sum over event kinds of cost times count."""
    return _priced(r, event_counts(r))


def weight_of_subtree(r: Reconciliation, root: int) -> Fraction:
    """Weight of the events at or below ``root``, including transfers it sends."""
    if root not in r.parent:
        raise InvalidNode(f"no node {root}")
    return _priced(r, event_counts(r, r.subtree(root)))


# ---------------------------------------------------------------- reduction


@dataclass
class Reduction:
    """G' with its lost subtrees pruned; may contain single-child nodes."""

    children: dict[int, list[int]]
    root: int
    gene_of: dict[int, int | None]

    def suppressed(self, gene: DatedTree) -> DatedTree:
        """Suppress single-child nodes and return a topology-dated tree."""
        kids: dict[int, list[int]] = {}

        def walk(x: int) -> int:
            while len(self.children[x]) == 1 and x != self.root:
                x = self.children[x][0]
            kids[x] = [walk(c) for c in self.children[x]]
            return x

        top = walk(self.root)
        tau: dict[int, int] = {}
        for x in kids:  # children were recorded before their parents
            tau[x] = 1 + max((tau[c] for c in kids[x]), default=-1)
        label = {x: gene.label[self.gene_of[x]] if self.gene_of[x] is not None else None
                 for x in kids}
        return make_tree(kids, top, label, tau, gene.kind)


def reduce_extension(r: Reconciliation) -> Reduction:
    """Prune all lost subtrees from G'."""
    lost = r.lost_nodes()
    children = {
        x: [c for c in r.children[x] if c not in lost] for x in r.nodes() if x not in lost
    }
    return Reduction(children, r.root, {x: r.gene_of[x] for x in children})


# ---------------------------------------------------------------- JSON


def _num(x: Fraction):
    x = Fraction(x)
    return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def to_json(r: Reconciliation) -> dict:
    """Plain-data export with fixed field names and deterministic order."""
    if not r.events:
        classify_events(r)
    sub = r.species
    nodes = []
    for x in r.nodes():
        loc = r.rho[x]
        nodes.append(
            {
                "id": x,
                "event": r.events[x].value,
                "rho": {
                    "type": "edge" if loc.is_edge else "node",
                    "species_id": loc.species,
                    "rank": loc.rank,
                },
                "parent": r.parent[x],
                "children": list(r.children[x]),
                "gene_node": r.gene_of[x],
            }
        )
    transfers = [
        {
            "parent": p,
            "child": c,
            "replaced_loss": r.replaced.get(c),
            "horizontal": r.is_horizontal(p, c),
        }
        for p, c in r.transfers()
    ]
    return {
        "schema_version": SCHEMA_VERSION,
        "species": serialize_newick(sub.tree),
        "gene": serialize_newick(r.gene),
        "phi": dict(sorted(r.phi.items())),
        "allowed": sorted(r.allowed),
        "costs": {k: _num(v) for k, v in sorted(r.costs.items())},
        "nodes": nodes,
        "transfers": transfers,
        "conversions": [{"node": d, "loss": l} for d, l in sorted(r.converted.items())],
        "weight": _num(weight(r)),
    }


def from_json(data: dict | str) -> Reconciliation:
    """Rebuild a reconciliation from :func:`to_json` output."""
    if isinstance(data, str):
        data = json.loads(data)
    sub = subdivide(parse_newick(data["species"], kind="species"))
    gene = parse_newick(data["gene"])
    r = Reconciliation.empty(sub, gene, data.get("phi"))
    r.allowed = frozenset(data.get("allowed", ["T_R"]))
    for k, v in data.get("costs", {}).items():
        r.costs[k] = Fraction(v)
    for item in data["nodes"]:
        x = item["id"]
        loc = Loc(item["rho"]["species_id"], item["rho"]["rank"])
        r.parent[x] = item["parent"]
        r.children[x] = list(item["children"])
        r.gene_of[x] = item["gene_node"]
        r.rho[x] = loc
        if item["parent"] is None:
            r.root = x
    r.next_id = max([len(gene), *(x + 1 for x in r.parent)])
    for t in data["transfers"]:
        if t.get("replaced_loss") is not None:
            r.replaced[t["child"]] = t["replaced_loss"]
    for c in data.get("conversions", []):
        r.converted[c["node"]] = c["loss"]
    return r
