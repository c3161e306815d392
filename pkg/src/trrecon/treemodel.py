"""Rooted dated binary trees, Newick I/O, species-tree subdivision and time slices.

Node ids are positions in a preorder walk that visits children in order of
their smallest descendant leaf label. Every constructor goes through
:func:`make_tree`, so two trees with the same shape, labels and dates always
have the same ids and serialize to the same bytes.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

__all__ = [
    "TreeError",
    "NewickSyntaxError",
    "NonBinary",
    "NotUltrametric",
    "DuplicateLeafLabel",
    "DuplicateInternalDates",
    "InvalidDates",
    "DatedTree",
    "Loc",
    "Subdivision",
    "Slice",
    "make_tree",
    "parse_newick",
    "serialize_newick",
    "topology_newick",
    "with_root_edge",
    "date_by_height",
    "subdivide",
    "time_slices",
    "random_ranked_tree",
    "crossing_count",
]

ULTRAMETRIC_TOLERANCE = 1e-9


class TreeError(ValueError):
    """Base class for malformed trees."""


class NewickSyntaxError(TreeError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class NonBinary(TreeError):
    pass


class NotUltrametric(TreeError):
    pass


class DuplicateLeafLabel(TreeError):
    pass


class DuplicateInternalDates(TreeError):
    pass


class InvalidDates(TreeError):
    """Dates that do not strictly increase toward the root."""


@dataclass(frozen=True)
class DatedTree:
    """A rooted binary tree with a date on every node.

    The root may have a single child; the edge above that child is then the
    root edge. Leaves sit at date 0.
    """

    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    label: tuple[str | None, ...]
    tau: tuple[Fraction, ...]
    kind: str = "gene"
    root: int = 0
    _by_label: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_by_label", {self.label[v]: v for v in self.leaves()}
        )

    def __len__(self) -> int:
        return len(self.parent)

    def nodes(self) -> range:
        return range(len(self.parent))

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    def leaves(self) -> list[int]:
        return [v for v in self.nodes() if not self.children[v]]

    def leaf(self, label: str) -> int:
        return self._by_label[label]

    @property
    def leaf_labels(self) -> list[str]:
        return sorted(self._by_label)

    @property
    def n_leaves(self) -> int:
        return len(self._by_label)

    @property
    def has_root_edge(self) -> bool:
        return len(self.children[self.root]) == 1

    @property
    def top(self) -> int:
        """The highest node with two children (or the lone leaf)."""
        if self.has_root_edge:
            return self.children[self.root][0]
        return self.root

    def postorder(self) -> list[int]:
        # preorder ids: every child has a larger id than its parent
        return list(reversed(self.nodes()))

    def ancestors(self, v: int) -> Iterator[int]:
        """Proper ancestors of v, bottom-up."""
        p = self.parent[v]
        while p is not None:
            yield p
            p = self.parent[p]

    def is_ancestor(self, a: int, v: int) -> bool:
        """True when a is v or an ancestor of v."""
        while v is not None:
            if v == a:
                return True
            v = self.parent[v]
        return False

    def subtree(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(self.children[x])
        return out

    def cluster(self, v: int) -> frozenset[str]:
        return frozenset(self.label[x] for x in self.subtree(v) if self.is_leaf(x))

    def clusters(self) -> frozenset[frozenset[str]]:
        """Leaf clusters of the nodes that have two children (or the lone leaf)."""
        return frozenset(
            self.cluster(v) for v in self.nodes() if len(self.children[v]) != 1
        )

    def lca(self, a: int, b: int) -> int:
        seen = {a, *self.ancestors(a)}
        if b in seen:
            return b
        for x in self.ancestors(b):
            if x in seen:
                return x
        raise ValueError("nodes are in different trees")


def _min_label(children, label, v, memo):
    if v not in memo:
        if children.get(v):
            memo[v] = min(_min_label(children, label, c, memo) for c in children[v])
        else:
            memo[v] = label[v]
    return memo[v]


def make_tree(
    children: Mapping[object, Sequence[object]],
    root: object,
    label: Mapping[object, str | None],
    tau: Mapping[object, Fraction | int],
    kind: str = "gene",
) -> DatedTree:
    """Build a canonical :class:`DatedTree` from arbitrary node keys.

    ``children`` maps every node key to its children (leaves map to an empty
    sequence or may be absent). Dates must strictly increase toward the root
    and leaves must sit at date 0.
    """
    memo: dict = {}
    order: list = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        kids = list(children.get(v, ()))
        if len(kids) > 2 or (len(kids) == 1 and v != root):
            raise NonBinary(f"node with {len(kids)} children")
        kids.sort(key=lambda c: _min_label(children, label, c, memo), reverse=True)
        stack.extend(kids)
    index = {v: i for i, v in enumerate(order)}
    parent: list[int | None] = [None] * len(order)
    kids_out: list[tuple[int, ...]] = []
    for v in order:
        kids = sorted(
            (index[c] for c in children.get(v, ())),
        )
        for c in kids:
            parent[c] = index[v]
        kids_out.append(tuple(kids))
    labels = tuple(label.get(v) for v in order)
    dates = tuple(Fraction(tau[v]) for v in order)
    seen: set[str] = set()
    for i, v in enumerate(order):
        if not kids_out[i]:
            if labels[i] is None or labels[i] == "":
                raise TreeError("leaf without label")
            if labels[i] in seen:
                raise DuplicateLeafLabel(labels[i])
            seen.add(labels[i])
            if dates[i] != 0:
                raise InvalidDates(f"leaf {labels[i]} is not at date 0")
        for c in kids_out[i]:
            if not dates[c] < dates[i]:
                raise InvalidDates("dates must increase strictly toward the root")
    if kind == "species":
        internal = [dates[i] for i in range(len(order)) if len(kids_out[i]) == 2]
        if len(set(internal)) != len(internal):
            raise DuplicateInternalDates("species tree has equal internal dates")
    return DatedTree(tuple(parent), tuple(kids_out), labels, dates, kind, 0)


# ---------------------------------------------------------------- Newick

_SPECIAL = set("()[]':;,") | set(" \t\r\n")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str):
        offset = len(self.text[: self.pos].encode("utf-8"))
        raise NewickSyntaxError(message, offset)

    def skip(self):
        t = self.text
        while self.pos < len(t):
            ch = t[self.pos]
            if ch.isspace():
                self.pos += 1
            elif ch == "[":
                end = t.find("]", self.pos)
                if end < 0:
                    self.error("unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self) -> str | None:
        t = self.text
        if self.peek() == "'":
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(t):
                    self.error("unterminated quoted label")
                ch = t[self.pos]
                if ch == "'":
                    if t[self.pos + 1 : self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(ch)
                self.pos += 1
        start = self.pos
        while self.pos < len(t) and t[self.pos] not in _SPECIAL:
            self.pos += 1
        return t[start : self.pos] or None

    def length(self) -> Fraction | None:
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        t = self.text
        while self.pos < len(t) and t[self.pos] not in _SPECIAL:
            self.pos += 1
        token = t[start : self.pos]
        try:
            value = Fraction(token)
        except (ValueError, ZeroDivisionError):
            self.pos = start
            self.error(f"bad branch length {token!r}")
        return value

    def subtree(self, nodes: list) -> int:
        me = len(nodes)
        nodes.append([[], None, None])
        if self.peek() == "(":
            self.pos += 1
            while True:
                nodes[me][0].append(self.subtree_with_length(nodes))
                ch = self.peek()
                if ch == ",":
                    self.pos += 1
                elif ch == ")":
                    self.pos += 1
                    break
                else:
                    self.error("expected ',' or ')'")
        nodes[me][1] = self.label()
        if not nodes[me][0] and nodes[me][1] is None:
            self.error("leaf without label")
        return me

    def subtree_with_length(self, nodes: list) -> int:
        v = self.subtree(nodes)
        length = self.length()
        if length is None:
            self.error("missing branch length")
        nodes[v][2] = length
        return v


def parse_newick(text: str | bytes, kind: str = "gene") -> DatedTree:
    """Parse a Newick string with mandatory branch lengths into a dated tree.

    A positive length on the root (or an explicit single-child root) becomes a
    root edge. Leaf depths may differ by at most 1e-9 of the tree height.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    p = _Parser(text)
    nodes: list = []
    root = p.subtree(nodes)
    root_length = p.length()
    if p.peek() != ";":
        p.error("expected ';'")
    p.pos += 1
    if p.peek() != "":
        p.error("trailing characters after ';'")

    if root_length is not None and root_length < 0:
        raise InvalidDates("negative root length")
    for v, (kids, _, length) in enumerate(nodes):
        if len(kids) > 2 or (len(kids) == 1 and v != root):
            raise NonBinary(f"node with {len(kids)} children")
    top = root
    stub_length = root_length or Fraction(0)
    if len(nodes[root][0]) == 1:
        top = nodes[root][0][0]
        stub_length = nodes[top][2]

    depth = {top: Fraction(0)}
    stack = [top]
    leaf_depths = []
    while stack:
        v = stack.pop()
        for c in nodes[v][0]:
            depth[c] = depth[v] + nodes[c][2]
            stack.append(c)
        if not nodes[v][0]:
            leaf_depths.append(depth[v])
    height = max(leaf_depths)
    if max(leaf_depths) - min(leaf_depths) > ULTRAMETRIC_TOLERANCE * float(height):
        raise NotUltrametric(
            f"leaf depths range from {float(min(leaf_depths))} to {float(height)}"
        )
    tau = {v: (height - d if nodes[v][0] else Fraction(0)) for v, d in depth.items()}
    children = {v: nodes[v][0] for v in depth}
    labels = {v: nodes[v][1] for v in depth}
    if stub_length > 0:
        children["stub"] = [top]
        labels["stub"] = nodes[root][1] if root != top else None
        tau["stub"] = tau[top] + stub_length
        return make_tree(children, "stub", labels, tau, kind)
    return make_tree(children, top, labels, tau, kind)


def _fmt(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    d = x.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d == 1:
        with localcontext() as ctx:
            ctx.prec = 200
            s = format(Decimal(x.numerator) / Decimal(x.denominator), "f")
        return s.rstrip("0").rstrip(".") if "." in s else s
    return repr(float(x))


def _quote(label: str) -> str:
    if any(ch in _SPECIAL for ch in label):
        return "'" + label.replace("'", "''") + "'"
    return label


def _write(tree: DatedTree, v: int, out: list, lengths: bool):
    kids = tree.children[v]
    if kids:
        out.append("(")
        for i, c in enumerate(kids):
            if i:
                out.append(",")
            _write(tree, c, out, lengths)
            if lengths:
                out.append(":" + _fmt(tree.tau[v] - tree.tau[c]))
        out.append(")")
    if tree.label[v] is not None:
        out.append(_quote(tree.label[v]))


def serialize_newick(tree: DatedTree) -> str:
    """Canonical Newick text; the root edge (if any) is the root's length."""
    out: list[str] = []
    top = tree.top
    _write(tree, top, out, True)
    if tree.has_root_edge:
        out.append(":" + _fmt(tree.tau[tree.root] - tree.tau[top]))
    else:
        out.append(":0")
    out.append(";")
    return "".join(out)


def topology_newick(tree: DatedTree) -> str:
    """Canonical Newick of the leaf-labelled topology, without lengths."""
    out: list[str] = []
    _write(tree, tree.top, out, False)
    out.append(";")
    return "".join(out)


def with_root_edge(tree: DatedTree) -> DatedTree:
    """Return the tree with a root edge, adding one of length 1 if needed."""
    if tree.has_root_edge:
        return tree
    children = {v: tree.children[v] for v in tree.nodes()}
    children["stub"] = [tree.root]
    label = {v: tree.label[v] for v in tree.nodes()}
    tau = {v: tree.tau[v] for v in tree.nodes()}
    tau["stub"] = tree.tau[tree.root] + 1
    return make_tree(children, "stub", label, tau, tree.kind)


def date_by_height(tree: DatedTree) -> DatedTree:
    """Re-date a tree so every node sits one unit above its highest child."""
    tau: dict[int, int] = {}
    for v in tree.postorder():
        tau[v] = 1 + max((tau[c] for c in tree.children[v]), default=-1)
    return make_tree(
        {v: tree.children[v] for v in tree.nodes()},
        tree.root,
        {v: tree.label[v] for v in tree.nodes()},
        tau,
        tree.kind,
    )


# ---------------------------------------------------------------- subdivision


@dataclass(frozen=True, order=True)
class Loc:
    """A position in the subdivided species tree.

    ``species`` is the species node at the bottom of the species edge holding
    the position (or the species node itself); ``rank`` is the integer date.
    Odd ranks are edges of the subdivision, even ranks are nodes.
    """

    species: int
    rank: int

    @property
    def is_edge(self) -> bool:
        return self.rank % 2 == 1

    def __str__(self) -> str:
        return f"{'e' if self.is_edge else 'n'}{self.species}@{self.rank}"


@dataclass(frozen=True)
class Subdivision:
    """A species tree with a root edge, dated by integer ranks 0..2n."""

    tree: DatedTree
    rank: tuple[int, ...]
    inserted: tuple[Loc, ...]

    @property
    def n(self) -> int:
        return self.tree.n_leaves

    @property
    def root(self) -> int:
        return self.tree.root

    @property
    def top(self) -> int:
        return self.tree.top

    @property
    def root_loc(self) -> Loc:
        return Loc(self.tree.root, self.rank[self.tree.root])

    def upper(self, v: int) -> int:
        """Rank of the top end of the species edge above v."""
        p = self.tree.parent[v]
        return self.rank[p] if p is not None else self.rank[v]

    def is_valid(self, loc: Loc) -> bool:
        v, r = loc.species, loc.rank
        if not 0 <= v < len(self.tree):
            return False
        if v == self.tree.root:
            return r == self.rank[v]
        return self.rank[v] <= r < self.upper(v)

    def is_species_node(self, loc: Loc) -> bool:
        return loc.rank == self.rank[loc.species]

    def is_speciation(self, loc: Loc) -> bool:
        v = loc.species
        return loc.rank == self.rank[v] and len(self.tree.children[v]) == 2

    def edge_locs(self, v: int) -> list[Loc]:
        """All subdivision edges along the species edge above v, bottom-up."""
        return [Loc(v, r) for r in range(self.rank[v] + 1, self.upper(v), 2)]

    def edges_at(self, r: int) -> list[int]:
        """Species nodes whose edge holds a subdivision edge of odd rank r."""
        return [
            v
            for v in self.tree.nodes()
            if v != self.tree.root and self.rank[v] < r < self.upper(v)
        ]

    def parent_loc(self, loc: Loc) -> Loc:
        v, r = loc.species, loc.rank
        if r + 1 < self.upper(v):
            return Loc(v, r + 1)
        p = self.tree.parent[v]
        return Loc(p, self.rank[p])

    def origin(self, loc: Loc) -> tuple[str, int]:
        """The species element a subdivision element belongs to."""
        if self.is_species_node(loc):
            return ("node", loc.species)
        return ("edge", loc.species)

    def leq(self, a: Loc, b: Loc) -> bool:
        """True when a equals b or lies below b on a root-ward path."""
        if a.rank > b.rank:
            return False
        return self.tree.is_ancestor(b.species, a.species)

    def comparable(self, a: Loc, b: Loc) -> bool:
        return self.leq(a, b) or self.leq(b, a)


def subdivide(species: DatedTree) -> Subdivision:
    """Rank the species tree and mark every internal date crossing an edge."""
    tree = with_root_edge(species)
    internal = [v for v in tree.nodes() if len(tree.children[v]) == 2]
    dates = sorted(tree.tau[v] for v in internal)
    if len(set(dates)) != len(dates):
        raise DuplicateInternalDates("species tree has equal internal dates")
    position = {d: 2 * (i + 1) for i, d in enumerate(dates)}
    n = tree.n_leaves
    rank = []
    for v in tree.nodes():
        if v == tree.root:
            rank.append(2 * n)
        elif tree.is_leaf(v):
            rank.append(0)
        else:
            rank.append(position[tree.tau[v]])
    tree = make_tree(
        {v: tree.children[v] for v in tree.nodes()},
        tree.root,
        {v: tree.label[v] for v in tree.nodes()},
        {v: tree.tau[v] for v in tree.nodes()},
        "species",
    )
    inserted = []
    for v in tree.nodes():
        if v == tree.root:
            continue
        lo, hi = rank[v], rank[tree.parent[v]]
        inserted.extend(Loc(v, r) for r in range(lo + 2, hi, 2))
    return Subdivision(tree, tuple(rank), tuple(inserted))


@dataclass(frozen=True)
class Slice:
    """One time slice: a speciation and the subdivision edges around it."""

    index: int
    speciation: int | None
    lower: tuple[Loc, ...]
    upper: tuple[Loc, ...]


def time_slices(sub: Subdivision) -> list[Slice]:
    """Slices from the leaves to the root edge; there are exactly n of them."""
    by_rank = {sub.rank[v]: v for v in sub.tree.nodes() if len(sub.tree.children[v]) == 2}
    out = []
    for i in range(1, sub.n + 1):
        lower = tuple(Loc(v, 2 * i - 1) for v in sub.edges_at(2 * i - 1))
        upper = tuple(Loc(v, 2 * i + 1) for v in sub.edges_at(2 * i + 1))
        out.append(Slice(i, by_rank.get(2 * i), lower, upper))
    return out


def crossing_count(species: DatedTree) -> int:
    """Count (edge, internal date) pairs where the date falls strictly inside the edge."""
    internal = [species.tau[v] for v in species.nodes() if len(species.children[v]) == 2]
    total = 0
    for v in species.nodes():
        p = species.parent[v]
        if p is None:
            continue
        total += sum(1 for d in internal if species.tau[v] < d < species.tau[p])
    return total


def random_ranked_tree(
    labels: Iterable[str], rng: random.Random, kind: str = "species"
) -> DatedTree:
    """Random binary tree by merging lineages at dates 1, 2, ...; root edge on top."""
    pool: list[object] = list(labels)
    children: dict[object, list] = {}
    tau: dict[object, int] = {x: 0 for x in pool}
    label = {x: x for x in pool}
    date = 0
    while len(pool) > 1:
        date += 1
        a, b = rng.sample(range(len(pool)), 2)
        node = ("n", date)
        children[node] = [pool[a], pool[b]]
        tau[node] = date
        pool = [x for i, x in enumerate(pool) if i not in (a, b)] + [node]
    children["stub"] = [pool[0]]
    tau["stub"] = date + 1
    return make_tree(children, "stub", label, tau, kind)
