"""Max 2-SAT formulas compiled into reconciliation instances.

A formula where every variable occurs exactly three times, with both
polarities, becomes a species tree and a gene tree. Truth assignments map to
proper reconciliations whose weight is 17n + 4m + f, where f counts the false
clauses. The instances are meant as structured test inputs; nothing here
solves Max 2-SAT.

Layout of the species tree, bottom-up by date: every cherry of every gadget,
the lower clause subtrees, the lower comb of each variable, the border, the
upper clause cherries, the upper comb of each variable, the upper clause
subtrees, gadget roots, anchors, and the comb joining all gadgets.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterable

from .recon import Reconciliation, classify_events, validate
from .treemodel import DatedTree, Loc, Subdivision, make_tree, subdivide

__all__ = [
    "FormulaInvariantViolated",
    "NotProper",
    "Cnf2Formula",
    "Assignment",
    "GadgetInstance",
    "anchor_size",
    "build_instance",
    "assignment_to_proper",
    "proper_to_assignment",
    "validate_proper",
    "clause_transfers",
]


class FormulaInvariantViolated(ValueError):
    pass


class NotProper(ValueError):
    pass


Literal = tuple[int, bool]


@dataclass(frozen=True)
class Cnf2Formula:
    """Clauses of two literals; a literal is (variable, positive?), variables 1..n."""

    n: int
    clauses: tuple[tuple[Literal, Literal], ...]

    @property
    def m(self) -> int:
        return len(self.clauses)

    def check(self) -> "Cnf2Formula":
        seen: dict[int, list[bool]] = {v: [] for v in range(1, self.n + 1)}
        for clause in self.clauses:
            if len(clause) != 2:
                raise FormulaInvariantViolated(f"clause {clause} does not have two literals")
            for v, pos in clause:
                if v not in seen:
                    raise FormulaInvariantViolated(f"variable {v} out of range 1..{self.n}")
                seen[v].append(pos)
        for v, signs in seen.items():
            if len(signs) != 3:
                raise FormulaInvariantViolated(
                    f"variable {v} occurs {len(signs)} times, expected 3"
                )
            if all(signs) or not any(signs):
                raise FormulaInvariantViolated(f"variable {v} occurs with one polarity only")
        return self

    def false_clauses(self, values: Iterable[bool]) -> int:
        values = tuple(values)
        return sum(
            not any(values[v - 1] == pos for v, pos in clause) for clause in self.clauses
        )

    def slots(self) -> dict[tuple[int, int], tuple[int, int]]:
        """(clause, position) -> (variable, slot) with slots 1, 2 for the doubled polarity."""
        out = {}
        for v in range(1, self.n + 1):
            occ = [
                (j, t, pos)
                for j, clause in enumerate(self.clauses)
                for t, (u, pos) in enumerate(clause)
                if u == v
            ]
            doubled = sum(pos for _, _, pos in occ) == 2
            k = 1
            for j, t, pos in occ:
                if pos == doubled:
                    out[(j, t)] = (v, k)
                    k += 1
                else:
                    out[(j, t)] = (v, 3)
        return out

    def doubled(self, v: int) -> bool:
        """The polarity that occurs twice for variable v."""
        return sum(pos for clause in self.clauses for u, pos in clause if u == v) == 2

    @classmethod
    def from_dimacs(cls, text: str) -> "Cnf2Formula":
        n = None
        clauses = []
        pending: list[int] = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("c") or line.startswith("%"):
                continue
            if line.startswith("p"):
                parts = line.split()
                if len(parts) != 4 or parts[1] != "cnf":
                    raise FormulaInvariantViolated(f"bad header: {line!r}")
                if not parts[2].isdigit():
                    raise FormulaInvariantViolated(f"bad header: {line!r}")
                n = int(parts[2])
                continue
            for tok in re.split(r"\s+", line):
                try:
                    x = int(tok)
                except ValueError:
                    raise FormulaInvariantViolated(f"not a literal: {tok!r}") from None
                if x == 0:
                    if len(pending) != 2:
                        raise FormulaInvariantViolated(
                            f"clause {pending} does not have two literals"
                        )
                    clauses.append(tuple((abs(y), y > 0) for y in pending))
                    pending = []
                else:
                    pending.append(x)
        if pending:
            raise FormulaInvariantViolated("last clause is not terminated by 0")
        if n is None:
            n = max((v for c in clauses for v, _ in c), default=0)
        return cls(n, tuple(clauses)).check()

    def to_dimacs(self) -> str:
        lines = [f"p cnf {self.n} {self.m}"]
        for clause in self.clauses:
            lines.append(" ".join(str(v if pos else -v) for v, pos in clause) + " 0")
        return "\n".join(lines) + "\n"

    @classmethod
    def generate(cls, n: int, rng: random.Random) -> "Cnf2Formula":
        """A random formula meeting the invariants; n must be even."""
        if n < 2 or n % 2:
            raise FormulaInvariantViolated("n must be even and at least 2")
        while True:
            occ = []
            for v in range(1, n + 1):
                twice = rng.random() < 0.5
                occ += [(v, twice), (v, twice), (v, not twice)]
            rng.shuffle(occ)
            clauses = tuple((occ[i], occ[i + 1]) for i in range(0, len(occ), 2))
            if all(a[0] != b[0] for a, b in clauses):
                return cls(n, clauses).check()


@dataclass(frozen=True)
class Assignment:
    values: tuple[bool, ...]
    f: int

    @classmethod
    def of(cls, formula: Cnf2Formula, values: Iterable[bool]) -> "Assignment":
        values = tuple(bool(x) for x in values)
        if len(values) != formula.n:
            raise ValueError(f"expected {formula.n} values, got {len(values)}")
        return cls(values, formula.false_clauses(values))


def anchor_size(n: int, m: int) -> int:
    """Leaves per anchor comb: more than the weight of any proper reconciliation."""
    return 17 * n + 5 * m + 1


# ---------------------------------------------------------------- instance

# Gene cherry k of a variable: leaves r (first) and l (second), as indices
# into the 28 gadget leaves A1..A28. Cherries 1..7 are positive, 8..14 negative.
def _cherry_leaves(k: int) -> tuple[int, int]:
    if k <= 7:
        return 2 * k - 1, 29 - 2 * k
    return 2 * k, 30 - 2 * k


def _species_cherry(part: str, i: int, a: int) -> str:
    """Species cherry hanging at index a (1..7) of a comb of variable i, top-down."""
    return f"L{i}.{a}" if part == "L" else f"R{i}.{8 - a}"


def _comb_item(comb: str, a: int) -> int:
    """Gene cherry hanging at index a of the positive or negative comb."""
    return a if comb == "cp" else 15 - a


@dataclass
class GadgetInstance:
    """Species and gene trees built from a formula, with named landmarks.

    ``sp`` and ``gn`` map landmark keys to node ids of ``sub.tree`` and of
    ``gene`` (which already carries its root edge). ``border`` is an odd rank
    lying above every lower comb node and below every upper comb node.
    """

    formula: Cnf2Formula
    species: DatedTree
    gene: DatedTree
    phi: dict[str, str]
    sub: Subdivision
    border: int
    anchors: int
    sp: dict[str, int] = field(repr=False)
    gn: dict[str, int] = field(repr=False)

    def node_loc(self, key: str) -> Loc:
        v = self.sp[key]
        return Loc(v, self.sub.rank[v])

    def edge_loc(self, key: str, rank: int) -> Loc:
        loc = Loc(self.sp[key], rank)
        if not (loc.is_edge and self.sub.is_valid(loc)):
            raise ValueError(f"rank {rank} is not on the edge above {key}")
        return loc

    def landmarks(self) -> dict:
        return {
            "border": self.border,
            "anchors": self.anchors,
            "species_nodes": {k: self.sp[k] for k in sorted(self.sp)},
            "gene_nodes": {k: self.gn[k] for k in sorted(self.gn)},
        }


def _key_ids(tree: DatedTree, children: dict[str, list[str]], root: str) -> dict[str, int]:
    by_cluster = {tree.cluster(v): v for v in tree.nodes() if v != tree.root}
    clusters: dict[str, frozenset[str]] = {}
    for key in reversed(_preorder(children, root)):
        kids = children.get(key, [])
        clusters[key] = (
            frozenset().union(*(clusters[c] for c in kids)) if kids else frozenset([key])
        )
    out = {k: by_cluster[c] for k, c in clusters.items() if k != root}
    out[root] = tree.root
    return out


def _preorder(children: dict[str, list[str]], root: str) -> list[str]:
    out, stack = [], [root]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(children.get(v, []))
    return out


def _species_layout(n: int, m: int, anchors: int):
    ch: dict[str, list[str]] = {}
    blocks: list[list[str]] = [[] for _ in range(9)]
    for i in range(1, n + 1):
        for k in range(1, 8):
            ch[f"L{i}.{k}"] = [f"A{i}.{2 * k - 1}", f"A{i}.{2 * k}"]
            ch[f"R{i}.{k}"] = [f"A{i}.{13 + 2 * k}", f"A{i}.{14 + 2 * k}"]
            blocks[0] += [f"L{i}.{k}", f"R{i}.{k}"]
        for part, block in (("L", 4), ("R", 2)):
            for a in range(6, 0, -1):
                below = _species_cherry(part, i, 7) if a == 6 else f"N{part}{i}.{a + 1}"
                ch[f"N{part}{i}.{a}"] = [below, _species_cherry(part, i, a)]
                blocks[block].append(f"N{part}{i}.{a}")
        ch[f"S{i}"] = [f"NL{i}.1", f"NR{i}.1"]
        blocks[6].append(f"S{i}")
        prev = f"S{i}"
        for k in range(1, anchors + 1):
            ch[f"D{i}.{k}"] = [prev, f"Z{i}.{k}"]
            prev = f"D{i}.{k}"
            blocks[7].append(prev)
    for j in range(1, m + 1):
        b = [f"B{j}.{k}" for k in range(1, 9)]
        ch[f"C{j}.12"], ch[f"C{j}.34"] = b[0:2], b[2:4]
        ch[f"C{j}.56"], ch[f"C{j}.78"] = b[4:6], b[6:8]
        ch[f"C{j}.1234"] = [f"C{j}.12", f"C{j}.34"]
        ch[f"C{j}.5678"] = [f"C{j}.56", f"C{j}.78"]
        ch[f"C{j}"] = [f"C{j}.1234", f"C{j}.5678"]
        blocks[0] += [f"C{j}.56", f"C{j}.78"]
        blocks[1].append(f"C{j}.5678")
        blocks[3] += [f"C{j}.12", f"C{j}.34"]
        blocks[5].append(f"C{j}.1234")
        blocks[6].append(f"C{j}")
    # the comb joining everything: SX1 (top) .. SXn, then SC1 .. SC(m-1)
    spine = [f"SX{i}" for i in range(1, n + 1)] + [f"SC{j}" for j in range(1, m)]
    hang = [f"D{i}.{anchors}" for i in range(1, n + 1)] + [f"C{j}" for j in range(1, m)]
    for t, key in enumerate(spine):
        ch[key] = [hang[t], spine[t + 1] if t + 1 < len(spine) else f"C{m}"]
    blocks[8] = spine[::-1]
    ch["root"] = [spine[0]]
    order = [k for block in blocks for k in block]
    tau = {k: 0 for kids in ch.values() for k in kids if k not in ch}
    tau.update({k: t + 1 for t, k in enumerate(order)})
    tau["root"] = len(order) + 1
    lower = len(blocks[0]) + len(blocks[1]) + len(blocks[2])
    return ch, tau, 2 * lower + 1


def _gene_layout(formula: Cnf2Formula, anchors: int):
    n, m = formula.n, formula.m
    ch: dict[str, list[str]] = {}
    phi: dict[str, str] = {}
    for i in range(1, n + 1):
        for k in range(1, 15):
            a, b = _cherry_leaves(k)
            ch[f"b{i}.{k}"] = [f"r{i}.{k}", f"l{i}.{k}"]
            phi[f"r{i}.{k}"], phi[f"l{i}.{k}"] = f"A{i}.{a}", f"A{i}.{b}"
        doubled = "cp" if formula.doubled(i) else "cn"
        for comb in ("cp", "cn"):
            splice = {3: 1, 4: 2} if comb == doubled else {3: 3}
            for a in range(1, 6):
                below = f"{comb}{i}.{a + 1}"
                if a in splice:
                    x = f"x{i}.{splice[a]}"
                    ch[x] = [below]  # literal root added below
                    below = x
                ch[f"{comb}{i}.{a}"] = [below, f"b{i}.{_comb_item(comb, a)}"]
            ch[f"{comb}{i}.6"] = [f"b{i}.{_comb_item(comb, 6)}", f"b{i}.{_comb_item(comb, 7)}"]
        ch[f"c{i}"] = [f"cp{i}.1", f"cn{i}.1"]
        prev = f"c{i}"
        for k in range(1, anchors + 1):
            ch[f"d{i}.{k}"] = [prev, f"a{i}.{k}"]
            phi[f"a{i}.{k}"] = f"Z{i}.{k}"
            prev = f"d{i}.{k}"
    slots = formula.slots()
    for j in range(1, m + 1):
        for k in range(1, 9):
            phi[f"g{j}.{k}"] = f"B{j}.{k}"
        pairs = {1: ((1, 7), (2, 6)), 2: ((3, 5), (4, 8))}
        for t in (1, 2):
            q = f"q{j}.{t}"
            ch[q] = [f"{q}.0", f"{q}.1"]
            for h in (0, 1):
                ch[f"{q}.{h}"] = [f"g{j}.{k}" for k in pairs[t][h]]
            v, s = slots[(j - 1, t - 1)]
            ch[f"x{v}.{s}"].append(q)
    for i in range(1, n):
        ch[f"dg{i}"] = [f"d{i}.{anchors}", f"dg{i + 1}" if i + 1 < n else f"d{n}.{anchors}"]
    ch["root"] = ["dg1" if n > 1 else f"d1.{anchors}"]
    tau: dict[str, int] = {}
    for key in reversed(_preorder(ch, "root")):
        tau[key] = 1 + max((tau[c] for c in ch.get(key, [])), default=-1)
    return ch, tau, phi


def build_instance(formula: Cnf2Formula) -> GadgetInstance:
    """Species tree, gene tree and leaf map for a checked formula."""
    formula.check()
    n, m = formula.n, formula.m
    anchors = anchor_size(n, m)
    sch, stau, border = _species_layout(n, m, anchors)
    species = make_tree(sch, "root", {k: k for k in stau if k not in sch}, stau, "species")
    sub = subdivide(species)
    gch, gtau, phi = _gene_layout(formula, anchors)
    gene = make_tree(gch, "root", {k: k for k in gtau if k not in gch}, gtau)
    return GadgetInstance(
        formula,
        species,
        gene,
        phi,
        sub,
        border,
        anchors,
        _key_ids(sub.tree, sch, "root"),
        _key_ids(gene, gch, "root"),
    )


# ---------------------------------------------------------------- placement


class _Placer:
    def __init__(self, inst: GadgetInstance):
        self.inst = inst
        self.r = Reconciliation.empty(inst.sub, inst.gene, inst.phi)
        self.losses: dict[Loc, int] = {}
        self.landings: list[int] = []
        self.anchor_top: dict[int, int] = {}

    def gene(self, key: str, loc: Loc, *kids: int) -> int:
        x = self.r.add(loc, gene=self.inst.gn[key])
        for c in kids:
            self.r.link(x, c)
        return x

    def added(self, loc: Loc, *kids: int) -> int:
        x = self.r.add(loc)
        for c in kids:
            self.r.link(x, c)
        return x

    def leaf(self, key: str) -> int:
        return self.gene(key, Loc(self.inst.sp[self.inst.phi[key]], 0))

    def loss(self, loc: Loc) -> int:
        if loc in self.losses:
            raise AssertionError(f"two losses at {loc}")
        self.losses[loc] = x = self.r.add(loc)
        return x

    def land(self, src: int, loc: Loc, child: int) -> int:
        z = self.added(loc, child)
        self.r.link(src, z)
        self.landings.append(z)
        return z

    def finish(self) -> Reconciliation:
        for z in self.landings:
            self.r.replaced[z] = self.losses.pop(self.r.rho[z])
        if self.losses:
            raise AssertionError(f"unreplaced losses at {sorted(self.losses)}")
        return classify_events(self.r)


def _pend(inst: GadgetInstance, leaf: str, rank: int = 1) -> Loc:
    return inst.edge_loc(leaf, rank)


def _place_pair(pl: _Placer, i: int, upper: str, lower: str, a: int) -> tuple[int, int]:
    """Gene cherries at comb index a; returns the nodes hanging from both combs.

    The cherry of the upper comb keeps its own leaf at a pendant edge of the
    left species cherry and sends the other leaf across. The lower one speciates
    at the right species cherry; its far leaf rides down the pendant the first
    cherry lands on and is sent back from there.
    """
    inst = pl.inst
    bu = f"b{i}.{_comb_item(upper, a)}"
    bw = f"b{i}.{_comb_item(lower, a)}"
    U = _species_cherry("L", i, a)
    side = {
        leaf: ("U" if inst.sub.tree.parent[inst.sp[inst.phi[leaf]]] == inst.sp[U] else "W")
        for b in (bu, bw)
        for leaf in (f"r{b[1:]}", f"l{b[1:]}")
    }
    pu, pw = sorted((f"r{bu[1:]}", f"l{bu[1:]}"), key=lambda x: side[x] != "U")
    qw, qu = sorted((f"r{bw[1:]}", f"l{bw[1:]}"), key=lambda x: side[x] != "W")
    P = pl.gene(bu, _pend(inst, inst.phi[pu]), pl.leaf(pu))
    pl.land(P, _pend(inst, inst.phi[pw]), pl.leaf(pw))
    su = pl.added(inst.node_loc(U), P, pl.loss(_pend(inst, inst.phi[qu])))
    y = pl.added(_pend(inst, inst.phi[pw]), pl.loss(_pend(inst, inst.phi[pw])))
    pl.land(y, _pend(inst, inst.phi[qu]), pl.leaf(qu))
    W = _species_cherry("R", i, a)
    Q = pl.gene(bw, inst.node_loc(W), pl.leaf(qw), y)
    return (su, Q) if upper == "cp" else (Q, su)


def _place_variable(pl: _Placer, i: int, value: bool) -> dict[int, int]:
    """Both combs of variable i; returns the literal transfer parents by slot."""
    inst = pl.inst
    upper, lower = ("cp", "cn") if value else ("cn", "cp")
    part = {upper: "L", lower: "R"}
    doubled = "cp" if inst.formula.doubled(i) else "cn"
    items = {"cp": {}, "cn": {}}
    for a in range(1, 8):
        items["cp"][a], items["cn"][a] = _place_pair(pl, i, upper, lower, a)
    xs: dict[int, int] = {}
    tops = []
    for comb in ("cp", "cn"):
        splice = {3: 1, 4: 2} if comb == doubled else {3: 3}
        below = pl.gene(
            f"{comb}{i}.6", inst.node_loc(f"N{part[comb]}{i}.6"), items[comb][6], items[comb][7]
        )
        for a in range(5, 0, -1):
            if a in splice:
                v = inst.sp[f"N{part[comb]}{i}.{a + 1}"]
                loc = Loc(v, inst.sub.rank[v] + 1)
                below = xs[splice[a]] = pl.gene(f"x{i}.{splice[a]}", loc, below)
            below = pl.gene(
                f"{comb}{i}.{a}", inst.node_loc(f"N{part[comb]}{i}.{a}"), below, items[comb][a]
            )
        tops.append(below)
    x = pl.gene(f"c{i}", inst.node_loc(f"S{i}"), *tops)
    for k in range(1, inst.anchors + 1):
        x = pl.gene(f"d{i}.{k}", inst.node_loc(f"D{i}.{k}"), x, pl.leaf(f"a{i}.{k}"))
    pl.anchor_top[i] = x
    return xs


_PAIRS = {1: ((1, 7), (2, 6)), 2: ((3, 5), (4, 8))}


def _clause_case(t1: bool, t2: bool) -> int:
    return {(True, False): 1, (False, True): 2, (True, True): 3, (False, False): 4}[(t1, t2)]


def _place_clause(pl: _Placer, j: int, case: int, src: dict[int, int]) -> int:
    """Literal subtrees and the lost lineage of clause j; returns the lost root."""
    inst, r = pl.inst, pl.r
    B = lambda k: f"B{j}.{k}"  # noqa: E731
    C = lambda s: f"C{j}.{s}"  # noqa: E731
    tx = {t: r.tau(src[t]) for t in (1, 2)}

    def cherry(key: str, keep: int, send: int, rank: int = 1) -> int:
        x = pl.gene(key, _pend(inst, B(keep), rank), pl.leaf(f"g{j}.{keep}"))
        pl.land(x, _pend(inst, B(send), rank), pl.leaf(f"g{j}.{send}"))
        return x

    def at_top(t: int) -> Loc:
        q = f"q{j}.{t}"
        (k0, s0), (k1, s1) = _PAIRS[t]
        node = C("12") if t == 1 else C("34")
        x = pl.gene(q, inst.node_loc(node), cherry(f"{q}.0", k0, s0), cherry(f"{q}.1", k1, s1))
        pl.land(src[t], inst.edge_loc(node, tx[t]), x)

    def at_bottom(t: int):
        # the pair sides swap: each literal cherry keeps its lower-half leaf
        q = f"q{j}.{t}"
        (s0, k0), (s1, k1) = _PAIRS[t]
        c0, c1 = cherry(f"{q}.0", k0, s0), cherry(f"{q}.1", k1, s1)
        under = {k0: c0, k1: c1}
        h56 = under.get(5) or under.get(6)
        h78 = under.get(7) or under.get(8)
        free56 = 6 if 5 in under else 5
        free78 = 8 if 7 in under else 7
        x = pl.gene(
            q,
            inst.node_loc(C("5678")),
            pl.added(inst.node_loc(C("56")), h56, pl.loss(_pend(inst, B(free56)))),
            pl.added(inst.node_loc(C("78")), h78, pl.loss(_pend(inst, B(free78)))),
        )
        pl.land(src[t], inst.edge_loc(C("5678"), tx[t]), x)

    def lost_cherry(node: str, a: int, b: int, rank: int = 1) -> int:
        return pl.added(
            inst.node_loc(node),
            pl.loss(_pend(inst, B(a), rank)),
            pl.loss(_pend(inst, B(b), rank)),
        )

    if case == 1:
        at_top(1)
        at_bottom(2)
        up = [pl.loss(inst.edge_loc(C("12"), tx[1])), lost_cherry(C("34"), 3, 4)]
        down = pl.loss(inst.edge_loc(C("5678"), tx[2]))
    elif case == 2:
        at_bottom(1)
        at_top(2)
        up = [lost_cherry(C("12"), 1, 2), pl.loss(inst.edge_loc(C("34"), tx[2]))]
        down = pl.loss(inst.edge_loc(C("5678"), tx[1]))
    elif case == 3:
        at_top(1)
        at_top(2)
        up = [pl.loss(inst.edge_loc(C("12"), tx[1])), pl.loss(inst.edge_loc(C("34"), tx[2]))]
        down = pl.added(
            inst.node_loc(C("5678")), lost_cherry(C("56"), 5, 6), lost_cherry(C("78"), 7, 8)
        )
    else:
        # both literals below the border: the second one lands on the B3
        # pendant and needs one more transfer to reach B4
        at_bottom(1)
        q = f"q{j}.2"
        x = pl.gene(q, _pend(inst, B(3), tx[2]), cherry(f"{q}.0", 3, 5))
        pl.land(x, _pend(inst, B(4), tx[2]), cherry(f"{q}.1", 4, 8))
        pl.land(src[2], _pend(inst, B(3), tx[2]), x)
        up = [lost_cherry(C("12"), 1, 2), lost_cherry(C("34"), 3, 4, tx[2])]
        down = pl.loss(inst.edge_loc(C("5678"), tx[1]))
    return pl.added(inst.node_loc(f"C{j}"), pl.added(inst.node_loc(C("1234")), *up), down)


def assignment_to_proper(
    inst: GadgetInstance, values: Assignment | Iterable[bool]
) -> Reconciliation:
    """The proper reconciliation encoding a truth assignment."""
    formula = inst.formula
    if isinstance(values, Assignment):
        values = values.values
    a = Assignment.of(formula, values)
    n, m = formula.n, formula.m
    pl = _Placer(inst)
    xs = {i: _place_variable(pl, i, a.values[i - 1]) for i in range(1, n + 1)}
    slots = formula.slots()
    lost = []
    for j, clause in enumerate(formula.clauses, start=1):
        truth = [a.values[v - 1] == pos for v, pos in clause]
        src = {}
        for t in (1, 2):
            v, s = slots[(j - 1, t - 1)]
            src[t] = xs[v][s]
        lost.append(_place_clause(pl, j, _clause_case(*truth), src))
    # the comb above the clauses carries one lost lineage
    x = lost[-1]
    for j in range(m - 1, 0, -1):
        x = pl.added(inst.node_loc(f"SC{j}"), lost[j - 1], x)
    top = pl.added(inst.node_loc(f"SX{n}"), pl.anchor_top[n], x)
    for i in range(n - 1, 0, -1):
        top = pl.gene(f"dg{i}", inst.node_loc(f"SX{i}"), pl.anchor_top[i], top)
    pl.r.root = pl.gene("root", inst.sub.root_loc, top)
    return pl.finish()


# ---------------------------------------------------------------- recognition


def _on_pendant(inst: GadgetInstance, r: Reconciliation, key: str, leaf: str) -> bool:
    loc = r.rho[inst.gn[key]]
    return loc.is_edge and loc.species == inst.sp[leaf]


def _at(inst: GadgetInstance, r: Reconciliation, key: str, node: str) -> bool:
    return r.rho[inst.gn[key]] == inst.node_loc(node)


def _clause_shape(inst: GadgetInstance, r: Reconciliation, j: int) -> int | None:
    """Which of the four clause layouts r uses for clause j, if any."""
    q = lambda t, h="": f"q{j}.{t}{h}"  # noqa: E731
    pend = lambda t, h, k: _on_pendant(inst, r, q(t, h), f"B{j}.{k}")  # noqa: E731
    top1 = _at(inst, r, q(1), f"C{j}.12") and pend(1, ".0", 1) and pend(1, ".1", 2)
    low1 = _at(inst, r, q(1), f"C{j}.5678") and pend(1, ".0", 7) and pend(1, ".1", 6)
    top2 = _at(inst, r, q(2), f"C{j}.34") and pend(2, ".0", 3) and pend(2, ".1", 4)
    low2 = _at(inst, r, q(2), f"C{j}.5678") and pend(2, ".0", 5) and pend(2, ".1", 8)
    side2 = pend(2, "", 3) and pend(2, ".0", 3) and pend(2, ".1", 4)
    if top1 and low2:
        return 1
    if low1 and top2:
        return 2
    if top1 and top2:
        return 3
    if low1 and side2:
        return 4
    return None


def validate_proper(r: Reconciliation, inst: GadgetInstance) -> tuple[bool, dict | None]:
    """Whether r is a proper reconciliation of the instance, with a witness if not."""
    for p, c in r.transfers():
        if r.tau(p) != r.tau(c):
            return False, {"reason": "diagonal transfer", "nodes": [p, c]}
    bad = validate(r)
    if bad:
        return False, {"reason": "invalid", "violations": [v.as_dict() for v in bad]}
    formula = inst.formula
    fixed = [("root", None)]
    for i in range(1, formula.n + 1):
        fixed.append((f"c{i}", f"S{i}"))
        fixed += [(f"d{i}.{k}", f"D{i}.{k}") for k in range(1, inst.anchors + 1)]
    fixed += [(f"dg{i}", f"SX{i}") for i in range(1, formula.n)]
    for key, node in fixed[1:]:
        if not _at(inst, r, key, node):
            return False, {"reason": "anchor moved", "gene": key, "expected": node}
    for i in range(1, formula.n + 1):
        up = "cp" if _at(inst, r, f"cp{i}.1", f"NL{i}.1") else "cn"
        part = {up: "L", ("cn" if up == "cp" else "cp"): "R"}
        for comb, side in part.items():
            for a in range(1, 7):
                if not _at(inst, r, f"{comb}{i}.{a}", f"N{side}{i}.{a}"):
                    return False, {
                        "reason": "comb off its species comb",
                        "gene": f"{comb}{i}.{a}",
                        "expected": f"N{side}{i}.{a}",
                    }
    for j in range(1, formula.m + 1):
        if _clause_shape(inst, r, j) is None:
            return False, {"reason": "clause layout not recognized", "clause": j}
    return True, None


def proper_to_assignment(r: Reconciliation, inst: GadgetInstance) -> Assignment:
    """Read the truth assignment back from a proper reconciliation."""
    ok, witness = validate_proper(r, inst)
    if not ok:
        raise NotProper(witness)
    values = tuple(
        _at(inst, r, f"cp{i}.1", f"NL{i}.1") for i in range(1, inst.formula.n + 1)
    )
    f = sum(_clause_shape(inst, r, j) == 4 for j in range(1, inst.formula.m + 1))
    return Assignment(values, f)


def clause_transfers(r: Reconciliation, inst: GadgetInstance) -> list[int]:
    """Transfers leaving each clause subtree, in clause order."""
    tree = inst.sub.tree
    out = []
    for j in range(1, inst.formula.m + 1):
        top = inst.sp[f"C{j}"]
        out.append(sum(tree.is_ancestor(top, r.rho[p].species) for p, _ in r.transfers()))
    return out
