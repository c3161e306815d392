"""Parametric branch and bound for minimum transfer-with-replacement reconciliations.

The search sweeps the species tree slice by slice, from the leaves to the
root edge. In each slice it looks at the two gene lineages entering the
speciation. A lost lineage or a pair of siblings coalesces for free.
Otherwise the search branches: hold either lineage for a later diagonal
transfer, or place their lowest common ancestor at the speciation and expand
every gene node still missing below it, one transfer each.

Two further moves let held lineages travel on edges other than their own.
An edge whose lineage was replaced can pick up a held lineage at its top,
and the common ancestor can be placed just below the speciation on one side
so that the other side is free for a held lineage.

The search keeps only a compact state per slice. The winning branch is
remembered as its list of decisions and replayed once to build the full
reconciliation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from itertools import product as _product
from typing import Mapping

from .recon import Reconciliation
from .treemodel import DatedTree, Loc, Subdivision, subdivide, time_slices, with_root_edge

__all__ = [
    "SolverError",
    "PhiNotBijective",
    "LeafSetMismatch",
    "SolveStats",
    "solve",
    "solve_with_stats",
]

LOST = -1
HOLD_LEFT, HOLD_RIGHT, MEET, MEET_LEFT, MEET_RIGHT = "a1", "a2", "b", "b1", "b2"


class SolverError(ValueError):
    pass


class PhiNotBijective(SolverError):
    pass


class LeafSetMismatch(SolverError):
    pass


@dataclass
class SolveStats:
    branch_nodes: int = 0
    max_depth: int = 0
    completions: int = 0
    best_weight: int | None = None
    best_encounters: int = 0
    paths_at_best: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "branch_nodes": self.branch_nodes,
            "max_depth": self.max_depth,
            "completions": self.completions,
            "transfers": self.best_weight,
        }


def tie_coin(seed: int, path: tuple[str, ...]) -> bool:
    """Seeded fair coin for one equal-weight encounter, keyed by its branch."""
    digest = hashlib.blake2b(f"{seed}:{'/'.join(path)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") < 1 << 63


class _Problem:
    """Precomputed tables shared by the search and the replay."""

    def __init__(self, gene: DatedTree, species: DatedTree | Subdivision, phi):
        self.sub = species if isinstance(species, Subdivision) else subdivide(species)
        self.gene = with_root_edge(gene)
        g, s = self.gene, self.sub.tree
        identity = phi is None
        if identity:
            phi = {g.label[x]: g.label[x] for x in g.leaves()}
        self.phi = dict(phi)
        if set(self.phi) != set(g.leaf_labels):
            raise LeafSetMismatch("phi must cover exactly the gene leaves")
        if sorted(self.phi.values()) != s.leaf_labels:
            if not identity and set(self.phi.values()) <= set(s.leaf_labels):
                raise PhiNotBijective("phi is not a bijection onto the species leaves")
            raise LeafSetMismatch("phi maps to labels missing from the species tree")
        self.leaf_of = {s.leaf(self.phi[g.label[x]]): x for x in g.leaves()}
        self.slices = time_slices(self.sub)
        self.mask = [0] * len(g)
        for x in g.postorder():
            m = 1 << x
            for c in g.children[x]:
                m |= self.mask[c]
            self.mask[x] = m
        self.all_mask = self.mask[g.top]
        self.leaves_mask = sum(1 << x for x in g.leaves())

    def lca(self, a: int, b: int) -> int:
        return self.gene.lca(a, b)

    def inside(self, x: int, y: int) -> bool:
        return bool(self.mask[x] >> y & 1)

    def initial(self) -> dict[int, int]:
        return dict(self.leaf_of)

    def can_transfer(self, src: Loc, dst: Loc) -> bool:
        return dst.rank <= src.rank and not self.sub.comparable(src, dst)

    def plan(self, expanded: int, handle: dict[int, Loc], need: dict[int, Loc]):
        """Pick the child lineage each expanded gene node sits on.

        ``handle`` gives the location of every lineage top that the expanded
        nodes connect to, ``need`` the location each subtree root must end on.
        The other child of a node is reached by a transfer, which must go to
        an incomparable location no later than the node itself. Returns
        ``{node: anchor child}`` or None when no such choice exists.
        """
        g = self.gene
        opts: dict[int, dict[Loc, tuple[int, Loc]]] = {}

        def options(y):
            return opts[y] if expanded >> y & 1 else {handle[y]: None}

        for u in g.postorder():
            if not expanded >> u & 1:
                continue
            a, b = g.children[u]
            got: dict[Loc, tuple[int, Loc]] = {}
            for anc, oth in ((a, b), (b, a)):
                targets = options(oth)
                for h in options(anc):
                    if h in got:
                        continue
                    for h2 in targets:
                        if self.can_transfer(h, h2):
                            got[h] = (anc, h2)
                            break
            opts[u] = got
        for y, h in need.items():
            if h not in options(y):
                return None
        anchor: dict[int, int] = {}
        stack = list(need.items())
        while stack:
            y, h = stack.pop()
            if not expanded >> y & 1:
                continue
            anc, h2 = opts[y][h]
            anchor[y] = anc
            oth = g.children[y][1] if anc == g.children[y][0] else g.children[y][0]
            stack.append((anc, h))
            stack.append((oth, h2))
        return anchor

    def handles(self, cur: dict[int, int], held, lo: int) -> dict[int, Loc]:
        out = {x: Loc(v, lo) for v, x in cur.items() if x != LOST}
        out.update((x, Loc(v, rank)) for x, v, rank in held)
        return out

    def revivals(self, i, cur, held, sides, lo):
        """Ways to hand held lineages to lost edges ending at this slice.

        A lost edge carries nothing above its replaced gene, so a transfer
        from its top may pick up a held lineage, which then continues on
        that edge. Yields (codes, new current map, new held tuple).
        """
        lost = [v for v in sides if cur[v] == LOST]
        options = []
        for v in lost:
            src = Loc(v, lo)
            options.append([None] + [h for h in held if self.can_transfer(src, Loc(h[1], h[2]))])
        for choice in _product(*options):
            picked = [(v, h) for v, h in zip(lost, choice) if h is not None]
            if not picked or len({h for _, h in picked}) < len(picked):
                continue
            ncur = dict(cur)
            for v, h in picked:
                ncur[v] = h[0]
            gone = {h for _, h in picked}
            codes = tuple(f"{i}.r{v}:{h[0]}" for v, h in picked)
            yield codes, ncur, tuple(h for h in held if h not in gone)

    def steps(self, i, cur, held, placed):
        """Successor states for a slice whose two lineages are both present.

        Each entry is (code, same slice?, cur, held, placed, added transfers).
        """
        sl = self.slices[i]
        s0 = sl.speciation
        c1, c2 = self.sub.tree.children[s0]
        e1, e2 = cur[c1], cur[c2]
        lo = 2 * sl.index - 1
        rest = {v: x for v, x in cur.items() if v != c1 and v != c2}
        out = []
        x = self.lca(e1, e2)
        if self.gene.parent[e1] == self.gene.parent[e2]:
            out.append((None, False, {**rest, s0: x}, held, placed | 1 << x, 0))
        else:
            for code, v, e in ((HOLD_LEFT, c1, e1), (HOLD_RIGHT, c2, e2)):
                out.append((f"{i}.{code}", True, {**cur, v: LOST}, held + ((e, v, lo),), placed, 0))
            below = self.mask[x] & ~(1 << x)
            expanded = below & ~placed
            need = {self.child_toward(x, e1): Loc(c1, lo), self.child_toward(x, e2): Loc(c2, lo)}
            if not expanded or self.plan(expanded, self.handles(cur, held, lo), need) is not None:
                ncur = {v: (LOST if y != LOST and below >> y & 1 else y) for v, y in rest.items()}
                ncur[s0] = x
                kept = tuple(h for h in held if not below >> h[0] & 1)
                out.append((f"{i}.{MEET}", False, ncur, kept, placed | expanded | 1 << x,
                            bin(expanded).count("1")))
        # x just below the speciation on one side, freeing the other side for a held lineage
        sub_x = self.mask[x]
        for code, side, other in ((MEET_LEFT, c1, c2), (MEET_RIGHT, c2, c1)):
            src = Loc(other, lo)
            if not any(not sub_x >> h[0] & 1 and self.can_transfer(src, Loc(h[1], h[2])) for h in held):
                continue
            expanded = sub_x & ~placed
            if self.plan(expanded, self.handles(cur, held, lo), {x: Loc(side, lo)}) is None:
                continue
            ncur = {v: (LOST if y != LOST and sub_x >> y & 1 else y) for v, y in cur.items()}
            ncur[side] = x
            kept = tuple(h for h in held if not sub_x >> h[0] & 1)
            out.append((f"{i}.{code}", True, ncur, kept, placed | expanded, bin(expanded).count("1")))
        return out

    def child_toward(self, x: int, y: int) -> int:
        """The child of x whose subtree holds y."""
        a, b = self.gene.children[x]
        return a if self.inside(a, y) else b


class _Search:
    def __init__(self, prob: _Problem, k: int, seed: int):
        self.p = prob
        self.k = k
        self.seed = seed
        self.best: int | None = None
        self.best_path: tuple[str, ...] | None = None
        self.stats = SolveStats()

    def limit(self) -> int:
        return self.k if self.best is None else min(self.k, self.best)

    def run(self):
        p = self.p
        self._visit(0, p.initial(), (), p.leaves_mask, 0, ())

    def _branch(self, path, ways: int):
        if ways > 1:
            self.stats.branch_nodes += 1
            self.stats.max_depth = max(self.stats.max_depth, len(path) + 1)

    def _visit(self, i, cur, held, placed, t, path, fresh=True):
        if t + len(held) > self.limit():
            return
        p = self.p
        sl = p.slices[i]
        if sl.speciation is None:
            self._finish(cur, held, placed, t, path)
            return
        s0 = sl.speciation
        c1, c2 = p.sub.tree.children[s0]
        lo = 2 * sl.index - 1
        if fresh and held and LOST in (cur[c1], cur[c2]):
            moves = list(p.revivals(i, cur, held, (c1, c2), lo))
            self._branch(path, len(moves) + 1)
            self._visit(i, cur, held, placed, t, path, False)
            for codes, ncur, nheld in moves:
                self._visit(i, ncur, nheld, placed, t + len(codes), path + codes, False)
            return
        e1, e2 = cur[c1], cur[c2]
        if LOST in (e1, e2):
            nxt = {v: x for v, x in cur.items() if v != c1 and v != c2}
            nxt[s0] = e2 if e1 == LOST else e1
            self._visit(i + 1, nxt, held, placed, t, path)
            return
        steps = p.steps(i, cur, held, placed)
        self._branch(path, len(steps))
        for code, same, ncur, nheld, nplaced, dt in steps:
            npath = path if code is None else path + (code,)
            self._visit(i if same else i + 1, ncur, nheld, nplaced, t + dt, npath)

    def _finish(self, cur, held, placed, t, path):
        p = self.p
        ((v, top),) = cur.items()
        if top == LOST:
            return
        rest = p.all_mask & ~placed
        w = t + bin(rest).count("1")
        if w > self.limit():
            return
        if rest or held:
            lo = 2 * p.slices[-1].index - 1
            need = {p.gene.top: Loc(v, lo)}
            if p.plan(rest, p.handles(cur, held, lo), need) is None:
                return
        self.stats.completions += 1
        if self.best is None or w < self.best:
            self.best, self.best_path = w, path
            self.stats.best_encounters = 1
            self.stats.paths_at_best = [path]
        elif w == self.best:
            self.stats.best_encounters += 1
            self.stats.paths_at_best.append(path)
            if tie_coin(self.seed, path):
                self.best_path = path


def _build(prob: _Problem, path: tuple[str, ...]) -> Reconciliation:
    """Replay a branch decision list into a full reconciliation."""
    g, sub = prob.gene, prob.sub
    r = Reconciliation.empty(sub, g, prob.phi)
    top: dict[int, int] = {}
    live: dict[int, int] = {}
    held: dict[int, int] = {}
    for v, leaf in prob.leaf_of.items():
        top[v] = r.add(Loc(v, 0), gene=leaf)
        live[v] = leaf
    placed = prob.leaves_mask
    codes = [c.split(".", 1) for c in path]
    pos = 0

    def expand(expanded: int, lo: int, need: dict[int, Loc]):
        """Place the expanded gene nodes on the lineages chosen by the plan."""
        handle = {x: Loc(v, lo) for v, x in live.items() if x != LOST}
        handle.update((x, r.rho[c]) for x, c in held.items())
        anchor = prob.plan(expanded, handle, need)
        if anchor is None:
            raise SolverError("replayed branch has no valid transfer layout")
        where_of = {x: ("cur", v) for v, x in live.items() if x != LOST}
        where_of.update((x, ("held", c)) for x, c in held.items())
        for u in g.postorder():
            if not expanded >> u & 1:
                continue
            anc = anchor[u]
            other = next(c for c in g.children[u] if c != anc)
            kind, where = where_of[anc]
            if kind == "cur":
                node = r.add(Loc(where, lo), gene=u)
                r.link(node, top[where])
                top[where] = node
            else:
                node = r.add(r.rho[where], gene=u)
                (below,) = r.children[where]
                r.link(node, below)
                r.link(where, node)
            where_of[u] = (kind, where)
            okind, owhere = where_of[other]
            if okind == "cur":
                loc = Loc(owhere, lo)
                c = r.add(loc)
                loss = r.add(loc)
                r.link(c, top[owhere])
                r.link(node, c)
                r.replaced[c] = loss
                top[owhere] = loss
                live[owhere] = LOST
            else:
                r.link(node, owhere)
        for x in [x for x in held if expanded >> g.parent[x] & 1]:
            del held[x]

    def hold(v: int, lo: int):
        loc = Loc(v, lo)
        c = r.add(loc)
        loss = r.add(loc)
        r.link(c, top[v])
        r.replaced[c] = loss
        held[live[v]] = c
        top[v] = loss
        live[v] = LOST

    for i, sl in enumerate(prob.slices):
        lo = 2 * sl.index - 1
        if sl.speciation is None:
            ((v, x),) = live.items()
            rest = prob.all_mask & ~placed
            if rest or held:
                expand(rest, lo, {g.top: Loc(v, lo)})
            r.root = r.add(sub.root_loc, gene=g.root)
            r.link(r.root, top[v])
            break
        s0 = sl.speciation
        c1, c2 = sub.tree.children[s0]
        at = Loc(s0, 2 * sl.index)
        while True:
            while pos < len(codes) and codes[pos][0] == str(i) and codes[pos][1][0] == "r":
                v, x = map(int, codes[pos][1][1:].split(":"))
                y = r.add(Loc(v, lo))
                r.link(y, top[v])
                r.link(y, held.pop(x))
                top[v] = y
                live[v] = x
                pos += 1
            e1, e2 = live[c1], live[c2]
            if LOST in (e1, e2):
                node = r.add(at)
                live[s0] = e2 if e1 == LOST else e1
                break
            code = codes[pos][1] if pos < len(codes) and codes[pos][0] == str(i) else None
            if code is None:
                node = r.add(at, gene=g.parent[e1])
                live[s0] = g.parent[e1]
                placed |= 1 << g.parent[e1]
                break
            pos += 1
            if code in (HOLD_LEFT, HOLD_RIGHT):
                hold(c1 if code == HOLD_LEFT else c2, lo)
                continue
            x = prob.lca(e1, e2)
            if code == MEET:
                below = prob.mask[x] & ~(1 << x)
                expanded = below & ~placed
                if expanded:
                    need = {prob.child_toward(x, e1): Loc(c1, lo), prob.child_toward(x, e2): Loc(c2, lo)}
                    expand(expanded, lo, need)
                placed |= below | 1 << x
                node = r.add(at, gene=x)
                live[s0] = x
                break
            side = c1 if code == MEET_LEFT else c2
            expanded = prob.mask[x] & ~placed
            expand(expanded, lo, {x: Loc(side, lo)})
            placed |= expanded
            live[side] = x
        r.link(node, top.pop(c1))
        r.link(node, top.pop(c2))
        del live[c1], live[c2]
        top[s0] = node
    if pos != len(codes):
        raise SolverError("replay left branch decisions unused")
    return r


def solve_with_stats(
    gene: DatedTree,
    species: DatedTree | Subdivision,
    phi: Mapping[str, str] | None,
    k: int,
    seed: int = 0,
) -> tuple[Reconciliation | None, SolveStats]:
    """Run the branch and bound; return the reconciliation (or None) and counters."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    prob = _Problem(gene, species, phi)
    search = _Search(prob, k, seed)
    search.run()
    stats = search.stats
    stats.best_weight = search.best
    if search.best_path is None:
        return None, stats
    return _build(prob, search.best_path), stats


def solve(
    gene: DatedTree,
    species: DatedTree | Subdivision,
    phi: Mapping[str, str] | None,
    k: int,
    seed: int = 0,
) -> Reconciliation | None:
    """A normalized minimum-transfer reconciliation of weight at most k, or None."""
    return solve_with_stats(gene, species, phi, k, seed)[0]
