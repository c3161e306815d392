"""Rewrites that bring a T_R reconciliation to the form the solver enumerates.

Two rewrites keep the number of transfers fixed. Adjustment moves a transfer
that starts on an added node of G' up to a node of G. Raising lifts a node
along its own lineage toward its parent. :func:`normalize` applies all
adjustments, then raises transfer children and transfer parents as far as
they go, and records each step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .recon import Event, Reconciliation, classify_events, validate
from .treemodel import Loc

__all__ = [
    "NormalizeError",
    "NotAdjustable",
    "InvalidTransfer",
    "RaiseBlocked",
    "Rewrite",
    "NormalizationTrace",
    "adjust_transfer",
    "raise_node",
    "normalize",
    "is_normalized",
]


class NormalizeError(ValueError):
    pass


class NotAdjustable(NormalizeError):
    pass


class InvalidTransfer(NormalizeError):
    pass


class RaiseBlocked(NormalizeError):
    pass


@dataclass(frozen=True)
class Rewrite:
    kind: str
    node: int
    before: Loc
    after: Loc

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "node": self.node,
            "before": str(self.before),
            "after": str(self.after),
            "rank": self.after.rank,
        }


@dataclass
class NormalizationTrace:
    steps: list[Rewrite] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def as_dict(self) -> dict:
        return {"steps": [s.as_dict() for s in self.steps]}


# ---------------------------------------------------------------- queries


def _top_gene(r: Reconciliation) -> int:
    """root(G): the gene node just below the root edge."""
    (c,) = r.gene.children[r.gene.root]
    return c


def _transfer_child(r: Reconciliation, x: int) -> int | None:
    for c in r.children[x]:
        if r.is_transfer_edge(x, c):
            return c
    return None


def _lost_edges(r: Reconciliation, l: int, lost: set[int]) -> int:
    """Edges of the lost subtree ending in loss ``l``, counting its attachment."""
    top = l
    while r.parent[top] in lost:
        top = r.parent[top]
    return len(r.subtree(top))


def is_normalized(r: Reconciliation) -> tuple[bool, int | None]:
    """Whether r is normalized, and the first transfer parent that is not."""
    if not r.events:
        classify_events(r)
    sub = r.species
    lost = r.lost_nodes()
    root_g = _top_gene(r)
    for p, c in sorted(r.transfers(), key=lambda e: e[1]):
        if not r.in_gene(p):
            return False, p
        y = p
        while True:
            q = r.parent[y]
            if q is None or r.tau(q) > r.tau(p) + 1 or not sub.leq(r.rho[p], r.rho[q]):
                break
            y = q
        if r.tau(y) == r.tau(p):
            ok = r.events[y] == Event.TRANSFER_CHILD
        elif r.tau(y) == r.tau(p) + 1:
            ok = y == root_g or (r.events[y] == Event.SPECIATION and r.in_gene(y))
        else:
            ok = False
        if not ok:
            return False, p
        if r.tau(c) < r.tau(p) and _lost_edges(r, r.replaced[c], lost) != 1:
            return False, p
    return True, None


# ---------------------------------------------------------------- rewrites


def _checked(r: Reconciliation, err: type[NormalizeError], what: str) -> Reconciliation:
    r.events = {}
    problems = validate(r)
    if problems:
        raise err(f"{what}: {problems[0]}")
    return r


def _vertical_child(r: Reconciliation, x: int) -> int:
    (w,) = [c for c in r.children[x] if not r.is_transfer_edge(x, c)]
    return w


def _gene_ancestor(r: Reconciliation, x: int) -> tuple[int, list[int]]:
    """Minimal ancestor of x in V(G), and the added nodes strictly between."""
    path = []
    y = r.parent[x]
    while y is not None and not r.in_gene(y):
        if r.parent[y] is not None and r.is_transfer_edge(r.parent[y], y):
            raise NotAdjustable(f"path above {x} crosses a transfer at {y}")
        path.append(y)
        y = r.parent[y]
    if y is None:
        raise NotAdjustable(f"no gene node above {x}")
    return y, path


def adjust_transfer(r: Reconciliation, t: tuple[int, int]) -> Reconciliation:
    """Move a transfer starting on an added node up to its nearest gene node."""
    x, xt = t
    if x not in r.parent or xt not in r.children.get(x, []) or not r.is_transfer_edge(x, xt):
        raise InvalidTransfer(f"{t} is not a transfer edge")
    if r.in_gene(x):
        raise NotAdjustable(f"transfer parent {x} is already a gene node")
    lost = r.lost_nodes()
    if xt in lost:
        raise InvalidTransfer(f"transfer {t} carries a lost lineage")
    r = r.copy()
    if not r.events:
        classify_events(r)
    xg, _ = _gene_ancestor(r, x)
    kind = r.events[xg]
    r.unlink(xt)
    r.suppress(x)
    if kind == Event.SPECIATION:
        # xg moves one step up and sends the transfer; an added speciation
        # takes its old place
        s = r.rho[xg]
        keep = r.add(s)
        for c in list(r.children[xg]):
            r.link(keep, c)
        r.link(xg, keep)
        r.link(xg, xt)
        r.rho[xg] = r.species.parent_loc(s)
    elif kind == Event.TRANSFER_PARENT:
        old = _transfer_child(r, xg)
        b = r.rho[old]
        loss = r.replaced.pop(old)
        (u,) = r.children[old]
        a = r.rho[xg]
        top = r.parent[xg]
        r.suppress(old)
        # a new added node takes the old place of xg and sends the transfer
        fresh = r.add(a)
        landing = r.add(b)
        r.unlink(xg)
        if top is not None:
            r.link(top, fresh)
        for c in [c for c in r.children[xg] if c != u]:
            r.link(fresh, c)
        r.link(fresh, landing)
        r.link(landing, xg)
        r.link(xg, xt)
        r.rho[xg] = b
        r.replaced[landing] = loss
    else:
        raise NotAdjustable(f"gene node {xg} above {x} is a {kind.value}")
    return _checked(r, NotAdjustable, f"adjusting {t}")


def raise_node(r: Reconciliation, x: int, target: Loc) -> Reconciliation:
    """Map x to a higher edge of the subdivision, keeping every other gene node."""
    sub = r.species
    here = r.rho[x]
    if here == target:
        return r
    if not r.events:
        classify_events(r)
    if r.events[x] in (Event.SPECIATION, Event.EXTANT, Event.ROOT) or not r.children[x]:
        raise RaiseBlocked(f"node {x} is a {r.events[x].value}")
    if not (here.is_edge and target.is_edge and sub.is_valid(target)):
        raise RaiseBlocked("raising moves between subdivision edges only")
    if not (sub.leq(here, target) and target.rank > here.rank):
        raise RaiseBlocked(f"{target} is not above {here}")
    r = r.copy()
    r.rho[x] = target
    if x in r.replaced:
        r.rho[r.replaced[x]] = target
    return _checked(r, RaiseBlocked, f"raising {x} to {target}")


# ---------------------------------------------------------------- normalize


def _raise_targets(r: Reconciliation, x: int, cap: int) -> list[Loc]:
    """Edge positions above x on its own species edge, highest first, up to rank cap."""
    sub = r.species
    here = r.rho[x]
    top = min(cap, sub.upper(here.species) - 1)
    return [Loc(here.species, k) for k in range(top, here.rank, -1) if k % 2 == 1]


def _raise_far(r: Reconciliation, x: int, cap: int, trace: NormalizationTrace) -> Reconciliation:
    for target in _raise_targets(r, x, cap):
        try:
            out = raise_node(r, x, target)
        except RaiseBlocked:
            continue
        trace.steps.append(Rewrite("raise", x, r.rho[x], target))
        return out
    return r


def normalize(r: Reconciliation) -> tuple[Reconciliation, NormalizationTrace]:
    """Adjust every transfer, then raise transfer children and parents.

    Transfers that cannot be adjusted are left in place and recorded in the
    trace with kind ``unadjustable``; the result is then not normalized.
    """
    r = r.copy()
    classify_events(r)
    trace = NormalizationTrace()
    stuck: set[int] = set()
    for _ in range(4 * len(r.parent)):
        pending = sorted(
            ((p, c) for p, c in r.transfers() if not r.in_gene(p) and c not in stuck),
            key=lambda e: (r.tau(e[1]), e[1]),
        )
        if not pending:
            break
        p, c = pending[0]
        try:
            xg, _ = _gene_ancestor(r, p)
            before = r.rho[xg]
            r = adjust_transfer(r, (p, c))
            trace.steps.append(Rewrite("adjust", xg, before, r.rho[xg]))
        except NotAdjustable:
            stuck.add(c)
            trace.steps.append(Rewrite("unadjustable", p, r.rho[p], r.rho[p]))
        classify_events(r)

    changed = True
    while changed:
        changed = False
        before = len(trace)
        children = [x for x in r.nodes() if r.events[x] == Event.TRANSFER_CHILD]
        for y in sorted(children, key=lambda y: (-r.tau(y), y)):
            r = _raise_far(r, y, r.tau(r.parent[y]), trace)
            classify_events(r)
        parents = [
            x for x in r.nodes() if r.events[x] == Event.TRANSFER_PARENT and r.in_gene(x)
        ]
        for x in sorted(parents, key=lambda x: (-r.tau(x), x)):
            r = _raise_far(r, x, r.tau(r.parent[x]), trace)
            classify_events(r)
        changed = len(trace) > before
    return r, trace


# ---------------------------------------------------------------- de-normalizing


def unadjust_transfer(r: Reconciliation, t: tuple[int, int], target: Loc) -> Reconciliation:
    """Undo an adjustment: restart transfer t from ``target`` on a lost lineage.

    The transfer parent must sit just above an added speciation with one lost
    side; ``target`` is a position on that lost side. The parent moves down
    to the speciation, which it replaces.
    """
    x, xt = t
    if x not in r.parent or xt not in r.children.get(x, []) or not r.is_transfer_edge(x, xt):
        raise InvalidTransfer(f"{t} is not a transfer edge")
    z = _vertical_child(r, x)
    lost = r.lost_nodes()
    if r.in_gene(z) or not r.species.is_speciation(r.rho[z]):
        raise InvalidTransfer(f"{x} does not sit above an added speciation")
    gone = [c for c in r.children[z] if c in lost]
    if len(gone) != 1 or r.species.parent_loc(r.rho[z]) != r.rho[x]:
        raise InvalidTransfer(f"{x} does not sit just above a speciation with one lost side")
    (lc,) = gone
    r = r.copy()
    s = r.rho[z]
    y = r.add(target)
    r.link(y, lc)
    r.link(y, xt)
    for c in list(r.children[z]):
        r.link(x, c)
    r.unlink(z)
    r.remove(z)
    r.rho[x] = s
    r.link(x, y)
    return _checked(r, InvalidTransfer, f"moving {t} to {target}")


def lower_node(r: Reconciliation, x: int, target: Loc) -> Reconciliation:
    """Undo a raise: map x to a lower position on its own species edge."""
    here = r.rho[x]
    if not (target.is_edge and target.species == here.species and target.rank < here.rank):
        raise RaiseBlocked(f"{target} is not below {here} on the same edge")
    r = r.copy()
    r.rho[x] = target
    if x in r.replaced:
        r.rho[r.replaced[x]] = target
    return _checked(r, RaiseBlocked, f"lowering {x} to {target}")


def denormalizing_moves(r: Reconciliation) -> list[tuple[str, object, Loc]]:
    """Every valid single rewrite that undoes an adjustment or a raise."""
    sub = r.species
    if not r.events:
        classify_events(r)
    out = []
    lost = r.lost_nodes()
    for x, c in r.transfers():
        z = _vertical_child(r, x)
        if (
            not r.in_gene(z)
            and sub.is_speciation(r.rho[z])
            and sub.parent_loc(r.rho[z]) == r.rho[x]
        ):
            for lc in [w for w in r.children[z] if w in lost]:
                v = r.rho[lc].species
                for k in range(r.tau(lc) + 1, r.tau(z)):
                    loc = Loc(v, k)
                    if loc.is_edge and sub.is_valid(loc) and k >= r.tau(c):
                        out.append(("unadjust", (x, c), loc))
        if r.in_gene(x):
            for k in range(r.tau(x) - 2, 0, -2):
                out.append(("lower", x, Loc(r.rho[x].species, k)))
    good = []
    for kind, arg, loc in out:
        try:
            if kind == "unadjust":
                unadjust_transfer(r, arg, loc)
            else:
                lower_node(r, arg, loc)
        except NormalizeError:
            continue
        good.append((kind, arg, loc))
    return good


def _apply(r: Reconciliation, move) -> Reconciliation:
    kind, arg, loc = move
    out = unadjust_transfer(r, arg, loc) if kind == "unadjust" else lower_node(r, arg, loc)
    classify_events(out)
    return out


def denormalize(r: Reconciliation, rng, steps: int = 1) -> Reconciliation:
    """Apply up to ``steps`` random rewrites from :func:`denormalizing_moves`.

    Inverse adjustments are preferred when there are any, then rewrites whose
    result is no longer normalized.
    """
    for _ in range(steps):
        moves = denormalizing_moves(r)
        if not moves:
            break
        pool = [m for m in moves if m[0] == "unadjust"]
        if not pool:
            pool = [m for m in moves if not is_normalized(_apply(r, m))[0]] or moves
        r = _apply(r, pool[rng.randrange(len(pool))])
    return r
