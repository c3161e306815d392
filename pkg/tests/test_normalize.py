import random

import pytest

from instances import solved
from trrecon.normalize import (
    InvalidTransfer,
    NotAdjustable,
    RaiseBlocked,
    adjust_transfer,
    denormalize,
    denormalizing_moves,
    is_normalized,
    normalize,
    raise_node,
)
from trrecon.recon import Event, classify_events, validate, weight
from trrecon.treemodel import Loc


def normalized_outputs():
    out = []
    for r in solved():
        n, _ = normalize(r)
        if is_normalized(n)[0]:
            out.append(n)
    return out


def test_normalize_keeps_weight_and_validity():
    for r in solved():
        n, trace = normalize(r)
        assert weight(n) == weight(r)
        assert validate(n) == []
        ok, witness = is_normalized(n)
        if not ok:
            stuck = {s.node for s in trace.steps if s.kind == "unadjustable"}
            assert witness in stuck and not n.in_gene(witness)


def test_normalized_is_a_fixed_point():
    for n in normalized_outputs():
        again, trace = normalize(n)
        assert len(trace) == 0
        assert again.rho == n.rho


def test_perturbation_round_trip():
    rng = random.Random(4)
    broken = 0
    for n in normalized_outputs():
        d = denormalize(n.copy(), rng, steps=3)
        broken += not is_normalized(d)[0]
        back, _ = normalize(d)
        assert weight(back) == weight(n)
        assert validate(back) == []
        assert is_normalized(back) == (True, None)
    assert broken > 0


def test_witness_is_the_moved_parent():
    for n in normalized_outputs():
        for kind, arg, loc in denormalizing_moves(n):
            if kind != "lower":
                continue
            d = classify_events(n.copy())
            d.rho[arg] = loc
            if arg in d.replaced:
                d.rho[d.replaced[arg]] = loc
            if validate(d):
                continue
            ok, witness = is_normalized(classify_events(d))
            if not ok:
                assert witness == arg
                return
    pytest.fail("no lowering broke normalization")


def test_adjust_rejects():
    n = next(n for n in normalized_outputs() if n.transfers())
    p, c = n.transfers()[0]
    with pytest.raises(NotAdjustable):
        adjust_transfer(n, (p, c))
    leaf = n.gene.leaves()[0]
    with pytest.raises(InvalidTransfer):
        adjust_transfer(n, (n.parent[leaf], leaf))


def test_raise_rejects():
    n = next(n for n in normalized_outputs() if n.transfers())
    classify_events(n)
    leaf = next(x for x in n.nodes() if n.events[x] == Event.EXTANT)
    with pytest.raises(RaiseBlocked):
        raise_node(n, leaf, Loc(n.rho[leaf].species, 1))
    p, _ = n.transfers()[0]
    below = Loc(n.rho[p].species, n.rho[p].rank - 2)
    with pytest.raises(RaiseBlocked):
        raise_node(n, p, below)
