import random
from fractions import Fraction

import pytest

from instances import spr_corpus
from trrecon.oracle import (
    LeafMismatch,
    _Space,
    certify,
    dated_neighbors,
    random_spr_walk,
    spr_distance_bfs,
)
from trrecon.sprbridge import SprError, SprOp, apply_scenario, apply_spr, rank_dated
from trrecon.treemodel import parse_newick, topology_newick


def shape(tree):
    """Clusters with the relative order of their dates."""
    inner = [v for v in tree.nodes() if len(tree.children[v]) == 2]
    order = {d: i for i, d in enumerate(sorted({tree.tau[v] for v in inner}))}
    return frozenset((frozenset(tree.cluster(v)), order[tree.tau[v]]) for v in inner)


def one_move_shapes(tree, step):
    """Every tree one move away, trying regraft dates on a grid of the given step."""
    clusters = [frozenset(tree.cluster(v)) for v in tree.nodes() if tree.parent[v] is not None]
    top = tree.tau[tree.root]
    dates = [Fraction(i) * step for i in range(1, int(top / step) + 1)]
    out = set()
    for a in clusters:
        for b in clusters:
            for d in dates:
                try:
                    out.add(shape(apply_spr(tree, SprOp(a, b, d))))
                except SprError:
                    pass
    return out


def test_identity_distance_zero():
    s, _ = spr_corpus()[0]
    t = rank_dated(s)
    res = spr_distance_bfs(t, t, 3)
    assert res.distance == 0 and res.witness == []


def test_single_move_distance_one():
    rng = random.Random(12)
    for s, _ in spr_corpus()[:30]:
        t = rank_dated(s)
        moved, _ = random_spr_walk(t, 1, rng)
        res = spr_distance_bfs(t, moved, 2)
        if topology_newick(moved) == topology_newick(t):
            assert res.distance == 0
        else:
            assert res.distance == 1


def test_witness_replays():
    for s, g in spr_corpus()[:40]:
        t = rank_dated(s)
        res = spr_distance_bfs(t, g, 3)
        assert res.distance == len(res.witness)
        assert topology_newick(apply_scenario(t, res.witness)) == topology_newick(g)


def test_exceeds_dmax():
    s, g = next((s, g) for s, g in spr_corpus() if spr_distance_bfs(rank_dated(s), g, 3).distance == 2)
    res = spr_distance_bfs(rank_dated(s), g, 1)
    assert res.exceeds
    assert res.as_dict()["distance"] == "exceeds dmax"


def test_leaf_mismatch():
    s, g = spr_corpus()[0]
    with pytest.raises(LeafMismatch):
        spr_distance_bfs(rank_dated(s), parse_newick("(X:1,Y:1):1;"), 2)


def test_neighborhood_is_complete():
    # every move found by trying all (prune, regraft, date) triples on a
    # quarter-rank grid is also generated by the search, and vice versa;
    # the finer grid reaches no tree shape the search misses
    rng = random.Random(2)
    for s, _ in spr_corpus()[:15]:
        start = rank_dated(s)
        for tree in (start, random_spr_walk(start, 1, rng)[0]):
            space = _Space(tree.leaf_labels)
            found = set()
            for (a, b, d), _ in dated_neighbors(space, space.clusters_of(tree)):
                found.add(shape(apply_spr(tree, SprOp(space.names(a), space.names(b), d))))
            assert found == one_move_shapes(tree, Fraction(1, 4))


def test_certify_agrees():
    for i, (s, g) in enumerate(spr_corpus()[:20]):
        report = certify(g, s, None, 3, seed=i)
        assert report["agree"], report
        assert report["witness_replays"]
