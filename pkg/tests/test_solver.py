import json

import pytest

from instances import spr_corpus
from trrecon.normalize import is_normalized
from trrecon.oracle import spr_distance_bfs
from trrecon.recon import Event, classify_events, to_json, validate, weight
from trrecon.solver import LeafSetMismatch, PhiNotBijective, solve, solve_with_stats
from trrecon.sprbridge import rank_dated
from trrecon.treemodel import parse_newick

SPECIES = "(((A:1,B:1):1,C:2):1,D:3):1;"

# two optimal reconciliations of weight 1, found by a scan of the seeded corpus
TWO_OPTIMA = ("(((A:1,C:1):1,B:2):1,D:3):1;", "((A:2,C:2):4,(B:1,D:1):5):2;")


def species(text=SPECIES):
    return parse_newick(text, kind="species")


def test_identical_trees_cost_nothing():
    s = species()
    r = solve(parse_newick(SPECIES), s, None, 3)
    assert weight(r) == 0
    classify_events(r)
    internal = [x for x in r.gene.nodes() if len(r.gene.children[x]) == 2]
    assert all(r.events[x] == Event.SPECIATION for x in internal)


def test_one_move_costs_one():
    s = species()
    g = parse_newick("(((A:1,C:1):1,B:2):1,D:3):1;")
    assert spr_distance_bfs(rank_dated(s), g, 1).distance == 1
    assert solve(g, s, None, 0) is None
    r = solve(g, s, None, 1)
    assert weight(r) == 1
    assert not validate(r)


def test_phi_maps_labels():
    s = species()
    g = parse_newick("(((a:1,b:1):1,c:2):1,d:3):1;")
    phi = {"a": "A", "b": "B", "c": "C", "d": "D"}
    assert weight(solve(g, s, phi, 0)) == 0
    with pytest.raises(PhiNotBijective):
        solve(g, s, {**phi, "d": "A"}, 1)
    with pytest.raises(LeafSetMismatch):
        solve(parse_newick("((A:1,B:1):1,C:2):1;"), s, None, 1)


def test_negative_budget_rejected():
    with pytest.raises(ValueError):
        solve(parse_newick(SPECIES), species(), None, -1)


def test_outputs_valid_and_normalized():
    for i, (s, g) in enumerate(spr_corpus()[:50]):
        r = solve(g, s, None, 3, seed=i)
        if r is None:
            continue
        assert validate(r) == []
        ok, witness = is_normalized(r)
        if not ok:
            # known gap: a transfer may leave from an added node (see notes)
            assert not r.in_gene(witness)


def test_budget_monotone():
    for i, (s, g) in enumerate(spr_corpus()[:25]):
        found = [solve(g, s, None, k, seed=i) for k in range(5)]
        weights = [None if r is None else weight(r) for r in found]
        first = next(k for k, w in enumerate(weights) if w is not None)
        assert all(w is None for w in weights[:first])
        assert all(w == weights[first] for w in weights[first:])
        assert weights[first] <= first


def test_deterministic_under_seed():
    s, g = spr_corpus()[3]
    a = json.dumps(to_json(solve(g, s, None, 3, seed=5)))
    b = json.dumps(to_json(solve(g, s, None, 3, seed=5)))
    assert a == b


def test_tie_replacement_is_a_fair_coin():
    s, g = species(TWO_OPTIMA[0]), parse_newick(TWO_OPTIMA[1])
    r, stats = solve_with_stats(g, s, None, 3, seed=0)
    assert stats.best_encounters == 2
    outcomes = {}
    for seed in range(1000):
        key = json.dumps(to_json(solve(g, s, None, 3, seed=seed))["nodes"])
        outcomes[key] = outcomes.get(key, 0) + 1
    assert len(outcomes) == 2
    # a fair coin lands within 4 standard deviations (about 63) of 500
    assert all(437 <= n <= 563 for n in outcomes.values())


def test_stats_reported():
    s, g = spr_corpus()[0]
    r, stats = solve_with_stats(g, s, None, 3)
    d = stats.as_dict()
    assert set(d) == {"branch_nodes", "max_depth", "completions", "transfers"}
    assert d["transfers"] == weight(r)
