import itertools
import random

import pytest

from trrecon.hardness import (
    Assignment,
    Cnf2Formula,
    FormulaInvariantViolated,
    NotProper,
    anchor_size,
    assignment_to_proper,
    build_instance,
    clause_transfers,
    proper_to_assignment,
    validate_proper,
)
from trrecon.recon import classify_events, validate, weight, weight_of_subtree
from trrecon.treemodel import Loc

WORKED = "p cnf 2 3\n1 -2 0\n1 2 0\n-1 2 0\n"


@pytest.fixture(scope="module")
def worked():
    return build_instance(Cnf2Formula.from_dimacs(WORKED))


def count_false(formula, values):
    """Clause evaluation written out separately from the formula class."""
    false = 0
    for clause in formula.clauses:
        lits = [values[v - 1] if pos else not values[v - 1] for v, pos in clause]
        false += not (lits[0] or lits[1])
    return false


def test_dimacs_round_trip():
    f = Cnf2Formula.from_dimacs("c comment\n" + WORKED)
    assert f.n == 2 and f.m == 3
    assert f.clauses[0] == ((1, True), (2, False))
    assert Cnf2Formula.from_dimacs(f.to_dimacs()) == f


@pytest.mark.parametrize(
    "text",
    [
        "p cnf 2 3\n1 -2 0\n1 2 0\n",
        "p cnf 2 3\n1 -2 0\n1 2 0\n1 2 0\n",
        "p cnf 2 3\n1 -2 3 0\n1 2 0\n-1 2 0\n",
        "p cnf 2 3\n1 -2 0\n1 2 0\n-1 2\n",
        "p dnf 2 3\n1 -2 0\n1 2 0\n-1 2 0\n",
    ],
)
def test_formula_invariants(text):
    with pytest.raises(FormulaInvariantViolated):
        Cnf2Formula.from_dimacs(text)


def test_instance_sizes(worked):
    n, m = 2, 3
    p = anchor_size(n, m)
    assert worked.species.n_leaves == n * (28 + p) + 8 * m
    assert worked.gene.n_leaves == worked.species.n_leaves
    assert sorted(worked.phi.values()) == worked.species.leaf_labels


def test_cherry_leaf_pattern(worked):
    g = worked.gene
    for i in (1, 2):
        pairs = []
        for k in range(1, 15):
            r_leaf, l_leaf = (g.leaf(f"{side}{i}.{k}") for side in "rl")
            assert g.parent[r_leaf] == g.parent[l_leaf]
            r_leaf, l_leaf = (worked.phi[f"{side}{i}.{k}"] for side in "rl")
            pairs.append((r_leaf, l_leaf))
        positive = [(f"A{i}.{2 * k - 1}", f"A{i}.{29 - 2 * k}") for k in range(1, 8)]
        negative = [(f"A{i}.{2 * k}", f"A{i}.{30 - 2 * k}") for k in range(8, 15)]
        assert pairs == positive + negative


def test_border_separates_combs(worked):
    rank = worked.sub.rank
    for i in (1, 2):
        upper = [rank[worked.sp[f"NL{i}.{a}"]] for a in range(1, 7)]
        lower = [rank[worked.sp[f"NR{i}.{a}"]] for a in range(1, 7)]
        assert max(lower) < worked.border < min(upper)


def test_worked_example(worked):
    r = assignment_to_proper(worked, (True, False))
    assert validate(r) == []
    assert weight(r) == 17 * 2 + 4 * 3 + 1 == 47
    assert clause_transfers(r, worked) == [4, 4, 5]
    assert proper_to_assignment(r, worked) == Assignment((True, False), 1)


def test_variable_cost(worked):
    r = classify_events(assignment_to_proper(worked, (True, False)))
    g = worked.gene
    for i in (1, 2):
        literal_roots = [
            c
            for s in (1, 2, 3)
            for c in g.children[worked.gn[f"x{i}.{s}"]]
            if c in {worked.gn[k] for k in worked.gn if k.startswith("q")}
        ]
        assert len(literal_roots) == 3
        rest = weight_of_subtree(r, worked.gn[f"c{i}"])
        rest -= sum(weight_of_subtree(r, q) for q in literal_roots)
        assert rest == 17


def test_every_assignment_round_trips():
    rng = random.Random(31)
    for _ in range(6):
        f = Cnf2Formula.generate(rng.choice((2, 4)), rng)
        inst = build_instance(f)
        for values in itertools.product((False, True), repeat=f.n):
            r = assignment_to_proper(inst, values)
            ok, witness = validate_proper(r, inst)
            assert ok, witness
            got = proper_to_assignment(r, inst)
            assert got.values == values
            assert got.f == count_false(f, values)
            assert weight(r) == 17 * f.n + 4 * f.m + got.f


def test_flip_changes_weight_by_false_clauses():
    rng = random.Random(9)
    f = Cnf2Formula.generate(4, rng)
    inst = build_instance(f)
    values = [rng.random() < 0.5 for _ in range(4)]
    base = weight(assignment_to_proper(inst, values))
    for v in range(4):
        flipped = list(values)
        flipped[v] = not flipped[v]
        delta = count_false(f, flipped) - count_false(f, values)
        assert weight(assignment_to_proper(inst, flipped)) - base == delta


def test_diagonal_transfer_witness(worked):
    r = assignment_to_proper(worked, (True, False))
    # a parent with room above it, so only this one edge becomes diagonal
    p, c = next((p, c) for p, c in r.transfers() if r.tau(r.parent[p]) > r.tau(p) + 2)
    here = r.rho[p]
    r.rho[p] = Loc(here.species, here.rank + 2)
    ok, witness = validate_proper(r, worked)
    assert not ok
    assert witness == {"reason": "diagonal transfer", "nodes": [p, c]}


def test_both_combs_on_one_side_rejected(worked):
    r = assignment_to_proper(worked, (True, False))
    r.rho[worked.gn["cn1.2"]] = worked.node_loc("NL1.2")
    ok, _ = validate_proper(r, worked)
    assert not ok
    with pytest.raises(NotProper):
        proper_to_assignment(r, worked)
