import random

import pytest

from trrecon.treemodel import (
    DuplicateInternalDates,
    DuplicateLeafLabel,
    NewickSyntaxError,
    NonBinary,
    NotUltrametric,
    make_tree,
    parse_newick,
    random_ranked_tree,
    serialize_newick,
    subdivide,
    time_slices,
)


def caterpillar(n):
    labels = [f"t{i}" for i in range(n)]
    text = f"{labels[0]}:1"
    height = 1
    for lab in labels[1:]:
        text = f"({text},{lab}:{height}):1"
        height += 1
    return parse_newick(text + ";", kind="species")


def brute_crossings(tree):
    """Count (edge, internal date) pairs with the date strictly inside the edge."""
    dates = [tree.tau[v] for v in tree.nodes() if len(tree.children[v]) == 2]
    count = 0
    for v in tree.nodes():
        p = tree.parent[v]
        if p is not None:
            count += sum(tree.tau[v] < d < tree.tau[p] for d in dates)
    return count


def test_parse_dates():
    t = parse_newick("((A:1,B:1):1,C:2):1;")
    assert t.n_leaves == 3
    assert t.has_root_edge
    ab = t.parent[t.leaf("A")]
    assert t.tau[ab] == 1
    assert t.tau[t.top] == 2
    assert t.tau[t.root] == 3
    assert all(t.tau[x] == 0 for x in t.leaves())


@pytest.mark.parametrize(
    "text, error",
    [
        ("((A:1,B:2):1,C:2);", NotUltrametric),
        ("((A:1,B:1,C:1):1,D:2);", NonBinary),
        ("((A:1,A:1):1,C:2);", DuplicateLeafLabel),
        ("((A:1,B:1):1,C:2)", NewickSyntaxError),
        ("((A,B),C);", NewickSyntaxError),
    ],
)
def test_parse_rejects(text, error):
    with pytest.raises(error):
        parse_newick(text)


def test_syntax_error_offset():
    with pytest.raises(NewickSyntaxError) as info:
        parse_newick("((A:1,B:1):1,C:2)")
    assert info.value.offset == 17


def test_serialize_canonical():
    assert serialize_newick(parse_newick("((A:1,B:1):1,C:2):1;")) == "((A:1,B:1):1,C:2):1;"
    assert serialize_newick(parse_newick("(C:2,(B:1,A:1):1):1;")) == "((A:1,B:1):1,C:2):1;"
    assert serialize_newick(parse_newick("A:0;")) == "A:0;"


def test_equal_species_dates_rejected():
    with pytest.raises(DuplicateInternalDates):
        parse_newick("((A:1,B:1):1,(C:1,D:1):1);", kind="species")


def test_subdivide_small():
    two = subdivide(parse_newick("(A:1,B:1):1;", kind="species"))
    assert two.inserted == ()
    three = subdivide(parse_newick("((A:1,B:1):1,C:2):1;", kind="species"))
    (loc,) = three.inserted
    assert three.tree.label[loc.species] == "C"
    assert loc.rank == three.rank[three.tree.parent[three.tree.leaf("A")]]


@pytest.mark.parametrize("n", range(2, 10))
def test_caterpillar_crossings(n):
    assert len(subdivide(caterpillar(n)).inserted) == (n - 1) * (n - 2) // 2


def test_crossings_match_brute_force():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(2, 12)
        tree = random_ranked_tree([f"x{i}" for i in range(n)], rng)
        sub = subdivide(tree)
        assert len(sub.inserted) == brute_crossings(tree)
        ranks = sub.rank
        assert ranks[sub.root] == 2 * n
        for v in sub.tree.nodes():
            assert ranks[v] % 2 == 0
            p = sub.tree.parent[v]
            if p is not None:
                assert ranks[p] > ranks[v]


def test_time_slices():
    two = time_slices(subdivide(parse_newick("(A:1,B:1):1;", kind="species")))
    assert len(two) == 2
    assert two[0].speciation is not None and len(two[0].lower) == 2
    assert two[1].speciation is None and len(two[1].lower) == 1
    cat = subdivide(parse_newick("((A:1,B:1):1,C:2):1;", kind="species"))
    slices = time_slices(cat)
    assert len(slices) == 3
    c_edge = cat.tree.leaf("C")
    assert any(loc.species == c_edge for loc in slices[1].lower)
    rng = random.Random(3)
    for n in range(2, 9):
        tree = random_ranked_tree([f"x{i}" for i in range(n)], rng)
        assert len(time_slices(subdivide(tree))) == n


def test_make_tree_rejects_unary_inner_node():
    with pytest.raises(NonBinary):
        make_tree({"r": ["a"], "a": ["b"]}, "r", {"b": "B"}, {"r": 2, "a": 1, "b": 0})
