"""Acceptance checks. Each test prints one PASS/FAIL line.

The lines are also repeated at the end of the pytest run (see conftest.py),
and ``python3 tests/test_acceptance.py`` runs them without pytest.
"""
import itertools
import random
import sys
import time
from functools import lru_cache
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from instances import spr_corpus  # noqa: E402
from trrecon.hardness import (  # noqa: E402
    Cnf2Formula,
    assignment_to_proper,
    build_instance,
    clause_transfers,
)
from trrecon.normalize import _apply, denormalizing_moves, is_normalized, normalize  # noqa: E402
from trrecon.oracle import spr_distance_bfs  # noqa: E402
from trrecon.recon import validate, weight  # noqa: E402
from trrecon.solver import solve, solve_with_stats  # noqa: E402
from trrecon.sprbridge import rank_dated, recon_to_scenario  # noqa: E402
from trrecon.treemodel import parse_newick, serialize_newick, topology_newick  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
RESULTS: list[str] = []


def report(number, ok, text):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
    RESULTS.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def distances():
    return tuple(spr_distance_bfs(rank_dated(s), g, 3).distance for s, g in spr_corpus())


def test_oracle_equivalence():
    start = time.perf_counter()
    d = distances()
    agree = 0
    for i, (s, g) in enumerate(spr_corpus()):
        r = solve(g, s, None, 3, seed=i)
        agree += r is not None and weight(r) == d[i]
    elapsed = time.perf_counter() - start
    ok = agree == len(d) and elapsed < 300
    report(1, ok, f"solver weight equals search distance on {agree}/{len(d)} ({elapsed:.1f} s)")
    assert ok


def perturbed_cases(count=100, seed=2):
    """Normalized solver outputs, each pushed out of normal form by up to 3 rewrites."""
    rng = random.Random(seed)
    for i, (s, g) in enumerate(spr_corpus(400, 99)):
        r = solve(g, s, None, 3, seed=i)
        if r is None or not r.transfers() or not is_normalized(r)[0]:
            continue
        d, kinds = r.copy(), set()
        for _ in range(3):
            moves = denormalizing_moves(d)
            if not moves:
                break
            pool = [m for m in moves if m[0] == "unadjust"]
            pool = pool or [m for m in moves if not is_normalized(_apply(d, m))[0]] or moves
            move = pool[rng.randrange(len(pool))]
            kinds.add(move[0])
            d = _apply(d, move)
        if is_normalized(d)[0]:
            continue
        yield r, d, kinds
        count -= 1
        if not count:
            return


def test_normalization_keeps_weight():
    restored = total = inverse = 0
    for r, d, kinds in perturbed_cases():
        total += 1
        inverse += "unadjust" in kinds
        back, _ = normalize(d)
        restored += (
            weight(back) == weight(r) and is_normalized(back)[0] and not validate(back)
        )
    ok = restored == total == 100
    report(2, ok, f"{restored}/{total} perturbed outputs restored at equal weight "
                  f"({inverse} used an inverse adjustment, the rest lowered nodes)")
    assert ok


def count_false(formula, values):
    false = 0
    for clause in formula.clauses:
        false += not any(values[v - 1] if pos else not values[v - 1] for v, pos in clause)
    return false


def test_gadget_weight():
    rng = random.Random(20)
    good = total = 0
    for f_index in range(20):
        f = Cnf2Formula.generate(2 if f_index % 2 else 4, rng)
        inst = build_instance(f)
        for values in itertools.product((False, True), repeat=f.n):
            total += 1
            w = weight(assignment_to_proper(inst, values))
            good += w == 17 * f.n + 4 * f.m + count_false(f, values)
    ok = good == total
    report(3, ok, f"weight = 17n + 4m + f on {good}/{total} assignments of 20 formulas")
    assert ok


def test_worked_gadget():
    f = Cnf2Formula.from_dimacs("p cnf 2 3\n1 -2 0\n1 2 0\n-1 2 0\n")
    inst = build_instance(f)
    r = assignment_to_proper(inst, (True, False))
    w, per_clause = weight(r), clause_transfers(r, inst)
    ok = not validate(r) and w == 47 and per_clause == [4, 4, 5]
    report(4, ok, f"x1=1, x2=0 gives weight {w}, transfers per clause {per_clause}")
    assert ok


def test_search_tree_bound():
    d = distances()
    runs = within = 0
    worst = 0.0
    for i, (s, g) in enumerate(spr_corpus()):
        for k in sorted({3, d[i]}):
            _, stats = solve_with_stats(g, s, None, k, seed=i)
            bound = 3 ** (k + 1) * s.n_leaves
            runs += 1
            within += stats.branch_nodes <= bound
            worst = max(worst, stats.branch_nodes / bound)
    ok = within == runs
    report(5, ok, f"branch nodes within 3^(k+1)*n on {within}/{runs} runs "
                  f"(k = 3 and k = distance; largest ratio {worst:.2f})")
    assert ok


def test_scenario_round_trip():
    d = distances()
    good = total = 0
    for i, (s, g) in enumerate(spr_corpus()):
        r = solve(g, s, None, d[i], seed=i)
        sc = recon_to_scenario(r)
        total += 1
        good += len(sc) == weight(r) and topology_newick(sc.end()) == topology_newick(g)
    ok = good == total
    report(6, ok, f"scenario length = weight and end tree = gene tree on {good}/{total}")
    assert ok


def test_parser_fixed_point():
    lines = [x for x in (FIXTURES / "trees.nwk").read_text().splitlines() if x.strip()]
    stable = 0
    for text in lines:
        once = serialize_newick(parse_newick(text))
        stable += serialize_newick(parse_newick(once)) == once
    ok = stable == len(lines) == 50
    report(7, ok, f"parse/serialize fixed point on {stable}/{len(lines)} fixture trees")
    assert ok


def test_budget_semantics():
    d = distances()
    good = 0
    for i, (s, g) in enumerate(spr_corpus()):
        answers = []
        for k in range(d[i] + 3):
            r = solve(g, s, None, k, seed=i)
            answers.append(None if r is None else weight(r))
        good += answers == [None] * d[i] + [d[i]] * 3
    ok = good == len(d)
    report(8, ok, f"none below the distance and the distance at d..d+2 on {good}/{len(d)}")
    assert ok


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
