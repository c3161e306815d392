"""Seeded test instances shared by several test modules."""
import random
from functools import lru_cache

from trrecon.oracle import random_spr_walk
from trrecon.sprbridge import rank_dated
from trrecon.treemodel import random_ranked_tree


def labels(n):
    return [chr(ord("A") + i) for i in range(n)]


@lru_cache(maxsize=None)
def spr_corpus(count=100, seed=2024, sizes=(4, 7), moves=(1, 3)):
    """(species, gene, walk length) triples; genes come from random dated SPR walks."""
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        species = random_ranked_tree(labels(rng.randint(*sizes)), rng)
        gene, _ = random_spr_walk(rank_dated(species), rng.randint(*moves), rng)
        out.append((species, gene))
    return tuple(out)


@lru_cache(maxsize=None)
def solved(count=60, seed=77, k=4):
    """Solver outputs on a smaller SPR-generated corpus."""
    from trrecon.solver import solve

    out = []
    for i, (species, gene) in enumerate(spr_corpus(count, seed, (4, 6), (1, 3))):
        r = solve(gene, species, None, k, seed=i)
        if r is not None:
            out.append(r)
    return tuple(out)
