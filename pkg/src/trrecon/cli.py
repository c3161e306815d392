"""Command line entry point.

Every subcommand prints JSON (to stdout, or to the --json path) carrying
``schema_version: 1``. Exit status: 0 on success, 1 on bad input or a failed
check, 2 when no solution fits the budget.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .hardness import FormulaInvariantViolated, Cnf2Formula, build_instance
from .normalize import NormalizeError, is_normalized, normalize
from .oracle import LeafMismatch, certify
from .recon import Event, Reconciliation, ReconError, from_json, to_json, validate, weight
from .solver import SolverError, solve
from .sprbridge import SprError, solve_spr
from .treemodel import TreeError, parse_newick, serialize_newick

SCHEMA_VERSION = 1

EXIT_OK, EXIT_INPUT, EXIT_NO_SOLUTION = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which here means "no solution"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _tree(path: str, kind: str):
    return parse_newick(_read(path), kind=kind)


def _phi(path: str | None) -> dict[str, str] | None:
    """Leaf map file: one 'gene_label species_label' pair per line."""
    if path is None:
        return None
    phi = {}
    for n, line in enumerate(_read(path).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{n}: expected two labels")
        phi[parts[0]] = parts[1]
    return phi


def _recon(path: str) -> Reconciliation:
    try:
        return from_json(json.loads(_read(path)))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a reconciliation document ({exc})") from None


def _emit(args, doc: dict):
    _write(args.json, json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2) + "\n")


def render_dot(r: Reconciliation) -> str:
    """Graphviz source: one horizontal band per rank, transfers in red."""
    sub = r.species
    lines = ["digraph reconciliation {", "\tnewrank=true;", "\tnode [shape=box, fontsize=10];"]
    lost = r.lost_nodes()
    bands: dict[int, list[int]] = {}
    for x in r.nodes():
        bands.setdefault(r.tau(x), []).append(x)
    ranks = sorted(bands, reverse=True)
    for rank in ranks:
        lines.append(f'\tsubgraph "cluster_rank_{rank}" {{')
        lines.append(f'\t\tlabel="rank {rank}"; style=filled; color="#f2f2f2"; rank=same;')
        for x in bands[rank]:
            loc = r.rho[x]
            where = sub.tree.label[loc.species] or f"s{loc.species}"
            event = r.events[x].value if x in r.events else "?"
            style = ', style="dashed"' if x in lost else ""
            lines.append(f'\t\t"{x}" [label="{x} {event}\\n{where}"{style}];')
        lines.append("\t}")
    for x in r.nodes():
        for c in r.children[x]:
            if r.is_transfer_edge(x, c):
                lines.append(f'\t"{x}" -> "{c}" [color=red, constraint=false];')
            else:
                lines.append(f'\t"{x}" -> "{c}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_reconcile(args) -> int:
    species = _tree(args.species, "species")
    gene = _tree(args.gene, "gene")
    r = solve(gene, species, _phi(args.phi), args.k, args.seed)
    if r is None:
        _emit(args, {"status": "no solution within budget", "k": args.k})
        return EXIT_NO_SOLUTION
    _emit(args, to_json(r))
    if args.dot:
        _write(args.dot, render_dot(r))
    return EXIT_OK


def cmd_spr(args) -> int:
    start = _tree(args.start, "species")
    target = _tree(args.target, "gene")
    sc = solve_spr(start, target, args.k, args.seed)
    if sc is None:
        _emit(args, {"status": "no solution within budget", "k": args.k})
        return EXIT_NO_SOLUTION
    _emit(args, {"status": "ok", "scenario": sc.as_dict(), "end": serialize_newick(sc.end())})
    return EXIT_OK


def cmd_normalize(args) -> int:
    r = _recon(args.reconciliation)
    bad = validate(r)
    if bad:
        _emit(args, {"status": "invalid input", "violations": [v.as_dict() for v in bad]})
        return EXIT_INPUT
    out, trace = normalize(r)
    ok, witness = is_normalized(out)
    doc = to_json(out)
    doc["trace"] = {**trace.as_dict(), "normalized": ok, "witness": witness}
    _emit(args, doc)
    if args.dot:
        _write(args.dot, render_dot(out))
    return EXIT_OK


def cmd_validate(args) -> int:
    r = _recon(args.reconciliation)
    bad = validate(r)
    doc = {"valid": not bad, "violations": [v.as_dict() for v in bad]}
    if not bad:
        doc["weight"] = int(weight(r))
        doc["transfers"] = sum(e == Event.TRANSFER_PARENT for e in r.events.values())
    _emit(args, doc)
    if args.dot and not bad:
        _write(args.dot, render_dot(r))
    return EXIT_INPUT if bad else EXIT_OK


def cmd_gadget(args) -> int:
    formula = Cnf2Formula.from_dimacs(_read(args.cnf))
    inst = build_instance(formula)
    Path(args.species_out).write_text(serialize_newick(inst.species) + "\n")
    Path(args.gene_out).write_text(serialize_newick(inst.gene) + "\n")
    _emit(
        args,
        {
            "status": "ok",
            "variables": formula.n,
            "clauses": formula.m,
            "leaves": inst.species.n_leaves,
            "phi": dict(sorted(inst.phi.items())),
            "landmarks": inst.landmarks(),
        },
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    species = _tree(args.species, "species")
    gene = _tree(args.gene, "gene")
    report = certify(gene, species, _phi(args.phi), args.k, args.seed)
    _emit(args, {"status": "ok", **report})
    if report["oracle_distance"] is None and report["solver_weight"] is None:
        return EXIT_NO_SOLUTION
    return EXIT_OK if report["agree"] else EXIT_INPUT


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trrecon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, budget=True):
        if budget:
            sp.add_argument("--k", type=int, required=True, help="transfer budget")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--json", metavar="PATH", help="write JSON here instead of stdout")
        sp.add_argument("--dot", metavar="PATH", help="also write a Graphviz drawing")

    sp = sub.add_parser("reconcile", help="minimum transfer reconciliation")
    sp.add_argument("species", help="species Newick with branch lengths, or -")
    sp.add_argument("gene", help="gene Newick, or -")
    sp.add_argument("phi", nargs="?", help="leaf map file (defaults to equal labels)")
    common(sp)
    sp.set_defaults(run=cmd_reconcile)

    sp = sub.add_parser("spr", help="shortest dated SPR scenario")
    sp.add_argument("start", help="dated start tree")
    sp.add_argument("target", help="target topology")
    common(sp)
    sp.set_defaults(run=cmd_spr)

    sp = sub.add_parser("normalize", help="normalize a reconciliation document")
    sp.add_argument("reconciliation")
    common(sp, budget=False)
    sp.set_defaults(run=cmd_normalize)

    sp = sub.add_parser("validate", help="check a reconciliation document")
    sp.add_argument("reconciliation")
    common(sp, budget=False)
    sp.set_defaults(run=cmd_validate)

    sp = sub.add_parser("gadget", help="build the tree pair for a 2-CNF formula")
    sp.add_argument("cnf", help="DIMACS file")
    sp.add_argument("species_out")
    sp.add_argument("gene_out")
    common(sp, budget=False)
    sp.set_defaults(run=cmd_gadget)

    sp = sub.add_parser("oracle", help="compare the solver with exhaustive search")
    sp.add_argument("species")
    sp.add_argument("gene")
    sp.add_argument("phi", nargs="?")
    common(sp)
    sp.set_defaults(run=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if getattr(args, "k", 0) < 0:
        print("trrecon: --k must be nonnegative", file=sys.stderr)
        return EXIT_INPUT
    if args.threads < 1:
        print("trrecon: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.run(args)
    except (
        InputError,
        TreeError,
        SolverError,
        SprError,
        ReconError,
        NormalizeError,
        LeafMismatch,
        FormulaInvariantViolated,
    ) as exc:
        print(f"trrecon: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
