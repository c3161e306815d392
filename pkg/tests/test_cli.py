import json
import subprocess
import sys

import pytest

from trrecon.cli import main
from trrecon.hardness import anchor_size
from trrecon.treemodel import parse_newick

SPECIES = "(((A:1,B:1):1,C:2):1,D:3):1;"
ONE_MOVE = "(((A:1,C:1):1,B:2):1,D:3):1;"
WORKED = "p cnf 2 3\n1 -2 0\n1 2 0\n-1 2 0\n"


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, text in [
        ("species.nwk", SPECIES),
        ("same.nwk", SPECIES),
        ("moved.nwk", ONE_MOVE),
        ("broken.nwk", "((A:1,B:1):1,C:2"),
        ("formula.cnf", WORKED),
        ("phi.txt", "a A\nb B\nc C\nd D\n"),
        ("lower.nwk", "(((a:1,c:1):1,b:2):1,d:3):1;"),
    ]:
        (tmp_path / name).write_text(text)
        paths[name.split(".")[0]] = str(tmp_path / name)
    paths["dir"] = tmp_path
    return paths


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_identical_trees(files, capsys):
    code, doc = run(["reconcile", files["species"], files["same"], "--k", "0"], capsys)
    assert code == 0
    assert doc["schema_version"] == 1 and doc["weight"] == 0


@pytest.mark.parametrize("k, code, weight", [(0, 2, None), (3, 0, 1)])
def test_budget_exit_codes(files, capsys, k, code, weight):
    got, doc = run(["reconcile", files["species"], files["moved"], "--k", str(k)], capsys)
    assert got == code
    if weight is None:
        assert doc["status"] == "no solution within budget"
    else:
        assert doc["weight"] == weight


def test_leaf_map(files, capsys):
    code, doc = run(
        ["reconcile", files["species"], files["lower"], files["phi"], "--k", "1"], capsys
    )
    assert code == 0 and doc["weight"] == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["reconcile", "{species}", "{broken}", "--k", "1"],
        ["reconcile", "{species}", "{dir}/missing.nwk", "--k", "1"],
        ["reconcile", "{species}", "{moved}", "--k", "-1"],
        ["reconcile", "{species}", "{moved}", "--k", "1", "--threads", "0"],
        ["reconcile", "{species}", "{moved}"],
        ["validate", "{species}"],
        ["gadget", "{species}", "{dir}/s.nwk", "{dir}/g.nwk"],
    ],
)
def test_bad_input_exits_one(files, capsys, argv):
    argv = [a.format(**files) for a in argv]
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1
    assert capsys.readouterr().err


def test_validate_and_normalize_solver_output(files, capsys):
    out = files["dir"] / "r.json"
    dot = files["dir"] / "r.dot"
    args = ["reconcile", files["species"], files["moved"], "--k", "2"]
    assert main(args + ["--json", str(out), "--dot", str(dot)]) == 0
    assert dot.read_text().startswith("digraph")
    code, doc = run(["validate", str(out)], capsys)
    assert code == 0 and doc["violations"] == [] and doc["weight"] == 1
    code, doc = run(["normalize", str(out)], capsys)
    assert code == 0
    trace = doc.pop("trace")
    assert trace["normalized"] and trace["steps"] == []
    assert doc == json.loads(out.read_text())


def test_validate_reports_violations(files, capsys):
    out = files["dir"] / "r.json"
    main(["reconcile", files["species"], files["moved"], "--k", "2", "--json", str(out)])
    doc = json.loads(out.read_text())
    doc["transfers"][0]["replaced_loss"] = None
    out.write_text(json.dumps(doc))
    code, report = run(["validate", str(out)], capsys)
    assert code == 1 and not report["valid"]


def test_spr(files, capsys):
    code, doc = run(["spr", files["species"], files["moved"], "--k", "2"], capsys)
    assert code == 0 and doc["scenario"]["length"] == 1
    end = parse_newick(doc["end"])
    assert sorted(end.leaf_labels) == ["A", "B", "C", "D"]


def test_gadget_leaf_counts(files, capsys):
    s_out, g_out = files["dir"] / "s.nwk", files["dir"] / "g.nwk"
    code, doc = run(["gadget", files["formula"], str(s_out), str(g_out)], capsys)
    assert code == 0
    expected = 2 * (28 + anchor_size(2, 3)) + 8 * 3
    assert doc["leaves"] == expected
    assert parse_newick(s_out.read_text(), kind="species").n_leaves == expected
    assert parse_newick(g_out.read_text()).n_leaves == expected


def test_oracle(files, capsys):
    code, doc = run(["oracle", files["species"], files["moved"], "--k", "2"], capsys)
    assert code == 0 and doc["agree"] and doc["oracle_distance"] == 1
    code, _ = run(["oracle", files["species"], files["moved"], "--k", "0"], capsys)
    assert code == 2


def test_stdin_and_byte_identical_runs(files):
    cmd = [sys.executable, "-m", "trrecon.cli", "reconcile", files["species"], "-", "--k", "3",
           "--seed", "7"]
    runs = [
        subprocess.run(cmd, input=ONE_MOVE, capture_output=True, text=True, check=True).stdout
        for _ in range(2)
    ]
    assert runs[0] == runs[1]
    assert json.loads(runs[0])["weight"] == 1
