import json
import math

import pytest

from sandtree import tree as T
from sandtree.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cherry_file(tmp_path):
    path = tmp_path / "cherry.json"
    path.write_bytes(T.serialize(T.cherry()))
    return str(path)


def test_ratio_exact_cherry(capsys, cherry_file):
    code, out, _ = run(capsys, "ratio", "exact", "--tree", cherry_file)
    assert code == 0 and out.strip() == "3/4"


def test_animals_table_catalan(capsys):
    code, out, _ = run(capsys, "animals", "table", "--p", "1", "--nmax", "5")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("#") and "k vertices" in lines[0]
    col = [ln.split(",")[1] for ln in lines[2:]]
    assert col == ["1", "1", "2", "5", "14", "42"]


def test_lyapunov_point_one(capsys):
    code, out, _ = run(capsys, "transfer", "lyapunov", "--dist", "point:1", "--n", "100", "--samples", "3")
    row = dict(zip(*[ln.split(",") for ln in out.splitlines()]))
    assert code == 0
    assert float(row["Lplus"]) == pytest.approx(math.log(4), abs=1e-12)


def test_json_format(capsys):
    code, out, _ = run(capsys, "--format", "json", "sandpile", "recurrent", "--tree", "full:2")
    assert code == 0
    assert json.loads(out)[0]["recurrent"] == 945


def test_out_flag(capsys, tmp_path, cherry_file):
    dest = tmp_path / "x.txt"
    code, out, _ = run(capsys, "ratio", "exact", "--tree", cherry_file, "--out", str(dest))
    assert code == 0 and out == "" and dest.read_text().strip() == "3/4"


def test_tree_build_and_sample_roundtrip(capsys):
    code, out, _ = run(capsys, "tree", "build", "--family", "full", "--n", "2")
    assert code == 0 and T.deserialize(out).n == 7
    _, a, _ = run(capsys, "tree", "sample", "--p", "0.6", "--max-gen", "6", "--seed", "9")
    _, b, _ = run(capsys, "tree", "sample", "--p", "0.6", "--max-gen", "6", "--seed", "9")
    assert a == b


def test_stabilize(capsys):
    code, out, _ = run(capsys, "sandpile", "stabilize", "--tree", "cherry", "--heights", "3,3,3", "--add", "0")
    assert code == 0
    assert json.loads(out)["avalanche"] == [0, 1, 2]


def test_avalanche_law_sums_to_one(capsys):
    code, out, _ = run(capsys, "sandpile", "avalanche", "--tree", "chain:3")
    assert code == 0
    from fractions import Fraction
    probs = [Fraction(ln.split(",")[1]) for ln in out.splitlines()[2:]]
    assert sum(probs) == 1
    edges = [ln.split(",")[2] for ln in out.splitlines()[2:]]
    sizes = [ln.split(",")[0] for ln in out.splitlines()[2:]]
    assert all(e == ("" if s == "0" else str(int(s) - 1)) for s, e in zip(sizes, edges))


@pytest.mark.parametrize("argv", [
    ["--bogus"],
    ["ratio", "exact"],
    ["ratio", "exact", "--tree", "nosuch.json"],
    ["ratio", "exact", "--tree", "weird:3"],
    ["animals", "table", "--p", "1.5", "--nmax", "3"],
    ["transfer", "lyapunov", "--dist", "point:0.2", "--n", "5"],
])
def test_invalid_arguments_exit_2(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 2


def test_guard_exit_3(capsys):
    code, _, err = run(capsys, "tree", "shapes", "--max-vertices", "14")
    assert code == 3 and "guard" in err or "limited" in err


def test_convergence_exit_3(capsys):
    code, _, err = run(capsys, "ratio", "dist", "--p", "0.6", "--max-iter", "2")
    assert code == 3 and "iterations" in err


def test_report_rerun_is_byte_identical(capsys, tmp_path):
    dest = tmp_path / "rep.json"
    code, _, _ = run(capsys, "--seed", "4", "experiment", "avalanche", "--size-max", "5", "--tree-budget", "40",
                     "--depth", "3", "--max-gen", "10", "--out", str(dest))
    assert code == 0
    again = tmp_path / "again.json"
    code, _, _ = run(capsys, "report", str(dest), "--out", str(again))
    assert code == 0
    assert again.read_bytes() == dest.read_bytes()


def test_report_detects_tampering(capsys, tmp_path):
    dest = tmp_path / "rep.json"
    run(capsys, "experiment", "avalanche", "--size-max", "4", "--tree-budget", "20", "--depth", "2",
        "--max-gen", "8", "--out", str(dest))
    doc = json.loads(dest.read_text())
    doc["tables"][0]["csv"] = "tampered\n"
    dest.write_text(json.dumps(doc, indent=2) + "\n")
    code, _, err = run(capsys, "report", str(dest), "--out", str(tmp_path / "x.json"))
    assert code == 1 and "differs" in err
