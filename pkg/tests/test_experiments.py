import json
import math
from fractions import Fraction

import numpy as np
import pytest

from sandtree import experiments as X
from sandtree import sandpile as S
from sandtree import transfer as M
from sandtree import tree as T
from sandtree.errors import GuardError
from sandtree.rng import RandomSource


def test_fmt():
    assert X.fmt(Fraction(3, 4)) == "3/4"
    assert X.fmt(Fraction(5, 1)) == "5"
    assert X.fmt(0.1) == "0.10000000000000001"
    assert X.fmt(np.float64(2.5)) == "2.5"
    assert X.fmt(True) == "true"


def test_to_csv_rows_and_lists():
    text = X.to_csv(["a", "b"], [{"a": 1, "b": Fraction(1, 3)}, [2, 0.5]])
    assert text == "a,b\n1,1/3\n2,0.5\n"


@pytest.mark.parametrize("t", [T.full_tree(2), T.full_tree(3), T.chain(6), T.join(T.cherry(), T.chain(4))],
                         ids=lambda t: T.canonical_key(t))
def test_cluster_table_against_exact_law(t):
    origin = 0 if t.degree(0) <= 2 else next(v for v in range(t.n) if t.degree(v) <= 2)
    tab = X.cluster_law_table(t, origin)
    law = S.exact_avalanche_law(t, origin, "dp")
    total = S.recurrent_count(t)
    assert tab["total"] == total
    assert Fraction(tab["quiet"], total) == law.clusters[frozenset()]
    got = sorted(zip(tab["size"].tolist(), tab["count"].tolist()))
    want = sorted((len(c), int(p * total)) for c, p in law.clusters.items() if c)
    assert got == want
    assert int(tab["count"].sum()) + tab["quiet"] == total


def test_cluster_table_eigenvalues_match_cluster_matrix():
    t = T.full_tree(2)
    tab = X.cluster_law_table(t, 0)
    ratios = {len(c): M.eigen_2x2(M.cluster_matrix(t, c, 0)).log_lambda_plus
              for c in T.enumerate_clusters(t, 0, 1)}
    sizes = tab["size"].tolist()
    assert tab["log_lambda_plus"][sizes.index(1)] == pytest.approx(ratios[1], abs=1e-12)


def test_cluster_table_guard():
    with pytest.raises(GuardError):
        X.cluster_law_table(T.full_tree(5), 0)


def test_avalanche_regression_full_tree():
    reg = X.avalanche_regression(T.full_tree(3))
    assert reg["closes"]
    assert abs(reg["slope"] - 1) < 0.2


def test_annealed_size_law_normalized():
    ann = X.annealed_size_law(0.4, 60, 50, max_gen=12, rng=RandomSource(2))
    assert ann["mean"].sum() == pytest.approx(1.0, abs=1e-12)


def test_annealed_bound_formula():
    p = 0.4
    assert X.annealed_avalanche_bound(p, 0) == 1
    assert X.annealed_avalanche_bound(p, 2, 3.0) == pytest.approx(3 * 2 ** (32 / 25) * ((p + math.sqrt(p)) / 2) ** 2)


def test_full_tree_covariance_quarter_rate():
    rows = X.full_tree_covariances(6, 4)
    for a, b in zip(rows, rows[1:]):
        assert b["cov"] / a["cov"] == Fraction(1, 4)


def test_report_roundtrip_and_determinism():
    a = X.run_avalanche_experiment(size_max=6, tree_budget=60, depth=3, max_gen=12, seed=5)
    b = X.run_avalanche_experiment(size_max=6, tree_budget=60, depth=3, max_gen=12, seed=5)
    assert a.to_json() == b.to_json()
    back = X.ExperimentReport.from_json(a.to_json())
    assert back.to_json() == a.to_json()
    doc = json.loads(a.to_json())
    assert doc["params"]["seed"] == 5 and doc["version"]
    assert {"claim", "ref", "pass", "value", "tol"} <= set(doc["conclusions"][0])


def test_covariance_experiment_small():
    rep = X.run_covariance_experiment(p=0.6, n_max=3, tree_budget=20, depth=5, shape_max=7, depth_margin=3)
    names = [t["name"] for t in rep.tables]
    assert names == ["full_tree", "path_matrix", "shapes", "spine", "operator_gap"]
    assert all(c["pass"] for c in rep.conclusions[:3])


def test_covariance_guard_is_flagged_not_silent():
    rep = X.run_covariance_experiment(p=0.6, n_max=2, tree_budget=5, depth=4, shape_max=13, depth_margin=2)
    assert any("truncated" in n for n in rep.notes)
    assert "shapes" not in [t["name"] for t in rep.tables]


def test_power_law_contrast():
    out = X.power_law_contrast(64, 0.4)
    assert abs(out["exponent"] + 1.5) < 0.3
    assert out["bound_log_rate"] < 0


def test_covariance_p_zero_flagged():
    rep = X.run_covariance_experiment(p=0.0, n_max=2, tree_budget=3, depth=4, shape_max=5, depth_margin=2)
    assert any("degenerate" in n for n in rep.notes)
    gap = next(t for t in rep.tables if t["name"] == "operator_gap")
    assert gap["csv"].splitlines()[1].endswith(",0")
