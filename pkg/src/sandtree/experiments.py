"""Covariance and avalanche experiments, and the report format they emit."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
from scipy.stats import linregress

from . import __version__
from .animals import a_recursion, catalan, threshold_solve
from .errors import GuardError
from .ratio import branching_fixed_point, fixed_point_measure, hanging_ratios, wasserstein1
from .rng import RandomSource
from .sandpile import _rooted_order, avalanche_size_law, count_allowed, exact_covariance
from .transfer import GAMMA, annealed_bound, eigen_2x2, lambda_pm_const, path_matrix
from .tree import TreeTopology, build_spine_conditioned, enumerate_rooted_shapes, full_tree, sample_gw_binary

INT64_VERTICES = 39  # 3**39 < 2**63: cluster counts fit in int64
CLUSTER_TABLE_GUARD = 2_000_000
LOG4 = math.log(4)


# -- report ------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(r[h] if isinstance(r, dict) else x) for h, x in
                           zip(header, r if not isinstance(r, dict) else header)) + "\n")
    return buf.getvalue()


def _plain(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, Fraction):
        return fmt(v)
    return v


@dataclass
class ExperimentReport:
    experiment: str
    params: dict[str, Any]
    version: str = __version__
    tables: list[dict[str, str]] = field(default_factory=list)
    conclusions: list[dict[str, Any]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def table(self, name: str, header: list[str], rows) -> None:
        self.tables.append({"name": name, "csv": to_csv(header, rows)})

    def conclude(self, claim: str, ref: str, passed: bool, value, tol) -> None:
        self.conclusions.append({"claim": claim, "ref": ref, "pass": bool(passed),
                                 "value": _plain(value), "tol": _plain(tol)})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.conclusions)

    def to_json(self) -> str:
        doc = {"experiment": self.experiment, "params": self.params, "version": self.version,
               "tables": self.tables, "conclusions": self.conclusions, "notes": self.notes}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["experiment"], d["params"], d.get("version", ""), d.get("tables", []),
                   d.get("conclusions", []), d.get("notes", []))


# -- avalanche cluster table -------------------------------------------------------

def _m_entries(x: float) -> np.ndarray:
    return np.array([[1 + x, 1 + x], [1.0, 2 + x]])


def _option(a, b, x, size=0):
    m = _m_entries(x)
    top = m.max()
    return {"a": np.array([a], dtype=np.int64), "b": np.array([b], dtype=np.int64),
            "m": (m / top)[None], "ls": np.array([math.log(top)]),
            "ld": np.array([2 * math.log1p(x)]), "size": np.array([size])}


def _concat(opts):
    return {k: np.concatenate([o[k] for o in opts]) for k in opts[0]}


def _cross(opts):
    """Cartesian product of option sets; matrices multiplied left to right."""
    grids = np.meshgrid(*[np.arange(len(o["a"])) for o in opts], indexing="ij")
    idx = [g.ravel() for g in grids]
    m = opts[0]["m"][idx[0]]
    ls = opts[0]["ls"][idx[0]].copy()
    ld = opts[0]["ld"][idx[0]].copy()
    for o, i in zip(opts[1:], idx[1:]):
        m = m @ o["m"][i]
        top = m.max(axis=(1, 2))
        m /= top[:, None, None]
        ls += o["ls"][i] + np.log(top)
        ld += o["ld"][i]
    return idx, m, ls, ld


def cluster_law_table(tree: TreeTopology, origin: int | None = None,
                      guard: int = CLUSTER_TABLE_GUARD) -> dict[str, Any]:
    """Every avalanche cluster at ``origin`` with its exact count and ``log lambda_+`` of its matrix.

    Built bottom-up: the options at a vertex are "not in the cluster" (boundary
    counts, one matrix factor for the hanging subtree) or any cluster of the
    child's subtree containing the child; a vertex's clusters are the cartesian
    product of its slots' options. Matrices follow the contour order of
    ``tree.cluster_slots``. Needs an origin of degree at most two.
    Returns arrays ``size``, ``count``, ``log_lambda_plus``, ``log_prob`` and the
    integers ``total`` and ``quiet`` (configurations where nothing topples).
    """
    origin = tree.root if origin is None else origin
    if tree.degree(origin) > 2:
        raise ValueError("single-wave avalanche formula needs an origin of degree <= 2")
    if tree.n > INT64_VERTICES:
        raise GuardError(f"{tree.n} vertices: counts would overflow int64")
    order, parent = _rooted_order(tree, origin)
    hr = hanging_ratios(tree)
    free: dict[int, tuple[int, int]] = {}
    bound: dict[int, tuple[int, int]] = {}
    tables: dict[int, dict] = {}
    n_clusters: dict[int, int] = {}
    for v in reversed(order):
        kids = [w for w in tree.adjacency[v] if w != parent[v]]
        (w1, s1), (w2, s2) = ([free[w] for w in kids] + [(0, 1)] * 2)[:2]
        free[v] = ((w1 + s1) * (w2 + s2), 2 * s1 * s2 + w1 * s2 + s1 * w2)
        bound[v] = (s1 * s2 + w1 * s2 + s1 * w2, s1 * s2)
        slots = [z for z in tree.slots(v) if z is None or z != parent[v]]
        n_here = math.prod(1 + n_clusters[z] for z in slots if z is not None)
        if n_here > guard:
            raise GuardError(f"more than {guard} clusters at vertex {v}")
        n_clusters[v] = n_here
        opts = []
        for z in slots:
            if z is None:
                opts.append(_option(0, 1, 0.0))
            else:
                out = _option(*bound[z], float(hr[(v, z)]))
                opts.append(_concat([out, tables.pop(z)]))
        idx, m, ls, ld = _cross(opts)
        real = [i for i, z in enumerate(slots) if z is not None]
        pair = (real + [i for i, z in enumerate(slots) if z is None])[:2]
        a1, b1 = opts[pair[0]]["a"][idx[pair[0]]], opts[pair[0]]["b"][idx[pair[0]]]
        a2, b2 = opts[pair[1]]["a"][idx[pair[1]]], opts[pair[1]]["b"][idx[pair[1]]]
        size = 1 + sum(o["size"][i] for o, i in zip(opts, idx))
        if v != origin:
            tables[v] = {"a": a1 * a2, "b": b1 * b2 + a1 * b2 + b1 * a2, "m": m, "ls": ls, "ld": ld,
                         "size": size}
            continue
        count = (a1 + b1) * (a2 + b2)
        tr = m[:, 0, 0] + m[:, 1, 1]
        log_tr = ls + np.log(tr)
        h = np.exp(np.minimum(ld - 2 * log_tr, 0.0))
        log_plus = log_tr + np.log((1 + np.sqrt(np.maximum(1 - 4 * h, 0.0))) / 2)
    total = count_allowed(tree)
    (w1, s1), (w2, s2) = ([free[w] for w in tree.adjacency[origin]] + [(0, 1)] * 2)[:2]
    quiet = 2 * s1 * s2 + w1 * s2 + s1 * w2
    return {"size": size, "count": count, "log_lambda_plus": log_plus,
            "log_prob": np.log(count.astype(float)) - math.log(total), "total": total, "quiet": quiet}


def avalanche_regression(tree: TreeTopology, origin: int | None = None) -> dict[str, float]:
    """Fit ``log P(Av = C)`` against ``-log lambda_+(M(C))`` over all clusters."""
    tab = cluster_law_table(tree, origin)
    fit = linregress(-tab["log_lambda_plus"], tab["log_prob"])
    closes = int(tab["count"].sum()) + tab["quiet"] == tab["total"]
    gap = tab["log_prob"] + tab["log_lambda_plus"]
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue ** 2),
            "clusters": int(len(tab["count"])), "closes": bool(closes),
            "gap_min": float(gap.min()), "gap_max": float(gap.max())}


# -- annealed avalanche sizes -------------------------------------------------------

def annealed_size_law(p: float, size_max: int, samples: int, max_gen: int = 40, rng=None) -> dict[str, Any]:
    """Average over GW(p) trees of the exact law of the number of toppled vertices."""
    src = rng if isinstance(rng, RandomSource) else RandomSource(0 if rng is None else int(rng))
    gen = src.generator()
    probs = np.zeros((samples, size_max + 1))
    for s in range(samples):
        t = sample_gw_binary(p, max_gen, gen)
        law = avalanche_size_law(t)
        for k, pr in law.items():
            if k <= size_max:
                probs[s, k] = float(pr)
    mean = probs.mean(axis=0)
    se = probs.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.zeros(size_max + 1)
    return {"mean": mean, "stderr": se}


def size_decay_fit(mean: np.ndarray, lo: int = 2, hi: int = 8) -> dict[str, float]:
    ns = np.arange(lo, hi + 1)
    vals = mean[lo:hi + 1]
    if (vals <= 0).any():
        return {"slope": float("nan"), "r2": float("nan")}
    fit = linregress(ns, np.log(vals))
    return {"slope": float(fit.slope), "r2": float(fit.rvalue ** 2)}


def annealed_avalanche_bound(p: float, n: int, c: float = 1.0) -> float:
    """``C 2^(16n/25) ((p + sqrt p)/2)^n``."""
    return c * 2 ** (16 * n / 25) * ((p + math.sqrt(p)) / 2) ** n


def run_avalanche_experiment(p: float = 0.4, size_max: int = 8, tree_budget: int = 2000,
                             seed: int = 0, depth: int = 4, max_gen: int = 40) -> ExperimentReport:
    rep = ExperimentReport("avalanche", {"p": p, "size_max": size_max, "tree_budget": tree_budget,
                                         "seed": seed, "depth": depth, "max_gen": max_gen})
    # (a) quenched: every cluster at the root of a full tree
    try:
        reg = avalanche_regression(full_tree(depth))
        rep.table("cluster_regression", list(reg), [reg])
        rep.conclude("slope of log P(Av=C) against -log lambda_+(M(C)) on the full tree is 1",
                     "cluster probability vs largest eigenvalue", abs(reg["slope"] - 1) <= 0.15, reg["slope"], 0.15)
        rep.conclude("cluster probabilities plus the no-toppling mass sum to 1 exactly",
                     "avalanche law normalization", reg["closes"], int(reg["closes"]), 0)
    except GuardError as e:
        rep.notes.append(f"cluster table truncated: {e}")
    # (b) annealed size law on GW(p) trees
    ann = annealed_size_law(p, size_max, tree_budget, max_gen, RandomSource(seed))
    fit = size_decay_fit(ann["mean"], 2, min(8, size_max))
    ratios = [ann["mean"][n] / annealed_avalanche_bound(p, n) for n in range(1, size_max + 1)]
    c_cal = max(ratios)
    rows = [{"n": n, "mean": ann["mean"][n], "stderr": ann["stderr"][n],
             "bound": annealed_avalanche_bound(p, n, c_cal)} for n in range(size_max + 1)]
    rep.table("annealed_size_law", ["n", "mean", "stderr", "bound"], rows)
    rep.conclude("annealed avalanche size law decays exponentially (log-linear fit over n in [2, 8])",
                 "sub-threshold exponential decay", fit["slope"] < 0 and fit["r2"] > 0.95, fit["r2"], 0.95)
    rep.conclude("calibrated bound constant C (reported, not asserted)", "annealed avalanche bound", True, c_cal, None)
    # (c) thresholds
    p_star, p_bin = threshold_solve()
    rep.table("thresholds", ["p_star", "p_binomial_star"], [[p_star, p_bin]])
    rep.conclude("GW threshold p* = 0.54511", "GW threshold equation", abs(p_star - 0.54511) <= 1e-4, p_star, 1e-4)
    rep.conclude("binomial threshold 2^(-16/25) = 0.641713", "binomial tree threshold",
                 abs(p_bin - 0.641713) <= 1e-6, p_bin, 1e-6)
    return rep


# -- covariance ------------------------------------------------------------------

def full_tree_covariances(depth: int, n_max: int | None = None) -> list[dict]:
    """Exact covariance of the heights at the root and at the leftmost vertex of each depth."""
    t = full_tree(depth)
    rows = []
    v = t.root
    for n in range(1, min(depth, depth if n_max is None else n_max) + 1):
        v = t.children[v][0]
        cov = exact_covariance(t, t.root, v)
        eig = eigen_2x2(path_matrix(t, t.root, v))
        rows.append({"n": n, "cov": cov, "abs_cov": abs(float(cov)), "log_ratio": eig.log_ratio})
    return rows


def shape_covariances(max_vertices: int) -> dict[int, float]:
    """Largest exact |Cov| at each distance over all pairs in all shapes up to ``max_vertices``."""
    worst: dict[int, float] = {}
    for t in enumerate_rooted_shapes(max_vertices):
        for u in range(t.n):
            for v in range(u + 1, t.n):
                n = t.distance(u, v)
                worst[n] = max(worst.get(n, 0.0), abs(float(exact_covariance(t, u, v))))
    return dict(sorted(worst.items()))


def spine_covariances(p: float, n_max: int, samples: int, depth_margin: int, src: RandomSource) -> list[dict]:
    rows = []
    for n in range(1, n_max + 1):
        gen = src.spawn(n).generator()
        vals = np.empty(samples)
        for s in range(samples):
            t, o, v = build_spine_conditioned(p, n, depth_margin, gen)
            vals[s] = abs(float(exact_covariance(t, o, v)))
        rows.append({"n": n, "mean_abs_cov": float(vals.mean()),
                     "stderr": float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0})
    return rows


def run_covariance_experiment(p: float = 0.6, n_max: int = 6, tree_budget: int = 200, seed: int = 0,
                              depth: int = 8, shape_max: int = 9, depth_margin: int = 5,
                              support_cap: int = 2048) -> ExperimentReport:
    rep = ExperimentReport("covariance", {"p": p, "n_max": n_max, "tree_budget": tree_budget, "seed": seed,
                                          "depth": depth, "shape_max": shape_max,
                                          "depth_margin": depth_margin, "support_cap": support_cap})
    # (a) full-tree truncations
    rows = full_tree_covariances(depth)
    fit = linregress([r["n"] for r in rows], np.log([r["abs_cov"] for r in rows]))
    rep.table("full_tree", ["n", "cov", "abs_cov", "log_ratio"], rows)
    rep.conclude("log|Cov| on full trees falls at least as fast as -log 4 per step (+0.2)",
                 "uniform covariance bound; lambda_+ = 4^n", fit.slope <= -LOG4 + 0.2, float(fit.slope), 0.2)
    # (b) |Cov| against lambda_- / lambda_+ of the path matrix, away from the leaves
    deep = full_tree_covariances(2 * n_max, n_max)
    gaps = [math.log(r["abs_cov"]) - r["log_ratio"] for r in deep]
    rep.table("path_matrix", ["n", "abs_cov", "log_ratio", "gap"],
              [dict(r, gap=g) for r, g in zip(deep, gaps)])
    rep.conclude("log|Cov| - log(lambda_-/lambda_+) is constant along the path (spread)",
                 "covariance as eigenvalue ratio", max(gaps) - min(gaps) <= 0.1,
                 max(gaps) - min(gaps), 0.1)
    # all small shapes, C calibrated at distance 1
    try:
        worst = shape_covariances(shape_max)
    except GuardError as e:
        rep.notes.append(f"shape table truncated: {e}")
    else:
        c1 = worst[1] / GAMMA
        srows = [{"n": n, "max_abs_cov": w, "bound": c1 * GAMMA ** n} for n, w in worst.items()]
        rep.table("shapes", ["n", "max_abs_cov", "bound"], srows)
        rep.conclude("|Cov| <= C gamma^n on every shape, C calibrated at n = 1", "uniform covariance bound",
                     all(r["max_abs_cov"] <= r["bound"] * (1 + 1e-12) for r in srows), c1, None)
    # (c) annealed: spine-conditioned GW(p) trees
    if p == 0:
        rep.notes.append("p = 0: the spine conditioning is degenerate, spine trees are bare paths")
    src = RandomSource(seed)
    spine = spine_covariances(p, n_max, tree_budget, depth_margin, src)
    rep.table("spine", ["n", "mean_abs_cov", "stderr"], spine)
    rate_fit = linregress([r["n"] for r in spine], np.log([r["mean_abs_cov"] for r in spine]))
    rate = -float(rate_fit.slope)
    mu = fixed_point_measure(p, support_cap=support_cap).measure
    bound = annealed_bound(mu)
    # the two-generation operator and the one-step recursion need not share a fixed point
    branch, gens = branching_fixed_point(p)
    gap = wasserstein1(mu, branch)
    rep.table("operator_gap", ["p", "generations", "mean_F", "mean_branching", "w1"],
              [{"p": p, "generations": gens, "mean_F": mu.mean(), "mean_branching": branch.mean(), "w1": gap}])
    rep.notes.append(f"W1 between the two-generation fixed point and the branching-recursion law: {gap:.6g}")
    lp, lm = lambda_pm_const(1.5)
    rep.conclude("annealed decay rate -1/n log E|Cov| <= log(Lambda_+/Lambda_-)(gamma of mu*)",
                 "annealed covariance bound", rate <= bound, rate, bound)
    rep.conclude("log((4+sqrt 7)/(4-sqrt 7)) (reported with the raw ratio)", "annealed covariance bound",
                 bound <= math.log(lp / lm) + 1e-12, math.log(lp / lm), lp / lm)
    return rep


def power_law_contrast(nmax: int = 64, p: float = 0.4) -> dict[str, float]:
    """Exponent of ``Cat(n+1) 4^-n`` at p=1 against the exponential rate of the annealed bound."""
    from scipy.stats import linregress as lr
    ns = np.arange(8, nmax + 1)
    a = a_recursion(1, nmax + 1)
    vals = np.array([float(Fraction(a[n + 1]) / 4 ** n) for n in ns.tolist()])
    assert all(a[n + 1] == catalan(n + 1) for n in range(nmax + 1))
    fit = lr(np.log(ns), np.log(vals))
    rate = math.log(2 ** (16 / 25) * (p + math.sqrt(p)) / 2)
    return {"exponent": float(fit.slope), "bound_log_rate": rate}
