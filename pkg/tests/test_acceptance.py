"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import math
import time
from fractions import Fraction

import numpy as np
from scipy.stats import linregress

from sandtree import animals as A
from sandtree import experiments as X
from sandtree import ratio as R
from sandtree import sandpile as S
from sandtree import transfer as M
from sandtree import tree as T
from sandtree.rng import RandomSource

P_GRID = [k / 10 for k in range(1, 10)]


def test_ac01_ratio_recursion_oracle(verdict):
    t0 = time.perf_counter()
    shapes = T.enumerate_rooted_shapes(8)
    bad = []
    for t in shapes:
        w, s = S.count_weak_strong(t)
        if R.x_recursive(t) != Fraction(w, s):
            bad.append(T.canonical_key(t))
    anchors = (R.x_recursive(T.point()) == Fraction(1, 2) and R.x_recursive(T.cherry()) == Fraction(3, 4)
               and R.x_recursive(T.chain(2)) == Fraction(3, 5))
    verdict(1, "ratio recursion vs enumeration", not bad and anchors,
            f"{len(shapes)} shapes, {len(bad)} mismatches, anchors {anchors}", time.perf_counter() - t0, 60)


def test_ac02_deterministic_fixed_points(verdict):
    t0 = time.perf_counter()
    target = (math.sqrt(7) - 1) / 2
    x = 0.5
    for _ in range(200):
        x = R.phi(x)
    tree_x = R.x_recursive(T.single_branch(80), exact=False)
    bb_half = R.x_family_closed("backbone", 0.5)
    bb_one = R.x_family_closed("backbone", 1.0)
    bb_tree = R.x_recursive(T.backbone(T.point(), 80), exact=False)
    errs = [abs(x - target), abs(tree_x - target), abs(bb_half - target), abs(bb_tree - target)]
    ok = max(errs) <= 1e-10 and abs(bb_one - 1) <= 1e-15
    verdict(2, "single branch and backbone fixed points", ok,
            f"max |x - (sqrt7-1)/2| = {max(errs):.2e}, backbone(1) = {bb_one!r}", time.perf_counter() - t0, 1)


def test_ac03_contraction(verdict):
    t0 = time.perf_counter()
    worst = -math.inf
    for p in P_GRID:
        gen = RandomSource(int(round(p * 10)), 3).generator()
        for _ in range(1000):
            k1, k2 = gen.integers(1, 6, size=2)
            a = R.DiscreteMeasure(gen.uniform(0.5, 1, k1), gen.dirichlet(np.ones(k1)))
            b = R.DiscreteMeasure(gen.uniform(0.5, 1, k2), gen.dirichlet(np.ones(k2)))
            lhs = R.wasserstein1(R.apply_F(a, p, None, None), R.apply_F(b, p, None, None))
            worst = max(worst, lhs - (8 / 9) * R.wasserstein1(a, b))
    verdict(3, "8/9 contraction in W1", worst <= 1e-12,
            f"9000 pairs, max W1(Fa,Fb) - (8/9) W1(a,b) = {worst:.3e}", time.perf_counter() - t0, 30)


def test_ac04_fixed_point_limits(verdict):
    t0 = time.perf_counter()
    r0 = R.fixed_point_measure(0.0).measure
    exact0 = r0.support.tolist() == [0.5] and r0.weights.tolist() == [1.0]
    r1 = R.fixed_point_measure(1.0).measure
    near1 = r1.mass_near(1.0, 1e-6)
    inside = True
    for p in (0.0, 0.2, 0.5, 0.8, 1.0):
        mu = R.fixed_point_measure(p).measure
        inside &= bool(mu.support[0] >= 0.5 and mu.support[-1] <= 1.0)
    ok = exact0 and near1 >= 1 - 1e-12 and inside
    verdict(4, "fixed point degenerate limits", ok,
            f"p=0 delta(1/2) {exact0}, p=1 mass within 1e-6 of 1 = {near1:.15f}, support in [1/2,1] {inside}",
            time.perf_counter() - t0, 30)


def test_ac05_quenched_spectral_suite(verdict):
    t0 = time.perf_counter()
    gen = RandomSource(5).generator()
    fails = {"eigen_real": 0, "bound_49": 0, "trace_bound_ok": 0, "det": 0, "gamma": 0}
    worst_root = 0.0
    for _ in range(10_000):
        n = int(gen.integers(1, 201))
        xs = [Fraction(int(k), 1024) for k in gen.integers(512, 1025, size=n)]
        r = M.spectral_bounds_check(xs)
        fails["eigen_real"] += not r["eigen_real"]
        fails["bound_49"] += not r["bound_49"]
        fails["trace_bound_ok"] += not r["trace_bound_ok"]
        fails["det"] += not (r["det_identity_exact"] and r["det_identity_err"] <= 1e-9)
        if n >= 50:
            worst_root = max(worst_root, r["ratio_root"])
            fails["gamma"] += r["ratio_root"] > 0.38854 * 1.05
    ok = not any(fails.values())
    verdict(5, "quenched spectral bounds", ok,
            f"10^4 products, failures {fails}, worst (l-/l+)^(1/n) at n>=50 = {worst_root:.5f}",
            time.perf_counter() - t0, 120)


def test_ac06_trace_expansion(verdict):
    t0 = time.perf_counter()
    gen = RandomSource(6).generator()
    bad = 0
    for n in range(1, 13):
        for _ in range(3):
            xs = [Fraction(int(k), 14) for k in gen.integers(7, 15, size=n)]
            m = M.product_exact(xs)
            bad += M.trace_expansion(xs) != m[0][0] + m[1][1]
    verdict(6, "trace expansion identity", bad == 0, f"36 exact products n<=12, {bad} mismatches",
            time.perf_counter() - t0, 60)


def test_ac07_lyapunov_identities(verdict):
    t0 = time.perf_counter()
    d1 = M.lyapunov_estimate(R.DiscreteMeasure.delta(1.0), 200, 10, RandomSource(7))
    ok = abs(d1["Y_n_mean"] - math.log(4)) <= 1e-12
    parts = [f"delta_1 Y_n - log4 = {d1['Y_n_mean'] - math.log(4):.1e}"]
    for p in (0.6, 0.8):
        mu = R.fixed_point_measure(p).measure
        r = M.lyapunov_estimate(mu, 1000, 1000, RandomSource(7, int(p * 10)))
        dev = abs(r["L_plus"] + r["L_minus"] - r["two_E_log"])
        bound = M.annealed_bound(mu)
        ok &= dev < 3 * r["sum_stderr"]
        ok &= r["Y_n_mean"] <= bound + 3 * r["stderr"]
        parts.append(f"p={p}: |sum - 2Elog| = {dev / r['sum_stderr']:.2f} se, "
                     f"Y_n {r['Y_n_mean']:.5f} vs bound {bound:.5f}")
    verdict(7, "Lyapunov identities", ok, "; ".join(parts), time.perf_counter() - t0, 300)


def test_ac08_concentration(verdict):
    t0 = time.perf_counter()
    mu = R.fixed_point_measure(0.6).measure
    grid = [32, 64, 128, 256, 512, 1024]
    rows = M.concentration_stats(mu, grid, 500, RandomSource(8))
    fit = linregress(np.log(grid), np.log([r["Y_n_std"] for r in rows]))
    verdict(8, "concentration of Y_n", abs(fit.slope + 0.5) <= 0.15,
            f"slope of log std vs log n = {fit.slope:.4f}", time.perf_counter() - t0, 300)


def test_ac09_covariance_decay(verdict):
    t0 = time.perf_counter()
    worst = X.shape_covariances(10)
    c1 = worst[1] / 0.389
    under = all(w <= c1 * 0.389 ** n * (1 + 1e-12) for n, w in worst.items())
    rows = X.full_tree_covariances(8)
    fit = linregress([r["n"] for r in rows], np.log([r["abs_cov"] for r in rows]))
    ok = under and fit.slope <= -math.log(4) + 0.2
    verdict(9, "covariance decay", ok,
            f"shapes <= 10 vertices under C 0.389^n: {under} (C = {c1:.4f}); full-tree slope {fit.slope:.4f}",
            time.perf_counter() - t0, 120)


def test_ac10_avalanche_suite(verdict):
    t0 = time.perf_counter()
    reg = X.avalanche_regression(T.full_tree(4))
    ann = X.annealed_size_law(0.4, 8, 2000, 40, RandomSource(10))
    fit = X.size_decay_fit(ann["mean"], 2, 8)
    p_star, p_bin = A.threshold_solve()
    ok = (abs(reg["slope"] - 1) <= 0.15 and fit["slope"] < 0 and fit["r2"] > 0.95
          and abs(p_star - 0.54511) <= 1e-4 and abs(p_bin - 0.641713) <= 1e-6)
    verdict(10, "avalanche suite", ok,
            f"full(4) slope {reg['slope']:.4f}; annealed slope {fit['slope']:.4f} R^2 {fit['r2']:.4f}; "
            f"p* {p_star:.10f}; binomial {p_bin:.10f}", time.perf_counter() - t0, 300)


def test_ac11_animals_suite(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for p in P_GRID:
        rec = A.a_recursion(p, 30)
        for k in range(31):
            for other in (A.a_exact_sum(p, k), A.a_hypergeometric(p, k)):
                worst = max(worst, abs(other - rec[k]) / rec[k])
    gen = RandomSource(11).generator()
    zs = []
    for n in range(7):
        mean, se = A.brute_expected(0.5, n, 2000, gen)
        exact = float(A.expected_clusters(0.5, n))
        zs.append(abs(mean - exact) / se if se > 0 else (0.0 if mean == exact else math.inf))
    catalan = all(c == A.catalan(k) for k, c in enumerate(A.a_recursion(1, 65)))
    two_p = all(A.expected_clusters(Fraction(k, 10), 1) == Fraction(2 * k, 10) for k in range(11))
    ok = worst <= 1e-9 and max(zs) <= 3 and catalan and two_p
    verdict(11, "animals suite", ok,
            f"max rel diff {worst:.2e}; brute |z| max {max(zs):.2f}; Catalan n<=64 {catalan}; E A_1 = 2p {two_p}",
            time.perf_counter() - t0, 180)


def test_ac12_power_law_contrast(verdict):
    t0 = time.perf_counter()
    out = X.power_law_contrast(64, 0.4)
    bounds = [X.annealed_avalanche_bound(0.4, n) for n in range(1, 65)]
    steps = np.diff(np.log(bounds))
    exponential = bool(np.allclose(steps, steps[0]) and steps[0] < 0)
    ok = abs(out["exponent"] + 1.5) <= 0.3 and exponential
    verdict(12, "power law vs exponential", ok,
            f"Catalan 4^-n exponent {out['exponent']:.4f}; p=0.4 bound log-rate {steps[0]:.4f} per step",
            time.perf_counter() - t0, 60)
