"""Expected numbers of connected clusters (animals) at the root of a random binary tree.

``a_n`` is the expected number of ``n``-vertex clusters containing the root of a
GW tree where each vertex has two children with probability ``p``; the
expected number of ``n``-edge clusters is ``a_{n+1}``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

from .errors import NumericalDomainError
from .rng import as_generator
from .tree import count_clusters_by_size, sample_binomial, sample_gw_binary

TRACE_RATE = Fraction(16, 25)
BRUTE_MAX_EDGES = 8


def _num(p):
    """Keep rationals exact; everything else becomes a float."""
    if isinstance(p, (Fraction, int)):
        return Fraction(p)
    return float(p)


def _check_p(p):
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")


def a_recursion(p, nmax: int) -> list:
    """``a_0 .. a_nmax`` from ``a_n = 1[n=1] + p 1[n>=2] sum_i a_i a_(n-1-i)``, ``a_0 = 1``."""
    _check_p(p)
    if not 0 <= nmax <= 10_000:
        raise ValueError("nmax must lie in [0, 10^4]")
    p = _num(p)
    one = p ** 0
    a = [one, one][: nmax + 1]
    for n in range(2, nmax + 1):
        a.append(p * sum(a[i] * a[n - 1 - i] for i in range(n)))
    return a


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def a_exact_sum(p, k: int):
    """Closed sum over ``j`` of ``Cat(k-j) C(k-j+1, j) p^(k-j) (1-p)^j``.

    Same terms as ``p^k sum_j b_(j,k)`` with ``b`` written against ``((1-p)/p)^j``,
    but with the powers of ``p`` distributed so that ``p = 0`` needs no limit.
    """
    _check_p(p)
    if k < 0:
        raise ValueError("k must be >= 0")
    p = _num(p)
    q = 1 - p
    total = p * 0
    for j in range((k + 1) // 2 + 1):
        m = k - j
        coeff = math.comb(2 * m, m) * math.comb(m + 1, j) // (m + 1)
        total += coeff * p ** m * q ** j
    return total


def pochhammer(a, n: int):
    out = a ** 0
    for i in range(n):
        out *= a + i
    return out


def hyp2f1_terminating(a, b, c, z):
    """Terminating Gauss series; one of ``a``, ``b`` must be a nonpositive integer.

    Exact when the arguments are Fractions.
    """
    stop = None
    for e in (a, b):
        if e <= 0 and e == int(e):
            stop = -int(e) if stop is None else min(stop, -int(e))
    if stop is None:
        raise NumericalDomainError("series does not terminate: neither a nor b is a nonpositive integer")
    term = z ** 0
    total = term
    for j in range(stop):
        if c + j == 0:
            raise NumericalDomainError(f"c = {c} hits zero at term {j + 1} before termination")
        term = term * (a + j) * (b + j) / ((c + j) * (j + 1)) * z
        total += term
    return total


def a_hypergeometric(p, k: int):
    """``a_k = p^k/(k+1) C(2k, k) 2F1(-(k+1)/2, -k/2; 1/2 - k; -(1-p)/p)``.

    At ``p = 0`` the argument is infinite; the series is then evaluated with each
    term's ``z^j`` folded into ``p^k``, which is the same finite sum.
    """
    _check_p(p)
    p = _num(p)
    exact = isinstance(p, Fraction)
    half = Fraction(1, 2) if exact else 0.5
    a, b, c = -(k + 1) * half, -k * half, half - k
    front = Fraction(math.comb(2 * k, k), k + 1) if exact else math.comb(2 * k, k) / (k + 1)
    if p != 0:
        return p ** k * front * hyp2f1_terminating(a, b, c, -(1 - p) / p)
    # p = 0: only the top term j = k survives p^(k-j), which needs k <= (k+1)/2, i.e. k <= 1
    return p ** 0 if k <= 1 else p * 0


def expected_clusters(p, n: int, method: str = "recursion"):
    """Expected number of ``n``-edge clusters at the root, ``a_(n+1)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if method == "recursion":
        return a_recursion(p, n + 1)[n + 1]
    if method == "exact_sum":
        return a_exact_sum(p, n + 1)
    if method == "hypergeometric":
        return a_hypergeometric(p, n + 1)
    raise ValueError(f"unknown method {method!r}")


def radius(p: float) -> float:
    """Upper end of the interval where the closed-form generating function is used."""
    _check_p(p)
    if p == 0:
        return math.inf
    if p == 1:
        return 0.25
    return (math.sqrt(p) - p) / (2 * p * (1 - p))


def gen_fn_closed(p: float, x: float) -> float:
    """``A(x) = (1 - sqrt(1 - 4px(1 + x(1-p)))) / (2px)``."""
    _check_p(p)
    if x <= 0 or x > radius(p) * (1 + 1e-12):
        raise NumericalDomainError(f"x = {x} outside (0, {radius(p)}]")
    if p == 0:
        return 1 + x
    rad = 1 - 4 * p * x * (1 + x * (1 - p))
    if rad < -1e-12:
        raise NumericalDomainError("negative radicand")
    return (1 - math.sqrt(max(rad, 0.0))) / (2 * p * x)


def gen_fn_residual(p: float, x: float) -> float:
    """Relative residual of ``A = 1 + x + px(A^2 - 1)``."""
    a = gen_fn_closed(p, x)
    return abs(a - (1 + x + p * x * (a * a - 1))) / abs(a)


def growth_factor(p: float) -> float:
    """``4 (p + sqrt p) / 2``, the exponential rate of the large-n bound."""
    return 2 * (p + math.sqrt(p))


def bounds(p: float, n: int, c_largen: float = 1.0, c_binomial: float = 1.0) -> dict:
    """``C (n+1) 4^n ((p+sqrt p)/2)^n`` and ``C 4^n p^n`` (binomial tree)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_p(p)
    return {
        "largen_bound": c_largen * (n + 1) * 4.0 ** n * ((p + math.sqrt(p)) / 2) ** n,
        "binomial_bound": c_binomial * 4.0 ** n * p ** n,
    }


def binomial_expected(p, n: int):
    """Expected ``n``-edge clusters at the root of the binomial tree: ``Cat(n+1) p^n``.

    Every ``n``-edge animal of the full tree survives with probability ``p^n``.
    """
    return catalan(n + 1) * _num(p) ** n


def calibrate_constants(p: float, nmax: int = 30) -> dict:
    """Smallest constants making both bounds hold for ``1 <= n <= nmax``."""
    a = a_recursion(float(p), nmax + 1)
    c1 = 0.0
    c2 = 0.0
    for n in range(1, nmax + 1):
        b = bounds(p, n)
        if b["largen_bound"] > 0:
            c1 = max(c1, a[n + 1] / b["largen_bound"])
        if b["binomial_bound"] > 0:
            c2 = max(c2, float(binomial_expected(p, n)) / b["binomial_bound"])
    return {"c_largen": c1, "c_binomial": c2}


def brute_expected(p: float, n: int, samples: int, rng=None, binomial: bool = False) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the number of ``n``-edge root clusters.

    Trees are cut at depth ``n + 1``; deeper vertices cannot belong to such a cluster.
    """
    if not 0 <= n <= BRUTE_MAX_EDGES:
        from .errors import GuardError
        raise GuardError(f"n = {n} exceeds the brute-force guard {BRUTE_MAX_EDGES}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    gen = as_generator(rng)
    sampler = sample_binomial if binomial else sample_gw_binary
    counts = np.empty(samples)
    for s in range(samples):
        t = sampler(p, n, gen)
        by_size = count_clusters_by_size(t, t.root, n + 1)
        counts[s] = by_size[n + 1] if len(by_size) > n + 1 else 0
    se = float(counts.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return float(counts.mean()), se


def threshold_solve(tol: float = 1e-12) -> tuple[float, float]:
    """``p*`` with ``(p + sqrt p)/2 = 2^(-16/25)`` by bisection, and the binomial threshold ``2^(-16/25)``."""
    target = 2 ** (-16 / 25)
    p_star = bisect(lambda p: (p + math.sqrt(p)) / 2 - target, 0.0, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps)
    return p_star, target


def animal_table(p, nmax: int) -> list[dict]:
    """Rows ``n, a_recursion, a_exact_sum, hyper`` for ``n``-edge clusters, ``0 <= n <= nmax``."""
    rec = a_recursion(p, nmax + 1)
    return [{
        "n": n,
        "a_recursion": rec[n + 1],
        "a_exact_sum": a_exact_sum(p, n + 1),
        "hyper": a_hypergeometric(p, n + 1),
    } for n in range(nmax + 1)]


def fit_power_law(ns: Sequence[int], values: Sequence[float]) -> float:
    """Slope of ``log value`` against ``log n``."""
    from scipy.stats import linregress
    return float(linregress(np.log(ns), np.log(values)).slope)
