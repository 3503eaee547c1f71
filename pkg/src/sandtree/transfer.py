"""Products of 2x2 transfer matrices ``M(x) = [[1+x, 1+x], [1, 2+x]]``.

Products are kept in log-scaled form (max entry 1 plus an accumulated log
factor) with the log-determinant tracked separately, so the small eigenvalue
survives long products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import NumericalDomainError
from .ratio import DiscreteMeasure, hanging_ratios
from .rng import as_generator
from .tree import TreeTopology, cluster_slots, path_subtrees

GAMMA = 4 / 25 * 2 ** (32 / 25)
TRACE_RATE = 16 / 25
DISC_TOL = 1e-9
E1 = ((1, 1), (0, 1))
E2 = ((0, 0), (1, 1))


@dataclass(frozen=True)
class ScaledMatrix2:
    entries: np.ndarray
    log_scale: float = 0.0
    log_det: float | None = None

    def __post_init__(self):
        m = np.array(self.entries, dtype=float).reshape(2, 2)
        if (m < 0).any():
            raise ValueError("entries must be nonnegative")
        top = m.max()
        if top <= 0:
            raise ValueError("zero matrix")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m / top)
        object.__setattr__(self, "log_scale", self.log_scale + math.log(top))
        if self.log_det is None:
            d = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if d <= 0:
                raise ValueError("determinant must be positive")
            object.__setattr__(self, "log_det", math.log(d) + 2 * (self.log_scale - math.log(top)))

    def __matmul__(self, other: "ScaledMatrix2") -> "ScaledMatrix2":
        return ScaledMatrix2(self.entries @ other.entries, self.log_scale + other.log_scale,
                             self.log_det + other.log_det)

    def matrix(self) -> np.ndarray:
        """Unscaled matrix; overflows for long products."""
        return self.entries * math.exp(self.log_scale)

    @property
    def log_trace(self) -> float:
        return self.log_scale + math.log(self.entries[0, 0] + self.entries[1, 1])

    @property
    def trace(self) -> float:
        return math.exp(self.log_trace)

    @property
    def det(self) -> float:
        return math.exp(self.log_det)


@dataclass(frozen=True)
class EigenPair:
    log_lambda_plus: float
    log_lambda_minus: float
    clamped: bool = False

    @property
    def lambda_plus(self) -> float:
        return math.exp(self.log_lambda_plus)

    @property
    def lambda_minus(self) -> float:
        return math.exp(self.log_lambda_minus)

    @property
    def log_ratio(self) -> float:
        """``log(lambda_- / lambda_+)``."""
        return self.log_lambda_minus - self.log_lambda_plus


def _check_x(x, allow_zero=True):
    if not (0.5 <= x <= 1 or (allow_zero and x == 0)):
        raise ValueError(f"ratio {x} outside {{0}} u [1/2, 1]")


def m_of(x) -> ScaledMatrix2:
    _check_x(x)
    x = float(x)
    return ScaledMatrix2(np.array([[1 + x, 1 + x], [1, 2 + x]]), 0.0, 2 * math.log1p(x))


def m_exact(x) -> tuple[tuple[Fraction, Fraction], tuple[Fraction, Fraction]]:
    x = Fraction(x)
    _check_x(x)
    return ((1 + x, 1 + x), (Fraction(1), 2 + x))


def _mul2(a, b):
    return ((a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]),
            (a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]))


def product_exact(xs):
    """Exact product of ``M(x_i)`` over rationals (or integers)."""
    if not len(xs):
        raise ValueError("empty product")
    out = m_exact(xs[0])
    for x in xs[1:]:
        out = _mul2(out, m_exact(x))
    return out


def product_log_scaled(xs: Sequence) -> ScaledMatrix2:
    """Left-to-right product of ``M(x_i)``, renormalized after every multiply."""
    if not len(xs):
        raise ValueError("empty product")
    for x in xs:
        _check_x(x)
    xs = np.asarray(xs, dtype=float)
    m = np.eye(2)
    log_scale = 0.0
    for x in xs:
        m = m @ np.array([[1 + x, 1 + x], [1, 2 + x]])
        top = m.max()
        m /= top
        log_scale += math.log(top)
    return ScaledMatrix2(m, log_scale, float(2 * np.log1p(xs).sum()))


def _eigen_logs(log_trace, log_det):
    """Log eigenvalues from log trace and log det; arrays allowed. Returns (plus, minus, clamped)."""
    log_h = np.asarray(log_det - 2 * log_trace, dtype=float)
    h = np.exp(np.minimum(log_h, 0.0))
    disc = 1 - 4 * h
    if (disc < -DISC_TOL).any():
        raise NumericalDomainError("complex eigenvalues: trace^2 < 4 det")
    clamped = disc < 0
    root = np.sqrt(np.maximum(disc, 0.0))
    plus = log_trace + np.log((1 + root) / 2)
    return plus, log_det - plus, clamped


def eigen_2x2(m: ScaledMatrix2) -> EigenPair:
    """Eigenvalues ``(a +- sqrt(a^2 - 4b)) / 2`` in log form, the small one as ``det / lambda_+``."""
    plus, minus, clamped = _eigen_logs(m.log_trace, m.log_det)
    return EigenPair(float(plus), float(minus), bool(clamped))


def _factors(x: np.ndarray, inverse: bool) -> np.ndarray:
    f = np.empty(x.shape + (2, 2))
    if inverse:
        # D M(x)^{-1} D with D = diag(1, -1): nonnegative and similar to M(x)^{-1}
        d = (1 + x) ** 2
        f[..., 0, 0], f[..., 0, 1], f[..., 1, 0], f[..., 1, 1] = (2 + x) / d, (1 + x) / d, 1 / d, (1 + x) / d
    else:
        f[..., 0, 0], f[..., 0, 1], f[..., 1, 0], f[..., 1, 1] = 1 + x, 1 + x, 1.0, 2 + x
    return f


def _batch_log_plus(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Log top eigenvalue of each row's product ``M(x_1)...M(x_n)``, or of its inverse.

    For the inverse the determinant is read off the normalized product itself, so
    the result does not lean on ``det = prod (1+x_i)^2``.
    """
    samples, n = x.shape
    f = _factors(x, inverse)
    m = np.broadcast_to(np.eye(2), (samples, 2, 2)).copy()
    log_scale = np.zeros(samples)
    for i in (range(n - 1, -1, -1) if inverse else range(n)):
        m = m @ f[:, i]
        top = m.max(axis=(1, 2))
        m /= top[:, None, None]
        log_scale += np.log(top)
    tr = m[:, 0, 0] + m[:, 1, 1]
    log_tr = log_scale + np.log(tr)
    if inverse:
        d = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
        h = np.clip(d, 0.0, None) / tr ** 2
        return log_tr + np.log((1 + np.sqrt(np.maximum(1 - 4 * h, 0.0))) / 2)
    plus, _, _ = _eigen_logs(log_tr, 2 * np.log1p(x).sum(axis=1))
    return plus


def log_lambda_minus_direct(xs) -> float:
    """``log lambda_-`` as ``-log lambda_+`` of the inverse product."""
    x = np.asarray([float(v) for v in xs])[None, :]
    return -float(_batch_log_plus(x, inverse=True)[0])


def spectral_bounds_check(xs) -> dict:
    """Uniform bounds for one product with all ``x_i`` in [1/2, 1].

    The determinant identity and ``det/Tr^2 <= (4/9)^n`` are checked exactly:
    every ``x_i`` (Fraction, int or float) is a rational, and the product of the
    integer matrices ``q M(x_i)`` over a common denominator ``q`` is formed in
    big integers. The other checks use log arithmetic.
    """
    xs = list(xs)
    for x in xs:
        _check_x(x, allow_zero=False)
    n = len(xs)
    fr = [Fraction(x) for x in xs]
    q = math.lcm(*(f.denominator for f in fr))
    ks = [f.numerator * (q // f.denominator) for f in fr]
    a, b, c, d = 1, 0, 0, 1
    for k in ks:
        u, v = q + k, 2 * q + k  # q M(x) = [[u, u], [q, v]]
        a, b, c, d = a * u + b * q, a * u + b * v, c * u + d * q, c * u + d * v
    tr = a + d
    det = a * d - b * c
    m = product_log_scaled([float(x) for x in xs])
    eig = eigen_2x2(m)
    log_tr = math.log(tr) - n * math.log(q)
    log_det = math.log(det) - 2 * n * math.log(q)
    log_ratio = eig.log_ratio
    return {
        "n": n,
        "log_ratio": log_ratio,
        "ratio_root": math.exp(log_ratio / n),
        "bound_49": det * 9 ** n <= 4 ** n * tr * tr,
        "det_identity_exact": det == math.prod((q + k) ** 2 for k in ks),
        "det_identity_err": abs(math.expm1(m.log_det - log_det)),
        "trace_bound_ok": log_tr >= trace_lower_bound(xs),
        "bound_gamma_root": math.exp(log_ratio / n) / GAMMA,
        "ratio_vs_detTr2_err": abs(math.expm1(log_ratio - (log_det - 2 * log_tr))),
        "eigen_real": not eig.clamped,
    }


def _log_fraction(q) -> float:
    q = Fraction(q)
    return math.log(q.numerator) - math.log(q.denominator)


def trace_lower_bound(xs) -> float:
    """``log(Z 2^(-16n/25))`` with ``Z = prod(1 + 2 y_i)``, ``y_i = 1 + x_i``."""
    xs = np.asarray([float(x) for x in xs])
    return float(np.log(3 + 2 * xs).sum() - TRACE_RATE * len(xs) * math.log(2))


def n_blocks(alpha: Sequence[int]) -> int:
    """Number of maximal runs of 1s followed by a 0, with ``alpha_{n+1} = 1``."""
    a = list(alpha) + [1]
    return sum(a[i] * (1 - a[i + 1]) for i in range(len(alpha)))


def e_pattern_trace_direct(alpha: Sequence[int]) -> int:
    out = ((1, 0), (0, 1))
    for a in alpha:
        out = _mul2(out, E1 if a else E2)
    return out[0][0] + out[1][1]


def e_pattern_trace_closed(alpha: Sequence[int]) -> int:
    """Trace from run lengths: word ``1^k1 0+ 1^k2 0+ ... 1^kr 0+ 1^k(r+1)``."""
    runs = []
    k = 0
    zeros = 0
    prev = None
    for a in alpha:
        if a:
            k += 1
        elif prev != 0:
            runs.append(k)
            k = 0
            zeros += 1
        prev = a
    if zeros == 0:
        return 2  # E1^n has trace 2
    tail = k
    return math.prod(1 + r for r in runs[1:]) * (1 + runs[0] + tail)


def e_pattern_trace(alpha: Sequence[int]) -> int:
    """``Tr(E(alpha))`` by direct product and by the run-length closed form; both must agree."""
    alpha = [int(a) for a in alpha]
    if any(a not in (0, 1) for a in alpha):
        raise ValueError("alpha must be a binary word")
    d = e_pattern_trace_direct(alpha)
    c = e_pattern_trace_closed(alpha)
    if d != c:
        raise AssertionError(f"trace mismatch for {alpha}: {d} != {c}")
    if d < 2 ** n_blocks(alpha):
        raise AssertionError(f"trace {d} below 2^N for {alpha}")
    return d


def trace_expansion(xs) -> int | Fraction:
    """``sum over alpha of prod y_i^alpha_i Tr(E(alpha))``, exact in rationals."""
    ys = [1 + Fraction(x) for x in xs]
    n = len(ys)
    total = Fraction(0)
    for bits in range(1 << n):
        alpha = [(bits >> i) & 1 for i in range(n)]
        w = math.prod((y for y, a in zip(ys, alpha) if a), start=Fraction(1))
        total += w * e_pattern_trace_closed(alpha)
    return total


def lambda_pm_const(gamma: float) -> tuple[float, float]:
    """Eigenvalues of ``[[g, g], [1, 1+g]]``: ``(2g + 1 +- sqrt(4g + 1)) / 2``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    r = math.sqrt(4 * gamma + 1)
    return (2 * gamma + 1 + r) / 2, (2 * gamma + 1 - r) / 2


def annealed_gamma(mu: DiscreteMeasure) -> float:
    if mu.support[0] < 0.5 or mu.support[-1] > 1:
        raise ValueError("support must lie in [1/2, 1]")
    return 1 / mu.expect(lambda x: 1 / (1 + x))


def annealed_bound(mu: DiscreteMeasure) -> float:
    """``log(Lambda_+(g) / Lambda_-(g))`` with ``1/g = E 1/(1+x)``."""
    g = annealed_gamma(mu)
    if not 1.5 - 1e-12 <= g <= 2 + 1e-12:
        raise AssertionError(f"gamma {g} outside [3/2, 2]")
    lp, lm = lambda_pm_const(g)
    return math.log(lp / lm)


def _draw(mu, n, samples, rng):
    gen = as_generator(rng)
    return mu.sample((samples, n), gen)


def lyapunov_estimate(mu: DiscreteMeasure, n: int, samples: int, rng=None) -> dict:
    """Monte-Carlo exponents of ``M(x_1)...M(x_n)`` with ``x_i`` i.i.d. from ``mu``.

    ``L_minus`` comes from the inverse product, independently of the det identity;
    ``L_minus_det`` is the det-identity value. ``sum_stderr`` is the standard error
    of the per-sample ``L_+ + L_-``.
    """
    if n < 1 or samples < 1:
        raise ValueError("n and samples must be >= 1")
    if mu.support[0] < 0.5 or mu.support[-1] > 1:
        raise ValueError("support must lie in [1/2, 1]")
    x = _draw(mu, n, samples, rng)
    plus = _batch_log_plus(x) / n
    minus = -_batch_log_plus(x, inverse=True) / n
    logdet = 2 * np.log1p(x).sum(axis=1) / n
    y = plus - minus
    root = math.sqrt(samples)
    std = float(y.std(ddof=1)) if samples > 1 else 0.0
    sums = plus + minus
    return {
        "n": n,
        "samples": samples,
        "L_plus": float(plus.mean()),
        "L_minus": float(minus.mean()),
        "L_minus_det": float((logdet - plus).mean()),
        "Y_n_mean": float(y.mean()),
        "Y_n_std": std,
        "stderr": std / root,
        "sum_stderr": float(sums.std(ddof=1)) / root if samples > 1 else 0.0,
        "two_E_log": 2 * mu.expect(np.log1p),
        "det_check_err": float(np.abs(sums - logdet).max()),
    }


def concentration_stats(mu: DiscreteMeasure, n_grid: Sequence[int], samples: int, rng=None) -> list[dict]:
    if list(n_grid) != sorted(n_grid):
        raise ValueError("n_grid must be ascending")
    gen = as_generator(rng)
    return [lyapunov_estimate(mu, n, samples, gen) for n in n_grid]


def cluster_ratios(tree: TreeTopology, cluster, origin: int | None = None, ratios=None) -> list:
    """Ratios of the subtrees hanging off a cluster, in contour order."""
    ratios = hanging_ratios(tree) if ratios is None else ratios
    return [ratios[(w, z)] for w, z in cluster_slots(tree, cluster, origin)]


def cluster_matrix(tree: TreeTopology, cluster, origin: int | None = None, ratios=None) -> ScaledMatrix2:
    return product_log_scaled(cluster_ratios(tree, cluster, origin, ratios))


def path_matrix(tree: TreeTopology, u: int, v: int) -> ScaledMatrix2:
    from .ratio import x_recursive
    return product_log_scaled([float(x_recursive(t, exact=False)) for t in path_subtrees(tree, u, v)])
