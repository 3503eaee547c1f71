"""Characteristic ratio of trees and its distributional fixed point.

The ratio of a tree is (# weakly allowed) / (# strongly allowed) configurations;
it obeys ``x(T) = f(x(T1), x(T2))`` over the split at the root, with the empty
tree contributing 0.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import ConvergenceError
from .rng import as_generator
from .tree import TreeTopology, sample_gw_binary, split

RATIONAL_BITS = 4096
CONTRACTION = Fraction(8, 9)
# Lipschitz constant of f in each argument on [1/2, 1]^2: max (1+v)^2/(2+u+v)^2
F_LIPSCHITZ = 16 / 49
BRANCH_LIMIT = (math.sqrt(7) - 1) / 2


def f_combine(u, v):
    """``(1+u)(1+v)/(2+u+v)``, the ratio of a root whose subtrees have ratios u and v."""
    for a in (u, v):
        if not 0 <= a <= 1:
            raise ValueError(f"ratio {a} outside [0, 1]")
    return (1 + u) * (1 + v) / (2 + u + v)


def phi(x):
    """One step down a single branch: a leaf next to a subtree of ratio ``x``."""
    return f_combine(Fraction(1, 2) if isinstance(x, Fraction) else 0.5, x)


def _too_big(x):
    return isinstance(x, Fraction) and max(x.numerator.bit_length(), x.denominator.bit_length()) > RATIONAL_BITS


def x_recursive(tree: TreeTopology, exact: bool = True):
    """Ratio of a finite tree by bottom-up recursion.

    Exact rationals unless ``exact=False`` or a value outgrows ``RATIONAL_BITS``
    bits, after which the computation continues in floats.
    """
    if tree.is_empty:
        return Fraction(0) if exact else 0.0
    if not tree.rooted:
        a, b = split(tree)
        return f_combine(x_recursive(a, exact), x_recursive(b, exact))
    zero = Fraction(0) if exact else 0.0
    vals: dict[int, object] = {}
    for v in reversed(tree.preorder()):
        kids = [vals.pop(c) for c in tree.children[v]]
        kids += [zero] * (2 - len(kids))
        if any(isinstance(k, float) for k in kids):
            kids = [float(k) for k in kids]
        x = f_combine(*kids)
        vals[v] = float(x) if _too_big(x) else x
    return vals[tree.root]


def hanging_ratios(tree: TreeTopology, exact: bool = False) -> dict[tuple[int, int | None], object]:
    """Ratio of every hanging subtree: key ``(v, z)`` is the side of ``z`` once edge ``v-z`` is cut.

    ``(v, None)`` maps to 0 for each empty slot. Linear time by rerooting.
    """
    zero = Fraction(0) if exact else 0.0
    out: dict[tuple[int, int | None], object] = {}
    if tree.is_empty:
        return out
    top = tree.root
    parent = {top: None}
    order = [top]
    for v in order:
        for w in tree.adjacency[v]:
            if w != parent[v]:
                parent[w] = v
                order.append(w)

    def combine(vals):
        vals = list(vals) + [zero] * (2 - len(vals))
        return f_combine(*vals)

    for v in reversed(order):  # x seen from the parent looking down into v
        kids = [w for w in tree.adjacency[v] if w != parent[v]]
        if len(kids) > 2:
            continue  # only the top of a rootless tree can have three; never looked at downward
        out[(parent[v], v)] = combine([out[(v, w)] for w in kids])
    for v in order:  # x seen from v looking up towards its parent
        for w in tree.adjacency[v]:
            if w == parent[v]:
                continue
            others = [z for z in tree.adjacency[v] if z != w]
            out[(w, v)] = combine([out[(v, z)] for z in others])
    out.pop((None, top), None)
    for v in range(tree.n):
        out[(v, None)] = zero
    return out


def x_family_closed(family: str, x_t=None, n: int = 0) -> float:
    """Closed-form ratios of the deterministic families.

    ``branch_limit``: infinite single branch, ``(sqrt(7) - 1) / 2``.
    ``backbone``: every spine vertex carries a tree of ratio ``x_t``.
    ``perturbed``: a tree of ratio ``x_t`` attached at level ``n`` of the infinite branch.
    """
    if family == "branch_limit":
        return BRANCH_LIMIT
    if x_t is None or not 0.5 <= x_t <= 1:
        raise ValueError("x_t must lie in [1/2, 1]")
    if family == "backbone":
        return 0.5 * (-1 + math.sqrt(5 + 4 * x_t))
    if family == "perturbed":
        if n < 0:
            raise ValueError("n must be >= 0")
        x = f_combine(float(x_t), BRANCH_LIMIT)
        for _ in range(n):
            x = phi(x)
        return x
    raise ValueError(f"unknown family {family!r}")


# -- discrete measures -------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    support: np.ndarray
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.shape != w.shape or s.ndim != 1 or not len(s):
            raise ValueError("support and weights must be matching non-empty 1-d arrays")
        if (w < 0).any():
            raise ValueError("negative weight")
        if abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        order = np.argsort(s, kind="stable")
        s, w = s[order], w[order]
        keep = np.r_[True, s[1:] != s[:-1]]
        if not keep.all():
            idx = np.cumsum(keep) - 1
            w = np.bincount(idx, weights=w)
            s = s[keep]
        nz = w > 0
        object.__setattr__(self, "support", s[nz])
        object.__setattr__(self, "weights", w[nz])

    @classmethod
    def delta(cls, a: float) -> "DiscreteMeasure":
        return cls(np.array([float(a)]), np.array([1.0]))

    @classmethod
    def from_samples(cls, xs) -> "DiscreteMeasure":
        xs = np.asarray(xs, dtype=float)
        return cls(xs, np.full(len(xs), 1.0 / len(xs)))

    @classmethod
    def mixture(cls, parts) -> "DiscreteMeasure":
        """Measure from ``(weight, support, weights)`` pieces; weights are renormalized."""
        s = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in parts])
        w = np.concatenate([c * np.asarray(ww, dtype=float) for c, _, ww in parts])
        return cls(s, w / w.sum())

    def __len__(self):
        return len(self.support)

    def mean(self) -> float:
        return float(self.support @ self.weights)

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(fn(self.support) @ self.weights)

    def mass_near(self, a: float, eps: float) -> float:
        return float(self.weights[np.abs(self.support - a) <= eps].sum())

    def sample(self, size, rng=None) -> np.ndarray:
        gen = as_generator(rng)
        return self.support[np.minimum(np.searchsorted(np.cumsum(self.weights), gen.random(size)), len(self) - 1)]

    def compress(self, cap: int | None) -> tuple["DiscreteMeasure", float]:
        """Reduce to at most ``cap`` atoms by equal-mass quantile binning.

        Atoms at least as heavy as a bin are kept as they are; the light mass
        between consecutive heavy atoms is split into equal-mass bins, each placed
        at its conditional mean, so the mean is preserved. Returns the new measure
        and its exact W1 distance to the old one.
        """
        if cap is None or len(self) <= cap:
            return self, 0.0
        if cap < 8:
            raise ValueError("cap must be at least 8")
        s, w = self.support, self.weights
        # half the budget covers one partial bin per light run, the rest is shared by mass
        heavy = np.zeros(len(s), dtype=bool)
        while True:
            n_heavy = int(heavy.sum())
            spare = (cap - n_heavy) // 2
            m_light = float(w[~heavy].sum())
            more = ~heavy & (w * spare >= m_light)
            room = (cap - 2) // 2 - n_heavy  # keeps a positive budget for the light runs
            if room < 1 or not more.any():
                break
            idx = np.flatnonzero(more)
            heavy[idx[np.argsort(-w[idx], kind="stable")[:room]]] = True
        pts = [s[heavy]]
        wts = [w[heavy]]
        light = np.flatnonzero(~heavy)
        if len(light):
            runs = np.split(light, np.flatnonzero(np.diff(light) > 1) + 1)
            budget = cap - n_heavy - len(runs)
            for run in runs:
                k = 1 + int(budget * w[run].sum() / m_light)
                a, b = _equal_mass_bins(s[run], w[run], k)
                pts.append(a)
                wts.append(b)
        out = DiscreteMeasure(np.concatenate(pts), np.concatenate(wts))
        return out, wasserstein1(self, out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("support,weight\n")
        for a, b in zip(self.support, self.weights):
            buf.write(f"{a:.17g},{b:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DiscreteMeasure":
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
        return cls(np.array([float(a) for a, _ in rows]), np.array([float(b) for _, b in rows]))


def _equal_mass_bins(s: np.ndarray, w: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Split sorted atoms into ``k`` bins of equal mass; return bin means and masses."""
    if len(s) <= k:
        return s, w
    total = float(w.sum())
    cum = np.cumsum(w)
    cum[-1] = total
    first = np.concatenate([[0.0], np.cumsum(w * s)])
    edges = np.linspace(0.0, total, k + 1)
    i = np.minimum(np.searchsorted(cum, edges, side="left"), len(s) - 1)
    before = np.where(i > 0, cum[i - 1], 0.0)
    g = first[i] + (edges - before) * s[i]  # integral of the quantile function
    means = np.clip(np.diff(g) * k / total, s[0], s[-1])
    return means, np.full(k, total / k)


def wasserstein1(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact W1 on the line: integral of |F_mu - F_nu| by a sweep over the merged support."""
    pts = np.concatenate([mu.support, nu.support])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    dw = np.concatenate([mu.weights, -nu.weights])[order]
    diff = np.cumsum(dw)[:-1]
    return float(np.abs(diff) @ np.diff(pts))


def _push_pair(a: DiscreteMeasure, b: DiscreteMeasure):
    """Support and weights of the law of f(X, Y), X ~ a, Y ~ b independent."""
    x = a.support[:, None]
    y = b.support[None, :]
    vals = (1 + x) * (1 + y) / (2 + x + y)
    return vals.ravel(), (a.weights[:, None] * b.weights[None, :]).ravel()


def apply_F_tracked(mu: DiscreteMeasure, p: float, support_cap: int | None = None,
                    tensor_cap: int | None = 1024) -> tuple[DiscreteMeasure, float]:
    """One step of the two-generation operator, and a W1 bound on the compression error.

    The mixture is ``(1-p) delta_{1/2} + p(1-p)^2 delta_{3/4} + 2p^2(1-p) law f(X, 1/2)
    + p^3 law f(X, Y)`` with X, Y independent draws from ``mu``. For the product term
    ``mu`` is first compressed to ``tensor_cap`` atoms; the output is compressed to
    ``support_cap`` atoms. Both caps ``None`` means exact.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    if (mu.support < 0).any() or (mu.support > 1).any():
        raise ValueError("support must lie in [0, 1]")
    half = DiscreteMeasure.delta(0.5)
    err = 0.0
    parts = [(1 - p, [0.5], [1.0]), (p * (1 - p) ** 2, [0.75], [1.0])]
    if p > 0 and p < 1:
        parts.append((2 * p * p * (1 - p), *_push_pair(mu, half)))
    if p > 0:
        mt, e_t = mu.compress(tensor_cap)
        err += p ** 3 * 2 * F_LIPSCHITZ * e_t
        parts.append((p ** 3, *_push_pair(mt, mt)))
    parts = [q for q in parts if q[0] > 0]
    out = DiscreteMeasure.mixture(parts)
    out, e_f = out.compress(support_cap)
    return out, err + e_f


def apply_F(mu: DiscreteMeasure, p: float, support_cap: int | None = None,
            tensor_cap: int | None = 1024) -> DiscreteMeasure:
    return apply_F_tracked(mu, p, support_cap, tensor_cap)[0]


def apply_branching(mu: DiscreteMeasure, p: float, support_cap: int | None = None,
                    tensor_cap: int | None = 1024) -> DiscreteMeasure:
    """One generation of the branching recursion: ``1/2`` w.p. ``1-p``, else ``f(X, Y)``.

    Iterated ``n`` times from ``delta_{1/2}`` this is the exact law of the ratio of
    a GW(p) tree cut after ``n`` generations (up to compression).
    """
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    parts = [(1 - p, [0.5], [1.0])]
    if p > 0:
        mt, _ = mu.compress(tensor_cap)
        parts.append((p, *_push_pair(mt, mt)))
    out = DiscreteMeasure.mixture([q for q in parts if q[0] > 0])
    return out.compress(support_cap)[0]


def contraction_factor(p: float) -> float:
    """Lipschitz factor of the two-generation operator in W1: ``p^2 (1/2 + 7p/18)``."""
    return p * p * (0.5 + 7 * p / 18)


@dataclass
class FixedPointResult:
    measure: DiscreteMeasure
    iterations: int
    final_w1: float
    compression_budget: float
    error_bound: float
    converged: bool = True

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_w1": self.final_w1,
            "compression_budget": self.compression_budget,
            "error_bound": self.error_bound,
            "converged": self.converged,
        }


def fixed_point_measure(p: float, support_cap: int | None = 2048, tol: float = 1e-8,
                        max_iter: int = 1000, tensor_cap: int | None = 1024) -> FixedPointResult:
    """Iterate the two-generation operator from ``delta_{1/2}`` until successive W1 < ``tol``.

    ``error_bound`` bounds the W1 distance to the true fixed point:
    ``(final_w1 + max step compression error) / (1 - c)`` with ``c`` the contraction
    factor. Raises ``ConvergenceError`` carrying the diagnostics if ``max_iter``
    steps do not suffice.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    c = contraction_factor(p)
    mu = DiscreteMeasure.delta(0.5)
    budget = 0.0
    worst = 0.0
    step = math.inf
    for k in range(1, max_iter + 1):
        nxt, err = apply_F_tracked(mu, p, support_cap, tensor_cap)
        budget += err
        worst = max(worst, err)
        step = wasserstein1(nxt, mu)
        mu = nxt
        if step < tol:
            return FixedPointResult(mu, k, step, budget, (step + worst) / (1 - c))
    diag = {"iterations": max_iter, "final_w1": step, "compression_budget": budget}
    raise ConvergenceError(f"no convergence to tol={tol} within {max_iter} iterations", diag)


def sample_ratio_direct(p: float, max_gen: int, samples: int, rng=None) -> DiscreteMeasure:
    """Empirical law of the ratio over sampled GW(p) trees of ``max_gen`` generations."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    gen = as_generator(rng)
    xs = [x_recursive(sample_gw_binary(p, max_gen, gen), exact=False) for _ in range(samples)]
    return DiscreteMeasure.from_samples(xs)


def branching_law(p: float, generations: int, support_cap: int | None = 4096,
                  tensor_cap: int | None = 1024) -> DiscreteMeasure:
    mu = DiscreteMeasure.delta(0.5)
    for _ in range(generations):
        mu = apply_branching(mu, p, support_cap, tensor_cap)
    return mu


def branching_fixed_point(p: float, support_cap: int | None = 1024, tol: float = 1e-9,
                          max_gen: int = 400) -> tuple[DiscreteMeasure, int]:
    """Iterate the branching recursion from ``delta_{1/2}`` until successive laws are ``tol``-close in W1."""
    mu = DiscreteMeasure.delta(0.5)
    for gen in range(1, max_gen + 1):
        nxt = apply_branching(mu, p, support_cap)
        if wasserstein1(nxt, mu) <= tol:
            return nxt, gen
        mu = nxt
    raise ConvergenceError(f"branching recursion not within {tol} after {max_gen} generations")
