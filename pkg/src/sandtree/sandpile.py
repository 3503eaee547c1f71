"""Abelian sandpile on finite trees.

Toppling removes three grains from a vertex and gives one to each neighbour;
vertices of degree below three therefore dissipate, which is what makes every
configuration on a finite tree stabilize.

Two independent routes to exact probabilities live here:

* enumeration of all ``3**n`` stable configurations, filtered by the burning
  test (the brute-force oracle, guarded by ``ENUM_GUARD`` vertices);
* a tree dynamic program over weakly/strongly allowed counts with per-vertex
  height restrictions, exact in big integers and linear in the tree size.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, product
from typing import Iterator, Sequence

import numpy as np

from .errors import GuardError
from .rng import as_generator
from .tree import TreeTopology, enumerate_clusters

ENUM_GUARD = 12
HEIGHTS = (1, 2, 3)


@dataclass(frozen=True)
class HeightConfig:
    tree: TreeTopology = field(repr=False)
    heights: tuple[int, ...]

    def __post_init__(self):
        if len(self.heights) != self.tree.n:
            raise ValueError("one height per vertex required")
        if any(h < 1 for h in self.heights):
            raise ValueError("heights must be >= 1")

    @property
    def is_stable(self) -> bool:
        return all(h <= 3 for h in self.heights)

    def to_json(self) -> list[int]:
        return list(self.heights)


@dataclass(frozen=True)
class StabilizationOutcome:
    final: HeightConfig
    topple_counts: tuple[int, ...]

    @property
    def avalanche(self) -> frozenset[int]:
        return frozenset(v for v, k in enumerate(self.topple_counts) if k)


def toppling_matrix(tree: TreeTopology) -> np.ndarray:
    delta = 3 * np.eye(tree.n, dtype=np.int64)
    for u, v in tree.edges():
        delta[u, v] = delta[v, u] = -1
    return delta


def integer_det(matrix) -> int:
    """Fraction-free (Bareiss) determinant of an integer matrix."""
    a = [[int(x) for x in row] for row in matrix]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k]), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


def stabilize(eta: HeightConfig) -> StabilizationOutcome:
    """Topple unstable vertices in FIFO order until every height is at most 3."""
    adj = eta.tree.adjacency
    h = list(eta.heights)
    counts = [0] * len(h)
    queue = deque(v for v, x in enumerate(h) if x > 3)
    queued = set(queue)
    while queue:
        v = queue.popleft()
        queued.discard(v)
        if h[v] <= 3:
            continue
        h[v] -= 3
        counts[v] += 1
        for w in adj[v]:
            h[w] += 1
            if h[w] > 3 and w not in queued:
                queue.append(w)
                queued.add(w)
        if h[v] > 3 and v not in queued:
            queue.append(v)
            queued.add(v)
    return StabilizationOutcome(HeightConfig(eta.tree, tuple(h)), tuple(counts))


def add(eta: HeightConfig, u: int) -> StabilizationOutcome:
    """Addition operator: drop one grain at ``u`` and stabilize."""
    if not eta.is_stable:
        raise ValueError("addition operator acts on stable configurations")
    h = list(eta.heights)
    h[u] += 1
    return stabilize(HeightConfig(eta.tree, tuple(h)))


def is_allowed(eta: HeightConfig) -> bool:
    """Burning test: repeatedly burn vertices whose height exceeds their unburnt degree."""
    adj = eta.tree.adjacency
    h = eta.heights
    unburnt_deg = [len(a) for a in adj]
    burnt = [False] * len(h)
    work = [v for v in range(len(h)) if h[v] > unburnt_deg[v]]
    n_burnt = 0
    while work:
        v = work.pop()
        if burnt[v]:
            continue
        burnt[v] = True
        n_burnt += 1
        for w in adj[v]:
            unburnt_deg[w] -= 1
            if not burnt[w] and h[w] > unburnt_deg[w]:
                work.append(w)
    return n_burnt == len(h)


def has_fsc_bruteforce(eta: HeightConfig) -> bool:
    """Search every non-empty vertex subset for a forbidden subconfiguration."""
    adj = eta.tree.adjacency
    n = eta.tree.n
    for r in range(1, n + 1):
        for subset in combinations(range(n), r):
            s = set(subset)
            if all(eta.heights[u] <= sum(w in s for w in adj[u]) for u in subset):
                return True
    return False


def all_stable(n: int) -> np.ndarray:
    """All ``3**n`` stable configurations as rows, lexicographic order."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    return np.array(list(product(HEIGHTS, repeat=n)), dtype=np.int8)


def allowed_mask(tree: TreeTopology, heights: np.ndarray) -> np.ndarray:
    """Vectorized burning test over the rows of ``heights``."""
    n = tree.n
    if n == 0:
        return np.ones(len(heights), dtype=bool)
    adj = np.zeros((n, n), dtype=np.int16)
    for u, v in tree.edges():
        adj[u, v] = adj[v, u] = 1
    h = heights.astype(np.int16)
    burnt = np.zeros(h.shape, dtype=bool)
    for _ in range(n):
        unburnt_deg = (~burnt).astype(np.int16) @ adj
        new = (~burnt) & (h > unburnt_deg)
        if not new.any():
            break
        burnt |= new
    return burnt.all(axis=1)


def _guard(tree, guard):
    if tree.n > guard:
        raise GuardError(f"exhaustive enumeration limited to {guard} vertices (tree has {tree.n})")


@dataclass
class RecurrentSet:
    tree: TreeTopology = field(repr=False)
    configs: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.configs)

    def __iter__(self) -> Iterator[HeightConfig]:
        for row in self.configs:
            yield HeightConfig(self.tree, tuple(int(x) for x in row))


def enumerate_recurrent(tree: TreeTopology, guard: int = ENUM_GUARD) -> RecurrentSet:
    _guard(tree, guard)
    configs = all_stable(tree.n)
    return RecurrentSet(tree, configs[allowed_mask(tree, configs)])


def count_weak_strong(tree: TreeTopology, guard: int = ENUM_GUARD) -> tuple[int, int]:
    """(weakly, strongly) allowed counts by enumeration.

    Each allowed configuration is re-tested after attaching an extra vertex of
    height 1 to the root; it is strongly allowed when that extension is still
    allowed.
    """
    if not tree.rooted:
        raise ValueError("weak/strong classification needs a rooted tree")
    if tree.is_empty:
        return 0, 1
    rec = enumerate_recurrent(tree, guard)
    extended = TreeTopology(tree.children + ((tree.root,),), tree.n)
    rows = np.hstack([rec.configs, np.ones((rec.count, 1), dtype=np.int8)])
    strong = int(allowed_mask(extended, rows).sum())
    return rec.count - strong, strong


# -- exact dynamic program -------------------------------------------------

def _rooted_order(tree, top):
    """Vertices in BFS order from ``top`` with their BFS parent."""
    parent = {top: None}
    order = [top]
    for v in order:
        for w in tree.adjacency[v]:
            if w != parent[v]:
                parent[w] = v
                order.append(w)
    return order, parent


def _poly_mul(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _weak_strong_table(tree, allowed, top):
    """Per-vertex (weak, strong) counts with every vertex's parent taken toward ``top``."""
    order, parent = _rooted_order(tree, top)
    ws = {}
    polys = {}
    for v in reversed(order):
        poly = [1]
        for w in tree.adjacency[v]:
            if w != parent[v]:
                weak, strong = ws[w]
                poly = _poly_mul(poly, [strong, weak])
        hs = allowed[v]
        # k weak children: height h is strong if h > k + 1, weak if h == k + 1
        strong = sum(c * sum(h > k + 1 for h in hs) for k, c in enumerate(poly))
        weak = sum(c * sum(h == k + 1 for h in hs) for k, c in enumerate(poly))
        ws[v] = (weak, strong)
        polys[v] = poly
    return ws, polys


def count_allowed(tree: TreeTopology, allowed: Sequence[Sequence[int]] | None = None) -> int:
    """Number of allowed configurations with ``heights[v] in allowed[v]`` for every v."""
    if tree.is_empty:
        return 1
    allowed = allowed or [HEIGHTS] * tree.n
    top = tree.root
    _, polys = _weak_strong_table(tree, allowed, top)
    return sum(c * sum(h > k for h in allowed[top]) for k, c in enumerate(polys[top]))


def weak_strong_counts(tree: TreeTopology) -> tuple[int, int]:
    """(weakly, strongly) allowed counts of a rooted tree from the dynamic program."""
    if tree.is_empty:
        return 0, 1
    if not tree.rooted:
        raise ValueError("weak/strong classification needs a rooted tree")
    ws, _ = _weak_strong_table(tree, [HEIGHTS] * tree.n, tree.root)
    return ws[tree.root]


def recurrent_count(tree: TreeTopology) -> int:
    return count_allowed(tree)


# -- exact laws --------------------------------------------------------------

def _pinned(tree, pins):
    allowed = [HEIGHTS] * tree.n
    for v, hs in pins.items():
        allowed[v] = tuple(hs)
    return allowed


def exact_joint_height(tree: TreeTopology, u: int, v: int, method: str = "dp",
                       guard: int = ENUM_GUARD) -> list[list[Fraction]]:
    """Table ``P(eta_u = i+1, eta_v = j+1)`` under the uniform recurrent measure."""
    if method == "enumerate":
        rec = enumerate_recurrent(tree, guard)
        table = [[0] * 3 for _ in range(3)]
        for a, b in zip(rec.configs[:, u], rec.configs[:, v]):
            table[a - 1][b - 1] += 1
        total = rec.count
    elif method == "dp":
        total = count_allowed(tree)
        table = [[0] * 3 for _ in range(3)]
        for i in HEIGHTS:
            for j in HEIGHTS:
                if u == v:
                    table[i - 1][j - 1] = count_allowed(tree, _pinned(tree, {u: (i,)})) if i == j else 0
                else:
                    table[i - 1][j - 1] = count_allowed(tree, _pinned(tree, {u: (i,), v: (j,)}))
    else:
        raise ValueError(f"unknown method {method!r}")
    return [[Fraction(c, total) for c in row] for row in table]


def single_site_law(tree: TreeTopology, u: int) -> list[Fraction]:
    total = count_allowed(tree)
    return [Fraction(count_allowed(tree, _pinned(tree, {u: (i,)})), total) for i in HEIGHTS]


def exact_covariance(tree: TreeTopology, u: int, v: int, method: str = "dp",
                     guard: int = ENUM_GUARD) -> Fraction:
    table = exact_joint_height(tree, u, v, method, guard)
    e_uv = sum((i + 1) * (j + 1) * table[i][j] for i in range(3) for j in range(3))
    e_u = sum((i + 1) * sum(table[i]) for i in range(3))
    e_v = sum((j + 1) * sum(table[i][j] for i in range(3)) for j in range(3))
    return e_uv - e_u * e_v


@dataclass
class AvalancheLaw:
    """Exact law of the avalanche started by one grain at ``origin``.

    ``clusters`` maps toppled vertex sets to probabilities (the empty set is the
    no-toppling event); ``sizes`` aggregates by number of toppled vertices.
    """

    origin: int
    clusters: dict[frozenset, Fraction]

    @property
    def sizes(self) -> dict[int, Fraction]:
        out: dict[int, Fraction] = {}
        for c, pr in self.clusters.items():
            out[len(c)] = out.get(len(c), Fraction(0)) + pr
        return dict(sorted(out.items()))

    @property
    def edge_sizes(self) -> dict[int, Fraction]:
        """Law of ``|C| - 1`` over non-empty avalanches (edges inside the cluster)."""
        return {k - 1: pr for k, pr in self.sizes.items() if k > 0}


def exact_avalanche_law(tree: TreeTopology, origin: int, method: str = "auto",
                        guard: int = ENUM_GUARD, cluster_guard: int = 200_000) -> AvalancheLaw:
    """Law of ``Av(origin, eta)`` with ``eta`` uniform on recurrent configurations.

    ``method="enumerate"`` stabilizes every recurrent configuration.
    ``method="dp"`` uses that, when the origin has at most two neighbours, every
    vertex topples at most once and the avalanche is the connected component of
    height-3 vertices containing the origin; each cluster's probability is then a
    pinned count. ``"auto"`` picks ``dp`` whenever it applies.
    """
    if method == "auto":
        method = "dp" if tree.degree(origin) <= 2 else "enumerate"
    if method == "enumerate":
        rec = enumerate_recurrent(tree, guard)
        counts: dict[frozenset, int] = {}
        for eta in rec:
            av = add(eta, origin).avalanche
            counts[av] = counts.get(av, 0) + 1
        return AvalancheLaw(origin, {c: Fraction(k, rec.count) for c, k in counts.items()})
    if method != "dp":
        raise ValueError(f"unknown method {method!r}")
    if tree.degree(origin) > 2:
        raise ValueError("single-wave avalanche formula needs an origin of degree <= 2")
    total = count_allowed(tree)
    law = {frozenset(): Fraction(count_allowed(tree, _pinned(tree, {origin: (1, 2)})), total)}
    seen = 0
    for size in range(1, tree.n + 1):
        for cluster in enumerate_clusters(tree, origin, size, guard=tree.n):
            seen += 1
            if seen > cluster_guard:
                raise GuardError(f"more than {cluster_guard} clusters")
            pins = {w: (3,) for w in cluster}
            for w in cluster:
                for z in tree.adjacency[w]:
                    if z not in cluster:
                        pins[z] = (1, 2)
            law[cluster] = Fraction(count_allowed(tree, _pinned(tree, pins)), total)
    return AvalancheLaw(origin, law)


def avalanche_size_law(tree: TreeTopology, origin: int | None = None) -> dict[int, Fraction]:
    """Exact law of the number of toppled vertices, by a size-polynomial tree DP.

    Valid when the origin has at most two neighbours (single-wave avalanches).
    Every vertex is in one of three modes: in the cluster (height 3), on its
    boundary (parent in the cluster, height 1 or 2) or free.
    """
    origin = tree.root if origin is None else origin
    if tree.degree(origin) > 2:
        raise ValueError("single-wave avalanche formula needs an origin of degree <= 2")
    order, parent = _rooted_order(tree, origin)
    free: dict[int, tuple[int, int]] = {}
    bound: dict[int, tuple[int, int]] = {}
    inner: dict[int, tuple[list[int], list[int]]] = {}  # weak, strong polynomials in cluster size

    def padd(a, b):
        out = [0] * max(len(a), len(b))
        for i, x in enumerate(a):
            out[i] += x
        for i, x in enumerate(b):
            out[i] += x
        return out

    for v in reversed(order):
        kids = [w for w in tree.adjacency[v] if w != parent[v]]
        fw = [free[w] for w in kids] + [(0, 1)] * (2 - len(kids))
        (w1, s1), (w2, s2) = fw
        free[v] = ((w1 + s1) * (w2 + s2), 2 * s1 * s2 + w1 * s2 + s1 * w2)
        bound[v] = (s1 * s2 + w1 * s2 + s1 * w2, s1 * s2)
        opts = []
        for w in kids:
            bw, bs = bound[w]
            iw, is_ = inner[w]
            opts.append((padd([bw], iw), padd([bs], is_)))
        opts += [([0], [1])] * (2 - len(kids))
        (a1, b1), (a2, b2) = opts
        strong = padd(padd(_poly_mul(b1, b2), _poly_mul(a1, b2)), _poly_mul(b1, a2))
        weak = _poly_mul(a1, a2)
        inner[v] = ([0] + weak, [0] + strong)  # shift by one for v itself

    w_o, s_o = inner[origin]
    toppled = padd(w_o, s_o)
    kids = [w for w in tree.adjacency[origin]]
    fw = [free[w] for w in kids] + [(0, 1)] * (2 - len(kids))
    (w1, s1), (w2, s2) = fw
    # origin at height 1 or 2 with no parent: allowed iff h > number of weak children
    quiet = 2 * s1 * s2 + w1 * s2 + s1 * w2
    total = count_allowed(tree)
    law = {0: Fraction(quiet, total)}
    for k, c in enumerate(toppled):
        if c:
            law[k] = Fraction(c, total)
    return law


# -- Markov chain --------------------------------------------------------------

def markov_chain(tree: TreeTopology, steps: int, burn_in: int = 0, rng=None,
                 start: Sequence[int] | None = None) -> Iterator[HeightConfig]:
    """Yield the state after each of ``steps`` uniform additions, after ``burn_in``.

    The default start, all heights 3, is recurrent.
    """
    gen = as_generator(rng)
    eta = HeightConfig(tree, tuple(start) if start is not None else (3,) * tree.n)
    sites = gen.integers(0, tree.n, size=burn_in + steps)
    for i, u in enumerate(sites):
        eta = add(eta, int(u)).final
        if i >= burn_in:
            yield eta


def markov_chain_sample(tree: TreeTopology, steps: int, burn_in: int = 0, rng=None) -> HeightConfig:
    """Final state of the chain; approximate, meant for trees too large to enumerate."""
    eta = HeightConfig(tree, (3,) * tree.n)
    for eta in markov_chain(tree, steps, burn_in, rng):
        pass
    return eta
