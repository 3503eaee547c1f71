"""Finite rooted trees with at most two children per vertex.

Every tree is stored as a tuple of children tuples indexed by dense vertex ids.
Constructors in this module number vertices in preorder (root 0, then the whole
first child subtree, then the second), which makes structural equality of two
``TreeTopology`` values the same as equality of ordered shapes.

A rootless tree is two rooted halves whose roots are linked by a marked join
edge: ``root`` is the first half's root and ``join`` the second half's root.
Both have no parent. Vertex degree never exceeds three, so every vertex has
three *slots* (up, left, right); absent neighbours leave a slot empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

from .errors import GuardError
from .rng import as_generator

FORMAT = "sandtree-v1"
SHAPE_GUARD = 12
CLUSTER_GUARD = 14

Shape = tuple  # nested tuples: a vertex is the tuple of its child shapes


class TreeFormatError(ValueError):
    """Malformed serialized tree; ``position`` locates the offending item."""

    def __init__(self, message, position=None):
        where = f" at {position}" if position is not None else ""
        super().__init__(f"{message}{where}")
        self.position = position


@dataclass(frozen=True)
class TreeTopology:
    children: tuple[tuple[int, ...], ...]
    root: int | None = 0
    rooted: bool = True
    join: int | None = None

    def __post_init__(self):
        n = len(self.children)
        if n == 0:
            if self.root is not None or self.join is not None:
                raise ValueError("empty tree has no root")
            return
        if self.root is None or not 0 <= self.root < n:
            raise ValueError(f"root {self.root} out of range")
        if self.rooted == (self.join is not None):
            raise ValueError("a rootless tree needs exactly one join vertex; a rooted one none")
        parent = [None] * n
        for v, kids in enumerate(self.children):
            if len(kids) > 2:
                raise ValueError(f"vertex {v} has {len(kids)} children")
            for c in kids:
                if not 0 <= c < n:
                    raise ValueError(f"child index {c} of vertex {v} out of range")
                if parent[c] is not None or c in (self.root, self.join):
                    raise ValueError(f"vertex {c} has more than one parent")
                parent[c] = v
        tops = [self.root] if self.join is None else [self.root, self.join]
        if self.join is not None and self.join == self.root:
            raise ValueError("join vertex must differ from root")
        seen = set()
        stack = list(tops)
        while stack:
            v = stack.pop()
            if v in seen:
                raise ValueError("cycle detected")
            seen.add(v)
            stack.extend(self.children[v])
        if len(seen) != n:
            raise ValueError("tree is not connected")

    # -- basic structure -------------------------------------------------
    @classmethod
    def empty(cls) -> "TreeTopology":
        return cls((), None)

    @property
    def n(self) -> int:
        return len(self.children)

    def __len__(self):
        return len(self.children)

    @property
    def is_empty(self) -> bool:
        return not self.children

    @cached_property
    def parent(self) -> tuple[int | None, ...]:
        parent = [None] * self.n
        for v, kids in enumerate(self.children):
            for c in kids:
                parent[c] = v
        return tuple(parent)

    def up(self, v: int) -> int | None:
        """Neighbour in the up slot: the parent, or the partner across the join edge."""
        if v == self.root:
            return self.join
        if v == self.join:
            return self.root
        return self.parent[v]

    def slots(self, v: int) -> tuple[int | None, int | None, int | None]:
        kids = self.children[v]
        return (self.up(v), kids[0] if kids else None, kids[1] if len(kids) > 1 else None)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(w for w in self.slots(v) if w is not None) for v in range(self.n))

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def edges(self) -> list[tuple[int, int]]:
        out = [(v, c) for v, kids in enumerate(self.children) for c in kids]
        if self.join is not None:
            out.append((self.root, self.join))
        return out

    def depth_of(self) -> tuple[int, ...]:
        """Generation of every vertex below its own half's root."""
        d = [0] * self.n
        for v in self.preorder():
            for c in self.children[v]:
                d[c] = d[v] + 1
        return tuple(d)

    def height(self) -> int:
        return max(self.depth_of()) if self.n else -1

    def preorder(self) -> list[int]:
        if not self.n:
            return []
        out = []
        stack = [self.join, self.root] if self.join is not None else [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def path(self, u: int, v: int) -> list[int]:
        """Vertices on the unique path from ``u`` to ``v``, both included."""
        prev = {u: None}
        queue = [u]
        for w in queue:
            if w == v:
                break
            for z in self.adjacency[w]:
                if z not in prev:
                    prev[z] = w
                    queue.append(z)
        if v not in prev:
            raise ValueError(f"vertex {v} not in tree")
        out = [v]
        while out[-1] != u:
            out.append(prev[out[-1]])
        return out[::-1]

    def distance(self, u: int, v: int) -> int:
        return len(self.path(u, v)) - 1


# -- nested shapes ---------------------------------------------------------

def from_nested(shape: Shape | None) -> TreeTopology:
    """Preorder-numbered tree from nested child tuples; ``None`` is the empty tree."""
    if shape is None:
        return TreeTopology.empty()
    children: list[list[int]] = []
    stack = [(shape, None)]
    while stack:
        s, par = stack.pop()
        v = len(children)
        children.append([])
        if par is not None:
            children[par].append(v)
        for c in reversed(s):
            stack.append((c, v))
    return TreeTopology(tuple(tuple(k) for k in children), 0)


def to_nested(tree: TreeTopology, v: int | None = None) -> Shape | None:
    if tree.is_empty:
        return None
    v = tree.root if v is None else v
    out: dict[int, Shape] = {}
    for w in reversed(_subtree_preorder(tree, v)):
        out[w] = tuple(out[c] for c in tree.children[w])
    return out[v]


def _subtree_preorder(tree, v):
    out = []
    stack = [v]
    while stack:
        w = stack.pop()
        out.append(w)
        stack.extend(reversed(tree.children[w]))
    return out


def shape_string(shape: Shape) -> str:
    return "(" + "".join(shape_string(c) for c in shape) + ")"


def canonical_shape(shape: Shape) -> Shape:
    """Order every pair of sibling subtrees by their bracket string."""
    kids = [canonical_shape(c) for c in shape]
    return tuple(sorted(kids, key=shape_string))


def canonical_key(tree: TreeTopology) -> str:
    """Left/right-insensitive identity of a rooted shape."""
    if tree.is_empty:
        return ""
    if not tree.rooted:
        a, b = split(tree)
        return "|".join(sorted((canonical_key(a), canonical_key(b))))
    return shape_string(canonical_shape(to_nested(tree)))


# -- named families --------------------------------------------------------

POINT: Shape = ()
CHERRY: Shape = ((), ())


def point() -> TreeTopology:
    return from_nested(POINT)


def cherry() -> TreeTopology:
    return from_nested(CHERRY)


def chain(vertices: int) -> TreeTopology:
    """Rooted path on ``vertices`` vertices, each continuing vertex in the left slot."""
    if vertices <= 0:
        return TreeTopology.empty()
    shape: Shape = ()
    for _ in range(vertices - 1):
        shape = (shape,)
    return from_nested(shape)


def _full_shape(depth):
    shape: Shape = ()
    for _ in range(depth):
        shape = (shape, shape)
    return shape


def full_tree(depth: int) -> TreeTopology:
    """Complete binary tree with ``depth`` generations below the root (2**(depth+1)-1 vertices)."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return from_nested(_full_shape(depth))


def _backbone_shape(att, n):
    shape: Shape = ()
    for _ in range(n):
        shape = (att, shape)
    return shape


def single_branch(n: int) -> TreeTopology:
    """Root plus ``n`` generations of one leaf and one continuing vertex each."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return from_nested(_backbone_shape((), n))


def backbone(attachment: TreeTopology, n: int) -> TreeTopology:
    """Spine of ``n`` steps where every spine vertex carries a copy of ``attachment``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    att = to_nested(attachment)
    if att is None:
        return chain(n + 1)
    return from_nested(_backbone_shape(att, n))


def perturbed_branch(attachment: TreeTopology, n: int, tail: int = 40) -> TreeTopology:
    """Single branch whose level-``n`` leaf is replaced by ``attachment``.

    The branch continues ``tail`` further generations below level ``n``; this
    truncates the infinite branch.
    """
    if n < 0 or tail < 0:
        raise ValueError("n and tail must be >= 0")
    att = to_nested(attachment)
    rest = _backbone_shape((), tail)
    shape: Shape = (att, rest) if att is not None else (rest,)
    for _ in range(n):
        shape = ((), shape)
    return from_nested(shape)


def build_deterministic(family: str, **kw) -> TreeTopology:
    """Dispatch on ``family``: full, single_branch, backbone, perturbed_branch."""
    builders = {
        "full": lambda: full_tree(kw["depth"]),
        "single_branch": lambda: single_branch(kw["n"]),
        "backbone": lambda: backbone(kw["attachment"], kw["n"]),
        "perturbed_branch": lambda: perturbed_branch(kw["attachment"], kw["n"], kw.get("tail", 40)),
        "chain": lambda: chain(kw["n"]),
    }
    try:
        return builders[family]()
    except KeyError as exc:
        raise ValueError(f"unknown family or missing argument: {exc}") from None


# -- random trees ----------------------------------------------------------

def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")


def _sample(max_gen, rng, draw_children):
    if max_gen < 0:
        raise ValueError("max_gen must be >= 0")
    gen = as_generator(rng)
    children: list[list[int]] = []
    stack = [(None, 0)]
    while stack:
        par, g = stack.pop()
        v = len(children)
        children.append([])
        if par is not None:
            children[par].append(v)
        if g < max_gen:
            for _ in range(draw_children(gen)):
                stack.append((v, g + 1))
    return TreeTopology(tuple(tuple(k) for k in children), 0)


def sample_gw_binary(p: float, max_gen: int, rng=None) -> TreeTopology:
    """Binary Galton-Watson tree: two children with probability ``p``, else none."""
    _check_p(p)
    return _sample(max_gen, rng, lambda g: 2 if g.random() < p else 0)


def sample_binomial(p: float, max_gen: int, rng=None) -> TreeTopology:
    """Each of the two potential children is present independently with probability ``p``."""
    _check_p(p)
    return _sample(max_gen, rng, lambda g: int(g.random() < p) + int(g.random() < p))


def build_spine_conditioned(p: float, n: int, depth_margin: int, rng=None):
    """Tree with a designated line ``o -> v(n)`` of length ``n``.

    Conditioning a binary Galton-Watson tree on a designated surviving line forces
    every spine vertex to branch; the sibling of each spine vertex roots an
    independent GW(p) tree and the end of the line is itself a GW(p) root, both
    truncated ``depth_margin`` generations down. For ``p == 0`` the conditioning is
    empty and the bare path is returned.

    Returns ``(tree, o, v)`` with vertex ids in the returned tree.
    """
    _check_p(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = as_generator(rng)

    def gw_shape(budget):
        if budget == 0 or gen.random() >= p:
            return ()
        return (gw_shape(budget - 1), gw_shape(budget - 1))

    if p == 0:
        shape: Shape = ()
        for _ in range(n):
            shape = (shape,)
    else:
        shape = gw_shape(depth_margin)
        for _ in range(n):
            shape = (shape, gw_shape(depth_margin))
    tree = from_nested(shape)
    v = 0
    for _ in range(n):
        v = tree.children[v][0]
    return tree, 0, v


def enumerate_rooted_shapes(max_vertices: int, guard: int = SHAPE_GUARD) -> list[TreeTopology]:
    """Every rooted shape with at most ``max_vertices`` vertices, once per mirror class.

    Ordered by size, then by canonical bracket string.
    """
    if max_vertices > guard:
        raise GuardError(f"shape enumeration limited to {guard} vertices")
    by_size: dict[int, list[Shape]] = {1: [()]}
    for size in range(2, max_vertices + 1):
        found = [(s,) for s in by_size[size - 1]]
        for a in range(1, size - 1):
            b = size - 1 - a
            if a > b:
                break
            for i, sa in enumerate(by_size[a]):
                for j, sb in enumerate(by_size[b]):
                    if a == b and j < i:
                        continue
                    found.append((sa, sb))
        by_size[size] = sorted({canonical_shape(s) for s in found}, key=shape_string)
    return [from_nested(s) for size in range(1, max_vertices + 1) for s in by_size.get(size, [])]


# -- decompositions --------------------------------------------------------

def hanging(tree: TreeTopology, v: int | None, z: int | None) -> TreeTopology:
    """Component of ``z`` once the edge ``v-z`` is cut, rooted at ``z``.

    Children of each vertex follow slot order (up, left, right), skipping the
    vertex we came from. ``z is None`` gives the empty tree.
    """
    if z is None:
        return TreeTopology.empty()
    children: list[list[int]] = []
    stack = [(z, v, None)]
    while stack:
        w, came, par = stack.pop()
        idx = len(children)
        children.append([])
        if par is not None:
            children[par].append(idx)
        nxt = [x for x in tree.slots(w) if x is not None and x != came]
        for x in reversed(nxt):
            stack.append((x, w, idx))
    return TreeTopology(tuple(tuple(k) for k in children), 0)


def split(tree: TreeTopology, at="root") -> tuple[TreeTopology, TreeTopology]:
    """Split a tree in two.

    ``at="root"`` removes the root of a rooted tree (missing children give empty
    trees) or cuts the join edge of a rootless one. ``at=(u, v)`` cuts that edge
    and roots each half at its endpoint.
    """
    if tree.is_empty:
        raise ValueError("cannot split the empty tree")
    if at == "root":
        if not tree.rooted:
            return hanging(tree, tree.join, tree.root), hanging(tree, tree.root, tree.join)
        _, left, right = tree.slots(tree.root)
        return hanging(tree, tree.root, left), hanging(tree, tree.root, right)
    u, v = at
    if not (0 <= u < tree.n and v in tree.adjacency[u]):
        raise ValueError(f"no edge between {u} and {v}")
    return hanging(tree, v, u), hanging(tree, u, v)


def join(first: TreeTopology, second: TreeTopology) -> TreeTopology:
    """Rootless tree made of two rooted halves linked root to root."""
    if first.is_empty or second.is_empty or not (first.rooted and second.rooted):
        raise ValueError("join needs two non-empty rooted trees")
    a, b = from_nested(to_nested(first)), from_nested(to_nested(second))
    off = a.n
    kids = a.children + tuple(tuple(c + off for c in k) for k in b.children)
    return TreeTopology(kids, 0, rooted=False, join=off)


def graft(left: TreeTopology, right: TreeTopology) -> TreeTopology:
    """Rooted tree whose new root has ``left`` and ``right`` (when non-empty) as children."""
    kids = tuple(to_nested(t) for t in (left, right) if not t.is_empty)
    return from_nested(kids)


def path_subtrees(tree: TreeTopology, u: int, v: int) -> list[TreeTopology]:
    """The ``d + 3`` subtrees hanging off the path from ``u`` to ``v`` (``d`` its length).

    Order: the two off-path slots of ``u``, one per interior vertex along the
    path, then the two off-path slots of ``v``; each vertex's slots in
    up/left/right order. Absent branches are empty trees.
    """
    if u == v:
        raise ValueError("u and v must differ")
    line = tree.path(u, v)
    out = []
    for i, w in enumerate(line):
        on_path = {line[i - 1] if i > 0 else None, line[i + 1] if i + 1 < len(line) else None}
        for z in tree.slots(w):
            if z is None or z not in on_path:
                out.append(hanging(tree, w, z))
    return out


def _check_cluster(tree, cluster, origin):
    cluster = frozenset(cluster)
    if origin not in cluster:
        raise ValueError(f"origin {origin} not in cluster")
    if any(not 0 <= w < tree.n for w in cluster):
        raise ValueError("cluster vertex out of range")
    seen = {origin}
    stack = [origin]
    while stack:
        w = stack.pop()
        for z in tree.adjacency[w]:
            if z in cluster and z not in seen:
                seen.add(z)
                stack.append(z)
    if seen != cluster:
        raise ValueError("cluster is not connected")
    return cluster


def cluster_slots(tree: TreeTopology, cluster, origin: int | None = None) -> list[tuple[int, int | None]]:
    """Boundary slots ``(cluster vertex, outside neighbour or None)`` in contour order.

    Depth-first from ``origin`` over the cluster; at each cluster vertex the
    slots are visited up, left, right, descending into cluster neighbours and
    emitting the others. There are always ``len(cluster) + 2`` of them.
    """
    origin = tree.root if origin is None else origin
    cluster = _check_cluster(tree, cluster, origin)
    out = []
    work: list = [("visit", origin, None)]
    while work:
        kind, w, came = work.pop()
        if kind == "emit":
            out.append((w, came))
            continue
        items = []
        for z in tree.slots(w):
            if z is not None and z == came:
                continue
            if z is not None and z in cluster:
                items.append(("visit", z, w))
            else:
                items.append(("emit", w, z))
        work.extend(reversed(items))
    return out


def cluster_subtrees(tree: TreeTopology, cluster, origin: int | None = None) -> list[TreeTopology]:
    """The ``|C| + 2`` rooted subtrees hanging off a connected vertex set ``C``."""
    return [hanging(tree, w, z) for w, z in cluster_slots(tree, cluster, origin)]


def enumerate_clusters(tree: TreeTopology, origin: int, size: int, unit: str = "vertices",
                       guard: int = CLUSTER_GUARD) -> list[frozenset[int]]:
    """All connected vertex sets containing ``origin`` of the given size.

    ``unit="vertices"`` counts vertices; ``unit="edges"`` counts edges, so a
    size-``k`` edge cluster has ``k + 1`` vertices and size 0 is ``{origin}``.
    """
    if unit not in ("vertices", "edges"):
        raise ValueError("unit must be 'vertices' or 'edges'")
    if size > guard:
        raise GuardError(f"cluster enumeration limited to size {guard}")
    k = size + 1 if unit == "edges" else size
    if k <= 0:
        return []
    if not 0 <= origin < tree.n:
        raise ValueError("origin not in tree")

    # grow(v, came, b)[j]: sets of j <= b vertices containing v, on v's side away from `came`
    def grow(v, came, budget):
        table = {1: [(v,)]}
        for z in tree.adjacency[v]:
            if z == came:
                continue
            sub = grow(z, v, budget - 1) if budget > 1 else {}
            if not sub:
                continue
            merged = {j: list(ls) for j, ls in table.items()}
            for j, left in table.items():
                for i, right in sub.items():
                    if i + j > budget:
                        continue
                    merged.setdefault(i + j, []).extend(a + b for a in left for b in right)
            table = merged
        return table

    return [frozenset(c) for c in grow(origin, None, k).get(k, [])]


def count_clusters_by_size(tree: TreeTopology, origin: int, max_vertices: int) -> list[int]:
    """Number of connected vertex sets containing ``origin``, by vertex count ``0..max_vertices``."""

    def poly(v, came, budget):
        out = [0, 1]
        for z in tree.adjacency[v]:
            if z == came or budget <= 1:
                continue
            sub = poly(z, v, budget - 1)
            sub[0] = 1
            prod = [0] * (budget + 1)
            for i, a in enumerate(out):
                if a:
                    for j, b in enumerate(sub):
                        if i + j <= budget:
                            prod[i + j] += a * b
            out = prod
        return out + [0] * (budget + 1 - len(out))

    return poly(origin, None, max_vertices)[: max_vertices + 1]


# -- serialization ---------------------------------------------------------

def serialize(tree: TreeTopology) -> bytes:
    doc = {"format": FORMAT, "rooted": tree.rooted, "root": tree.root}
    if tree.join is not None:
        doc["join"] = tree.join
    doc["nodes"] = [{"id": v, "children": list(k)} for v, k in enumerate(tree.children)]
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def deserialize(data: bytes | str) -> TreeTopology:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TreeFormatError("invalid UTF-8", exc.start) from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(exc.msg, exc.pos) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise TreeFormatError(f"expected format {FORMAT!r}", "format")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list):
        raise TreeFormatError("nodes must be a list", "nodes")
    children = []
    for i, node in enumerate(nodes):
        if not isinstance(node, dict) or node.get("id") != i:
            raise TreeFormatError("node ids must be dense and ordered", f"nodes[{i}]")
        kids = node.get("children")
        if not isinstance(kids, list) or len(kids) > 2:
            raise TreeFormatError("children must be a list of at most two ids", f"nodes[{i}].children")
        for j, c in enumerate(kids):
            if not isinstance(c, int) or isinstance(c, bool) or not 0 <= c < len(nodes):
                raise TreeFormatError(f"child index {c!r} out of range", f"nodes[{i}].children[{j}]")
        children.append(tuple(kids))
    rooted = doc.get("rooted", True)
    root = doc.get("root")
    try:
        return TreeTopology(tuple(children), root, rooted=bool(rooted), join=doc.get("join"))
    except (ValueError, TypeError) as exc:
        raise TreeFormatError(str(exc), "nodes") from None
