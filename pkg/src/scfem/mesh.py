"""Conforming triangulations under newest-vertex bisection.

A :class:`Triangulation` is an immutable snapshot of a bisection forest: the
root triangles of the initial mesh plus every bisection performed since.  A
triangle is stored as a vertex triple ``(v0, v1, v2)`` whose refinement edge
is ``(v0, v1)`` and whose peak (newest vertex) is ``v2``; bisecting it at the
midpoint ``m`` of the refinement edge produces the children ``(v2, v0, m)``
and ``(v1, v2, m)``, which keeps orientation and hands the two remaining
parent edges on as the children's refinement edges.  Refinement edges of the
initial mesh are chosen as longest edges.

All derived meshes of one root mesh live in one structural universe, which is
what makes three operations exact and cheap:

* ``refine`` -- smallest conforming refinement bisecting a marked edge set
  (closure by compatible-neighbor bisection);
* ``overlay`` -- coarsest common refinement of two meshes, realized as the
  union of their forests (conforming by construction, no closure needed);
* ``prolongate`` -- nodal transfer of a piecewise-linear function onto any
  refinement by recursive edge-midpoint averaging, which is exact.

Vertices created by bisection record the edge they split, so meshes can be
matched structurally (never by floating-point coordinates).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    IncompatibleMeshError,
    UnknownDomainError,
)

__all__ = [
    "Triangulation", "EdgeMidpoint", "initial_mesh", "refine",
    "uniform_refine", "overlay", "prolongate", "interior_midpoints",
]


@dataclass(frozen=True)
class EdgeMidpoint:
    """An interior leaf edge of a mesh, addressed by its midpoint.

    ``edge`` holds the endpoint vertex ids (ascending), ``midpoint`` the
    coordinates of the would-be new vertex, ``triangles`` the positions of
    the two adjacent leaves in the mesh's triangle array.
    """

    edge: tuple
    midpoint: tuple
    triangles: tuple


def _edge_key(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


class _Forest:
    """Mutable builder behind Triangulation; not part of the public API."""

    def __init__(self):
        self.verts: list = []
        self.vertex_parents: list = []
        self.tri_verts: list = []
        self.parent: list = []
        self.children: list = []
        self.edge_mid: dict = {}
        self.boundary_edges: set = set()

    @classmethod
    def thaw(cls, mesh: "Triangulation") -> "_Forest":
        f = cls()
        f.verts = [tuple(v) for v in mesh._verts]
        f.vertex_parents = list(mesh._vertex_parents)
        f.tri_verts = list(mesh._tri_verts)
        f.parent = list(mesh._parent)
        f.children = list(mesh._children)
        f.edge_mid = dict(mesh._edge_mid)
        f.boundary_edges = set(mesh._boundary_edges)
        return f

    # -- plain bisection (no conformity bookkeeping) ----------------------

    def split_vertex(self, a: int, b: int) -> int:
        key = _edge_key(a, b)
        m = self.edge_mid.get(key)
        if m is None:
            m = len(self.verts)
            va, vb = self.verts[a], self.verts[b]
            self.verts.append(((va[0] + vb[0]) / 2.0, (va[1] + vb[1]) / 2.0))
            self.vertex_parents.append(key)
            self.edge_mid[key] = m
            if key in self.boundary_edges:
                self.boundary_edges.add(_edge_key(key[0], m))
                self.boundary_edges.add(_edge_key(m, key[1]))
        return m

    def bisect(self, t: int) -> tuple:
        if self.children[t] is not None:
            raise ContractViolationError("triangle already bisected")
        v0, v1, v2 = self.tri_verts[t]
        m = self.split_vertex(v0, v1)
        left = len(self.tri_verts)
        self.tri_verts.append((v2, v0, m))
        self.parent.append(t)
        self.children.append(None)
        right = len(self.tri_verts)
        self.tri_verts.append((v1, v2, m))
        self.parent.append(t)
        self.children.append(None)
        self.children[t] = (left, right)
        return left, right

    # -- conforming refinement -------------------------------------------

    def leaf_adjacency(self) -> dict:
        adj: dict = {}
        for t, kids in enumerate(self.children):
            if kids is not None:
                continue
            a, b, c = self.tri_verts[t]
            for e in (_edge_key(a, b), _edge_key(b, c), _edge_key(c, a)):
                adj.setdefault(e, []).append(t)
        return adj

    def _neighbor_across(self, adj: dict, t: int, e: tuple):
        for s in adj.get(e, ()):
            if s != t and self.children[s] is None:
                return s
        return None

    def _bisect_conforming(self, t: int, adj: dict) -> None:
        """Bisect leaf ``t`` at its refinement edge, pre-bisecting neighbors
        whose refinement edge disagrees (the standard closure recursion)."""
        stack = [t]
        limit = 4 * len(self.tri_verts) + 16
        while stack:
            if len(stack) > limit:
                raise ContractViolationError(
                    "refinement-edge chain did not terminate; initial mesh "
                    "is not compatibly oriented")
            cur = stack[-1]
            if self.children[cur] is not None:
                stack.pop()
                continue
            v0, v1, _ = self.tri_verts[cur]
            e = _edge_key(v0, v1)
            nb = self._neighbor_across(adj, cur, e)
            if nb is not None and _edge_key(*self.tri_verts[nb][:2]) != e:
                stack.append(nb)
                continue
            for s in (cur,) if nb is None else (cur, nb):
                kids = self.bisect(s)
                a, b, c = self.tri_verts[s]
                for old in (_edge_key(a, b), _edge_key(b, c), _edge_key(c, a)):
                    lst = adj.get(old)
                    if lst is not None and s in lst:
                        lst.remove(s)
                for k in kids:
                    ka, kb, kc = self.tri_verts[k]
                    for enew in (_edge_key(ka, kb), _edge_key(kb, kc),
                                 _edge_key(kc, ka)):
                        adj.setdefault(enew, []).append(k)
            stack.pop()

    def refine_edges(self, edges: Iterable[tuple]) -> None:
        adj = self.leaf_adjacency()
        for e in sorted(set(edges)):
            while e not in self.edge_mid:
                holders = [s for s in adj.get(e, ()) if self.children[s] is None]
                if not holders:
                    raise ContractViolationError(f"edge {e} is not a leaf edge")
                t = min(holders)
                if _edge_key(*self.tri_verts[t][:2]) == e:
                    self._bisect_conforming(t, adj)
                else:
                    self._bisect_conforming(t, adj)
                    # e is now the refinement edge of one child; next loop
                    # iteration finds and splits it.


class Triangulation:
    """Immutable conforming triangulation carrying its bisection forest."""

    def __init__(self, forest: _Forest, nroot_verts: int, nroot_tris: int,
                 root_signature: str):
        self._verts = np.array(forest.verts, dtype=float)
        self._verts.flags.writeable = False
        self._vertex_parents = tuple(forest.vertex_parents)
        self._tri_verts = tuple(forest.tri_verts)
        self._parent = tuple(forest.parent)
        self._children = tuple(forest.children)
        self._edge_mid = dict(forest.edge_mid)
        self._boundary_edges = frozenset(forest.boundary_edges)
        self._nroot_verts = nroot_verts
        self._nroot_tris = nroot_tris
        self._root_signature = root_signature
        self._leaves = tuple(i for i, kids in enumerate(self._children)
                             if kids is None)
        self._cache: dict = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Triangulation":
        """Root mesh from raw arrays; refinement edges become longest edges.

        ``vertices`` is (n, 2); ``triangles`` is (m, 3) with vertex ids.
        Triangles may be given in either orientation; each is stored
        counterclockwise, rotated so its longest edge comes first.
        """
        verts = np.asarray(vertices, dtype=float)
        tris = np.asarray(triangles, dtype=int)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise ContractViolationError("vertices must have shape (n, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ContractViolationError("triangles must have shape (m, 3)")
        if len(tris) == 0:
            raise ContractViolationError("mesh needs at least one triangle")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise ContractViolationError("triangle vertex id out of range")

        f = _Forest()
        f.verts = [tuple(v) for v in verts]
        f.vertex_parents = [None] * len(verts)
        edge_count: dict = {}
        for row in tris:
            a, b, c = (int(v) for v in row)
            if len({a, b, c}) != 3:
                raise ContractViolationError(f"degenerate triangle {row}")
            pa, pb, pc = verts[a], verts[b], verts[c]
            det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
            if det == 0.0:
                raise ContractViolationError(f"zero-area triangle {row}")
            if det < 0.0:
                b, c = c, b
                pb, pc = pc, pb
            lengths = [
                np.sum((verts[b] - verts[a]) ** 2),
                np.sum((verts[c] - verts[b]) ** 2),
                np.sum((verts[a] - verts[c]) ** 2),
            ]
            rot = int(np.argmax(lengths))
            tri = [(a, b, c), (b, c, a), (c, a, b)][rot]
            f.tri_verts.append(tri)
            f.parent.append(-1)
            f.children.append(None)
            for e in (_edge_key(tri[0], tri[1]), _edge_key(tri[1], tri[2]),
                      _edge_key(tri[2], tri[0])):
                edge_count[e] = edge_count.get(e, 0) + 1
        if any(n > 2 for n in edge_count.values()):
            raise ContractViolationError("an edge is shared by >2 triangles")
        f.boundary_edges = {e for e, n in edge_count.items() if n == 1}

        # signature over the canonical (oriented, rotated) root data, so that
        # serialization round-trips keep meshes structurally compatible
        canon = np.array(f.tri_verts, dtype=np.int64)
        payload = verts.tobytes() + np.ascontiguousarray(canon).tobytes()
        sig = hashlib.sha1(payload).hexdigest()
        return cls(f, len(verts), len(tris), sig)

    # -- basic views ------------------------------------------------------

    @property
    def vertices(self) -> np.ndarray:
        """(n, 2) coordinates; read-only."""
        return self._verts

    @property
    def triangles(self) -> np.ndarray:
        """(m, 3) vertex ids of the current leaves, refinement edge first."""
        arr = self._cache.get("triangles")
        if arr is None:
            arr = np.array([self._tri_verts[i] for i in self._leaves], dtype=int)
            arr.flags.writeable = False
            self._cache["triangles"] = arr
        return arr

    @property
    def num_vertices(self) -> int:
        return len(self._verts)

    @property
    def num_triangles(self) -> int:
        return len(self._leaves)

    @property
    def root_signature(self) -> str:
        return self._root_signature

    def boundary_vertex_mask(self) -> np.ndarray:
        mask = self._cache.get("boundary_mask")
        if mask is None:
            mask = np.zeros(self.num_vertices, dtype=bool)
            leaf_edges = self._leaf_edge_map()
            for (a, b), holders in leaf_edges.items():
                if len(holders) == 1:
                    mask[a] = mask[b] = True
            mask.flags.writeable = False
            self._cache["boundary_mask"] = mask
        return mask

    def _leaf_edge_map(self) -> dict:
        m = self._cache.get("leaf_edges")
        if m is None:
            m = {}
            for pos, i in enumerate(self._leaves):
                a, b, c = self._tri_verts[i]
                for e in (_edge_key(a, b), _edge_key(b, c), _edge_key(c, a)):
                    m.setdefault(e, []).append(pos)
            self._cache["leaf_edges"] = m
        return m

    def midpoint_vertex(self, edge: tuple) -> int:
        """Vertex id of the midpoint of a bisected edge of an ancestor mesh."""
        key = _edge_key(int(edge[0]), int(edge[1]))
        try:
            return self._edge_mid[key]
        except KeyError:
            raise ContractViolationError(f"edge {key} was never bisected") from None

    def min_angle(self) -> float:
        """Smallest interior angle over the current leaves, in radians."""
        p = self._verts[self.triangles]
        angles = []
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            v = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.sum(u * v, axis=1) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(np.min(angles))

    def is_conforming(self) -> bool:
        """Every leaf edge is shared by two leaves or lies on the boundary."""
        for e, holders in self._leaf_edge_map().items():
            if len(holders) == 2:
                continue
            if len(holders) == 1 and e in self._boundary_edges:
                continue
            return False
        return True

    # -- structural relations --------------------------------------------

    def _check_same_root(self, other: "Triangulation") -> None:
        if self._root_signature != other._root_signature:
            raise IncompatibleMeshError(
                "meshes do not descend from the same root triangulation")

    def is_refinement_of(self, other: "Triangulation") -> bool:
        """Whether this forest contains every bisection of ``other``."""
        try:
            self._check_same_root(other)
            _structural_vertex_map(other, self)
        except (IncompatibleMeshError, ContractViolationError):
            return False
        return True

    # -- refinement operations (return new snapshots) ---------------------

    def refine(self, marked: Sequence[EdgeMidpoint]) -> "Triangulation":
        """Smallest conforming refinement bisecting all marked interior edges.

        ``marked`` must consist of records from :func:`interior_midpoints`
        of this mesh.  An empty selection returns the mesh itself.
        """
        marked = list(marked)
        if not marked:
            return self
        leaf_edges = self._leaf_edge_map()
        keys = []
        for rec in marked:
            key = _edge_key(int(rec.edge[0]), int(rec.edge[1]))
            holders = leaf_edges.get(key)
            if holders is None or len(holders) != 2:
                raise ContractViolationError(
                    f"marked edge {key} is not an interior leaf edge")
            keys.append(key)
        f = _Forest.thaw(self)
        f.refine_edges(keys)
        return Triangulation(f, self._nroot_verts, self._nroot_tris,
                             self._root_signature)

    def uniform_refine(self) -> "Triangulation":
        """Bisect every leaf three times; new vertices are all edge midpoints."""
        cached = self._cache.get("uniform_refine")
        if cached is not None:
            return cached
        f = _Forest.thaw(self)
        f.refine_edges(self._leaf_edge_map().keys())
        fine = Triangulation(f, self._nroot_verts, self._nroot_tris,
                             self._root_signature)
        self._cache["uniform_refine"] = fine
        return fine

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        # root boundary edges only; descendants are re-derived on load
        root_boundary = sorted(
            [a, b] for (a, b) in self._boundary_edges
            if a < self._nroot_verts and b < self._nroot_verts)
        data = {
            "format": "scfem-mesh/1",
            "vertices": [[float(x), float(y)] for x, y in self._verts],
            "triangles": [list(t) for t in self._tri_verts],
            "parents": list(self._parent),
            "boundary_edges": root_boundary,
            "root_counts": [self._nroot_verts, self._nroot_tris],
        }
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "Triangulation":
        data = json.loads(text)
        if data.get("format") != "scfem-mesh/1":
            raise ContractViolationError("unrecognized mesh format")
        nroot_verts, nroot_tris = data["root_counts"]
        tri_verts = [tuple(t) for t in data["triangles"]]
        parents = list(data["parents"])
        root_verts = np.array(data["vertices"][:nroot_verts], dtype=float)
        root = cls.from_arrays(root_verts, [tri_verts[i] for i in range(nroot_tris)])
        # re-apply bisections in the original allocation order: each bisection
        # appended its two children consecutively, so sorting parents by their
        # first child id reproduces the forest ids exactly
        f = _Forest.thaw(root)
        by_parent: dict = {}
        for i, p in enumerate(parents):
            if p >= 0:
                by_parent.setdefault(p, []).append(i)
        for p in sorted(by_parent, key=lambda q: min(by_parent[q])):
            f.bisect(p)
        out = cls(f, nroot_verts, nroot_tris, root._root_signature)
        if [list(t) for t in out._tri_verts] != [list(t) for t in tri_verts]:
            raise ContractViolationError("mesh payload is not a valid forest")
        np.testing.assert_allclose(out._verts, np.array(data["vertices"]),
                                   rtol=0, atol=0)
        return out


# -------------------------------------------------------------- operations


def initial_mesh(domain: str, resolution: int) -> Triangulation:
    """Structured right-triangle root mesh of a named domain.

    Supported tags: ``"unit-square"`` ((0,1)^2), ``"l-shape"``
    ((-1,1)^2 minus the closed lower-left quadrant), ``"scaled-square"``
    ((-4,4)^2).  ``resolution`` counts cells per unit edge for the L-shape
    and cells per side otherwise; each square cell is split along its
    diagonal, which is also the initial refinement edge.
    """
    resolution = int(resolution)
    if resolution < 1:
        raise ContractViolationError("resolution must be >= 1")
    if domain == "unit-square":
        return _square_mesh(0.0, 1.0, resolution)
    if domain == "scaled-square":
        return _square_mesh(-4.0, 4.0, resolution)
    if domain == "l-shape":
        return _l_shape_mesh(resolution)
    raise UnknownDomainError(f"unknown domain tag {domain!r}")


def _square_mesh(lo: float, hi: float, n: int) -> Triangulation:
    xs = np.linspace(lo, hi, n + 1)
    vid = {}
    verts = []
    for j in range(n + 1):
        for i in range(n + 1):
            vid[(i, j)] = len(verts)
            verts.append((xs[i], xs[j]))
    tris = []
    for j in range(n):
        for i in range(n):
            bl, br = vid[(i, j)], vid[(i + 1, j)]
            tr, tl = vid[(i + 1, j + 1)], vid[(i, j + 1)]
            tris.append((bl, br, tr))
            tris.append((bl, tr, tl))
    return Triangulation.from_arrays(np.array(verts), np.array(tris))


def _l_shape_mesh(n: int) -> Triangulation:
    xs = np.linspace(-1.0, 1.0, 2 * n + 1)
    keep = {}
    verts = []
    for j in range(2 * n + 1):
        for i in range(2 * n + 1):
            if xs[i] < 0.0 and xs[j] < 0.0:
                continue  # interior of the removed quadrant
            keep[(i, j)] = len(verts)
            verts.append((xs[i], xs[j]))
    tris = []
    for j in range(2 * n):
        for i in range(2 * n):
            if i < n and j < n:
                continue  # removed cells
            bl, br = keep[(i, j)], keep[(i + 1, j)]
            tr, tl = keep[(i + 1, j + 1)], keep[(i, j + 1)]
            tris.append((bl, br, tr))
            tris.append((bl, tr, tl))
    return Triangulation.from_arrays(np.array(verts), np.array(tris))


def interior_midpoints(mesh: Triangulation) -> list[EdgeMidpoint]:
    """Midpoint records of all interior leaf edges, sorted by edge ids."""
    out = []
    for e, holders in sorted(mesh._leaf_edge_map().items()):
        if len(holders) != 2:
            continue
        a, b = e
        mid = (mesh._verts[a] + mesh._verts[b]) / 2.0
        out.append(EdgeMidpoint(edge=e, midpoint=(float(mid[0]), float(mid[1])),
                                triangles=tuple(sorted(holders))))
    return out


def refine(mesh: Triangulation, marked: Sequence[EdgeMidpoint]) -> Triangulation:
    """Functional form of :meth:`Triangulation.refine`."""
    return mesh.refine(marked)


def uniform_refine(mesh: Triangulation) -> Triangulation:
    """Functional form of :meth:`Triangulation.uniform_refine`."""
    return mesh.uniform_refine()


def overlay(a: Triangulation, b: Triangulation) -> Triangulation:
    """Coarsest common refinement: the union of the two bisection forests.

    Both meshes must descend from the same root mesh.  The union of two
    conforming bisection forests is conforming, so no closure is applied.
    """
    a._check_same_root(b)
    f = _Forest.thaw(a)
    # walk b's forest alongside the builder; bisect wherever b did
    stack = list(zip(range(a._nroot_tris - 1, -1, -1),
                     range(a._nroot_tris - 1, -1, -1)))
    while stack:
        nb_b, nb_f = stack.pop()
        kids_b = b._children[nb_b]
        if kids_b is None:
            continue
        kids_f = f.children[nb_f]
        if kids_f is None:
            kids_f = f.bisect(nb_f)
        stack.append((kids_b[1], kids_f[1]))
        stack.append((kids_b[0], kids_f[0]))
    return Triangulation(f, a._nroot_verts, a._nroot_tris, a._root_signature)


def _structural_vertex_map(source: Triangulation, target: Triangulation) -> np.ndarray:
    """Map source vertex ids to target vertex ids by walking both forests.

    Raises if the target forest does not contain every source bisection.
    """
    vmap = np.full(source.num_vertices, -1, dtype=int)
    vmap[:source._nroot_verts] = np.arange(source._nroot_verts)
    stack = list(zip(range(source._nroot_tris - 1, -1, -1),
                     range(source._nroot_tris - 1, -1, -1)))
    while stack:
        ns, nt = stack.pop()
        kids_s = source._children[ns]
        if kids_s is None:
            continue
        kids_t = target._children[nt]
        if kids_t is None:
            raise ContractViolationError(
                "target mesh does not refine the source mesh")
        ms = source._tri_verts[kids_s[0]][2]
        mt = target._tri_verts[kids_t[0]][2]
        vmap[ms] = mt
        stack.append((kids_s[1], kids_t[1]))
        stack.append((kids_s[0], kids_t[0]))
    return vmap


def prolongate(values: np.ndarray, source: Triangulation,
               target: Triangulation) -> np.ndarray:
    """Transfer nodal values of a P1 function onto a refinement, exactly.

    Each target vertex either corresponds structurally to a source vertex or
    is the midpoint of an edge on which the source function is linear, so
    recursive midpoint averaging reproduces the function.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (source.num_vertices,):
        raise ContractViolationError(
            f"expected {source.num_vertices} nodal values, got {values.shape}")
    if source is target:
        return values.copy()
    source._check_same_root(target)
    vmap = _structural_vertex_map(source, target)
    if vmap.min() < 0:
        raise ContractViolationError("source mesh has unmapped vertices")
    out = np.full(target.num_vertices, np.nan)
    out[vmap] = values
    todo = np.isnan(out)
    for v in range(target.num_vertices):
        if todo[v]:
            a, b = target._vertex_parents[v]
            out[v] = 0.5 * (out[a] + out[b])
    return out
