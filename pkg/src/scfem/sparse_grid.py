r"""Sparse-grid collocation on nested Clenshaw--Curtis points.

One-based level :math:`\nu` carries :math:`m(1)=1` and
:math:`m(\nu)=2^{\nu-1}+1` nodes on ``[-1, 1]``; level one uses the single
node ``0`` and higher levels use the extrema :math:`\cos(k\pi/(m-1))`.
Because the node families are nested, a point is identified across levels by
the exact rational angle fraction :math:`t = k/(m-1)` rather than by its
floating-point coordinate; two collocation points are equal iff their key
tuples are equal.

A monotone multi-index set ``S`` induces the combination-technique
interpolant

.. math:: u(y) \approx \sum_{\nu} c_\nu (I_{\nu} u)(y),
          \qquad c_\nu = \sum_{e \in \{0,1\}^M,\ \nu+e \in S} (-1)^{|e|},

whose node set is the union grid :math:`C_S`.  The induced Lagrange basis
functions ``L_z`` (one per grid point), their evaluation, and their exact
:math:`L^2_\pi` Gram matrices under the uniform product measure on
``[-1, 1]^M`` live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolationError, InvalidLevelError
from .multiindex import Index, MultiIndexSet

__all__ = [
    "cc_node_count", "cc_points", "cc_keys", "CollocationPoint",
    "grid_points", "generated_points", "combination_coeffs",
    "SparseGridBasis", "evaluate_lagrange", "interpolate",
    "lagrange_gram", "lagrange_norm",
]


def cc_node_count(level: int) -> int:
    """Number of Clenshaw--Curtis nodes at a one-based level."""
    level = int(level)
    if level < 1:
        raise InvalidLevelError(f"level must be >= 1, got {level}")
    return 1 if level == 1 else 2 ** (level - 1) + 1


def _coord(t: Fraction) -> float:
    # cos(pi*t) written as sin(pi*(1/2 - t)): exact 0.0/+-1.0 at the special
    # fractions and exactly antisymmetric under t -> 1-t.
    return float(np.sin(np.pi * (0.5 - float(t))))


@lru_cache(maxsize=None)
def cc_keys(level: int) -> tuple[Fraction, ...]:
    """Exact angle fractions of the level's nodes, ascending in coordinate."""
    m = cc_node_count(level)
    if m == 1:
        return (Fraction(1, 2),)
    return tuple(Fraction(k, m - 1) for k in range(m - 1, -1, -1))


@lru_cache(maxsize=None)
def cc_points(level: int) -> np.ndarray:
    """Clenshaw--Curtis nodes at a level, sorted ascending."""
    pts = np.array([_coord(t) for t in cc_keys(level)])
    pts.flags.writeable = False
    return pts


def _key_in_level(t: Fraction, level: int) -> bool:
    if level == 1:
        return t == Fraction(1, 2)
    return 0 <= t <= 1 and (2 ** (level - 1)) % t.denominator == 0


@lru_cache(maxsize=None)
def _node_positions(level: int) -> dict:
    return {t: i for i, t in enumerate(cc_keys(level))}


@lru_cache(maxsize=None)
def _bary_weights(level: int) -> np.ndarray:
    x = cc_points(level)
    m = len(x)
    w = np.ones(m)
    for j in range(m):
        diff = x[j] - x
        diff[j] = 1.0
        w[j] = 1.0 / np.prod(diff)
    w /= np.max(np.abs(w))
    w.flags.writeable = False
    return w


def _cardinal_values(level: int, y: float) -> np.ndarray:
    """Values of all Lagrange cardinal polynomials of one level at ``y``."""
    x = cc_points(level)
    if len(x) == 1:
        return np.ones(1)
    diff = y - x
    hit = np.nonzero(diff == 0.0)[0]
    out = np.zeros(len(x))
    if hit.size:
        out[hit[0]] = 1.0
        return out
    ratios = _bary_weights(level) / diff
    return ratios / np.sum(ratios)


def _cardinal_matrix(level: int, ys: np.ndarray) -> np.ndarray:
    """(len(ys), m) matrix of cardinal values, rows indexed by sample."""
    return np.array([_cardinal_values(level, float(y)) for y in ys])


@lru_cache(maxsize=None)
def _gram1d(level_a: int, level_b: int) -> np.ndarray:
    """Pairwise integrals of two levels' cardinal polynomials, measure dy/2.

    Gauss--Legendre with max(m_a, m_b) nodes integrates the degree
    (m_a - 1) + (m_b - 1) products exactly.
    """
    ma, mb = cc_node_count(level_a), cc_node_count(level_b)
    n = max(ma, mb)
    xs, ws = np.polynomial.legendre.leggauss(n)
    va = _cardinal_matrix(level_a, xs)
    vb = _cardinal_matrix(level_b, xs)
    table = va.T @ (vb * (0.5 * ws)[:, None])
    table.flags.writeable = False
    return table


@dataclass(frozen=True, eq=False)
class CollocationPoint:
    """A sparse-grid node, identified exactly by its per-dimension keys."""

    key: tuple  # tuple[Fraction, ...]
    coords: tuple  # tuple[float, ...]

    @classmethod
    def from_key(cls, key: Sequence[Fraction]) -> "CollocationPoint":
        key = tuple(key)
        return cls(key=key, coords=tuple(_coord(t) for t in key))

    def __eq__(self, other) -> bool:
        return isinstance(other, CollocationPoint) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __lt__(self, other) -> bool:
        return self.key < other.key

    def __repr__(self) -> str:
        coords = ", ".join(f"{c:.6g}" for c in self.coords)
        return f"CollocationPoint({coords})"


def _tensor_keys(nu: Index) -> list[tuple]:
    axes = [cc_keys(l) for l in nu]
    return [k for k in product(*axes)]


def _grid_key_set(index_set: MultiIndexSet) -> set:
    keys: set = set()
    for nu in index_set:
        keys.update(_tensor_keys(nu))
    return keys


def grid_points(index_set: MultiIndexSet) -> list[CollocationPoint]:
    """All collocation points of a monotone index set, sorted by key."""
    if not isinstance(index_set, MultiIndexSet):
        index_set = MultiIndexSet(index_set)
    return [CollocationPoint.from_key(k) for k in sorted(_grid_key_set(index_set))]


def generated_points(index_set: MultiIndexSet, nu: Index) -> list[CollocationPoint]:
    """Points a reduced-margin index would add to the grid, sorted by key.

    ``nu`` must lie in the reduced margin of ``index_set``.
    """
    if not isinstance(index_set, MultiIndexSet):
        index_set = MultiIndexSet(index_set)
    nu = tuple(int(v) for v in nu)
    if nu not in index_set.reduced_margin():
        raise ContractViolationError(f"{nu} is not in the reduced margin")
    existing = _grid_key_set(index_set)
    fresh = set(_tensor_keys(nu)) - existing
    return [CollocationPoint.from_key(k) for k in sorted(fresh)]


def combination_coeffs(index_set: MultiIndexSet) -> dict:
    """Nonzero combination-technique coefficients of a monotone set.

    The inclusion--exclusion coefficients always sum to one.
    """
    if not isinstance(index_set, MultiIndexSet):
        index_set = MultiIndexSet(index_set)
    pool = set(index_set)
    coeffs: dict = {}
    for nu in index_set:
        c = 0
        for e in product((0, 1), repeat=index_set.dim):
            shifted = tuple(n + d for n, d in zip(nu, e))
            if shifted in pool:
                c += (-1) ** sum(e)
        if c != 0:
            coeffs[nu] = c
    return coeffs


class SparseGridBasis:
    """Lagrange basis of the combination-technique interpolant of one set.

    Precomputes, per nonzero combination term, the positions of its tensor
    grid inside the global point list; evaluation and Gram assembly then
    reduce to small gather/product operations.
    """

    def __init__(self, index_set: MultiIndexSet):
        if not isinstance(index_set, MultiIndexSet):
            index_set = MultiIndexSet(index_set)
        self.index_set = index_set
        self.dim = index_set.dim
        self.points = grid_points(index_set)
        self._pos = {z.key: i for i, z in enumerate(self.points)}
        self.combo = combination_coeffs(index_set)
        self._terms = []
        for nu, c in sorted(self.combo.items()):
            keys = _tensor_keys(nu)
            pos = np.array([self._pos[k] for k in keys], dtype=np.intp)
            node_idx = np.array(
                [[_node_positions(l)[t] for l, t in zip(nu, k)] for k in keys],
                dtype=np.intp,
            )
            self._terms.append((nu, c, pos, node_idx))

    def __len__(self) -> int:
        return len(self.points)

    def point_position(self, z: CollocationPoint) -> int:
        try:
            return self._pos[z.key]
        except KeyError:
            raise ContractViolationError(f"{z!r} is not a grid point") from None

    def lagrange_weights(self, y: Sequence[float]) -> np.ndarray:
        """Values of every basis function at ``y``, ordered like ``points``."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ContractViolationError(
                f"expected a point of dimension {self.dim}, got shape {y.shape}")
        w = np.zeros(len(self.points))
        cards: dict = {}
        for nu, c, pos, node_idx in self._terms:
            vals = np.ones(len(pos))
            for m, level in enumerate(nu):
                if (level, m) not in cards:
                    cards[(level, m)] = _cardinal_values(level, float(y[m]))
                vals *= cards[(level, m)][node_idx[:, m]]
            np.add.at(w, pos, c * vals)
        return w

    def interpolate(self, values, y: Sequence[float]) -> float:
        """Evaluate the interpolant with the given nodal values at ``y``."""
        return float(self.lagrange_weights(y) @ self._value_vector(values))

    def _value_vector(self, values) -> np.ndarray:
        if isinstance(values, Mapping):
            try:
                return np.array([values[z] for z in self.points], dtype=float)
            except KeyError as missing:
                raise ContractViolationError(
                    f"values missing for grid point {missing.args[0]!r}") from None
        arr = np.asarray(values, dtype=float)
        if arr.shape != (len(self.points),):
            raise ContractViolationError(
                f"expected {len(self.points)} nodal values, got shape {arr.shape}")
        return arr

    def _membership(self, pts: Sequence[CollocationPoint]):
        """Per combination term: subset positions and node indices of members."""
        out = []
        for nu, c, _, _ in self._terms:
            rows, node_idx = [], []
            for i, z in enumerate(pts):
                if all(_key_in_level(t, l) for t, l in zip(z.key, nu)):
                    rows.append(i)
                    node_idx.append([_node_positions(l)[t]
                                     for l, t in zip(nu, z.key)])
            out.append((nu, c, np.array(rows, dtype=np.intp),
                        np.array(node_idx, dtype=np.intp).reshape(len(rows), self.dim)))
        return out

    def gram(self, subset: Sequence[CollocationPoint] | None = None) -> np.ndarray:
        """Exact Gram matrix of basis functions under the uniform measure.

        ``subset`` restricts rows and columns to the given grid points
        (default: all of them, in point order).
        """
        pts = list(self.points if subset is None else subset)
        for z in pts:
            self.point_position(z)
        members = self._membership(pts)
        g = np.zeros((len(pts), len(pts)))
        for nu_a, ca, rows_a, idx_a in members:
            if not len(rows_a):
                continue
            for nu_b, cb, rows_b, idx_b in members:
                if not len(rows_b):
                    continue
                block = np.full((len(rows_a), len(rows_b)), float(ca * cb))
                for m in range(self.dim):
                    table = _gram1d(nu_a[m], nu_b[m])
                    block *= table[np.ix_(idx_a[:, m], idx_b[:, m])]
                g[np.ix_(rows_a, rows_b)] += block
        return 0.5 * (g + g.T)

    def norms(self, subset: Sequence[CollocationPoint] | None = None) -> np.ndarray:
        """L2 norms of basis functions; diagonal of :meth:`gram` only."""
        pts = list(self.points if subset is None else subset)
        for z in pts:
            self.point_position(z)
        members = self._membership(pts)
        diag = np.zeros(len(pts))
        for nu_a, ca, rows_a, idx_a in members:
            if not len(rows_a):
                continue
            set_a = {int(r): k for k, r in enumerate(rows_a)}
            for nu_b, cb, rows_b, idx_b in members:
                common = [(set_a[int(r)], k, int(r))
                          for k, r in enumerate(rows_b) if int(r) in set_a]
                if not common:
                    continue
                ia = np.array([c[0] for c in common], dtype=np.intp)
                ib = np.array([c[1] for c in common], dtype=np.intp)
                rows = np.array([c[2] for c in common], dtype=np.intp)
                vals = np.full(len(common), float(ca * cb))
                for m in range(self.dim):
                    table = _gram1d(nu_a[m], nu_b[m])
                    vals *= table[idx_a[ia, m], idx_b[ib, m]]
                np.add.at(diag, rows, vals)
        return np.sqrt(np.maximum(diag, 0.0))


def evaluate_lagrange(basis: SparseGridBasis, z: CollocationPoint,
                      y: Sequence[float]) -> float:
    """Value of the basis function attached to grid point ``z`` at ``y``."""
    return float(basis.lagrange_weights(y)[basis.point_position(z)])


def interpolate(basis: SparseGridBasis, values, y: Sequence[float]) -> float:
    """Evaluate the sparse-grid interpolant of nodal ``values`` at ``y``."""
    return basis.interpolate(values, y)


def lagrange_gram(basis: SparseGridBasis,
                  subset: Sequence[CollocationPoint] | None = None) -> np.ndarray:
    """Gram matrix of the basis under the uniform product measure."""
    return basis.gram(subset)


def lagrange_norm(basis: SparseGridBasis, z: CollocationPoint) -> float:
    """L2 norm of one basis function under the uniform product measure."""
    return float(basis.norms([z])[0])
