"""Monotone multi-index sets and their reduced margins.

A multi-index is a tuple of one-based integer levels, one per parametric
dimension.  A set ``S`` of multi-indices is monotone (downward closed) if for
every ``nu`` in ``S``, every backward neighbor ``nu - e_m`` with
``nu_m >= 2`` also lies in ``S``.  Monotone sets are exactly the admissible
supports of the sparse-grid interpolants built in :mod:`scfem.sparse_grid`,
and their reduced margins are the indices eligible for adaptive enrichment.
"""

from __future__ import annotations

import json
from typing import Iterable, Iterator

from .errors import ContractViolationError

Index = tuple  # tuple[int, ...], one-based levels


def _as_index(nu) -> Index:
    nu = tuple(int(v) for v in nu)
    if not nu:
        raise ContractViolationError("multi-index must have at least one entry")
    if any(v < 1 for v in nu):
        raise ContractViolationError(f"multi-index entries must be >= 1, got {nu}")
    return nu


def backward_neighbors(nu: Index) -> list[Index]:
    """All indices ``nu - e_m`` staying at level >= 1."""
    nu = _as_index(nu)
    out = []
    for m, v in enumerate(nu):
        if v > 1:
            out.append(nu[:m] + (v - 1,) + nu[m + 1:])
    return out


def forward_neighbors(nu: Index) -> list[Index]:
    """All indices ``nu + e_m``."""
    nu = _as_index(nu)
    return [nu[:m] + (nu[m] + 1,) + nu[m + 1:] for m in range(len(nu))]


def is_monotone(indices: Iterable[Index]) -> bool:
    """Whether a finite collection of multi-indices is downward closed.

    The empty collection is monotone; a nonempty monotone collection always
    contains the root index ``(1, ..., 1)``.
    """
    pool = {_as_index(nu) for nu in indices}
    if not pool:
        return True
    dims = {len(nu) for nu in pool}
    if len(dims) != 1:
        raise ContractViolationError("multi-indices must share one dimension")
    return all(mu in pool for nu in pool for mu in backward_neighbors(nu))


class MultiIndexSet:
    """An immutable monotone set of multi-indices of a fixed dimension."""

    __slots__ = ("indices", "dim")

    def __init__(self, indices: Iterable[Index], dim: int | None = None):
        pool = sorted({_as_index(nu) for nu in indices})
        if not pool:
            raise ContractViolationError("index set must be nonempty")
        dims = {len(nu) for nu in pool}
        if len(dims) != 1:
            raise ContractViolationError("multi-indices must share one dimension")
        d = dims.pop()
        if dim is not None and dim != d:
            raise ContractViolationError(f"expected dimension {dim}, got {d}")
        if not is_monotone(pool):
            raise ContractViolationError(f"index set is not downward closed: {pool}")
        object.__setattr__(self, "indices", tuple(pool))
        object.__setattr__(self, "dim", d)

    def __setattr__(self, name, value):
        raise AttributeError("MultiIndexSet is immutable")

    @classmethod
    def root(cls, dim: int) -> "MultiIndexSet":
        """The minimal set ``{(1, ..., 1)}``."""
        if dim < 1:
            raise ContractViolationError("dimension must be >= 1")
        return cls([(1,) * dim])

    def __contains__(self, nu) -> bool:
        try:
            nu = _as_index(nu)
        except ContractViolationError:
            return False
        return nu in set(self.indices)

    def __iter__(self) -> Iterator[Index]:
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndexSet) and self.indices == other.indices

    def __hash__(self) -> int:
        return hash(self.indices)

    def __repr__(self) -> str:
        return f"MultiIndexSet({list(self.indices)})"

    def max_level(self, m: int | None = None) -> int:
        """Largest level present, overall or in dimension ``m``."""
        if m is None:
            return max(max(nu) for nu in self.indices)
        return max(nu[m] for nu in self.indices)

    def union(self, extra: Iterable[Index]) -> "MultiIndexSet":
        """The set enlarged by ``extra``; the result must again be monotone."""
        return MultiIndexSet(list(self.indices) + [_as_index(nu) for nu in extra])

    def reduced_margin(self) -> tuple[Index, ...]:
        """Indices outside the set all of whose backward neighbors lie inside.

        These are exactly the indices whose addition keeps the set monotone,
        returned sorted lexicographically.  Never empty for a finite set.
        """
        pool = set(self.indices)
        candidates = {mu for nu in pool for mu in forward_neighbors(nu)} - pool
        reduced = [mu for mu in candidates
                   if all(lam in pool for lam in backward_neighbors(mu))]
        return tuple(sorted(reduced))

    def to_json(self) -> str:
        """Serialize as a JSON array of integer arrays, sorted."""
        return json.dumps([list(nu) for nu in self.indices])

    @classmethod
    def from_json(cls, text: str) -> "MultiIndexSet":
        data = json.loads(text)
        if not isinstance(data, list) or not all(isinstance(nu, list) for nu in data):
            raise ContractViolationError("expected a JSON array of integer arrays")
        return cls([tuple(nu) for nu in data])


def reduced_margin(indices) -> tuple[Index, ...]:
    """Reduced margin of a monotone collection (see ``MultiIndexSet``)."""
    if isinstance(indices, MultiIndexSet):
        return indices.reduced_margin()
    if not is_monotone(indices):
        raise ContractViolationError("reduced margin requires a monotone set")
    return MultiIndexSet(indices).reduced_margin()
