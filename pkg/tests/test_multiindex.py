import json

import numpy as np
import pytest

from scfem.errors import ContractViolationError
from scfem.multiindex import MultiIndexSet, is_monotone, reduced_margin

from util import all_monotone_sets_2d, brute_force_reduced_margin, random_monotone_set


def test_is_monotone_examples():
    assert is_monotone([])
    assert is_monotone([(1, 1)])
    assert is_monotone([(1, 1), (2, 1), (1, 2)])
    assert not is_monotone([(1, 1), (2, 2)])
    assert not is_monotone([(2, 1)])


def test_is_monotone_rejects_mixed_dimensions():
    with pytest.raises(ContractViolationError):
        is_monotone([(1, 1), (1, 1, 1)])


def test_constructor_validates():
    with pytest.raises(ContractViolationError):
        MultiIndexSet([(1, 1), (3, 1)])
    with pytest.raises(ContractViolationError):
        MultiIndexSet([])
    with pytest.raises(ContractViolationError):
        MultiIndexSet([(0, 1)])
    s = MultiIndexSet([(1, 1), (2, 1), (1, 2)])
    assert len(s) == 3 and (2, 1) in s and (2, 2) not in s


def test_root_and_union():
    s = MultiIndexSet.root(3)
    assert list(s) == [(1, 1, 1)]
    grown = s.union([(2, 1, 1)])
    assert (2, 1, 1) in grown and len(grown) == 2
    with pytest.raises(ContractViolationError):
        s.union([(3, 1, 1)])


def test_reduced_margin_of_root():
    assert reduced_margin([(1, 1)]) == ((1, 2), (2, 1))


def test_reduced_margin_filters_incomplete_neighbors():
    # (2, 2) has backward neighbor (1, 2) missing, so it is not reduced.
    s = MultiIndexSet([(1, 1), (2, 1)])
    assert s.reduced_margin() == ((1, 2), (3, 1))


def test_reduced_margin_requires_monotone_input():
    with pytest.raises(ContractViolationError):
        reduced_margin([(1, 1), (3, 1)])


def test_reduced_margin_matches_brute_force_1d():
    for top in range(1, 5):
        s = [(l,) for l in range(1, top + 1)]
        assert list(reduced_margin(s)) == brute_force_reduced_margin(s)


def test_reduced_margin_matches_brute_force_2d_exhaustive():
    # Every monotone subset of the 4x4 level box.
    for s in all_monotone_sets_2d(4):
        assert list(reduced_margin(s)) == brute_force_reduced_margin(s)


def test_reduced_margin_matches_brute_force_3d_sampled():
    rng = np.random.default_rng(7)
    for _ in range(150):
        s = random_monotone_set(rng, 3, int(rng.integers(0, 12)), level_cap=4)
        assert list(s.reduced_margin()) == brute_force_reduced_margin(s.indices)


def test_margin_additions_preserve_monotonicity():
    rng = np.random.default_rng(11)
    for dim in (1, 2, 3, 4):
        for _ in range(40):
            s = random_monotone_set(rng, dim, int(rng.integers(0, 9)))
            for nu in s.reduced_margin():
                assert is_monotone(list(s.indices) + [nu])


def test_reduced_margin_never_empty():
    rng = np.random.default_rng(3)
    for _ in range(30):
        s = random_monotone_set(rng, 2, int(rng.integers(0, 8)))
        assert len(s.reduced_margin()) >= 1


def test_json_round_trip():
    s = MultiIndexSet([(1, 1), (2, 1), (1, 2), (2, 2), (3, 1)])
    text = s.to_json()
    data = json.loads(text)
    assert data == sorted(data)  # deterministic lexicographic ordering
    assert MultiIndexSet.from_json(text) == s


def test_from_json_rejects_bad_payloads():
    with pytest.raises(ContractViolationError):
        MultiIndexSet.from_json('{"a": 1}')
    with pytest.raises(ContractViolationError):
        MultiIndexSet.from_json("[[2, 1]]")
