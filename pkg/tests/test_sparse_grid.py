from fractions import Fraction

import numpy as np
import pytest

from scfem.errors import ContractViolationError, InvalidLevelError
from scfem.multiindex import MultiIndexSet
from scfem.sparse_grid import (
    CollocationPoint,
    SparseGridBasis,
    cc_keys,
    cc_node_count,
    cc_points,
    combination_coeffs,
    evaluate_lagrange,
    generated_points,
    grid_points,
    interpolate,
    lagrange_gram,
    lagrange_norm,
)

from util import random_monotone_set


# ---------------------------------------------------------------- 1D nodes

def test_node_counts():
    assert [cc_node_count(l) for l in (1, 2, 3, 4, 5)] == [1, 3, 5, 9, 17]
    with pytest.raises(InvalidLevelError):
        cc_node_count(0)


def test_cc_points_first_levels():
    assert cc_points(1).tolist() == [0.0]
    assert cc_points(2).tolist() == [-1.0, 0.0, 1.0]
    r = np.sqrt(2.0) / 2.0
    np.testing.assert_allclose(cc_points(3), [-1.0, -r, 0.0, r, 1.0], atol=1e-15)
    assert cc_points(3)[2] == 0.0  # exact center


def test_cc_points_sorted_and_symmetric():
    for l in range(1, 7):
        pts = cc_points(l)
        assert np.all(np.diff(pts) > 0)
        np.testing.assert_array_equal(pts, -pts[::-1])  # exact antisymmetry


def test_nestedness_via_keys():
    for l in range(1, 6):
        assert set(cc_keys(l)) <= set(cc_keys(l + 1))
        # identical floating-point coordinates for shared keys
        fine = {k: x for k, x in zip(cc_keys(l + 1), cc_points(l + 1))}
        for k, x in zip(cc_keys(l), cc_points(l)):
            assert fine[k] == x


# ------------------------------------------------------------- point sets

def P(*coords):
    """Shorthand: the grid point with the given coordinates, via exact keys."""
    lut = {-1.0: Fraction(1), 1.0: Fraction(0), 0.0: Fraction(1, 2)}
    key = []
    for c in coords:
        if c in lut:
            key.append(lut[c])
        else:
            raise AssertionError("only lattice coordinates supported here")
    return CollocationPoint.from_key(key)


def test_grid_points_examples():
    root = MultiIndexSet([(1, 1)])
    assert [z.coords for z in grid_points(root)] == [(0.0, 0.0)]
    s = MultiIndexSet([(1, 1), (2, 1)])
    got = {z.coords for z in grid_points(s)}
    assert got == {(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)}


def test_grid_points_1d_chain():
    s = MultiIndexSet([(1,), (2,), (3,)])
    coords = [z.coords[0] for z in grid_points(s)]
    assert len(coords) == 5
    r = np.sqrt(2.0) / 2.0
    np.testing.assert_allclose(sorted(coords), [-1.0, -r, 0.0, r, 1.0], atol=1e-15)


def test_grid_points_deterministic_order():
    s = MultiIndexSet([(1, 1), (2, 1), (1, 2), (2, 2)])
    a = [z.key for z in grid_points(s)]
    b = [z.key for z in grid_points(s)]
    assert a == b == sorted(a)


def test_generated_points_examples():
    root = MultiIndexSet([(1, 1)])
    new = generated_points(root, (2, 1))
    assert {z.coords for z in new} == {(-1.0, 0.0), (1.0, 0.0)}
    s = MultiIndexSet([(1, 1), (2, 1)])
    new = generated_points(s, (3, 1))
    r = np.sqrt(2.0) / 2.0
    got = sorted(z.coords for z in new)
    np.testing.assert_allclose(got, [(-r, 0.0), (r, 0.0)], atol=1e-15)


def test_generated_points_rejects_non_margin_index():
    with pytest.raises(ContractViolationError):
        generated_points(MultiIndexSet([(1, 1)]), (3, 1))
    with pytest.raises(ContractViolationError):
        generated_points(MultiIndexSet([(1, 1)]), (1, 1))


def test_point_equality_is_exact():
    a = CollocationPoint.from_key([Fraction(1, 2), Fraction(0)])
    b = CollocationPoint.from_key([Fraction(1, 2), Fraction(0)])
    c = CollocationPoint.from_key([Fraction(1, 2), Fraction(1)])
    assert a == b and hash(a) == hash(b) and a != c


# --------------------------------------------------- combination technique

def test_combination_coeffs_examples():
    assert combination_coeffs(MultiIndexSet([(1, 1)])) == {(1, 1): 1}
    got = combination_coeffs(MultiIndexSet([(1, 1), (2, 1), (1, 2)]))
    assert got == {(1, 1): -1, (2, 1): 1, (1, 2): 1}


def test_combination_coeffs_sum_to_one():
    rng = np.random.default_rng(5)
    for dim in (1, 2, 3, 4):
        for _ in range(25):
            s = random_monotone_set(rng, dim, int(rng.integers(0, 10)))
            assert sum(combination_coeffs(s).values()) == 1


def test_full_box_collapses_to_single_term():
    s = MultiIndexSet([(i, j) for i in (1, 2, 3) for j in (1, 2)])
    assert combination_coeffs(s) == {(3, 2): 1}


# ---------------------------------------------------------------- basis

def test_single_point_basis_is_constant_one():
    b = SparseGridBasis(MultiIndexSet.root(2))
    rng = np.random.default_rng(0)
    for _ in range(10):
        y = rng.uniform(-1, 1, size=2)
        np.testing.assert_allclose(b.lagrange_weights(y), [1.0], atol=1e-14)


def test_evaluate_lagrange_1d_example():
    # With levels {1, 2} the combination collapses to the 3-node rule and the
    # center basis function is 1 - y^2.
    b = SparseGridBasis(MultiIndexSet([(1,), (2,)]))
    z = P(0.0)
    assert evaluate_lagrange(b, z, [0.5]) == pytest.approx(0.75, abs=1e-14)
    ys = np.linspace(-1, 1, 17)
    for y in ys:
        assert evaluate_lagrange(b, z, [y]) == pytest.approx(1 - y * y, abs=1e-13)


def test_interpolate_1d_example():
    b = SparseGridBasis(MultiIndexSet([(1,), (2,)]))
    values = {z: z.coords[0] ** 2 for z in b.points}
    assert interpolate(b, values, [0.5]) == pytest.approx(0.25, abs=1e-14)


def test_delta_property():
    rng = np.random.default_rng(19)
    for dim in (1, 2, 3):
        for _ in range(8):
            s = random_monotone_set(rng, dim, int(rng.integers(0, 8)))
            b = SparseGridBasis(s)
            n = len(b.points)
            mat = np.array([b.lagrange_weights(z.coords) for z in b.points])
            np.testing.assert_allclose(mat, np.eye(n), atol=1e-10)


def test_partition_of_unity():
    rng = np.random.default_rng(23)
    s = random_monotone_set(rng, 3, 7)
    b = SparseGridBasis(s)
    for _ in range(20):
        y = rng.uniform(-1, 1, size=3)
        assert np.sum(b.lagrange_weights(y)) == pytest.approx(1.0, abs=1e-12)


def test_polynomial_exactness_on_full_box():
    # The set {nu <= (3, 2)} spans tensor polynomials of degree (4, 2).
    s = MultiIndexSet([(i, j) for i in (1, 2, 3) for j in (1, 2)])
    b = SparseGridBasis(s)

    def f(y):
        return y[0] ** 3 * y[1] ** 2 - 2.0 * y[0] * y[1] + 0.5

    values = {z: f(z.coords) for z in b.points}
    rng = np.random.default_rng(29)
    for _ in range(50):
        y = rng.uniform(-1, 1, size=2)
        assert interpolate(b, values, y) == pytest.approx(f(y), abs=1e-10)


def test_interpolate_validates_values():
    b = SparseGridBasis(MultiIndexSet([(1,), (2,)]))
    with pytest.raises(ContractViolationError):
        b.interpolate(np.zeros(2), [0.0])
    with pytest.raises(ContractViolationError):
        b.interpolate({b.points[0]: 1.0}, [0.0])


# ---------------------------------------------------------------- gram

def test_gram_1d_example():
    # Basis function at the center is 1 - y^2; its squared L2_pi norm is
    # (1/2) * int_{-1}^{1} (1 - y^2)^2 dy = 8/15.
    b = SparseGridBasis(MultiIndexSet([(1,), (2,)]))
    z = P(0.0)
    g = b.gram([z])
    assert g[0, 0] == pytest.approx(8.0 / 15.0, abs=1e-14)
    assert lagrange_norm(b, z) == pytest.approx(np.sqrt(8.0 / 15.0), abs=1e-12)


def test_gram_symmetric_psd():
    rng = np.random.default_rng(31)
    for dim in (1, 2, 3):
        s = random_monotone_set(rng, dim, 6)
        b = SparseGridBasis(s)
        g = lagrange_gram(b)
        np.testing.assert_allclose(g, g.T, atol=1e-14)
        eigs = np.linalg.eigvalsh(g)
        assert eigs.min() >= -1e-10


def test_gram_matches_monte_carlo():
    s = MultiIndexSet([(1, 1), (2, 1), (1, 2), (2, 2)])
    b = SparseGridBasis(s)
    g = lagrange_gram(b)
    rng = np.random.default_rng(7)  # fixed seed keeps the 3-sigma bound deterministic
    n = 200_000
    ys = rng.uniform(-1, 1, size=(n, 2))
    w = np.array([b.lagrange_weights(y) for y in ys])
    prods = np.einsum("ni,nj->nij", w, w)
    mean = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - g) <= 3.0 * se + 1e-12)


def test_norms_match_gram_diagonal():
    rng = np.random.default_rng(37)
    s = random_monotone_set(rng, 2, 6)
    b = SparseGridBasis(s)
    g = lagrange_gram(b)
    np.testing.assert_allclose(b.norms(), np.sqrt(np.diag(g)), atol=1e-12)


def test_gram_subset_consistency():
    s = MultiIndexSet([(1, 1), (2, 1), (1, 2)])
    b = SparseGridBasis(s)
    sub = b.points[1:3]
    g_full = b.gram()
    g_sub = b.gram(sub)
    np.testing.assert_allclose(g_sub, g_full[1:3, 1:3], atol=1e-14)


def test_gram_rejects_foreign_points():
    b = SparseGridBasis(MultiIndexSet.root(2))
    alien = CollocationPoint.from_key([Fraction(0), Fraction(0)])
    with pytest.raises(ContractViolationError):
        b.gram([alien])
