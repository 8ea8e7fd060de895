import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_symmetric
from hdlaplace.tensor_core import (
    MAX_ORDER,
    EnumerationTooLarge,
    MultiIndex,
    SymTensor,
    WeightMatrix,
    contract,
    count_multi_indices,
    enumerate_multi_indices,
    gaussian_moment,
    operator_norm,
    pushforward_jet,
)


def dense_contract(A, x):
    """Plain loop over every index tuple."""
    k = A.ndim
    total = 0.0
    for idx in itertools.product(range(len(x)), repeat=k):
        term = A[idx]
        for i in idx:
            term *= x[i]
        total += term
    return total


# -- multi-indices -----------------------------------------------------------

def test_enumeration_small_cases():
    assert enumerate_multi_indices(2, 3) == [(3, 0), (2, 1), (1, 2), (0, 3)]
    assert enumerate_multi_indices(1, 5) == [(5,)]
    assert len(enumerate_multi_indices(3, 2)) == 6


@given(st.integers(1, 5), st.integers(0, 6))
def test_enumeration_count_and_order(d, m):
    alphas = enumerate_multi_indices(d, m)
    assert len(alphas) == math.comb(m + d - 1, d - 1) == count_multi_indices(d, m)
    assert len(set(alphas)) == len(alphas)
    assert all(sum(a) == m for a in alphas)
    assert alphas == sorted(alphas, reverse=True)


def test_size_caps():
    with pytest.raises(EnumerationTooLarge):
        SymTensor.zeros(MAX_ORDER + 1, 2)
    with pytest.raises(EnumerationTooLarge):
        enumerate_multi_indices(40, 12)


def test_multiindex_helpers():
    a = MultiIndex((4, 0, 2))
    assert a.order == 6 and a.dim == 3
    assert a.factorial() == 48
    assert a.double_factorial_shifted() == 3
    assert a.is_even()
    assert not MultiIndex((1, 2)).is_even()
    with pytest.raises(ValueError):
        MultiIndex((1, -1))


def test_gaussian_moment_examples():
    assert gaussian_moment((2, 0)) == 1
    assert gaussian_moment((1, 1)) == 0
    assert gaussian_moment((4, 2)) == 3


def test_gaussian_moment_against_sampling():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((10**6, 3))
    for alpha in [(2, 2, 0), (4, 0, 2), (6, 0, 0), (2, 2, 4), (1, 1, 2)]:
        vals = np.prod(Z ** np.array(alpha), axis=1)
        se = vals.std() / math.sqrt(len(vals))
        assert abs(vals.mean() - gaussian_moment(alpha)) < 5 * se


# -- contraction ---------------------------------------------------------------

def test_contract_examples():
    T = SymTensor.from_entries(3, 2, {(3, 0): 1}, exact=True)
    assert contract(T, np.array([2, 5])) == 8
    T0 = SymTensor(0, 4, [2.5])
    assert contract(T0, np.arange(4.0)) == 2.5


def test_contract_matches_dense_loop():
    T = random_symmetric(3, 4, seed=1)
    x = np.random.default_rng(2).standard_normal(3)
    ref = dense_contract(T.to_dense(), x)
    assert contract(T, x) == pytest.approx(ref, rel=1e-12)


def test_contract_exact_integer_input():
    T = SymTensor.from_entries(2, 2, {(2, 0): Fraction(1, 3), (1, 1): Fraction(1, 2)}, exact=True)
    val = contract(T, np.array([1, 2]))
    assert val == Fraction(1, 3) + 2 * Fraction(1, 2) * 2
    assert isinstance(val, Fraction)


def test_contract_dimension_mismatch():
    with pytest.raises(ValueError):
        contract(SymTensor.zeros(2, 3), np.ones(2))


def test_lookup_is_permutation_invariant():
    T = random_symmetric(3, 3, seed=4)
    D = T.to_dense()
    for idx in itertools.permutations((0, 1, 2)):
        assert T[idx] == pytest.approx(D[idx])
    assert T[(0, 0, 2)] == T[(2, 0, 0)] == T[(0, 2, 0)]


def test_json_round_trip_exact_and_float():
    T = SymTensor.from_entries(3, 2, {(2, 1): Fraction(-7, 3), (0, 3): 4}, exact=True)
    assert SymTensor.from_json(T.to_json()) == T
    F = random_symmetric(2, 3, seed=5)
    back = SymTensor.from_json(F.to_json())
    assert np.array_equal(np.asarray(back.values), np.asarray(F.values))


# -- weights and norms ---------------------------------------------------------

def test_weight_matrix_inverse_sqrt():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((4, 4))
    H = A @ A.T + 4 * np.eye(4)
    W = WeightMatrix(H)
    assert np.allclose(W.inv_sqrt @ H @ W.inv_sqrt, np.eye(4), atol=1e-10)
    with pytest.raises(ValueError):
        WeightMatrix(-np.eye(2))


def test_operator_norm_closed_forms():
    I3 = SymTensor.from_dense(np.eye(3))
    assert operator_norm(I3) == pytest.approx(1.0)
    g = SymTensor(1, 1, [2.0])
    assert operator_norm(g, WeightMatrix(np.array([[4.0]]))) == pytest.approx(1.0)


def test_operator_norm_matches_angular_grid():
    T = random_symmetric(2, 3, seed=7)
    theta = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    grid = max(abs(contract(T, np.array([math.cos(t), math.sin(t)]))) for t in theta)
    lower, upper = operator_norm(T, method="grid")
    ascent = operator_norm(T)
    assert ascent == pytest.approx(lower, abs=1e-6)
    assert grid <= lower + 1e-12 <= upper + 1e-12
    assert abs(ascent - grid) < 1e-3 * grid


@pytest.mark.parametrize("k", [3, 4, 5])
def test_operator_norm_rank_one(k):
    u = np.random.default_rng(k).standard_normal(4)
    T = SymTensor.from_dense(np.einsum(",".join("abcde"[:k]) + "->" + "abcde"[:k], *([u] * k)))
    assert operator_norm(T) == pytest.approx(np.linalg.norm(u) ** k, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_operator_norm_below_frobenius(d, seed):
    T = random_symmetric(d, 3, seed=seed)
    op = operator_norm(T, starts=8)
    fro = T.frobenius_norm()
    assert op <= fro + 1e-9
    assert fro <= d * op + 1e-9


# -- pushforward ---------------------------------------------------------------

def test_pushforward_identity_and_hessian():
    T = random_symmetric(3, 3, seed=8)
    assert pushforward_jet(T, WeightMatrix.identity(3)) is T
    rng = np.random.default_rng(9)
    A = rng.standard_normal((3, 3))
    H = A @ A.T + np.eye(3)
    S = pushforward_jet(SymTensor.from_dense(H), WeightMatrix(H))
    assert np.allclose(S.to_dense(), np.eye(3), atol=1e-10)


def test_pushforward_matches_finite_differences():
    rng = np.random.default_rng(10)
    T = random_symmetric(2, 3, seed=11)
    A = rng.standard_normal((2, 2))
    W = WeightMatrix(A @ A.T + np.eye(2))
    S = pushforward_jet(T, W)

    def cubic(y):
        return contract(T, W.inv_sqrt @ y) / 6

    h = 1e-3
    for i, j, k in [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)]:
        est = 0.0
        for si, sj, sk in itertools.product((1, -1), repeat=3):
            y = np.zeros(2)
            y[i] += si * h / 2
            y[j] += sj * h / 2
            y[k] += sk * h / 2
            est += si * sj * sk * cubic(y)
        assert est / h**3 == pytest.approx(S[(i, j, k)], abs=1e-4)
