import math
from fractions import Fraction

import numpy as np
import pytest

from hdlaplace.bell import bell_partition_sum
from hdlaplace.coefficients import (
    EnumerationTooLarge,
    a2_closed_form,
    chi_eval,
    coeff_explicit,
    coeff_f1,
    coeff_mc,
    coefficient_csv,
    expansion_terms,
    random_jet,
)
from hdlaplace.problem import LocalJet, quartic_problem, standardize, stirling_problem
from hdlaplace.tensor_core import SymTensor


def dense_form(T, x):
    """<T, x^k> through the dense array."""
    A = np.asarray(T.astype_float().to_dense())
    for _ in range(T.order):
        A = A @ x
    return float(A)


def chi_direct(jet, k, x):
    """chi_k assembled term by term with dense contractions and the partition-sum Bell form."""
    s = [-dense_form(jet.v(j + 2), x) / ((j + 1) * (j + 2)) for j in range(1, k + 1)]
    return sum(math.comb(k, l) * dense_form(jet.f(k - l), x) * bell_partition_sum(l, s[:l])
               for l in range(k + 1))


def negate_odd(jet):
    flip = lambda T: T.scaled(-1) if T.order % 2 else T  # noqa: E731
    return LocalJet(tuple(flip(t) for t in jet.fjet), tuple(flip(t) for t in jet.vjet))


# -- explicit formula --------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_quartic_a2(d):
    jet = standardize(quartic_problem(d, 100.0), 1)
    assert coeff_explicit(jet, 2).value == -Fraction(d, 2) * (Fraction(d, 2) + 1) / 6


def test_quartic_d2_known_value():
    jet = standardize(quartic_problem(2, 64.0), 1)
    assert coeff_explicit(jet, 2).value == Fraction(-1, 3)


def test_stirling_a2_exact():
    jet = standardize(stirling_problem(50.0), 1)
    res = coeff_explicit(jet, 2)
    assert res.value == Fraction(1, 12)
    assert a2_closed_form(jet) == Fraction(1, 12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_odd_orders_vanish_exactly(k):
    jet = random_jet(3, 3, seed=k, exact=True)
    val = coeff_explicit(jet, k).value
    assert val == 0 and isinstance(val, Fraction)


def test_budget_error_mentions_mc():
    jet = random_jet(6, 4, seed=0)
    with pytest.raises(EnumerationTooLarge, match="coeff_mc"):
        coeff_explicit(jet, 8, budget=1000)


def test_parity_invariance_exact():
    jet = random_jet(2, 3, seed=4, exact=True)
    flipped = negate_odd(jet)
    for k in (2, 4):
        assert coeff_explicit(jet, k).value == coeff_explicit(flipped, k).value


# -- chi ------------------------------------------------------------------------------

def test_chi_low_orders():
    jet = random_jet(3, 2, seed=5)
    x = np.array([0.3, -1.2, 0.7])
    assert chi_eval(jet, 0, x) == pytest.approx(float(jet.f(0).values[0]))
    unit = jet.with_unit_f()
    assert chi_eval(unit, 1, x) == pytest.approx(-dense_form(jet.v(3), x) / 6)


def test_chi_matches_direct_assembly():
    jet = random_jet(2, 2, seed=6)
    rng = np.random.default_rng(7)
    for x in rng.standard_normal((10, 2)):
        assert chi_eval(jet, 4, x) == pytest.approx(chi_direct(jet, 4, x), rel=1e-12)
    X = rng.standard_normal((5, 2))
    assert np.allclose(chi_eval(jet, 4, X), [chi_direct(jet, 4, x) for x in X], rtol=1e-12)


# -- Monte Carlo -------------------------------------------------------------------------

def test_mc_quartic_a2():
    jet = standardize(quartic_problem(2, 64.0), 1)
    res = coeff_mc(jet, 2, samples=10**6, seed=1)
    assert abs(res.value + 1 / 3) < 4 * res.mc_stderr


def test_mc_trivial_jet_has_zero_variance():
    jet = random_jet(3, 2, seed=0).with_unit_f()
    zero = LocalJet(jet.fjet, tuple(SymTensor.zeros(t.order, 3) for t in jet.vjet))
    res = coeff_mc(zero, 2, samples=10**4)
    assert res.value == 0.0 and res.mc_stderr == 0.0


def test_mc_odd_order_is_zero():
    jet = random_jet(3, 2, seed=8)
    res = coeff_mc(jet, 3, samples=10**5, seed=2)
    assert abs(res.value) <= 4 * res.mc_stderr + 1e-15


def test_mc_seed_determinism():
    jet = random_jet(2, 2, seed=9)
    a = coeff_mc(jet, 4, samples=50_000, seed=3)
    b = coeff_mc(jet, 4, samples=50_000, seed=3)
    assert a.value == b.value and a.mc_stderr == b.mc_stderr


@pytest.mark.parametrize("d,k", [(2, 2), (3, 4), (2, 6)])
def test_mc_agrees_with_explicit(d, k):
    jet = random_jet(d, 3, seed=10 + d)
    ex = coeff_explicit(jet, k).value
    mc = coeff_mc(jet, k, samples=400_000, seed=d)
    assert abs(mc.value - ex) < 4 * mc.mc_stderr


# -- closed form and unit-f branch -----------------------------------------------------------

def test_a2_closed_form_matches_explicit():
    for seed in range(100):
        d = 1 + seed % 5
        jet = random_jet(d, 1, seed=seed)
        ex = coeff_explicit(jet, 2).value
        assert a2_closed_form(jet) == pytest.approx(ex, rel=1e-12, abs=1e-14)


def test_a2_one_dimensional_formula():
    a, b = Fraction(3, 2), Fraction(-5, 4)
    jet = LocalJet((SymTensor(0, 1, np.array([Fraction(1)], dtype=object)),
                    SymTensor.zeros(1, 1, exact=True), SymTensor.zeros(2, 1, exact=True)),
                   (SymTensor(3, 1, np.array([a], dtype=object)),
                    SymTensor(4, 1, np.array([b], dtype=object))))
    assert a2_closed_form(jet) == a * a * (Fraction(1, 12) + Fraction(1, 8)) - b / 8


def test_coeff_f1():
    jet = standardize(quartic_problem(4, 100.0), 1)
    assert coeff_f1(jet, 2).value == -1
    rnd = random_jet(2, 2, seed=11, exact=True)
    assert coeff_f1(rnd, 4).value == coeff_explicit(rnd.with_unit_f(), 4).value
    zero = LocalJet(rnd.fjet, tuple(SymTensor.zeros(t.order, 2, exact=True) for t in rnd.vjet))
    assert coeff_f1(zero, 2).value == 0 and coeff_f1(zero, 4).value == 0


def test_terms_and_csv():
    jet = standardize(quartic_problem(2, 64.0, L=3), 3)
    rows = expansion_terms(jet, 3, 64.0)
    assert [r.k for r in rows] == [2, 4]
    text = coefficient_csv(rows)
    assert text.splitlines()[0] == "k,value,method,stderr"
    assert len(text.splitlines()) == 3
