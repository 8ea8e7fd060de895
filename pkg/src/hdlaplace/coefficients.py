"""Expansion coefficients A_k in standardized coordinates.

Three routes are provided:

* ``coeff_explicit`` evaluates the multi-index formula
      A_k = sum_l sum_r (-1)^r / r! sum_{m_1+..+m_r = l}
            E[ F_{k-l}(Z) P_{m_1}(Z) ... P_{m_r}(Z) ],
  where F_j(x) = <grad^j f(0), x^j>/j!, P_m(x) = <grad^{m+2} v(0), x^{m+2}>/(m+2)!
  and Z is standard Gaussian.  Expanding each product into monomials and
  applying E[Z^alpha] = even(alpha) (alpha - 1)!! gives exactly the
  multi-index sum with (beta + alpha_1 + ... - 1)!! / (beta! alpha_1! ...) weights.
  Products are accumulated as homogeneous polynomials over graded monomial
  lists, which groups the summands but does not change the sum.
* ``coeff_mc`` averages chi_k(0, Z) / k! over Gaussian samples.
* ``a2_closed_form`` is the five-term formula for A_2.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .bell import bell_sequence
from .problem import JetOrderError, LocalJet
from .rng import chunk_generator, chunk_sizes
from .tensor_core import (
    EnumerationTooLarge,
    _index_array,
    _moment_array,
    monomial_ladder,
    count_multi_indices,
    multiplicities,
    rank_multi_indices,
)

SUMMAND_BUDGET = 10**8


@dataclass(frozen=True)
class CoefficientResult:
    k: int
    value: object
    method: str
    mc_stderr: Optional[float] = None
    samples: Optional[int] = None

    def as_row(self):
        return {"k": self.k, "value": float(self.value), "method": self.method,
                "stderr": "" if self.mc_stderr is None else self.mc_stderr}


# --------------------------------------------------------------------------
# Homogeneous polynomial algebra
# --------------------------------------------------------------------------

class _Budget:
    def __init__(self, limit):
        self.limit = limit
        self.used = 0

    def spend(self, count):
        self.used += count
        if self.used > self.limit:
            raise EnumerationTooLarge(
                f"explicit coefficient sum exceeds the budget of {self.limit:.0e} "
                "summands; use coeff_mc for this order and dimension"
            )


def _poly_from_tensor(T, exact):
    """Coefficients of <T, x^k>/k! over the graded monomials of degree k."""
    k = T.order
    if exact:
        w = T.values * multiplicities(T.dim, k, True)
        return np.array([Fraction(c) / math.factorial(k) for c in w], dtype=object)
    return np.asarray(T.values, dtype=float) * multiplicities(T.dim, k) / math.factorial(k)


def _is_zero(c):
    return not np.any(c != 0)


def _hmul(d, a, ca, b, cb, exact, budget):
    """Product of homogeneous polynomials of degrees a and b."""
    n_out = count_multi_indices(d, a + b)
    ia = np.flatnonzero(ca != 0)
    ib = np.flatnonzero(cb != 0)
    budget.spend(len(ia) * len(ib))
    A = _index_array(d, a)
    B = _index_array(d, b)
    if exact:
        # integer arithmetic over a common denominator; Fractions only at the end
        den_a = math.lcm(*(Fraction(ca[i]).denominator for i in ia)) if len(ia) else 1
        den_b = math.lcm(*(Fraction(cb[j]).denominator for j in ib)) if len(ib) else 1
        na = [int(Fraction(ca[i]) * den_a) for i in ia]
        nb = [int(Fraction(cb[j]) * den_b) for j in ib]
        out = [0] * n_out
        Bsel = B[ib]
        step = max(1, 2_000_000 // max(1, len(ib)))
        for s in range(0, len(ia), step):
            rows = ia[s:s + step]
            pos = rank_multi_indices(A[rows][:, None, :] + Bsel[None, :, :]).tolist()
            for ci, prow in zip(na[s:s + step], pos):
                for p, cj in zip(prow, nb):
                    out[p] += ci * cj
        den = den_a * den_b
        zero = Fraction(0)
        arr = np.empty(n_out, dtype=object)
        arr[:] = [Fraction(o, den) if o else zero for o in out]
        return arr
    out = np.zeros(n_out)
    if len(ia) == 0 or len(ib) == 0:
        return out
    step = max(1, 2_000_000 // max(1, len(ib)))
    for s in range(0, len(ia), step):
        rows = ia[s:s + step]
        pos = rank_multi_indices(A[rows][:, None, :] + B[ib][None, :, :])
        out += np.bincount(pos.ravel(), weights=np.outer(ca[rows], cb[ib]).ravel(),
                           minlength=n_out)
    return out


def _expect(d, deg, c, exact):
    """E[p(Z)] for a homogeneous polynomial p of degree deg."""
    mom = _moment_array(d, deg, exact)
    if exact:
        return sum((ci * mi for ci, mi in zip(c, mom) if mi != 0 and ci != 0), Fraction(0))
    return float(np.dot(c, mom))


def _explicit_sum(jet, k, unit_f=False, budget=SUMMAND_BUDGET):
    d = jet.dim
    if unit_f:
        jet.require(0, k + 2)
    else:
        jet.require(k, k + 2)
    exact = jet.exact
    bud = _Budget(budget)
    zero = Fraction(0) if exact else 0.0
    P = {m: _poly_from_tensor(jet.v(m + 2), exact) for m in range(1, k + 1)}
    P = {m: c for m, c in P.items() if not _is_zero(c)}
    if unit_f:
        F = {0: np.array([Fraction(1)], dtype=object) if exact else np.array([1.0])}
    else:
        F = {j: _poly_from_tensor(jet.f(j), exact) for j in range(0, k + 1)}
        F = {j: c for j, c in F.items() if not _is_zero(c)}

    total = zero
    one = np.array([Fraction(1)], dtype=object) if exact else np.array([1.0])
    # depth-first walk over ordered compositions with shared prefix products
    stack = [(0, 0, one)]
    while stack:
        s, r, Q = stack.pop()
        deg_q = s + 2 * r
        j = k - s
        if j in F:
            prod = _hmul(d, j, F[j], deg_q, Q, exact, bud)
            val = _expect(d, j + deg_q, prod, exact)
            if exact:
                total += Fraction((-1) ** r, math.factorial(r)) * val
            else:
                total += (-1) ** r / math.factorial(r) * val
        for m, Pm in P.items():
            if s + m <= k:
                stack.append((s + m, r + 1, _hmul(d, deg_q, Q, m + 2, Pm, exact, bud)))
    return total


def coeff_explicit(jet, k, budget=SUMMAND_BUDGET):
    """A_k from the explicit multi-index formula (exact when the jet is exact)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return CoefficientResult(k, _explicit_sum(jet, k, budget=budget), "explicit")


def coeff_f1(jet, k, budget=SUMMAND_BUDGET):
    """A_k for f identically 1: only the beta = 0 branch of the explicit sum."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return CoefficientResult(k, _explicit_sum(jet, k, unit_f=True, budget=budget), "explicit")


# --------------------------------------------------------------------------
# Gaussian-expectation route
# --------------------------------------------------------------------------

def _jet_contractions(jet, k, X):
    """<grad^i f(0), x^i> for i <= k and <grad^j v(0), x^j> for 3 <= j <= k+2."""
    ladder = monomial_ladder(X, k + 2)
    fv = [ladder[i] @ np.asarray(jet.f(i).weighted(), dtype=float) for i in range(k + 1)]
    vv = {j: ladder[j] @ np.asarray(jet.v(j).weighted(), dtype=float) for j in range(3, k + 3)}
    return fv, vv


def _chi_from_contractions(k, fv, vv, sign=1.0):
    """chi_k at x (sign = 1) or at -x (sign = -1) from contractions at x."""
    s = [-(sign ** (j + 2)) * vv[j + 2] / ((j + 1) * (j + 2)) for j in range(1, k + 1)]
    B = bell_sequence(k, s)
    out = 0.0
    for ell in range(k + 1):
        out = out + math.comb(k, ell) * (sign ** (k - ell)) * fv[k - ell] * B[ell]
    return out


def chi_eval(jet, k, x):
    """chi_k(0, x) = sum_l C(k,l) <grad^{k-l} f, x^{k-l}> B_l(s_1..s_l).

    s_j = -<grad^{j+2} v(0), x^{j+2}> / ((j+1)(j+2)).  Accepts one point (d,)
    or a batch (N, d).
    """
    jet.require(k, k + 2)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != jet.dim:
        raise ValueError("dimension mismatch")
    fv, vv = _jet_contractions(jet, k, X)
    out = np.broadcast_to(_chi_from_contractions(k, fv, vv), (X.shape[0],))
    return float(out[0]) if single else np.array(out)


def coeff_mc(jet, k, samples=10**6, seed=0, chunk=1 << 14):
    """Monte Carlo estimate of A_k = E[chi_k(0, Z)] / k! with antithetic pairs.

    Samples are drawn in chunks, each from its own counter-based stream keyed
    by (seed, chunk index), so the result depends only on (seed, chunk).
    """
    jet.require(k, k + 2)
    d = jet.dim
    pairs = max(1, samples // 2)
    total = 0.0
    total_sq = 0.0
    count = 0
    for c, size in enumerate(chunk_sizes(pairs, chunk)):
        Z = chunk_generator(seed, c).standard_normal((size, d))
        fv, vv = _jet_contractions(jet, k, Z)
        plus = _chi_from_contractions(k, fv, vv, 1.0)
        minus = _chi_from_contractions(k, fv, vv, -1.0)
        vals = np.broadcast_to(0.5 * (plus + minus), (size,))
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        count += size
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    stderr = math.sqrt(var / count) if count > 1 else float("nan")
    kf = math.factorial(k)
    return CoefficientResult(k, mean / kf, "mc", stderr / kf, 2 * count)


# --------------------------------------------------------------------------
# Closed form for A_2
# --------------------------------------------------------------------------

def a2_closed_form(jet):
    """A_2 = Lap f/2 - (1/2) sum_ij f_i v_ijj + f/12 |v'''|_F^2
    + f/8 sum_i (sum_j v_ijj)^2 - f/8 sum_ij v_iijj."""
    jet.require(2, 4)
    exact = jet.exact
    f0 = jet.f(0).values[0]
    f1 = np.asarray(jet.f(1).values, dtype=object if exact else float)
    f2 = jet.f(2).to_dense()
    v3 = jet.v(3).to_dense()
    v4 = jet.v(4).to_dense()
    d = jet.dim
    if not exact:
        f2, v3, v4 = (np.asarray(a, dtype=float) for a in (f2, v3, v4))
    lap = sum(f2[i, i] for i in range(d))
    trace_v3 = np.array([sum(v3[i, j, j] for j in range(d)) for i in range(d)], dtype=f1.dtype)
    cross = sum(f1[i] * trace_v3[i] for i in range(d))
    frob = (v3 * v3).sum()
    grad_lap = sum(t * t for t in trace_v3)
    quart = sum(v4[i, i, j, j] for i in range(d) for j in range(d))
    if exact:
        h, tw, eg = Fraction(1, 2), Fraction(1, 12), Fraction(1, 8)
    else:
        h, tw, eg = 0.5, 1 / 12, 1 / 8
    return h * lap - h * cross + f0 * tw * frob + f0 * eg * grad_lap - f0 * eg * quart


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

def expansion_terms(jet, L, n, method="explicit", samples=10**6, seed=0):
    """CoefficientResults for A_2, A_4, ..., A_{2L-2}; the term is value * n^{-k/2}."""
    rows = []
    for kk in range(1, L):
        if method == "explicit":
            res = coeff_explicit(jet, 2 * kk)
        elif method == "mc":
            res = coeff_mc(jet, 2 * kk, samples=samples, seed=seed)
        else:
            raise ValueError(f"unknown coefficient method {method!r}")
        rows.append(res)
    return rows


def coefficient_csv(results):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["k", "value", "method", "stderr"])
    w.writeheader()
    for r in results:
        w.writerow(r.as_row())
    return buf.getvalue()


def random_jet(d, L, seed=0, scale=0.3, f_scale=0.5, exact=False):
    """A random LocalJet for testing (exact mode uses small rationals)."""
    from .tensor_core import SymTensor

    rng = np.random.default_rng(seed)

    def rand(k, s):
        n = count_multi_indices(d, k)
        if exact:
            vals = np.empty(n, dtype=object)
            vals[:] = [Fraction(int(v), 4) for v in rng.integers(-4, 5, n)]
            return SymTensor(k, d, vals)
        return SymTensor(k, d, s * rng.standard_normal(n))

    f0 = SymTensor(0, d, np.array([Fraction(1)], dtype=object) if exact else [1.0 + rng.random()])
    fjet = (f0,) + tuple(rand(k, f_scale) for k in range(1, 2 * L + 1))
    vjet = tuple(rand(k, scale) for k in range(3, 2 * L + 3))
    return LocalJet(fjet, vjet)


__all__ = [
    "CoefficientResult", "coeff_explicit", "coeff_f1", "chi_eval", "coeff_mc",
    "a2_closed_form", "expansion_terms", "coefficient_csv", "random_jet", "JetOrderError",
]
