"""Complete Bell polynomials.

``bell_recurrence`` is the production evaluator.  The partition-sum and
ordered-composition forms are slower reference implementations kept for
cross-checking.  All three work elementwise on numpy arrays and exactly on
``Fraction`` inputs.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache


@lru_cache(maxsize=None)
def pascal(size):
    """Rows 0..size of Pascal's triangle as tuples of Python ints."""
    rows = [(1,)]
    for _ in range(size):
        prev = rows[-1]
        rows.append((1,) + tuple(prev[i] + prev[i + 1] for i in range(len(prev) - 1)) + (1,))
    return tuple(rows)


def _check(k, s):
    if k < 0:
        raise ValueError("order must be non-negative")
    if len(s) < k:
        raise ValueError(f"B_{k} needs {k} arguments, got {len(s)}")


def bell_sequence(k, s):
    """[B_0, B_1, ..., B_k] evaluated at s_1..s_k via the recurrence."""
    _check(k, s)
    binom = pascal(max(k, 1))
    B = [1]
    for j in range(k):
        acc = 0
        row = binom[j]
        for i in range(j + 1):
            acc = acc + row[i] * B[j - i] * s[i]
        B.append(acc)
    return B


def bell_recurrence(k, s):
    """B_k(s_1..s_k) using B_{j+1} = sum_i C(j,i) B_{j-i} s_{i+1}."""
    return bell_sequence(k, s)[k]


def _partitions(k, max_part=None):
    """Integer partitions of k as dicts part -> multiplicity."""
    if max_part is None:
        max_part = k
    if k == 0:
        yield {}
        return
    for p in range(min(k, max_part), 0, -1):
        for rest in _partitions(k - p, p):
            out = dict(rest)
            out[p] = out.get(p, 0) + 1
            yield out


def bell_partition_sum(k, s):
    """Direct sum over j_1 + 2 j_2 + ... + k j_k = k."""
    _check(k, s)
    total = 0
    for part in _partitions(k):
        coef = math.factorial(k)
        term = 1
        for i, j in part.items():
            coef //= math.factorial(j) * math.factorial(i) ** j
            term = term * s[i - 1] ** j
        total = total + coef * term
    return total if k else 1


def _compositions(k):
    if k == 0:
        yield ()
        return
    for first in range(1, k + 1):
        for rest in _compositions(k - first):
            yield (first,) + rest


def bell_ordered_compositions(k, s):
    """k! sum_r (1/r!) sum over compositions (m_1..m_r) of k of prod s_{m_j}/m_j!."""
    _check(k, s)
    if k == 0:
        return 1
    exact = all(isinstance(v, (int, Fraction)) for v in s[:k])
    total = 0
    for comp in _compositions(k):
        weight = Fraction(math.factorial(k), math.factorial(len(comp)))
        term = 1
        for m in comp:
            weight /= math.factorial(m)
            term = term * s[m - 1]
        total = total + (weight if exact else float(weight)) * term
    return total
