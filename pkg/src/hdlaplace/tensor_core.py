"""Multi-index combinatorics and symmetric tensors.

A symmetric order-k tensor on R^d is stored by its unique entries, one per
multi-index alpha with |alpha| = k.  Entries live in a 1-D array aligned with
``enumerate_multi_indices(d, k)``, which uses graded-lexicographic order
(largest first exponent first).  The array dtype is float64 in floating mode
and ``object`` (holding ``Fraction`` or ``int``) in exact mode.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

MAX_ORDER = 12
MAX_ENUMERATION = 10_000_000


class EnumerationTooLarge(ValueError):
    """Raised when a multi-index enumeration would exceed the size cap."""


# --------------------------------------------------------------------------
# Multi-indices
# --------------------------------------------------------------------------

class MultiIndex(tuple):
    """Exponent vector alpha in Z_{>=0}^d."""

    def __new__(cls, exponents):
        exps = tuple(int(a) for a in exponents)
        if any(a < 0 for a in exps):
            raise ValueError("multi-index entries must be non-negative")
        return super().__new__(cls, exps)

    @property
    def dim(self):
        return len(self)

    @property
    def order(self):
        return sum(self)

    def factorial(self):
        out = 1
        for a in self:
            out *= math.factorial(a)
        return out

    def double_factorial_shifted(self):
        """Product of (a_j - 1)!! with 0!! = (-1)!! = 1."""
        out = 1
        for a in self:
            out *= double_factorial(a - 1)
        return out

    def is_even(self):
        return all(a % 2 == 0 for a in self)


def double_factorial(m):
    """m!! for m >= -1, with (-1)!! = 0!! = 1."""
    if m < -1:
        raise ValueError("double factorial defined for m >= -1")
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def count_multi_indices(d, m):
    return math.comb(m + d - 1, d - 1)


@lru_cache(maxsize=None)
def _index_array(d, m):
    """Integer array (N, d) of all multi-indices of degree m, graded-lex."""
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    count = count_multi_indices(d, m)
    if count > MAX_ENUMERATION:
        raise EnumerationTooLarge(
            f"{count} multi-indices of degree {m} in dimension {d} exceeds "
            f"the enumeration cap {MAX_ENUMERATION}"
        )
    out = np.zeros((count, d), dtype=np.int64)
    row = 0

    def fill(prefix, j, rem):
        nonlocal row
        if j == d - 1:
            out[row, :j] = prefix
            out[row, j] = rem
            row += 1
            return
        for a in range(rem, -1, -1):
            fill(prefix + [a], j + 1, rem - a)

    fill([], 0, m)
    out.setflags(write=False)
    return out


def enumerate_multi_indices(d, m):
    """All multi-indices of total degree m in dimension d, graded-lex order."""
    return [MultiIndex(row) for row in _index_array(d, m)]


@lru_cache(maxsize=None)
def _binom_table(size):
    t = np.zeros((size + 1, size + 1), dtype=np.int64)
    for a in range(size + 1):
        t[a, 0] = 1
        for b in range(1, a + 1):
            t[a, b] = t[a - 1, b - 1] + t[a - 1, b]
    return t


def rank_multi_indices(alphas):
    """Position of each multi-index (rows of ``alphas``) in its degree list."""
    alphas = np.asarray(alphas, dtype=np.int64)
    d = alphas.shape[-1]
    m = alphas.sum(axis=-1)
    table = _binom_table(int(m.max(initial=0)) + d + 1)
    rank = np.zeros(alphas.shape[:-1], dtype=np.int64)
    rem = m.copy()
    for j in range(d - 1):
        top = rem - alphas[..., j] + d - j - 2
        bot = d - j - 1
        rank += np.where(top >= bot, table[np.maximum(top, 0), bot], 0)
        rem = rem - alphas[..., j]
    return rank


@lru_cache(maxsize=None)
def multiplicities(d, k, exact=False):
    """k!/alpha! for every alpha of degree k."""
    idx = _index_array(d, k)
    vals = [math.factorial(k) // MultiIndex(a).factorial() for a in idx]
    if exact:
        arr = np.empty(len(vals), dtype=object)
        arr[:] = vals
        return arr
    return np.array(vals, dtype=float)


@lru_cache(maxsize=None)
def _moment_array(d, m, exact):
    idx = _index_array(d, m)
    vals = [gaussian_moment(MultiIndex(a)) for a in idx]
    if exact:
        arr = np.empty(len(vals), dtype=object)
        arr[:] = vals
        return arr
    return np.array(vals, dtype=float)


def gaussian_moment(alpha):
    """E[Z^alpha] for a standard Gaussian vector Z."""
    alpha = MultiIndex(alpha)
    if not alpha.is_even():
        return 0
    return alpha.double_factorial_shifted()


@lru_cache(maxsize=None)
def _parent_table(d, m):
    """For degree-m monomials: index of x^alpha / x_j in degree m-1, and j."""
    idx = _index_array(d, m)
    last = np.array([np.flatnonzero(a)[-1] for a in idx], dtype=np.int64)
    parents = idx.copy()
    parents[np.arange(len(idx)), last] -= 1
    return rank_multi_indices(parents), last


def monomials(x, m):
    """Matrix of x^alpha for |alpha| = m; x has shape (..., d)."""
    x = np.asarray(x)
    d = x.shape[-1]
    cur = np.ones(x.shape[:-1] + (1,), dtype=x.dtype)
    for deg in range(1, m + 1):
        parent, var = _parent_table(d, deg)
        cur = cur[..., parent] * x[..., var]
    return cur


def monomial_ladder(x, m_max):
    """[monomials(x, 0), ..., monomials(x, m_max)] sharing intermediate work."""
    x = np.asarray(x)
    d = x.shape[-1]
    cur = np.ones(x.shape[:-1] + (1,), dtype=x.dtype)
    out = [cur]
    for deg in range(1, m_max + 1):
        parent, var = _parent_table(d, deg)
        cur = cur[..., parent] * x[..., var]
        out.append(cur)
    return out


@lru_cache(maxsize=None)
def product_index(d, a, b):
    """Index map (N_a, N_b) -> position of alpha + beta in degree a + b."""
    A = _index_array(d, a)
    B = _index_array(d, b)
    return rank_multi_indices(A[:, None, :] + B[None, :, :])


# --------------------------------------------------------------------------
# Symmetric tensors
# --------------------------------------------------------------------------

def _is_exact(values):
    return values.dtype == object


class SymTensor:
    """Symmetric order-k tensor on R^d stored by unique multi-index entries."""

    __slots__ = ("order", "dim", "values")

    def __init__(self, order, dim, values):
        order, dim = int(order), int(dim)
        if order > MAX_ORDER:
            raise EnumerationTooLarge(f"tensor order {order} exceeds {MAX_ORDER}")
        if dim < 1 or order < 0:
            raise ValueError("need dim >= 1 and order >= 0")
        values = np.asarray(values)
        if values.dtype != object:
            values = values.astype(float)
        n_expected = count_multi_indices(dim, order)
        if values.shape != (n_expected,):
            raise ValueError(
                f"expected {n_expected} entries for order {order}, dim {dim}; "
                f"got shape {values.shape}"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("SymTensor is immutable")

    # construction ---------------------------------------------------------
    @classmethod
    def zeros(cls, order, dim, exact=False):
        n = count_multi_indices(dim, order)
        if exact:
            vals = np.empty(n, dtype=object)
            vals[:] = [Fraction(0)] * n
            return cls(order, dim, vals)
        return cls(order, dim, np.zeros(n))

    @classmethod
    def from_entries(cls, order, dim, entries, exact=False):
        """Build from a mapping multi-index -> value (missing entries are 0)."""
        t = cls.zeros(order, dim, exact=exact)
        vals = t.values.copy()
        for alpha, value in entries.items():
            alpha = MultiIndex(alpha)
            if alpha.dim != dim or alpha.order != order:
                raise ValueError(f"multi-index {alpha} inconsistent with tensor shape")
            pos = int(rank_multi_indices(np.array(alpha)))
            vals[pos] = Fraction(value) if exact else float(value)
        return cls(order, dim, vals)

    @classmethod
    def from_dense(cls, arr, check_symmetric=True, tol=1e-12):
        """Symmetric tensor from a dense d^k array, averaging over permutations."""
        arr = np.asarray(arr, dtype=float)
        k = arr.ndim
        d = arr.shape[0] if k else 1
        if k == 0:
            return cls(0, d, np.array([float(arr)]))
        if check_symmetric:
            scale = max(1.0, float(np.max(np.abs(arr))))
            for ax in range(1, k):
                perm = list(range(k))
                perm[0], perm[ax] = perm[ax], perm[0]
                if np.max(np.abs(arr - arr.transpose(perm))) > tol * scale:
                    raise ValueError("input tensor is not symmetric")
        grids = np.indices(arr.shape).reshape(k, -1)
        counts = np.zeros((grids.shape[1], d), dtype=np.int64)
        for row in grids:
            counts[np.arange(grids.shape[1]), row] += 1
        pos = rank_multi_indices(counts)
        n = count_multi_indices(d, k)
        sums = np.bincount(pos, weights=arr.ravel(), minlength=n)
        return cls(k, d, sums / multiplicities(d, k))

    def to_dense(self):
        k, d = self.order, self.dim
        if k == 0:
            return np.array(self.values[0])
        grids = np.indices((d,) * k).reshape(k, -1)
        counts = np.zeros((grids.shape[1], d), dtype=np.int64)
        for row in grids:
            counts[np.arange(grids.shape[1]), row] += 1
        vals = np.asarray(self.values)
        return vals[rank_multi_indices(counts)].reshape((d,) * k)

    # queries --------------------------------------------------------------
    @property
    def exact(self):
        return _is_exact(self.values)

    def multi_indices(self):
        return enumerate_multi_indices(self.dim, self.order)

    def entry(self, alpha):
        alpha = MultiIndex(alpha)
        if alpha.dim != self.dim or alpha.order != self.order:
            raise ValueError(f"multi-index {alpha} inconsistent with tensor shape")
        return self.values[int(rank_multi_indices(np.array(alpha)))]

    def __getitem__(self, index):
        """Entry at an index tuple (i_1, ..., i_k); order does not matter."""
        if isinstance(index, (int, np.integer)):
            index = (index,)
        if len(index) != self.order:
            raise ValueError("index tuple length must equal the tensor order")
        counts = [0] * self.dim
        for i in index:
            counts[int(i)] += 1
        return self.entry(counts)

    def weighted(self):
        """Coefficients of the polynomial <T, x^k>: (k!/alpha!) T^alpha."""
        return self.values * multiplicities(self.dim, self.order, self.exact)

    def frobenius_norm(self):
        vals = np.asarray(self.values, dtype=float)
        return float(np.sqrt(np.sum(multiplicities(self.dim, self.order) * vals**2)))

    def is_zero(self):
        return all(v == 0 for v in self.values)

    def astype_float(self):
        return SymTensor(self.order, self.dim, np.asarray(self.values, dtype=float))

    def scaled(self, c):
        return SymTensor(self.order, self.dim, self.values * c)

    def __add__(self, other):
        if (self.order, self.dim) != (other.order, other.dim):
            raise ValueError("shape mismatch")
        return SymTensor(self.order, self.dim, self.values + other.values)

    def __neg__(self):
        return self.scaled(-1)

    def __eq__(self, other):
        if not isinstance(other, SymTensor):
            return NotImplemented
        return (self.order, self.dim) == (other.order, other.dim) and all(
            a == b for a, b in zip(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"SymTensor(order={self.order}, dim={self.dim}, exact={self.exact})"

    # serialization --------------------------------------------------------
    def to_json(self):
        entries = []
        for alpha, v in zip(self.multi_indices(), self.values):
            if isinstance(v, Fraction):
                val = str(v) if v.denominator != 1 else v.numerator
            elif isinstance(v, int):
                val = v
            else:
                val = float(v)
            entries.append([list(alpha), val])
        return {"order": self.order, "dim": self.dim, "entries": entries}

    @classmethod
    def from_json(cls, obj):
        order, dim = int(obj["order"]), int(obj["dim"])
        raw = obj["entries"]
        exact = all(isinstance(v, (int, str)) for _, v in raw)
        parsed = {}
        for alpha, v in raw:
            parsed[tuple(alpha)] = Fraction(v) if exact else float(v)
        return cls.from_entries(order, dim, parsed, exact=exact)


def contract(T, x):
    """<T, x^{(x)k}> for a vector x, or row-wise for a batch of shape (N, d)."""
    x = np.asarray(x)
    if x.shape[-1] != T.dim:
        raise ValueError(f"dimension mismatch: tensor dim {T.dim}, vector {x.shape[-1]}")
    if T.order == 0:
        v = T.values[0]
        return v if x.ndim == 1 else np.full(x.shape[:-1], v)
    if T.exact and x.dtype.kind in "iuO":
        xs = np.empty(x.shape, dtype=object)
        flat = [v if isinstance(v, Fraction) else Fraction(v) for v in x.ravel().tolist()]
        xs.ravel()[:] = flat
        return monomials(xs, T.order) @ T.weighted()
    mon = monomials(np.asarray(x, dtype=float), T.order)
    return mon @ np.asarray(T.weighted(), dtype=float)


def contract_batch(T, X):
    """Row-wise contraction <T, x_i^k> for X of shape (N, d), float result."""
    X = np.asarray(X, dtype=float)
    if T.order == 0:
        return np.full(X.shape[0], float(T.values[0]))
    return monomials(X, T.order) @ np.asarray(T.weighted(), dtype=float)


def gradient_matrix(T):
    """Matrix G (d, N_{k-1}) with grad <T, x^k> = G @ monomials(x, k-1)."""
    k, d = T.order, T.dim
    c = np.asarray(T.weighted(), dtype=float)
    lower = _index_array(d, k - 1)
    G = np.zeros((d, len(lower)))
    for j in range(d):
        up = lower.copy()
        up[:, j] += 1
        G[j] = c[rank_multi_indices(up)] * (lower[:, j] + 1)
    return G


# --------------------------------------------------------------------------
# Weight matrices
# --------------------------------------------------------------------------

class WeightMatrix:
    """Positive-definite H with a cached inverse square root."""

    def __init__(self, H, rtol=1e-10):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if not np.allclose(H, H.T, rtol=rtol, atol=rtol * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        H = 0.5 * (H + H.T)
        w, V = np.linalg.eigh(H)
        if w[0] <= 0:
            raise ValueError(f"H is not positive definite (smallest eigenvalue {w[0]:.3e})")
        self.H = H
        self.eigvals = w
        self.eigvecs = V
        self.inv_sqrt = (V / np.sqrt(w)) @ V.T
        self.sqrt = (V * np.sqrt(w)) @ V.T
        self.is_identity = bool(np.array_equal(H, np.eye(H.shape[0])))
        for a in (self.H, self.inv_sqrt, self.sqrt, self.eigvals):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def lambda_min(self):
        return float(self.eigvals[0])

    def logdet(self):
        return float(np.sum(np.log(self.eigvals)))

    def norm(self, y):
        """||y||_H = sqrt(y^T H y)."""
        y = np.asarray(y, dtype=float)
        return float(np.sqrt(y @ self.H @ y))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))


def _as_weight(H, d):
    if H is None:
        return WeightMatrix.identity(d)
    if isinstance(H, WeightMatrix):
        return H
    return WeightMatrix(H)


def pushforward_jet(T, H):
    """S(u_1..u_k) = T(H^{-1/2}u_1, ..., H^{-1/2}u_k)."""
    W = _as_weight(H, T.dim)
    if W.dim != T.dim:
        raise ValueError("dimension mismatch between tensor and weight")
    if W.is_identity or T.order == 0:
        return T
    M = W.inv_sqrt
    dense = T.astype_float().to_dense()
    for _ in range(T.order):
        dense = np.tensordot(dense, M, axes=([0], [0]))
    return SymTensor.from_dense(dense, check_symmetric=False)


# --------------------------------------------------------------------------
# Operator norms
# --------------------------------------------------------------------------

def _sphere_maximize(value_grad, d, starts, tol=1e-9, max_iter=500, seed=0, init=None):
    """Maximize p(u) over the unit sphere by shifted power ascent.

    ``value_grad(U)`` maps a batch of unit vectors (S, d) to (values, grads).
    Each start keeps an adaptive shift: a step u <- normalize(grad + a*u) is
    accepted only when it does not decrease p, otherwise the shift doubles.
    Returns the best value found and its maximizer.
    """
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((starts, d))
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=float))
        U = np.vstack([init, U])
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    val, grad = value_grad(U)
    shift = np.zeros(len(U))
    active = np.ones(len(U), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        cand = grad + shift[:, None] * U
        nrm = np.linalg.norm(cand, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        cand = cand / nrm
        cval, cgrad = value_grad(cand)
        scale = np.maximum(1.0, np.abs(val))
        better = (cval >= val - 1e-14 * scale) & active
        gain = cval - val
        U = np.where(better[:, None], cand, U)
        grad = np.where(better[:, None], cgrad, grad)
        val = np.where(better, cval, val)
        # Riemannian gradient norm as stationarity measure
        rg = grad - np.sum(grad * U, axis=1, keepdims=True) * U
        rgn = np.linalg.norm(rg, axis=1)
        gscale = np.maximum(1.0, np.linalg.norm(grad, axis=1))
        done = better & (np.abs(gain) <= tol * scale) & (rgn <= np.sqrt(tol) * gscale)
        stuck = ~better & active
        shift = np.where(stuck, np.maximum(2 * shift, np.linalg.norm(grad, axis=1) + 1e-12), shift)
        stuck_far = stuck & (shift > 1e12 * gscale)
        active &= ~(done | stuck_far)
    i = int(np.argmax(val))
    return float(val[i]), U[i]


def _polynomial_value_grad(S, sign=1.0):
    k = S.order
    coef = np.asarray(S.weighted(), dtype=float) * sign
    G = gradient_matrix(S) * sign

    def value_grad(U):
        mon_low = monomials(U, k - 1)
        grad = mon_low @ G.T
        # Euler: <grad p(u), u> = k p(u)
        val = np.sum(grad * U, axis=1) / k
        return val, grad

    return value_grad


def operator_norm(T, H=None, starts=32, tol=1e-9, max_iter=500, seed=0,
                  method="ascent", grid_points=720):
    """H-weighted operator norm sup_{||u||_H = 1} |<T, u^k>|.

    For k >= 3 the ascent result is a lower bound on the true norm.  With
    ``method="grid"`` and d = 2, a (lower, upper) pair is returned, where the
    upper value uses the Lipschitz bound of p on the circle.
    """
    W = _as_weight(H, T.dim)
    k, d = T.order, T.dim
    if k == 0:
        return abs(float(T.values[0]))
    if k == 1:
        return float(np.linalg.norm(W.inv_sqrt @ np.asarray(T.values, dtype=float)))
    if k == 2:
        M = T.astype_float().to_dense()
        S = W.inv_sqrt @ M @ W.inv_sqrt
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (S + S.T)))))
    S = pushforward_jet(T.astype_float(), W)
    if np.all(np.asarray(S.values) == 0):
        return 0.0
    if method == "grid":
        if d == 1:
            return abs(float(S.values[0]))
        if d != 2:
            raise ValueError("grid mode is available for d <= 2 only")
        theta = np.linspace(0.0, 2 * np.pi, grid_points, endpoint=False)
        U = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        vals = np.abs(contract_batch(S, U))
        grid_max = float(np.max(vals))
        h = 2 * np.pi / grid_points
        t0 = theta[int(np.argmax(vals))]

        def neg(t):
            return -abs(float(contract_batch(S, np.array([[np.cos(t), np.sin(t)]]))[0]))

        res = minimize_scalar(neg, bounds=(t0 - h, t0 + h), method="bounded",
                              options={"xatol": 1e-12})
        lower = max(grid_max, -float(res.fun))
        upper = grid_max / (1 - k * h / 2) if k * h / 2 < 1 else np.inf
        return lower, upper
    if d == 1:
        return abs(float(S.values[0]))
    best = 0.0
    signs = (1.0,) if k % 2 == 1 else (1.0, -1.0)
    for sgn in signs:
        val, _ = _sphere_maximize(_polynomial_value_grad(S, sgn), d, starts,
                                  tol=tol, max_iter=max_iter, seed=seed)
        best = max(best, val)
    return best


def frobenius_norm(T):
    return T.frobenius_norm()
