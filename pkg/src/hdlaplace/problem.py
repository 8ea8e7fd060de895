"""Integrand specification, standardization and derivative acquisition.

The integral of interest is  int g(x) exp(-n u(x)) dx  around the minimizer
x0 of u.  In standardized coordinates x -> x0 + H^{-1/2} x the potential
becomes v(x) = u(x0 + H^{-1/2}x) - u(x0), whose Hessian at the origin is the
identity, and the prefactor becomes f(x) = g(x0 + H^{-1/2}x).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .tensor_core import (
    MultiIndex,
    SymTensor,
    WeightMatrix,
    enumerate_multi_indices,
    pushforward_jet,
)

FD_MAX_ORDER = 6


class JetOrderError(ValueError):
    """Raised when a jet does not hold the derivative orders a formula needs."""


class CriticalPointError(ValueError):
    """Raised when x0 is not a critical point of u to the required tolerance."""


# --------------------------------------------------------------------------
# Data types
# --------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """Potential u, prefactor g, minimizer x0 and sample size n.

    ``u`` and ``g`` are vectorized: they map an (N, d) array to (N,).
    ``u_derivs(k, x)`` and ``g_derivs(k, x)``, when given, return the k-th
    derivative tensor at a single point x as a SymTensor.  ``nu_excess``
    optionally computes n*(u(x) - u(x0)) stably for a batch of points.
    ``envelope_asserted`` records that the caller vouches for the tail
    envelope |g| exp(-n(u - u(x0))) <= exp(-sqrt(dn) ||x - x0||_H / 4)
    outside the localization region.
    """

    d: int
    n: float
    u: Callable
    g: Callable
    x0: np.ndarray
    H: Optional[WeightMatrix] = None
    u_derivs: Optional[Callable] = None
    g_derivs: Optional[Callable] = None
    L: int = 1
    nu_excess: Optional[Callable] = None
    envelope_asserted: bool = False
    convex: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)
    u_domain: Optional[Callable] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.d)
        if self.n <= 0:
            raise ValueError("sample size n must be positive")
        if self.L < 1:
            raise ValueError("expansion order L must be at least 1")
        if self.H is None:
            if self.u_derivs is not None:
                H2 = self.u_derivs(2, self.x0).astype_float().to_dense()
            else:
                H2 = jet_from_finite_differences(self.u, self.x0, 2)[2].to_dense()
            self.H = WeightMatrix(np.atleast_2d(H2))
        elif not isinstance(self.H, WeightMatrix):
            self.H = WeightMatrix(self.H)
        self.check_critical_point()

    # evaluation helpers ----------------------------------------------------
    def u0(self):
        return float(self.u(self.x0[None, :])[0])

    def g0(self):
        return float(self.g(self.x0[None, :])[0])

    def excess(self, X):
        """n (u(X) - u(x0)) for a batch of points X (N, d)."""
        X = np.atleast_2d(X)
        if self.nu_excess is not None:
            return self.nu_excess(X)
        return self.n * (self.u(X) - self.u0())

    def gradient(self, x):
        if self.u_derivs is not None:
            return np.asarray(self.u_derivs(1, x).values, dtype=float)
        return np.asarray(jet_from_finite_differences(self.u, x, 1)[1].values, dtype=float)

    def check_critical_point(self, rtol=1e-8):
        grad = self.gradient(self.x0)
        scale = max(1.0, float(np.max(np.abs(self.H.eigvals))))
        tol = rtol * scale if self.u_derivs is not None else 1e-5 * scale
        if np.linalg.norm(grad) > tol:
            raise CriticalPointError(
                f"x0 is not a critical point: |grad u(x0)| = {np.linalg.norm(grad):.3e}"
            )

    def derivative(self, which, k, x):
        """k-th derivative tensor of u or g at x; analytic when available."""
        func = self.u_derivs if which == "u" else self.g_derivs
        if func is not None:
            return func(k, x)
        if k > FD_MAX_ORDER:
            raise JetOrderError(
                f"order {k} derivative of {which} requested but only finite "
                f"differences up to order {FD_MAX_ORDER} are available"
            )
        ev = self.u if which == "u" else self.g
        return jet_from_finite_differences(ev, x, k)[k]

    @property
    def epsilon(self):
        return self.d / math.sqrt(self.n)


@dataclass(frozen=True)
class LocalJet:
    """Derivatives of f at 0 (orders 0..2L) and of v at 0 (orders 3..2L+2)."""

    fjet: tuple
    vjet: tuple

    def __post_init__(self):
        dims = {t.dim for t in self.fjet} | {t.dim for t in self.vjet}
        if len(dims) != 1:
            raise ValueError("all jet tensors must share one dimension")
        for k, t in enumerate(self.fjet):
            if t.order != k:
                raise ValueError(f"fjet[{k}] has order {t.order}")
        for i, t in enumerate(self.vjet):
            if t.order != i + 3:
                raise ValueError(f"vjet entry {i} must have order {i + 3}, got {t.order}")

    @property
    def dim(self):
        return (self.fjet[0] if self.fjet else self.vjet[0]).dim

    @property
    def f_order(self):
        return len(self.fjet) - 1

    @property
    def v_order(self):
        return len(self.vjet) + 2

    @property
    def exact(self):
        return all(t.exact for t in self.fjet) and all(t.exact for t in self.vjet)

    def f(self, k):
        if k > self.f_order:
            raise JetOrderError(f"f derivative of order {k} missing (have up to {self.f_order})")
        return self.fjet[k]

    def v(self, k):
        if k < 3:
            raise ValueError("v derivatives below order 3 are implicit")
        if k > self.v_order:
            raise JetOrderError(f"v derivative of order {k} missing (have up to {self.v_order})")
        return self.vjet[k - 3]

    def require(self, f_order, v_order):
        if f_order > self.f_order or v_order > self.v_order:
            raise JetOrderError(
                f"jet holds f to order {self.f_order} and v to order {self.v_order}; "
                f"need {f_order} and {v_order}"
            )

    def with_unit_f(self):
        """Same v-jet with f identically 1."""
        d = self.dim
        ex = self.exact
        f = [SymTensor(0, d, np.array([Fraction(1)], dtype=object) if ex else [1.0])]
        f += [SymTensor.zeros(k, d, exact=ex) for k in range(1, len(self.fjet))]
        return LocalJet(tuple(f), self.vjet)

    def to_json(self):
        return {
            "fjet": [t.to_json() for t in self.fjet],
            "vjet": [t.to_json() for t in self.vjet],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            tuple(SymTensor.from_json(t) for t in obj["fjet"]),
            tuple(SymTensor.from_json(t) for t in obj["vjet"]),
        )


@dataclass(frozen=True)
class ExpansionSetup:
    """Small parameter eps = d/sqrt(n) and localization radius R."""

    d: int
    n: float
    R: float

    def __post_init__(self):
        if self.d < 1 or self.n <= 0 or self.R <= 0:
            raise ValueError("need d >= 1, n > 0, R > 0")

    @property
    def epsilon(self):
        return self.d / math.sqrt(self.n)

    @property
    def region_radius(self):
        """Radius of U = {||x|| < R sqrt(d)} in standardized coordinates."""
        return self.R * math.sqrt(self.d)

    def in_region(self, X):
        X = np.atleast_2d(X)
        return np.linalg.norm(X, axis=1) < self.region_radius


# --------------------------------------------------------------------------
# Jets
# --------------------------------------------------------------------------

def standardize(p, L=None):
    """Jets of f and v at the origin of standardized coordinates."""
    L = p.L if L is None else L
    W = p.H
    fjet = []
    for k in range(0, 2 * L + 1):
        fjet.append(pushforward_jet(p.derivative("g", k, p.x0), W))
    vjet = []
    for k in range(3, 2 * L + 3):
        vjet.append(pushforward_jet(p.derivative("u", k, p.x0), W))
    hess = pushforward_jet(p.derivative("u", 2, p.x0), W).astype_float().to_dense()
    dev = np.max(np.abs(np.atleast_2d(hess) - np.eye(p.d)))
    tol = 1e-8 if p.u_derivs is not None else 1e-4
    if dev > tol:
        raise ValueError(f"standardized Hessian deviates from I by {dev:.3e}")
    return LocalJet(tuple(fjet), tuple(vjet))


def _call_batch(evaluator, X):
    out = np.asarray(evaluator(X), dtype=float).reshape(-1)
    if out.shape[0] != X.shape[0]:
        out = np.array([float(np.asarray(evaluator(x[None, :])).reshape(-1)[0]) for x in X])
    return out


def fd_step(k):
    """Default central-difference step for order k."""
    return (1e-16) ** (1.0 / (k + 2))


def jet_from_finite_differences(evaluator, x0, k_max, step=None):
    """Central-difference derivative tensors of orders 0..k_max at x0.

    Each entry d^alpha F is the tensor product of one-dimensional central
    stencils, so the result is symmetric by construction.  ``step`` may be a
    number or a callable k -> h; the default is h_k = (1e-16)^{1/(k+2)}.
    """
    if k_max > FD_MAX_ORDER:
        raise JetOrderError(f"finite differences are limited to order {FD_MAX_ORDER}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.size
    out = []
    for k in range(k_max + 1):
        if step is None:
            h = fd_step(k)
        elif callable(step):
            h = step(k)
        else:
            h = float(step)
        alphas = enumerate_multi_indices(d, k)
        pts, weights, owner = [], [], []
        for a_pos, alpha in enumerate(alphas):
            grids = [range(a + 1) for a in alpha]
            for combo in itertools.product(*grids):
                w = 1.0
                shift = np.zeros(d)
                for j, (a, i) in enumerate(zip(alpha, combo)):
                    w *= (-1) ** i * math.comb(a, i)
                    shift[j] = (a / 2 - i) * h
                pts.append(x0 + shift)
                weights.append(w)
                owner.append(a_pos)
        vals = _call_batch(evaluator, np.array(pts))
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite evaluation in finite-difference stencil")
        entries = np.bincount(owner, weights=np.array(weights) * vals, minlength=len(alphas))
        out.append(SymTensor(k, d, entries / h**k))
    return out


# --------------------------------------------------------------------------
# Assumption checks
# --------------------------------------------------------------------------

def tail_coefficient(r, c3, d, n):
    """r/2 - r^2 c3(r) sqrt(d/n) / 6, the linear-growth rate of the convex tail."""
    return r / 2 - r * r * c3 * math.sqrt(d / n) / 6


def check_tail_condition(p, r, c3=None, **norm_kw):
    """Convex tail check: the growth coefficient must be at least 1/3.

    ``c3`` may be supplied; otherwise it is estimated with ``deriv_norms``.
    """
    if c3 is None:
        from .bounds import sup_norm_on_ball

        c3 = sup_norm_on_ball(p, "u", 3, r, **norm_kw)
    if not np.isfinite(c3):
        raise ValueError("c3 estimation failed")
    coef = tail_coefficient(r, c3, p.d, p.n)
    margin = coef - 1 / 3
    return {"satisfied": bool(margin >= -1e-12), "margin": float(margin),
            "coefficient": float(coef), "c3": float(c3)}


def spot_check_convexity(p, trials=64, radius=1.0, seed=0):
    """Midpoint convexity on random segments around x0; True if no violation."""
    rng = np.random.default_rng(seed)
    scale = radius * np.sqrt(p.d / p.n)
    A = p.x0 + scale * (p.H.inv_sqrt @ rng.standard_normal((p.d, trials))).T
    B = p.x0 + scale * (p.H.inv_sqrt @ rng.standard_normal((p.d, trials))).T
    ua, ub, um = p.u(A), p.u(B), p.u(0.5 * (A + B))
    slack = 1e-12 * np.maximum(1.0, np.abs(ua) + np.abs(ub))
    return bool(np.all(um <= 0.5 * (ua + ub) + slack))


def refine_minimizer(p_or_grad, x0, hess=None, tol=1e-10, max_iter=100, value=None):
    """Damped Newton polish of an approximate critical point.

    Pass either a ProblemSpec or a gradient callable together with ``hess``.
    """
    if isinstance(p_or_grad, ProblemSpec):
        p = p_or_grad
        grad = p.gradient

        def hess(x):
            return np.atleast_2d(p.derivative("u", 2, x).astype_float().to_dense())

        def value(x):
            return float(p.u(np.asarray(x)[None, :])[0])
    else:
        grad = p_or_grad
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        gr = grad(x)
        if np.linalg.norm(gr) <= tol:
            break
        step = np.linalg.solve(hess(x), gr)
        t = 1.0
        if value is not None:
            f0 = value(x)
            while t > 1e-8 and not value(x - t * step) <= f0:
                t *= 0.5
        x = x - t * step
    return x


# --------------------------------------------------------------------------
# Builtin problems
# --------------------------------------------------------------------------

def _exact_point(x):
    return bool(np.all(np.asarray(x) == 0))


def _const_g_derivs(d, value=1):
    def g_derivs(k, x):
        ex = _exact_point(x)
        if k == 0:
            v = Fraction(value) if ex else float(value)
            return SymTensor(0, d, np.array([v], dtype=object) if ex else [v])
        return SymTensor.zeros(k, d, exact=ex)

    return g_derivs


def _ones(X):
    return np.ones(np.atleast_2d(X).shape[0])


def gaussian_problem(d, n, L=1):
    """u = ||x||^2 / 2, g = 1; every expansion term vanishes."""
    def u(X):
        X = np.atleast_2d(X)
        return 0.5 * np.sum(X * X, axis=1)

    def u_derivs(k, x):
        x = np.asarray(x, dtype=float)
        ex = _exact_point(x)
        if k == 0:
            return SymTensor(0, d, [0.5 * float(x @ x)])
        if k == 1:
            return SymTensor(1, d, x)
        if k == 2:
            ent = {tuple(2 * np.eye(d, dtype=int)[i]): 1 for i in range(d)}
            return SymTensor.from_entries(2, d, ent, exact=ex)
        return SymTensor.zeros(k, d, exact=ex)

    return ProblemSpec(d=d, n=n, u=u, g=_ones, x0=np.zeros(d), H=WeightMatrix.identity(d),
                       u_derivs=u_derivs, g_derivs=_const_g_derivs(d), L=L,
                       envelope_asserted=True, convex=True, name="gaussian",
                       params={"d": d, "n": n})


def quartic_tensor(d, exact=True):
    """Fourth derivative of ||x||^4/24: 1 at 4e_i and 1/3 at 2e_i + 2e_j."""
    ent = {}
    for alpha in enumerate_multi_indices(d, 4):
        nz = [a for a in alpha if a]
        if nz == [4]:
            ent[alpha] = 1
        elif nz == [2, 2]:
            ent[alpha] = Fraction(1, 3)
    return SymTensor.from_entries(4, d, ent, exact=exact)


def _quartic_third(x):
    d = x.size
    ent = {}
    for alpha in enumerate_multi_indices(d, 3):
        nz = [j for j, a in enumerate(alpha) if a]
        if len(nz) == 1:
            ent[alpha] = x[nz[0]]
        elif len(nz) == 2:
            j = nz[0] if alpha[nz[0]] == 1 else nz[1]
            ent[alpha] = x[j] / 3
    return SymTensor.from_entries(3, d, ent)


def quartic_problem(d, n, L=1):
    """u = ||x||^2/2 + ||x||^4/24, g = 1, minimizer 0, H = I."""
    def u(X):
        X = np.atleast_2d(X)
        s = np.sum(X * X, axis=1)
        return 0.5 * s + s * s / 24

    def u_derivs(k, x):
        x = np.asarray(x, dtype=float).reshape(d)
        ex = _exact_point(x)
        s = float(x @ x)
        if k == 0:
            return SymTensor(0, d, [0.5 * s + s * s / 24])
        if k == 1:
            return SymTensor(1, d, x + s * x / 6)
        if k == 2:
            if ex:
                ent = {tuple(2 * np.eye(d, dtype=int)[i]): 1 for i in range(d)}
                return SymTensor.from_entries(2, d, ent, exact=True)
            return SymTensor.from_dense(np.eye(d) * (1 + s / 6) + np.outer(x, x) / 3)
        if k == 3:
            return SymTensor.zeros(3, d, exact=True) if ex else _quartic_third(x)
        if k == 4:
            return quartic_tensor(d, exact=ex)
        return SymTensor.zeros(k, d, exact=ex)

    return ProblemSpec(d=d, n=n, u=u, g=_ones, x0=np.zeros(d), H=WeightMatrix.identity(d),
                       u_derivs=u_derivs, g_derivs=_const_g_derivs(d), L=L,
                       envelope_asserted=True, convex=True, name="quartic",
                       params={"d": d, "n": n})


def stirling_problem(n, L=1):
    """One-dimensional u = x - log(1 + x) on x > -1, g = 1.

    The normalized integral equals Gamma(n+1) / (sqrt(2 pi n) (n/e)^n).
    """
    def u(X):
        x = np.atleast_2d(X)[:, 0]
        out = np.full(x.shape, np.inf)
        ok = x > -1
        out[ok] = x[ok] - np.log1p(x[ok])
        return out

    def nu_excess(X):
        return n * u(X)

    def u_derivs(k, x):
        x = float(np.asarray(x).reshape(-1)[0])
        if x <= -1:
            raise ValueError("Stirling potential is defined for x > -1 only")
        if x == 0:
            if k == 0:
                val = Fraction(0)
            elif k == 1:
                val = Fraction(0)
            else:
                val = Fraction((-1) ** k * math.factorial(k - 1))
            return SymTensor(k, 1, np.array([val], dtype=object))
        if k == 0:
            val = x - math.log1p(x)
        elif k == 1:
            val = 1 - 1 / (1 + x)
        else:
            val = (-1) ** k * math.factorial(k - 1) / (1 + x) ** k
        return SymTensor(k, 1, [val])

    return ProblemSpec(d=1, n=n, u=u, g=_ones, x0=np.zeros(1), H=WeightMatrix.identity(1),
                       u_derivs=u_derivs, g_derivs=_const_g_derivs(1), L=L,
                       nu_excess=nu_excess, envelope_asserted=False, convex=True,
                       name="stirling1d", params={"n": n})


def stirling_exact(n):
    """Gamma(n+1) / (sqrt(2 pi n) (n/e)^n) in high precision (mpmath mpf)."""
    import mpmath as mp

    n = mp.mpf(n)
    return mp.exp(mp.loggamma(n + 1) - 0.5 * mp.log(2 * mp.pi * n) - n * mp.log(n) + n)


BUILTINS = ("gaussian", "quartic", "stirling1d", "glm-logistic")


def builtin_problem(name, **params):
    """Construct a builtin ProblemSpec by name."""
    L = int(params.get("L", 1))
    if name == "gaussian":
        return gaussian_problem(int(params["d"]), float(params["n"]), L=L)
    if name == "quartic":
        return quartic_problem(int(params["d"]), float(params["n"]), L=L)
    if name in ("stirling", "stirling1d"):
        return stirling_problem(float(params["n"]), L=L)
    if name == "glm-logistic":
        from .glm import GlmInstance, glm_potential

        inst = GlmInstance.random(int(params["n"]), int(params["d"]), int(params.get("seed", 0)))
        return glm_potential(inst, g=params.get("g", "constant"), L=L)
    raise ValueError(f"unknown builtin problem {name!r}; choose from {BUILTINS}")


def load_problem(obj):
    """Parse a problem document.

    Either ``{"builtin": name, "params": {...}}`` giving a ProblemSpec, or
    ``{"jet": {"fjet": [...], "vjet": [...]}, "n": ...}`` giving a LocalJet
    supplied inline.  Returns a pair (ProblemSpec or None, LocalJet or None).
    """
    if "builtin" in obj:
        params = dict(obj.get("params", {}))
        return builtin_problem(obj["builtin"], **params), None
    if "jet" in obj:
        return None, LocalJet.from_json(obj["jet"])
    raise ValueError("problem document needs a 'builtin' or a 'jet' field")
