"""Generalized linear model example.

u(x) = (1/n) sum_i phi(X_i^T x) - (1/n) sum_i phi'(X_i^T x0) X_i^T x

with Gaussian design rows X_i and a strictly convex link phi.  By
construction x0 is the unique minimizer and

    grad^k u(x) = (1/n) sum_i phi^{(k)}(X_i^T x) X_i^{(x)k},   k >= 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import expit

from .problem import ProblemSpec
from .rng import chunk_generator
from .tensor_core import SymTensor, WeightMatrix, _sphere_maximize, monomials

LINK_MAX_ORDER = 14


# --------------------------------------------------------------------------
# Links
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _logistic_polys(k_max):
    """Coefficient arrays p_k (in sigma) with phi^{(k)} = p_k(sigma), k >= 1."""
    polys = {1: np.array([0.0, 1.0])}
    dsig = np.array([0.0, 1.0, -1.0])  # sigma' = sigma (1 - sigma)
    for k in range(1, k_max):
        polys[k + 1] = P.polymul(P.polyder(polys[k]), dsig)
    return polys


def logistic_derivs(t, k_max):
    """[phi(t), phi'(t), ..., phi^{(k_max)}(t)] for phi(t) = log(1 + e^t)."""
    if k_max > LINK_MAX_ORDER:
        raise ValueError(f"logistic derivatives are available up to order {LINK_MAX_ORDER}")
    t = np.asarray(t, dtype=float)
    sig = expit(t)
    out = [np.logaddexp(0.0, t)]
    polys = _logistic_polys(max(k_max, 1))
    for k in range(1, k_max + 1):
        out.append(P.polyval(sig, polys[k]))
    return out


def quadratic_derivs(t, k_max):
    """phi(t) = t^2/2 (constant curvature, all derivatives beyond 2 vanish)."""
    t = np.asarray(t, dtype=float)
    out = [0.5 * t * t, t.copy(), np.ones_like(t)]
    out += [np.zeros_like(t) for _ in range(3, k_max + 1)]
    return out[: k_max + 1]


LINKS = {"logistic": logistic_derivs, "quadratic": quadratic_derivs}


@lru_cache(maxsize=None)
def link_sup_norm(link, k):
    """sup_t |phi^{(k)}(t)|."""
    if link == "quadratic":
        return 1.0 if k == 2 else 0.0
    if k == 1:
        return 1.0
    sig = np.linspace(0.0, 1.0, 200001)
    return float(np.max(np.abs(P.polyval(sig, _logistic_polys(k)[k]))))


# --------------------------------------------------------------------------
# Instances
# --------------------------------------------------------------------------

def sample_design(n, d, seed):
    """n x d matrix with i.i.d. standard Gaussian entries, fixed by seed."""
    return chunk_generator(seed, 0).standard_normal((n, d))


@dataclass
class GlmInstance:
    X: np.ndarray
    x0: np.ndarray
    link: str = "logistic"
    seed: int = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != self.x0.size:
            raise ValueError("design must be n x d with d = len(x0)")
        if abs(np.linalg.norm(self.x0) - 1.0) > 1e-12:
            raise ValueError("x0 must have unit norm")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")

    @classmethod
    def random(cls, n, d, seed, link="logistic"):
        X = sample_design(n, d, seed)
        w = chunk_generator(seed, 1).standard_normal(d)
        return cls(X=X, x0=w / np.linalg.norm(w), link=link, seed=seed)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def phi(self, t, k_max):
        return LINKS[self.link](t, k_max)

    def hessian(self):
        w = self.phi(self.X @ self.x0, 2)[2]
        return (self.X * w[:, None]).T @ self.X / self.n


# --------------------------------------------------------------------------
# Potential
# --------------------------------------------------------------------------

def _g_builtin(kind, x0):
    d = x0.size
    if kind == "constant":
        def g(X):
            return np.ones(np.atleast_2d(X).shape[0])

        def gd(k, x):
            if k == 0:
                return SymTensor(0, d, [1.0])
            return SymTensor.zeros(k, d)
        return g, gd
    if kind == "linear":
        w = np.ones(d) / math.sqrt(d)

        def g(X):
            return 1.0 + (np.atleast_2d(X) - x0) @ w

        def gd(k, x):
            if k == 0:
                return SymTensor(0, d, [1.0 + float((np.asarray(x) - x0) @ w)])
            if k == 1:
                return SymTensor(1, d, w)
            return SymTensor.zeros(k, d)
        return g, gd
    if kind == "quadratic":
        def g(X):
            Y = np.atleast_2d(X) - x0
            return 1.0 + np.sum(Y * Y, axis=1)

        def gd(k, x):
            y = np.asarray(x, dtype=float) - x0
            if k == 0:
                return SymTensor(0, d, [1.0 + float(y @ y)])
            if k == 1:
                return SymTensor(1, d, 2 * y)
            if k == 2:
                return SymTensor.from_dense(2 * np.eye(d))
            return SymTensor.zeros(k, d)
        return g, gd
    raise ValueError(f"unknown builtin g {kind!r}; choose constant, linear or quadratic")


def glm_potential(inst, g="constant", L=1):
    """ProblemSpec for the GLM potential with analytic derivative tensors."""
    X, x0, n, d = inst.X, inst.x0, inst.n, inst.d
    a0 = X @ x0
    phi0 = inst.phi(a0, 2)
    shift = X.T @ phi0[1] / n
    u0 = float(np.mean(phi0[0]) - shift @ x0)

    def u(Y):
        A = np.atleast_2d(Y) @ X.T
        return np.mean(inst.phi(A, 0)[0], axis=1) - np.atleast_2d(Y) @ shift

    def nu_excess(Y):
        A = np.atleast_2d(Y) @ X.T
        return np.sum(inst.phi(A, 0)[0] - phi0[0] - phi0[1] * (A - a0), axis=1)

    def u_derivs(k, x):
        a = X @ np.asarray(x, dtype=float)
        ph = inst.phi(a, k)[k]
        if k == 0:
            return SymTensor(0, d, [float(np.mean(ph) - shift @ x)])
        if k == 1:
            return SymTensor(1, d, X.T @ ph / n - shift)
        return SymTensor(k, d, monomials(X, k).T @ ph / n)

    H = inst.hessian()
    try:
        W = WeightMatrix(H)
    except ValueError as exc:
        lam = float(np.linalg.eigvalsh(H)[0])
        raise ValueError(f"GLM Hessian is not positive definite (smallest eigenvalue {lam:.3e})") from exc
    if callable(g):
        gfun, gder = g, None
        gname = "custom"
    elif isinstance(g, tuple):
        gfun, gder = g
        gname = "custom"
    else:
        gfun, gder = _g_builtin(g, x0)
        gname = g
    spec = ProblemSpec(d=d, n=n, u=u, g=gfun, x0=x0, H=W, u_derivs=u_derivs, g_derivs=gder,
                       L=L, nu_excess=nu_excess, envelope_asserted=False, convex=True,
                       name="glm-logistic" if inst.link == "logistic" else f"glm-{inst.link}",
                       params={"n": n, "d": d, "seed": inst.seed, "g": gname, "link": inst.link})
    spec.u0_value = u0
    return spec


# --------------------------------------------------------------------------
# A_2
# --------------------------------------------------------------------------

def glm_a2(inst, gjet):
    """A_2 from the four-block GLM formula with t_lm = X_l^T H^{-1} X_m.

    ``gjet`` is (g(x0), grad g(x0), Hessian of g at x0) as arrays.
    """
    g0, g1, g2 = gjet
    g1 = np.asarray(g1, dtype=float).reshape(inst.d)
    g2 = np.atleast_2d(np.asarray(g2, dtype=float))
    X, n = inst.X, inst.n
    H = inst.hessian()
    Hinv_X = np.linalg.solve(H, X.T)          # d x n
    t = X @ Hinv_X                              # n x n
    ph = inst.phi(X @ inst.x0, 4)
    p3, p4 = ph[3], ph[4]
    tdiag = np.diag(t)
    trace = 0.5 * np.trace(np.linalg.solve(H, g2.T).T)
    single = -(1 / (2 * n)) * np.sum(p3 * (g1 @ Hinv_X) * tdiag)
    quart = -(g0 / (8 * n)) * np.sum(p4 * tdiag**2)
    pair = (g0 / n**2) * float(p3 @ (t**3 / 12 + t * np.outer(tdiag, tdiag) / 8) @ p3)
    return float(trace + single + quart + pair)


# --------------------------------------------------------------------------
# Empirical derivative norms
# --------------------------------------------------------------------------

def unweighted_norm(inst, k, x, starts=32, seed=0, tol=1e-9, max_iter=500):
    """sup_{|u| = 1} |(1/n) sum_i phi^{(k)}(X_i^T x) (X_i^T u)^k| by streaming ascent."""
    X, n = inst.X, inst.n
    w = inst.phi(X @ np.asarray(x, dtype=float), k)[k] / n
    if k == 2:
        M = (X * w[:, None]).T @ X
        return float(np.max(np.abs(np.linalg.eigvalsh(M))))

    def make(sign):
        def value_grad(U):
            A = U @ X.T
            Ak1 = A ** (k - 1)
            val = sign * (Ak1 * A) @ w
            grad = sign * k * (Ak1 * w) @ X
            return val, grad
        return value_grad

    best = 0.0
    for sgn in ((1.0,) if k % 2 else (1.0, -1.0)):
        val, _ = _sphere_maximize(make(sgn), inst.d, starts, tol=tol, max_iter=max_iter, seed=seed)
        best = max(best, val)
    return best


def moment_sup(inst, k, starts=32, seed=0):
    """sup_{|u| = 1} (1/n) sum_i |X_i^T u|^k."""
    X, n = inst.X, inst.n

    def value_grad(U):
        A = U @ X.T
        absA = np.abs(A)
        val = np.mean(absA**k, axis=1)
        grad = k * ((absA ** (k - 1)) * np.sign(A)) @ X / n
        return val, grad

    return _sphere_maximize(value_grad, inst.d, starts, seed=seed)[0]


def gaussian_abs_moment(k):
    """E|Z|^k for a standard normal Z."""
    return 2 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)


@dataclass
class NormBandReport:
    d: int
    n: int
    lambda_min: float
    unweighted0: dict
    unweightedR: dict
    weighted_bound0: dict
    weighted_boundR: dict
    band_shape: dict
    fitted_C: dict = field(default_factory=dict)


def empirical_norm_profile(inst, k_max, R, m=32, seed=0, starts=16):
    """Unweighted derivative norms at x0 and over the ball of radius R sqrt(d/n).

    The returned profiles take g = 1.

    Weighted values use ||T||_H <= lambda_min(H)^{-k/2} ||T||.  ``fitted_C``
    is the unweighted norm divided by the band shape 1 + d^{k/2}/n.
    """
    from .bounds import DerivNormProfile

    d, n = inst.d, inst.n
    H = WeightMatrix(inst.hessian())
    lam = H.lambda_min
    radius = R * math.sqrt(d / n)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((m, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = [inst.x0] + [inst.x0 + radius * H.inv_sqrt @ w for w in dirs]
    u0, uR, b0, bR, shape, fit = {}, {}, {}, {}, {}, {}
    for k in range(2, k_max + 1):
        u0[k] = unweighted_norm(inst, k, inst.x0, starts=starts, seed=seed)
        uR[k] = max([u0[k]] + [unweighted_norm(inst, k, x, starts=starts, seed=seed) for x in pts[1:]])
        b0[k] = lam ** (-k / 2) * u0[k]
        bR[k] = lam ** (-k / 2) * uR[k]
        shape[k] = 1 + d ** (k / 2) / n
        fit[k] = u0[k] / shape[k]
    rep = NormBandReport(d=d, n=n, lambda_min=lam, unweighted0=u0, unweightedR=uR,
                         weighted_bound0=b0, weighted_boundR=bR, band_shape=shape, fitted_C=fit)
    c0 = {k: b0[k] for k in range(3, k_max + 1)}
    cR = {k: bR[k] for k in range(3, k_max + 1)}
    # the profile describes g = 1
    cg = {k: (1.0 if k == 0 else 0.0) for k in range(0, max(k_max - 1, 1))}
    prof0 = DerivNormProfile(0.0, c0, dict(cg), "sampled")
    profR = DerivNormProfile(R, cR, dict(cg), "sampled")
    return prof0, profR, rep


def analytic_global_profile(inst, L, R, starts=32, seed=0):
    """Global upper-bound profile c_k <= lambda^{-k/2} sup|phi^{(k)}| sup_u mean|X_i^T u|^k.

    The moment sup is computed by ascent, so the bound inherits its lower-bound caveat.
    """
    from .bounds import DerivNormProfile

    lam = float(np.linalg.eigvalsh(inst.hessian())[0])
    c = {}
    for k in range(3, 2 * L + 3):
        c[k] = lam ** (-k / 2) * link_sup_norm(inst.link, k) * moment_sup(inst, k, starts, seed)
    cg = {k: (1.0 if k == 0 else 0.0) for k in range(0, 2 * L + 1)}
    return (DerivNormProfile(0.0, dict(c), dict(cg), "analytic"),
            DerivNormProfile(R, dict(c), dict(cg), "analytic"))


def event_H_frequency(n, d, seeds, lam=0.05):
    """Fraction of seeds whose Hessian satisfies H > lam I."""
    hits = 0
    for s in seeds:
        H = GlmInstance.random(n, d, s).hessian()
        hits += float(np.linalg.eigvalsh(H)[0]) > lam
    return hits / len(seeds)
