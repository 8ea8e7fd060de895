"""Remainder certification ladder.

c_k(r)      sup of ||grad^k u(x0 + y)||_H over ||y||_H <= r sqrt(d/n)
c_{k,g}(r)  the same for g
cbar_k(R)   c_k(0) + eps c_{k+1}(R) for odd k (cbar_k(0) = c_k(0))
alpha_k     d-downweighted ladder entries
calA_k      sum_l alpha_{k-l,g} B_l(alpha_1, ..., alpha_l)

Every kernel suppresses the L-dependent constant (it is set to 1), so the
numbers are meaningful up to scaling only.  Sampled suprema are lower bounds
of the true suprema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bell import bell_sequence
from .rng import chunk_generator, chunk_sizes
from .tensor_core import SymTensor, contract_batch, operator_norm


class StrictModeError(ValueError):
    pass


def radius_default(d, n, L):
    """R = 20 max((L/d) ln(n/d^2), 2)."""
    return 20.0 * max(L / d * math.log(n / d**2), 2.0)


@dataclass
class DerivNormProfile:
    r: float
    c: dict
    cg: dict
    method: str = "sampled"

    def to_json(self):
        return {"r": self.r, "method": self.method,
                "c": {str(k): v for k, v in sorted(self.c.items())},
                "cg": {str(k): v for k, v in sorted(self.cg.items())}}

    def merged_max(self, other):
        """Entrywise max with another profile (union of sampled point sets)."""
        c = {k: max(v, other.c.get(k, 0.0)) for k, v in self.c.items()}
        cg = {k: max(v, other.cg.get(k, 0.0)) for k, v in self.cg.items()}
        return DerivNormProfile(self.r, c, cg, self.method)


# --------------------------------------------------------------------------
# Derivative norms
# --------------------------------------------------------------------------

def _ball_points(p, radius, m, seed):
    """Center plus m points of the H-ball of the given radius (directions x radial ladder)."""
    rng = np.random.default_rng(seed)
    radii = np.array([0.25, 0.5, 0.75, 1.0])
    n_dir = max(1, m // len(radii))
    W = rng.standard_normal((n_dir, p.d))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    Y = (radius * radii[:, None, None] * W[None, :, :]).reshape(-1, p.d)
    Y = np.vstack([np.zeros(p.d), Y])
    return p.x0 + Y @ p.H.inv_sqrt


def sup_norm_on_ball(p, which, k, r, m=64, seed=0, polish=8, starts=16):
    """Sampled sup of ||grad^k (u or g)||_H over ||y||_H <= r sqrt(d/n)."""
    W = p.H
    if r == 0:
        return operator_norm(p.derivative(which, k, p.x0), W)
    radius = r * math.sqrt(p.d / p.n)
    pts = _ball_points(p, radius, m, seed)
    vals = np.array([operator_norm(p.derivative(which, k, x), W, starts=starts) for x in pts])
    best = int(np.argmax(vals))
    out = float(vals[best])
    if polish and best > 0:
        rng = np.random.default_rng(seed + 1)
        y = W.sqrt @ (pts[best] - p.x0)
        for _ in range(polish):
            cand = y / np.linalg.norm(y) + 0.2 * rng.standard_normal(p.d)
            cand = radius * cand / np.linalg.norm(cand)
            x = p.x0 + W.inv_sqrt @ cand
            out = max(out, operator_norm(p.derivative(which, k, x), W, starts=starts))
    return out


def deriv_norms(p, R, L, m=64, seed=0, previous=None, starts=16):
    """Profiles (at r = 0 and r = R) of c_k, k = 3..2L+2, and c_{k,g}, k = 0..2L.

    ``previous`` is an optional profile at a smaller radius whose values are
    merged in, which keeps the sampled sup monotone in R.
    """
    c0 = {k: sup_norm_on_ball(p, "u", k, 0.0) for k in range(3, 2 * L + 3)}
    cg0 = {k: sup_norm_on_ball(p, "g", k, 0.0) for k in range(0, 2 * L + 1)}
    prof0 = DerivNormProfile(0.0, c0, cg0, "exact-point")
    cR = {k: max(c0[k], sup_norm_on_ball(p, "u", k, R, m, seed, starts=starts))
          for k in range(3, 2 * L + 3)}
    cgR = {k: max(cg0[k], sup_norm_on_ball(p, "g", k, R, m, seed, starts=starts))
           for k in range(0, 2 * L + 1)}
    profR = DerivNormProfile(R, cR, cgR, "sampled")
    if previous is not None:
        profR = profR.merged_max(previous)
    return prof0, profR


# --------------------------------------------------------------------------
# Alpha ladder
# --------------------------------------------------------------------------

@dataclass
class AlphaProfile:
    d: int
    eps: float
    L: int
    refined: bool
    cbar: dict = field(default_factory=dict)       # (tag, k) -> value, tag in {0, 'R'}
    cbar_g: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)      # (tag, k) -> alpha_k
    alpha_g: dict = field(default_factory=dict)    # (tag, k) -> alpha_{k,g}

    def seq(self, tag, k):
        return [self.alpha[(tag, j)] for j in range(1, k + 1)]

    def to_json(self):
        def tab(dct):
            out = {}
            for (tag, k), v in sorted(dct.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
                out.setdefault(str(tag), {})[str(k)] = v
            return out

        return {"refined": self.refined, "cbar": tab(self.cbar), "cbar_g": tab(self.cbar_g),
                "alpha": tab(self.alpha), "alpha_g": tab(self.alpha_g)}


def _need(dct, k, what):
    if k not in dct:
        raise KeyError(f"profile is missing {what} of order {k}")
    return dct[k]


def alphas(profile0, profileR, d, n, refined=False, L=None):
    """alpha_k(r), k = 1..2L, and alpha_{k,g}(r), k = 0..2L, at r in {0, R}.

    With ``refined`` the odd-k entries use min(cbar_{k+2}, sqrt(d) c_{k+2})
    with the d^{(1-k)/2} weight (likewise for g).
    """
    if L is None:
        L = (max(profile0.c) - 2) // 2
    eps = d / math.sqrt(n)
    ap = AlphaProfile(d=d, eps=eps, L=L, refined=refined)
    profs = {0: profile0, "R": profileR}
    for tag, prof in profs.items():
        for k in range(3, 2 * L + 3):
            c0 = _need(profile0.c, k, "c")
            if k % 2 == 1:
                ap.cbar[(tag, k)] = c0 if tag == 0 else c0 + eps * _need(profileR.c, k + 1, "c")
            else:
                ap.cbar[(tag, k)] = _need(prof.c, k, "c")
        for k in range(0, 2 * L + 1):
            c0 = _need(profile0.cg, k, "c_g")
            if k % 2 == 1:
                ap.cbar_g[(tag, k)] = c0 if tag == 0 else c0 + eps * _need(profileR.cg, k + 1, "c_g")
            else:
                ap.cbar_g[(tag, k)] = _need(prof.cg, k, "c_g")
        for k in range(1, 2 * L + 1):
            cb = ap.cbar[(tag, k + 2)]
            if k % 2 == 1:
                if refined:
                    val = d ** ((1 - k) / 2) * min(cb, math.sqrt(d) * _need(prof.c, k + 2, "c"))
                else:
                    val = d ** (1 - math.ceil(k / 2)) * cb
            else:
                val = d ** (1 - math.ceil(k / 2)) * cb
            ap.alpha[(tag, k)] = val
        for k in range(0, 2 * L + 1):
            cb = ap.cbar_g[(tag, k)]
            if k % 2 == 1 and refined:
                val = d ** (-(k + 1) / 2) * min(cb, math.sqrt(d) * _need(prof.cg, k, "c_g"))
            else:
                val = d ** (-math.ceil(k / 2)) * cb
            ap.alpha_g[(tag, k)] = val
    return ap


def calA(alpha, k, tag="R"):
    """calA_k(r) = sum_l alpha_{k-l,g}(r) B_l(alpha_1(r), ..., alpha_l(r))."""
    B = bell_sequence(k, alpha.seq(tag, k))
    return sum(alpha.alpha_g[(tag, k - ell)] * B[ell] for ell in range(k + 1))


def calA_from_lists(alpha_seq, alpha_g_seq, k):
    """calA_k from plain lists: alpha_seq[j-1] = alpha_j, alpha_g_seq[j] = alpha_{j,g}."""
    B = bell_sequence(k, alpha_seq)
    return sum(alpha_g_seq[k - ell] * B[ell] for ell in range(k + 1))


# --------------------------------------------------------------------------
# Certificate
# --------------------------------------------------------------------------

@dataclass
class RemainderCertificate:
    L: int
    d: int
    n: float
    eps: float
    R: float
    kappa_kernel: float
    log_kappa_kernel: float
    tauL_kernel: float
    tauUc_bound: float
    combined_tail_kernel: float
    exponent: float
    exponent_factor: float
    calA0: dict
    calAR: dict
    alpha: AlphaProfile
    profile0: DerivNormProfile
    profileR: DerivNormProfile
    method: str
    constants_tracked: bool = False

    def to_json(self):
        def fin(x):
            return float(x) if np.isfinite(x) else None

        return {
            "L": self.L, "d": self.d, "n": self.n, "epsilon": self.eps, "R": self.R,
            "kappa_kernel": fin(self.kappa_kernel),
            "log_kappa_kernel": fin(self.log_kappa_kernel),
            "tauL_kernel": fin(self.tauL_kernel),
            "tauUc_bound": fin(self.tauUc_bound),
            "combined_tail_kernel": fin(self.combined_tail_kernel),
            "exponent": fin(self.exponent),
            "exponent_factor": fin(self.exponent_factor),
            "calA": {"0": {str(k): fin(v) for k, v in self.calA0.items()},
                     "R": {str(k): fin(v) for k, v in self.calAR.items()}},
            "alpha": self.alpha.to_json(),
            "profiles": {"0": self.profile0.to_json(), "R": self.profileR.to_json()},
            "method": self.method,
            "constants_tracked": self.constants_tracked,
        }


def tau_uc(d, R):
    """d exp(-R d / 16)."""
    return d * math.exp(-R * d / 16)


def certificate(profile0, profileR, d, n, L, R=None, refined=False, strict=False):
    """Bound kernels for the three remainder pieces (constants set to 1)."""
    if R is None:
        R = profileR.r
    if strict and R < 40:
        raise StrictModeError(f"radius R = {R} is below 40")
    eps = d / math.sqrt(n)
    ap = alphas(profile0, profileR, d, n, refined=refined, L=L)
    A0 = {k: calA(ap, k, 0) for k in range(0, 2 * L + 1)}
    AR = {k: calA(ap, k, "R") for k in range(0, 2 * L + 1)}
    c3R = profileR.c[3]
    c4R = profileR.c.get(4, 0.0)
    exponent = (R**4 * c3R**2 + c4R) * eps**2
    factor = math.exp(exponent) if exponent < 700 else math.inf
    a2L = AR[2 * L]
    if a2L > 0:
        log_kappa = exponent + math.log(a2L) + 2 * L * math.log(eps)
        kappa = math.exp(log_kappa) if log_kappa < 700 else math.inf
    else:
        log_kappa = -math.inf
        kappa = 0.0
    head = max(A0[k] * eps**k for k in range(0, 2 * L))
    tauL = head * math.exp(-((R - 1) ** 2) * d / 4)
    combined = max(1.0, head) * eps ** (4 * L)
    method = "analytic" if profileR.method == "analytic" else "sampled"
    return RemainderCertificate(
        L=L, d=d, n=n, eps=eps, R=R, kappa_kernel=kappa, log_kappa_kernel=log_kappa,
        tauL_kernel=tauL, tauUc_bound=tau_uc(d, R), combined_tail_kernel=combined,
        exponent=exponent, exponent_factor=factor, calA0=A0, calAR=AR, alpha=ap,
        profile0=profile0, profileR=profileR, method=method,
    )


# --------------------------------------------------------------------------
# Growth conditions
# --------------------------------------------------------------------------

def growth_thresholds(d, L, tau=1.0):
    """Threshold table {(name, k): bound} with unit implied constants."""
    t = {}
    for k in range(1, 2 * L, 2):
        t[("cg0", k)] = d ** ((k + 1) / 2) * tau**k
    for k in range(3, 2 * L + 2, 2):
        t[("c0", k)] = d ** ((k + 1) / 2 - 2) * tau ** (k - 2)
    for k in range(0, 2 * L + 1, 2):
        t[("cgR", k)] = d ** (k / 2) * tau**k
    for k in range(4, 2 * L + 3, 2):
        t[("cR", k)] = d ** (k / 2 - 2) * tau ** (k - 2)
    return t


def check_growth_conditions(profile0, profileR, d, n, L, tau=1.0, constants=None):
    """Report on the growth-condition ladder.

    ``constants`` optionally maps (name, k) to an implied constant multiplying
    the threshold; missing entries default to 1.  Margins are threshold minus
    value (non-negative means the inequality holds).
    """
    constants = constants or {}
    eps = d / math.sqrt(n)
    lhs_tau = tau * eps
    rhs_tau = min(d**2 / math.log(n / d**2) ** 2, 1.0) if n > d**2 else 1.0
    rows = []
    src = {"cg0": profile0.cg, "c0": profile0.c, "cgR": profileR.cg, "cR": profileR.c}
    for (name, k), thr in growth_thresholds(d, L, tau).items():
        C = constants.get((name, k), 1.0)
        val = src[name][k]
        rows.append({"name": name, "k": k, "value": val, "threshold": C * thr,
                     "constant": C, "margin": C * thr - val, "ok": val <= C * thr})
    tau_ok = lhs_tau <= rhs_tau
    violations = [r for r in rows if not r["ok"]]
    if not tau_ok:
        violations.append({"name": "tau-eps", "k": None, "value": lhs_tau,
                           "threshold": rhs_tau, "margin": rhs_tau - lhs_tau, "ok": False})
    R = profileR.r
    ap = alphas(profile0, profileR, d, n, L=L)
    conclusions = {
        "calA_R_over_tau": {j: calA(ap, j, "R") / tau**j for j in range(0, 2 * L + 1)},
        "exponent": (R**4 * profileR.c[3] ** 2 + profileR.c.get(4, 0.0)) * eps**2,
    }
    return {"ok": not violations, "violations": violations, "rows": rows,
            "tau_eps": {"value": lhs_tau, "threshold": rhs_tau, "ok": tau_ok},
            "conclusions": conclusions}


# --------------------------------------------------------------------------
# Gaussian chaos moments
# --------------------------------------------------------------------------

def chaos_bound_shape(d, k):
    return d ** ((k - 1) / 2) if k % 2 == 1 else d ** (k / 2)


def chaos_moment_check(T, k=None, q=4, samples=10**6, seed=0, norm=None, chunk=1 << 15):
    """MC estimate of E[<T, Z^k>^q]^{1/q} and its ratio to ||T|| d^{(k-1)/2} (odd k)
    or ||T|| d^{k/2} (even k)."""
    k = T.order if k is None else k
    if k != T.order:
        raise ValueError("k must equal the tensor order")
    if q % 2:
        raise ValueError("q must be even")
    d = T.dim
    tot = 0.0
    tot_sq = 0.0
    cnt = 0
    for c, size in enumerate(chunk_sizes(samples, chunk)):
        Z = chunk_generator(seed, c).standard_normal((size, d))
        vals = contract_batch(T, Z) ** q
        tot += float(vals.sum())
        tot_sq += float((vals * vals).sum())
        cnt += size
    m = tot / cnt
    se_m = math.sqrt(max(tot_sq / cnt - m * m, 0.0) / cnt)
    emp = m ** (1 / q)
    se_emp = (se_m / (q * m ** (1 - 1 / q))) if m > 0 else 0.0
    tn = operator_norm(T) if norm is None else norm
    shape = tn * chaos_bound_shape(d, k)
    return {"empirical": emp, "stderr": se_emp, "moment": m, "moment_stderr": se_m,
            "norm": tn, "ratio_to_bound_shape": emp / shape if shape > 0 else math.nan}


def chaos_family(name, d):
    """Order-3 test tensors indexed by dimension.

    ``uniform``: every entry d^{-3/2}, so <T, x^3> = (sum x / sqrt d)^3.
    ``e1-perp``: <T, x^3> = x_1 (x_2^2 + ... + x_d^2), the symmetrization of
    e_1 tensor the projector onto e_1's complement; its operator norm is
    2 / (3 sqrt 3) for every d >= 2.
    """
    from fractions import Fraction

    from .tensor_core import enumerate_multi_indices

    if name == "uniform":
        vals = np.full(len(enumerate_multi_indices(d, 3)), d ** -1.5)
        return SymTensor(3, d, vals)
    if name == "e1-perp":
        if d < 2:
            raise ValueError("e1-perp needs d >= 2")
        ent = {}
        for j in range(1, d):
            alpha = [0] * d
            alpha[0] = 1
            alpha[j] = 2
            ent[tuple(alpha)] = Fraction(1, 3)
        return SymTensor.from_entries(3, d, ent, exact=False)
    raise ValueError(f"unknown chaos family {name!r}")


def chaos_scaling(family="e1-perp", dims=(2, 4, 8, 16), q=4, samples=10**6, seed=0):
    """Fitted exponent of E[<T, Z^3>^q]^{1/q} / ||T|| against d."""
    rows = []
    for d in dims:
        T = chaos_family(family, d)
        res = chaos_moment_check(T, q=q, samples=samples, seed=seed + d)
        rows.append({"d": d, "empirical": res["empirical"], "stderr": res["stderr"],
                     "norm": res["norm"], "scaled": res["empirical"] / res["norm"]})
    slope = float(np.polyfit(np.log(dims), np.log([r["scaled"] for r in rows]), 1)[0])
    return {"family": family, "q": q, "rows": rows, "slope": slope}
