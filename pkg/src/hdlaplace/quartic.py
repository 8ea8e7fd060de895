"""Closed-form quartic family u(x) = ||x||^2/2 + ||x||^4/24 with g = 1.

The normalized integral reduces to a one-dimensional integral: with
T = ||Z||^2 / 2 ~ Gamma(d/2),

    I(d, n) = E[exp(-T^2 / (6n))] = (1/Gamma(d/2)) int_0^inf t^{d/2-1} e^{-t - t^2/(6n)} dt.

Its expansion coefficients are A_{2k} = (-1/6)^k prod_{j<2k} (d/2 + j) / k!.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import mpmath as mp
import numpy as np


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuarticInstance:
    d: int
    n: float
    L: int = 1

    def __post_init__(self):
        if self.d < 1 or self.n <= 0:
            raise ValueError("need d >= 1 and n > 0")

    @property
    def eps2(self):
        return self.d**2 / self.n

    @property
    def tightness_regime(self):
        return self.eps2 <= 0.25


def quartic_coeff(k, d):
    """A_{2k} as an exact rational."""
    if k < 0:
        raise ValueError("k must be non-negative")
    half = Fraction(d, 2)
    prod = Fraction(1)
    for j in range(2 * k):
        prod *= half + j
    return Fraction(-1, 6) ** k * prod / math.factorial(k)


def _integral_mp(d, n, dps):
    with mp.workdps(dps):
        a = mp.mpf(d) / 2
        nn = mp.mpf(n)

        def integrand(t):
            return t ** (a - 1) * mp.exp(-t - t * t / (6 * nn))

        # split at the bulk of the Gamma(d/2) mass so tanh-sinh sees smooth pieces
        pts = [0, a, a + 10 * mp.sqrt(a) + 10, mp.inf]
        val, err = mp.quad(integrand, pts, error=True)
        return val / mp.gamma(a), err / mp.gamma(a)


def quartic_integral_exact(d, n, dps=40, as_mpf=False):
    """Normalized quartic integral by tanh-sinh quadrature.

    The value is computed at ``dps`` and ``dps + 20`` digits; their
    difference must be below 1e-12 relative.
    """
    v1, _ = _integral_mp(d, n, dps)
    v2, _ = _integral_mp(d, n, dps + 20)
    with mp.workdps(dps + 20):
        if abs(v1 - v2) > mp.mpf("1e-12") * abs(v2):
            raise QuadratureError(f"quartic quadrature did not converge (d={d}, n={n})")
    return v2 if as_mpf else float(v2)


def quartic_remainder(L, d, n, dps=40, require_regime=True, as_mpf=False):
    """Rem_L = I(d, n) - 1 - sum_{k=1}^{L-1} A_{2k} n^{-k}.

    Precision is escalated until two evaluations agree to 1% of |Rem_L|.
    """
    if require_regime and d * d / n > 0.25:
        raise ValueError("quartic remainder claims require d^2/n <= 1/4")
    prev = None
    for digits in (dps, dps + 20, dps + 40, dps + 80):
        with mp.workdps(digits + 10):
            val = quartic_integral_exact(d, n, dps=digits, as_mpf=True)
            nn = mp.mpf(n)
            rem = val - 1
            for k in range(1, L):
                c = quartic_coeff(k, d)
                rem -= mp.mpf(c.numerator) / c.denominator / nn**k
            if prev is not None and abs(rem - prev) <= mp.mpf("0.01") * abs(rem):
                return rem if as_mpf else float(rem)
            prev = rem
    raise QuadratureError("remainder not resolved to 1% after precision escalation")


def tightness_experiment(L, grid):
    """Rows (L, d, n, eps2, rem, ratio) with ratio = Rem_L / (d^2/n)^L.

    Raises if a grid point lies outside d^2/n <= 1/4.  The returned dict has
    the rows and the band max|ratio| / min|ratio|.
    """
    rows = []
    for d, n in grid:
        if d * d / n > 0.25:
            raise ValueError(f"grid point d={d}, n={n} violates d^2/n <= 1/4")
        rem = quartic_remainder(L, d, n)
        eps2 = d * d / n
        rows.append({"L": L, "d": d, "n": n, "eps2": eps2, "rem": rem,
                     "ratio": rem / eps2**L})
    mags = np.array([abs(r["ratio"]) for r in rows])
    band = float(mags.max() / mags.min()) if mags.min() > 0 else math.inf
    x = np.log([r["eps2"] for r in rows])
    y = np.log([abs(r["rem"]) for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if np.ptp(x) > 0 else math.nan
    return {"rows": rows, "band": band, "slope": slope}


def tightness_csv(results):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["L", "d", "n", "eps2", "rem", "ratio"])
    w.writeheader()
    for res in results:
        for r in res["rows"]:
            w.writerow(r)
    return buf.getvalue()


def quartic_profile(d, n, R, L):
    """Analytic derivative norms: c3(r) = r sqrt(d/n), c4 = 1, others 0, c_{0,g} = 1."""
    from .bounds import DerivNormProfile

    def prof(r):
        c = {k: 0.0 for k in range(3, 2 * L + 3)}
        c[3] = r * math.sqrt(d / n)
        if 4 in c:
            c[4] = 1.0
        cg = {k: 0.0 for k in range(0, 2 * L + 1)}
        cg[0] = 1.0
        return DerivNormProfile(r=r, c=c, cg=cg, method="analytic")

    return prof(0.0), prof(R)
