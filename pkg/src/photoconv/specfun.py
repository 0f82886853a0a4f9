"""Exponential integrals and Gauss-Legendre rules."""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

EULER_GAMMA = 0.5772156649015329

# series below this argument, continued fraction above
_SWITCH = 1.0
_MAXIT = 200
_EPS = 1e-16


def _digamma_int(n):
    # psi(n) for positive integer n
    return -EULER_GAMMA + sum(1.0 / k for k in range(1, n))


def _expn_series(n, x):
    """Power series for E_n, valid for 0 < x <= ~1."""
    nm1 = n - 1
    if nm1 == 0:
        ans = -np.log(x) - EULER_GAMMA
    else:
        ans = np.full_like(x, 1.0 / nm1)
    fact = np.ones_like(x)
    for i in range(1, _MAXIT):
        fact = fact * (-x / i)
        if i != nm1:
            dl = -fact / (i - nm1)
        else:
            dl = fact * (-np.log(x) + _digamma_int(n))
        ans = ans + dl
        if np.all(np.abs(dl) <= np.abs(ans) * _EPS):
            break
    return ans


def _expn_cfrac(n, x):
    """Modified Lentz evaluation of the continued fraction, x > ~1."""
    tiny = 1e-300
    b = x + n
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAXIT):
        a = -i * (n - 1 + i)
        b = b + 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) <= _EPS):
            break
    return h * np.exp(-x)


def expn(n: int, x):
    """Exponential integral E_n(x) = int_1^inf exp(-x t) / t**n dt.

    Vectorised over ``x``. Uses the power series for ``x <= 1`` and a
    continued fraction above. Arguments large enough to underflow return 0.

    Raises
    ------
    ValueError
        If ``n < 1``, any ``x < 0``, or ``n == 1`` with ``x == 0``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"order must be an integer >= 1, got {n}")
    n = int(n)
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise ValueError("expn requires x >= 0")
    out = np.zeros_like(xa)
    zero = xa == 0.0
    if np.any(zero):
        if n == 1:
            raise ValueError("E_1 diverges at x = 0")
        out[zero] = 1.0 / (n - 1)
    small = (~zero) & (xa <= _SWITCH)
    big = (xa > _SWITCH) & (xa < 740.0)
    if np.any(small):
        out[small] = _expn_series(n, xa[small])
    if np.any(big):
        out[big] = _expn_cfrac(n, xa[big])
    return float(out[0]) if scalar else out


def expn_moment_antiderivative(n: int, p: int, u):
    """Antiderivative of ``u**p * E_n(u)``.

    Repeated integration by parts with ``d/du E_m = -E_{m-1}`` gives
    ``-sum_m p!/(p-m)! u**(p-m) E_{n+m+1}(u)``. Valid for ``u >= 0`` (at
    ``u = 0`` only the ``m = p`` term survives).
    """
    u = np.asarray(u, dtype=float)
    total = np.zeros_like(u)
    for m in range(p + 1):
        coef = factorial(p) / factorial(p - m)
        if p - m == 0:
            total = total - coef * expn(n + m + 1, u)
        else:
            total = total - coef * u ** (p - m) * expn(n + m + 1, u)
    return total


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def integrate(self, f):
        return np.dot(self.weights, f(self.nodes))

    def __len__(self):
        return len(self.nodes)


def gauss_rule(order: int, lo: float = -1.0, hi: float = 1.0) -> QuadratureRule:
    """Gauss-Legendre rule with ``order`` nodes on ``[lo, hi]``.

    Exact for polynomials up to degree ``2*order - 1``.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    if not lo < hi:
        raise ValueError("need lo < hi")
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x + 1.0)
    weights = half * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, (float(lo), float(hi)))
