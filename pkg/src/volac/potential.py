"""Potentials W and the Nemytskii operator B_W(u, lam) = lam + u - W'(u)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .field import Field


@dataclass(frozen=True)
class Potential:
    """A C^2 potential with its first two derivatives and growth data.

    ``p`` is the growth exponent and ``K1``, ``K2`` the constants in
    ``|W'(t)| <= K1 (1 + |t|^(p-1))`` and ``|W''(t)| <= K2 (1 + |t|^(p-2))``.
    """

    W: Callable[[np.ndarray], np.ndarray]
    dW: Callable[[np.ndarray], np.ndarray]
    d2W: Callable[[np.ndarray], np.ndarray]
    p: float
    K1: float
    K2: float
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, t, order: int = 0):
        return potential_eval(self, t, order)


def _dw(t):
    return 0.25 * (t * t - 1.0) ** 2


def _dw1(t):
    return t * t * t - t


def _dw2(t):
    return 3.0 * t * t - 1.0


def double_well(p: float = 4.0, K1: float = 3.0, K2: float = 3.0) -> Potential:
    """``W(t) = (t^2 - 1)^2 / 4``."""
    return Potential(W=_dw, dW=_dw1, d2W=_dw2, p=p, K1=K1, K2=K2, name="double_well")


def _fit_constant(f, p_minus, t):
    return float(np.max(np.abs(f(t)) / (1.0 + np.abs(t) ** p_minus)))


def polynomial(coefficients, p: float | None = None, K1: float | None = None,
               K2: float | None = None, fit_range=(-10.0, 10.0)) -> Potential:
    """Polynomial potential from low-to-high coefficients.

    ``p`` defaults to the degree.  Missing ``K1``/``K2`` are fitted as the
    smallest constants that hold on ``fit_range``.
    """
    P = Polynomial(np.asarray(coefficients, dtype=float))
    dP, d2P = P.deriv(1), P.deriv(2)
    if p is None:
        p = float(max(P.degree(), 3))
    t = np.linspace(*fit_range, 4001)
    if K1 is None:
        K1 = _fit_constant(dP, p - 1, t)
    if K2 is None:
        K2 = _fit_constant(d2P, p - 2, t)
    return Potential(W=P, dW=dP, d2W=d2P, p=float(p), K1=max(K1, 1e-300),
                     K2=max(K2, 1e-300), name="polynomial",
                     params={"coefficients": [float(c) for c in P.coef]})


def potential_eval(pot: Potential, t, order: int = 0):
    if order == 0:
        return pot.W(t)
    if order == 1:
        return pot.dW(t)
    if order == 2:
        return pot.d2W(t)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


def critical_exponent(n: int) -> float:
    """Sobolev exponent bounding p: infinity for n = 2, 2n/(n-2) above."""
    return np.inf if n == 2 else 2.0 * n / (n - 2)


@dataclass
class GrowthReport:
    ok: bool
    worst_ratio: float
    worst_ratio_dW: float
    worst_ratio_d2W: float
    offending_t: float | None
    p: float
    p_n: float
    sample_range: tuple[float, float]
    samples: int


def validate_growth(pot: Potential, n: int, sample_range=(-10.0, 10.0),
                    samples: int = 2001) -> GrowthReport:
    """Check both growth bounds on a sample grid and ``2 < p < p_n``.

    This never raises on violation; callers that need a hard failure test
    ``report.ok``.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    t = np.linspace(sample_range[0], sample_range[1], samples)
    with np.errstate(over="ignore", invalid="ignore"):
        r1 = np.abs(pot.dW(t)) / (pot.K1 * (1.0 + np.abs(t) ** (pot.p - 1)))
        r2 = np.abs(pot.d2W(t)) / (pot.K2 * (1.0 + np.abs(t) ** (pot.p - 2)))
    r1 = np.where(np.isfinite(r1), r1, np.inf)
    r2 = np.where(np.isfinite(r2), r2, np.inf)
    r = np.maximum(r1, r2)
    i = int(np.argmax(r))
    p_n = critical_exponent(n)
    ok = bool(r[i] <= 1.0 and 2.0 < pot.p < p_n)
    return GrowthReport(
        ok=ok, worst_ratio=float(r[i]), worst_ratio_dW=float(r1.max()),
        worst_ratio_d2W=float(r2.max()),
        offending_t=None if r[i] <= 1.0 else float(t[i]),
        p=pot.p, p_n=p_n, sample_range=(float(sample_range[0]), float(sample_range[1])),
        samples=samples)


# Nemytskii operators.  Pointwise evaluation happens on the 2x grid; the
# fine-grid arrays are what the quadrature in ``operators`` consumes.

def B_fine(pot: Potential, u: Field, lam: float) -> np.ndarray:
    uf = u.fine
    return lam + uf - pot.dW(uf)


def dB_fine(pot: Potential, u: Field, v: Field, Lam: float) -> np.ndarray:
    vf = v.fine
    return Lam + vf - vf * pot.d2W(u.fine)


def nemytskii_B(pot: Potential, u: Field, lam: float) -> Field:
    """``lam + u - W'(u)``, de-aliased back to the working band."""
    g = u.grid
    return Field.from_coeffs(g, g.from_fine(B_fine(pot, u, lam)))


def nemytskii_dB(pot: Potential, u: Field, lam: float, v: Field, Lam: float) -> Field:
    """``Lam + v - v W''(u)``, de-aliased.  Independent of ``lam``."""
    g = u.grid
    if v.grid != g:
        raise ValueError("u and v live on different grids")
    return Field.from_coeffs(g, g.from_fine(dB_fine(pot, u, v, Lam)))
