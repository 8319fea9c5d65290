"""Independent 1D collocation solver for striped solutions.

A striped torus solution depends on one coordinate only and reduces to
``-eps^2 u'' + W'(u) = lam`` on a circle with prescribed mass.  This module
solves that reduction with a dense Fourier differentiation matrix and
pointwise collocation, sharing no code with the 2D Galerkin path.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import toeplitz

from ..field import Field, TorusGrid
from ..potential import Potential


class NotFound(RuntimeError):
    """No nonconstant periodic solution at these parameters."""


def second_derivative_matrix(mesh: int, period: float) -> np.ndarray:
    """Fourier collocation matrix for d^2/dx^2 on an even periodic mesh."""
    if mesh % 2:
        raise ValueError("mesh must be even")
    h = 2 * np.pi / mesh
    k = np.arange(1, mesh)
    col = np.empty(mesh)
    col[0] = -np.pi ** 2 / (3 * h ** 2) - 1.0 / 6.0
    col[1:] = -0.5 * (-1.0) ** k / np.sin(h * k / 2) ** 2
    return toeplitz(col) * (2 * np.pi / period) ** 2


def first_bifurcation(pot: Potential, nu: float, period: float) -> float:
    """eps below which the constant loses stability to the first circle mode."""
    curv = float(pot.d2W(np.float64(nu / period)))
    if curv >= 0:
        return 0.0
    return float(np.sqrt(-curv) * period / (2 * np.pi))


def _phase_align(u: np.ndarray) -> np.ndarray:
    """Translate so that the first Fourier mode is a positive cosine."""
    c = np.fft.rfft(u)
    theta = np.angle(c[1])
    k = np.arange(len(c))
    return np.fft.irfft(c * np.exp(-1j * k * theta), n=len(u))


def oracle_1d(pot: Potential, eps: float, nu: float, period: float = 1.0,
              mesh: int = 256, tol: float = 1e-10, max_iter: int = 100):
    """Nonconstant periodic solution of the 1D constrained problem.

    Parameters
    ----------
    nu : float
        Total mass on the circle of length ``period``.
    mesh : int
        Number of collocation points, at least 256.

    Returns
    -------
    profile : ndarray
        Values at ``x_i = i * period / mesh``, translated so the first
        Fourier mode is a cosine with positive amplitude.
    lam : float
        The multiplier.

    Raises
    ------
    NotFound
        When ``eps`` is at or above the first bifurcation value or Newton
        only finds the constant.
    """
    if mesh < 256:
        raise ValueError("mesh must be at least 256")
    eps1 = first_bifurcation(pot, nu, period)
    if eps >= eps1:
        raise NotFound(f"eps={eps:.6g} is not below the first bifurcation eps1={eps1:.6g}")
    D2 = second_derivative_matrix(mesh, period)
    x = np.arange(mesh) * period / mesh
    w = period / mesh
    c = nu / period
    ratio = 1.0 - (eps / eps1) ** 2
    guesses = [np.sqrt(4.0 * ratio * -float(pot.d2W(np.float64(c))) / 3.0), 0.5, 0.9, 0.2]
    last = None
    for a in guesses:
        u = c + a * np.cos(2 * np.pi * x / period)
        lam = float(np.mean(pot.dW(u)))
        for _ in range(max_iter):
            R = np.append(-eps ** 2 * D2 @ u + pot.dW(u) - lam, w * u.sum() - nu)
            if np.abs(R).max() < tol:
                break
            J = np.zeros((mesh + 1, mesh + 1))
            J[:mesh, :mesh] = -eps ** 2 * D2 + np.diag(pot.d2W(u))
            J[:mesh, mesh] = -1.0
            J[mesh, :mesh] = w
            # the translation mode makes J singular at the solution
            step = np.linalg.lstsq(J, -R, rcond=1e-10)[0]
            u, lam = u + step[:mesh], lam + step[mesh]
        else:
            last = f"no convergence from amplitude {a:.3g}"
            continue
        if np.ptp(u) > 1e-6:
            return _phase_align(u), float(lam)
        last = "converged to the constant"
    raise NotFound(f"no nonconstant solution found ({last})")


def extend_stripe(profile: np.ndarray, grid: TorusGrid, direction=None) -> Field:
    """Torus field ``u(x) = f(q . x)`` from one period of a 1-periodic profile.

    ``direction`` is the integer vector ``q`` (first axis by default).  The profile's Fourier
    coefficients are placed on the wavevectors ``m q``; modes outside the
    working band are dropped.
    """
    q = np.eye(grid.d, dtype=int)[0] if direction is None else np.asarray(direction, dtype=int)
    c1 = np.fft.fft(profile) / len(profile)
    mf = np.fft.fftfreq(len(profile), 1.0 / len(profile)).astype(int)
    coeffs = np.zeros(grid.shape, dtype=complex)
    h = grid.N // 2
    for m, cm in zip(mf, c1):
        k = m * q
        if np.all(np.abs(k) < h):
            coeffs[tuple(k % grid.N)] += cm
    return Field.from_coeffs(grid, coeffs)
