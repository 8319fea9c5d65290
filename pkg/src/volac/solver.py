"""Solving the volume-constrained problem: Newton, mass-preserving flow, continuation.

Newton works on the Euclidean gradient of J in (coords, lam), whose Jacobian
is the assembled saddle-point Hessian.  The step is the same as Newton on
``F_map = (0, nu)`` since the two systems differ by the fixed invertible
Riesz map.  Residuals are always measured in the primed norm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import operators as op
from ._blocks import SingularMatrixError, block_eigh, block_solve
from .field import Field
from .manifold import MetricSpec
from .potential import Potential

log = logging.getLogger(__name__)


class MaxIterExceeded(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class SingularJacobian(RuntimeError):
    def __init__(self, message, rcond=0.0, eps=None):
        super().__init__(message)
        self.rcond = rcond
        self.eps = eps


class FlowError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 50
    damping: bool = True
    max_halvings: int = 20
    min_rcond: float = 1e-12

    @classmethod
    def of(cls, opts) -> "SolverOptions":
        if opts is None:
            return cls()
        if isinstance(opts, cls):
            return opts
        return cls(**opts)


@dataclass
class Solution:
    """A solution ``(u, lam)`` of the constrained problem with its context."""

    u: Field
    lam: float
    eps: float
    metric: MetricSpec
    pot: Potential
    nu: float
    residual: float
    mass_error: float
    iterations: int = 0
    history: list = field(default_factory=list)
    contraction: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.u.grid

    def summary(self) -> dict:
        return {
            "eps": float(self.eps), "nu": float(self.nu), "lambda": float(self.lam),
            "residual": float(self.residual), "mass_error": float(self.mass_error),
            "iterations": int(self.iterations), "metric": self.metric.key(),
            "constant": bool(self.u.is_constant(1e-9)),
            "contraction": dict(self.contraction),
        }


def contraction_fit(history) -> dict:
    """Fit ``e_{k+1} = C e_k^q`` on the final Newton stage.

    Pairs with ``e_k < 0.1`` are used, dropping steps that land on the
    rounding floor.  ``ok`` is False when the observed order is below 1.5,
    which typically means a nearly singular Jacobian.
    """
    e = np.asarray(history, dtype=float)
    if len(e) < 3:
        return {"order": None, "C": None, "ok": None, "pairs": 0}
    floor = 1e-14 * max(1.0, e[0])
    pairs = [(a, b) for a, b in zip(e[:-1], e[1:]) if a < 0.1 and b > floor]
    if not pairs:
        return {"order": None, "C": None, "ok": None, "pairs": 0}
    a, b = np.array(pairs).T
    C = float(np.max(b / a ** 2))
    if len(pairs) == 1:
        return {"order": None, "C": C, "ok": bool(C < 1e6), "pairs": 1}
    q, logC = np.polyfit(np.log(a), np.log(b), 1)
    return {"order": float(q), "C": C, "ok": bool(q > 1.5), "pairs": len(pairs)}


def newton_solve(eps: float, g: MetricSpec, pot: Potential, nu: float, init,
                 opts=None) -> Solution:
    """Damped Newton iteration for ``F_map(u, lam) = (0, nu)``.

    Parameters
    ----------
    init : (Field, float)
        Starting field and multiplier.
    opts : SolverOptions or dict, optional
        ``tol`` (primed residual), ``max_iter``, ``damping``,
        ``max_halvings`` and ``min_rcond``.

    Raises
    ------
    SingularJacobian
        The scaled Hessian has reciprocal condition below ``min_rcond``.
    MaxIterExceeded
        No convergence; the residual history is attached.
    """
    o = SolverOptions.of(opts)
    u, lam = init
    lam = float(lam)
    grid = u.grid
    P = op.gram_matrix(eps, g, grid)
    scale = np.asarray(P.diagonal()).ravel()
    r = op.residual_norm(eps, g, pot, u, lam, nu)
    history = [r]
    for it in range(o.max_iter + 1):
        if r <= o.tol:
            break
        if it == o.max_iter:
            raise MaxIterExceeded(
                f"Newton did not reach {o.tol:.1e} in {o.max_iter} iterations (residual {r:.3e})",
                history)
        grad = op.weak_gradient(eps, g, pot, u, lam, nu)
        H = op.J_hessian(eps, g, pot, u)
        try:
            step, _ = block_solve(H, -grad, scale=scale, min_rcond=o.min_rcond, rtol=1e-14)
        except SingularMatrixError as exc:
            raise SingularJacobian(f"singular Jacobian at eps={eps}: {exc}", exc.rcond, eps) from None
        du = Field.from_coords(grid, step[:-1])
        t = 1.0
        for _ in range(o.max_halvings + 1 if o.damping else 1):
            u_new, lam_new = u + du * t, lam + t * step[-1]
            r_new = op.residual_norm(eps, g, pot, u_new, lam_new, nu)
            if r_new < r or not o.damping:
                break
            t *= 0.5
        else:
            if r <= 10 * o.tol:
                break
            raise MaxIterExceeded(f"line search failed at residual {r:.3e}", history)
        u, lam, r = u_new, lam_new, r_new
        history.append(r)
    mass_err = abs(op.integrate(g, u) - nu)
    return Solution(u=u, lam=lam, eps=eps, metric=g, pot=pot, nu=nu, residual=r,
                    mass_error=mass_err, iterations=len(history) - 1, history=history,
                    contraction=contraction_fit(history))


def _fixed_mass_energy(eps, g, pot, u) -> float:
    return op.J_value(eps, g, pot, u, 0.0, 0.0)


def gradient_flow(eps: float, g: MetricSpec, pot: Potential, nu: float, init: Field,
                  steps: int, dt: float, energies: list | None = None) -> Field:
    """Semi-implicit mass-preserving descent of J.

    Each step solves ``(1 + dt) w - dt eps^2 Delta_g w = u + dt (u - W'(u) + lam)``
    with ``lam`` the mean of ``W'(u)`` so that the mass is kept, then
    resets the mean.  A step that raises the energy is retried with half
    the time step.  When ``energies`` is given, the energy after every
    accepted step is appended to it.
    """
    grid = init.grid
    vol = op.integrate(g, Field.constant(grid, 1.0))
    rho = g.density_fine(grid)
    u = init + (nu - op.integrate(g, init)) / vol
    J = _fixed_mass_energy(eps, g, pot, u)
    if energies is not None:
        energies.append(J)
    for _ in range(steps):
        h = dt
        for _ in range(31):
            uf = u.fine
            dw = pot.dW(uf)
            lam = float(np.mean(dw * rho)) / vol
            rhs = uf + h * (uf - dw + lam)
            eps_h = eps * np.sqrt(h / (1.0 + h))
            w = Field.from_coords(grid, op._A_fine(eps_h, g, grid, rhs) / (1.0 + h))
            w = w + (nu - op.integrate(g, w)) / vol
            J_new = _fixed_mass_energy(eps, g, pot, w)
            if J_new <= J + 1e-14 * max(1.0, abs(J)):
                break
            h *= 0.5
        else:
            raise FlowError(f"energy increased after 30 step halvings from dt={dt}")
        u, J = w, J_new
        if energies is not None:
            energies.append(J)
    return u


def inertia(sol: Solution, rtol: float = 1e-8) -> int:
    """Number of clearly negative eigenvalues of the Hessian in the primed metric.

    Eigenvalues within ``rtol`` of the largest magnitude count as zero so
    that symmetry-induced null directions do not flicker.
    """
    H = op.J_hessian(sol.eps, sol.metric, sol.pot, sol.u)
    P = op.gram_matrix(sol.eps, sol.metric, sol.grid)
    mu = block_eigh(H, P, rtol=1e-14).values
    return int(np.sum(mu < -rtol * np.abs(mu).max()))


class ContinuationResult(list):
    """List of Solutions with the detected degenerate-eps brackets attached."""

    def __init__(self, items=(), brackets=None, diagnostic=None):
        super().__init__(items)
        self.brackets = brackets or []
        self.diagnostic = diagnostic


def continuation(branch_start: Solution, eps_targets, opts=None,
                 bracket_width: float = 1e-6) -> ContinuationResult:
    """Natural-parameter continuation in eps with degenerate-point bracketing.

    The predictor is the previous solution.  A change in Hessian inertia
    between consecutive solutions, or a singular Jacobian during a step,
    triggers bisection down to ``bracket_width``; each resulting interval is
    recorded in ``result.brackets``.  If the corrector fails below the
    bisection floor the partial branch is returned with a diagnostic.
    """
    targets = [float(e) for e in eps_targets]
    diffs = np.diff([branch_start.eps] + targets)
    if len(targets) > 1 and not (np.all(diffs[1:] > 0) or np.all(diffs[1:] < 0)):
        raise ValueError("eps targets must be monotone")
    o = SolverOptions.of(opts)
    s0 = branch_start
    out = ContinuationResult()

    def solve_at(prev: Solution, eps):
        return newton_solve(eps, prev.metric, prev.pot, prev.nu, (prev.u, prev.lam), o)

    def bisect(a: Solution, ia: int, b: Solution, ib: int):
        if abs(b.eps - a.eps) <= bracket_width:
            out.brackets.append(tuple(sorted((a.eps, b.eps))))
            return
        mid = solve_at(a, 0.5 * (a.eps + b.eps))
        im = inertia(mid)
        if im != ia:
            bisect(a, ia, mid, im)
        if im != ib:
            bisect(mid, im, b, ib)

    prev, iprev = s0, inertia(s0)
    for eps in targets:
        try:
            cur = solve_at(prev, eps)
        except (SingularJacobian, MaxIterExceeded):
            # walk toward the target until the step is below the floor
            lo, hi = prev, eps
            cur = None
            while abs(hi - lo.eps) > bracket_width:
                mid = 0.5 * (lo.eps + hi)
                try:
                    lo_new = solve_at(lo, mid)
                except (SingularJacobian, MaxIterExceeded):
                    hi = mid
                    continue
                inew = inertia(lo_new)
                if inew != iprev:
                    bisect(lo, iprev, lo_new, inew)
                lo, iprev = lo_new, inew
            out.brackets.append(tuple(sorted((lo.eps, hi))))
            prev = lo
            try:
                cur = solve_at(prev, eps)
            except (SingularJacobian, MaxIterExceeded) as exc:
                out.diagnostic = f"branch lost near eps={hi:.8g}: {exc}"
                return out
        icur = inertia(cur)
        if icur != iprev:
            bisect(prev, iprev, cur, icur)
        out.append(cur)
        prev, iprev = cur, icur
    return out
