"""Nondegeneracy of solutions through the linearized constrained problem.

The state derivative of ``F_map`` is ``P^{-1} S H`` where ``H`` is the
bordered Hessian of J, ``P = diag(E, 1)`` the primed Gram matrix and
``S = diag(I, -1)``.  Its singular values in the primed inner product are
therefore the absolute eigenvalues of the pencil ``H x = mu P x``, which is
how :func:`min_singular` computes them.  :func:`cokernel_check` instead
builds the derivative column by column from ``dF_map`` and factors the Gram
matrix explicitly, so the two routes share no assembly code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import eigsh

from . import operators as op
from ._blocks import block_eigh, block_svd, components
from .field import AugmentedVector, Field
from .manifold import MetricSpec, Sphere, Torus, laplacian_spectrum, volume
from .potential import Potential

TAU_DEG = 1e-8
DENSE_LIMIT = 4096


@dataclass
class DegeneracyReport:
    """Smallest primed singular value of the linearized map and its kernel."""

    sigma_min: float
    sigma_max: float
    kernel: list
    classification: str
    kernel_dim: int
    marginal: bool
    tau: float = TAU_DEG
    predicted_eps: list | None = None
    method: str = "dense"
    singular_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def degenerate(self) -> bool:
        return self.kernel_dim > 0

    def to_dict(self) -> dict:
        out = {
            "sigma_min": float(self.sigma_min), "sigma_max": float(self.sigma_max),
            "relative_sigma_min": float(self.sigma_min / self.sigma_max),
            "classification": self.classification, "kernel_dim": int(self.kernel_dim),
            "marginal": bool(self.marginal), "tau": float(self.tau), "method": self.method,
        }
        if self.predicted_eps is not None:
            out["predicted_eps"] = [[float(e), int(k)] for e, k in self.predicted_eps]
        return out


def _classify(count: int) -> str:
    return "nondegenerate" if count == 0 else f"degenerate({count})"


def linearized_apply(eps: float, g: MetricSpec, pot: Potential, u: Field,
                     v: Field, Lam: float) -> tuple[Field, float]:
    """``(-eps^2 Delta_g v + W''(u) v - Lam, int v dmu_g)``; zero exactly on solutions of the linearization."""
    grid = u.grid
    lap = Field.from_coeffs(grid, grid.grid_symbol(g.Ginv) * v.coeffs).fine
    if g.phi is not None:
        lap = lap * np.exp(-2.0 * g.phi.fine)
    s = eps ** 2 * lap + pot.d2W(u.fine) * v.fine - Lam
    return Field.from_coeffs(grid, grid.from_fine(s)), op.integrate(g, v)


def pencil_spectrum(H, P, rtol: float = 1e-14):
    """Eigen-decomposition of ``H x = mu P x`` exploiting block structure."""
    return block_eigh(H, P, rtol=rtol)


def _lanczos(H, P, k: int = 8):
    Hs = H if sparse.issparse(H) else np.asarray(H)
    mu, X = eigsh(Hs, k=k, M=P, sigma=0.0, which="LM")
    top = eigsh(Hs, k=1, M=P, which="LM", return_eigenvectors=False)
    return mu, X, float(np.abs(top).max())


def min_singular(eps: float, g: MetricSpec, pot: Potential, u: Field,
                 tau: float = TAU_DEG, j_max: int = 4) -> DegeneracyReport:
    """Primed singular values of the linearized map at ``u``.

    The kernel holds every direction whose singular value is at most
    ``tau * sigma_max``; values up to ``10 tau`` flag the report as
    marginal.  Kernel vectors are orthonormal in the primed inner product.
    For constant ``u`` on a flat torus the predicted degenerate eps values
    are attached.
    """
    grid = u.grid
    H = op.J_hessian(eps, g, pot, u)
    P = op.gram_matrix(eps, g, grid)
    sizes = [len(c) for c in components(H, P, rtol=1e-14)]
    if max(sizes) <= DENSE_LIMIT:
        eig = pencil_spectrum(H, P)
        sv = np.abs(eig.values)
        smax = float(sv.max())
        order = np.argsort(sv)
        ker_idx = order[sv[order] <= tau * smax]
        X = eig.vectors(ker_idx)
        method = "dense"
    else:
        mu, Xall, smax = _lanczos(H, P)
        sv = np.abs(mu)
        order = np.argsort(sv)
        ker_idx = order[sv[order] <= tau * smax]
        X = Xall[:, ker_idx]
        method = "lanczos"
    smin = float(sv[order[0]])
    marginal = bool(np.any((sv > tau * smax) & (sv <= 10 * tau * smax)))
    kernel = [AugmentedVector.from_coords(grid, X[:, i]) for i in range(X.shape[1])]
    predicted = None
    if u.is_constant(1e-12) and g.is_flat:
        predicted = _predicted_from_constant(pot, float(u.mean()), Torus(grid, g), j_max)
    return DegeneracyReport(
        sigma_min=smin, sigma_max=smax, kernel=kernel, classification=_classify(len(kernel)),
        kernel_dim=len(kernel), marginal=marginal, tau=tau, predicted_eps=predicted,
        method=method, singular_values=np.sort(sv))


def constant_solution(pot: Potential, nu: float, m):
    """``(nu / vol, W'(nu / vol))``; the field is a Field on tori and a float on spheres."""
    c = nu / volume(m)
    lam = float(pot.dW(np.float64(c)))
    if isinstance(m, Sphere):
        return c, lam
    return Field.constant(m.grid, c), lam


def _predicted_from_constant(pot, c, m, j_max):
    curv = float(pot.d2W(np.float64(c)))
    if curv >= 0:
        return []
    return [(float(np.sqrt(-curv / alpha)), mult) for alpha, mult in laplacian_spectrum(m, j_max)]


def degenerate_epsilons(pot: Potential, nu: float, m, j_max: int) -> list[tuple[float, int]]:
    """Values of eps at which the constant solution is degenerate.

    ``eps_j = sqrt(-W''(nu/vol) / alpha_j)`` over the first ``j_max``
    distinct nonzero Laplacian eigenvalues, decreasing in ``j``; empty when
    ``W''(nu/vol) >= 0``.
    """
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    return _predicted_from_constant(pot, nu / volume(m), m, j_max)


def morse_lower_bound(m) -> int:
    """Sum of Betti numbers: ``2^d`` for a torus and 2 for the 2-sphere."""
    if isinstance(m, Sphere):
        return 2
    if isinstance(m, Torus):
        return 2 ** m.d
    raise TypeError(f"unsupported manifold {type(m).__name__}")


# -- cokernel route -----------------------------------------------------------

def state_derivative_matrix(eps, g, pot, u, lam) -> np.ndarray:
    """Columns of ``dF_map`` applied to the coordinate basis and to ``Lam = 1``."""
    grid = u.grid
    n = grid.n
    D = np.empty((n + 1, n + 1))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        v, s = op.dF_map(eps, g, pot, u, lam, Field.from_coords(grid, e), 0.0)
        D[:n, j] = v.coords
        D[n, j] = s
        e[j] = 0.0
    v, s = op.dF_map(eps, g, pot, u, lam, Field.zeros(grid), 1.0)
    D[:n, n] = v.coords
    D[n, n] = s
    return D


@dataclass
class CokernelReport:
    dim: int
    kernel_dim: int
    dims_match: bool
    max_residual: float
    vectors: list
    sigma: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "kernel_dim": self.kernel_dim, "dims_match": self.dims_match,
                "max_residual": float(self.max_residual)}


def cokernel_check(eps: float, g: MetricSpec, pot: Potential, u: Field, lam: float,
                   tau: float = TAU_DEG, residual_tol: float = 1e-8) -> CokernelReport:
    """Orthogonal complement of the image of ``dF_map`` in the primed inner product.

    Each complement vector ``(v, Lam)`` is sign-flipped to ``(v, -Lam)`` and
    fed to :func:`linearized_apply`; ``max_residual`` is the largest
    resulting residual (field L^2 norm plus mass) over primed-unit vectors.
    ``vectors`` holds the flipped pairs.
    """
    grid = u.grid
    D = state_derivative_matrix(eps, g, pot, u, lam)
    P = op.gram_matrix(eps, g, grid)
    if g.phi is None:
        p = np.asarray(P.diagonal()).ravel()
        B = np.sqrt(p)[:, None] * D / np.sqrt(p)[None, :]
        back = lambda Z: Z / np.sqrt(p)[:, None]
    else:
        Pd = P.toarray() if sparse.issparse(P) else np.asarray(P)
        L = np.linalg.cholesky(Pd)
        # y^T P D = 0  <=>  z^T (L^T D L^{-T}) = 0 with z = L^T y
        B = L.T @ scipy.linalg.solve_triangular(L, D.T, lower=True).T
        back = lambda Z: scipy.linalg.solve_triangular(L.T, Z, lower=False)
    U, s, _ = block_svd(B, rtol=1e-13)
    smax = s.max()
    idx = np.where(s <= tau * smax)[0]
    Y = back(U[:, idx])
    vectors, worst = [], 0.0
    for i in range(Y.shape[1]):
        y = Y[:, i]
        v = Field.from_coords(grid, y[:-1])
        res, mass = linearized_apply(eps, g, pot, u, v, -y[-1])
        worst = max(worst, res.norm() + abs(mass))
        vectors.append(AugmentedVector(v, -float(y[-1])))
    rep = min_singular(eps, g, pot, u, tau=tau)
    return CokernelReport(dim=len(idx), kernel_dim=rep.kernel_dim,
                          dims_match=len(idx) == rep.kernel_dim, max_residual=worst,
                          vectors=vectors, sigma=np.sort(s))
