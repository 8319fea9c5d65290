"""Closed manifolds and metrics: flat/conformally flat tori and round spheres."""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lobpcg

from .field import Field, TorusGrid

SPECTRUM_RTOL = 1e-10


class EigensolverError(RuntimeError):
    """Iterative eigensolve did not reach its residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Metric data.

    On a torus the metric is ``exp(2 phi) G`` with ``G`` a constant SPD
    matrix and ``phi`` an optional band-limited field (2D only).  On a
    sphere only the radius ``R`` is set.
    """

    G: np.ndarray | None = None
    phi: Field | None = None
    R: float | None = None

    def __post_init__(self):
        if self.R is not None:
            if self.G is not None or self.phi is not None:
                raise ValueError("sphere metrics carry only R")
            if not self.R > 0:
                raise ValueError(f"sphere radius must be positive, got {self.R}")
            return
        if self.G is None:
            raise ValueError("torus metric needs G")
        G = np.array(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"G must be square, got shape {G.shape}")
        if not np.allclose(G, G.T, rtol=0, atol=1e-14 * np.abs(G).max()):
            raise ValueError("G must be symmetric")
        G = (G + G.T) / 2
        if np.linalg.eigvalsh(G).min() <= 0:
            raise ValueError("G must be positive definite")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        if self.phi is not None:
            if self.phi.grid.d != G.shape[0]:
                raise ValueError("phi lives on a grid of the wrong dimension")
            if G.shape[0] != 2:
                raise ValueError("conformal factors are supported on 2D tori only")
            grid = self.phi.grid
            high = np.any(np.abs(grid.wavenumbers) > grid.N // 4, axis=0)
            if np.abs(self.phi.coeffs[high]).max(initial=0.0) > 1e-12:
                raise ValueError("phi must be band-limited to half the working bandwidth")

    @classmethod
    def identity(cls, d: int = 2) -> "MetricSpec":
        return cls(G=np.eye(d))

    @property
    def d(self) -> int:
        return 2 if self.G is None else self.G.shape[0]

    @property
    def is_sphere(self) -> bool:
        return self.R is not None

    @property
    def is_flat(self) -> bool:
        return self.phi is None or not np.any(self.phi.values)

    @property
    def Ginv(self) -> np.ndarray:
        return np.linalg.inv(self.G)

    @property
    def sqrt_det(self) -> float:
        return float(np.sqrt(np.linalg.det(self.G)))

    def with_G(self, G) -> "MetricSpec":
        return MetricSpec(G=G, phi=self.phi)

    def with_phi(self, phi: Field | None) -> "MetricSpec":
        return MetricSpec(G=self.G, phi=phi)

    def density_fine(self, grid: TorusGrid) -> np.ndarray:
        """Volume density ``sqrt(det G) exp(d phi)`` on the fine grid."""
        rho = np.full(grid.fine_shape, self.sqrt_det)
        if self.phi is not None:
            rho = rho * np.exp(grid.d * self.phi.fine)
        return rho

    def key(self) -> str:
        """Short content hash used to tag experiment rows."""
        h = hashlib.sha256()
        if self.R is not None:
            h.update(repr(("sphere", float(self.R))).encode())
        else:
            h.update(np.ascontiguousarray(self.G).tobytes())
            if self.phi is not None:
                h.update(np.ascontiguousarray(self.phi.values).tobytes())
        return h.hexdigest()[:16]


def conformal_modes(grid: TorusGrid, modes) -> Field:
    """Build ``phi(x) = sum a cos(2 pi k.x)`` from ``[(k, a), ...]``."""
    def fn(*x):
        out = np.zeros(grid.shape)
        for k, a in modes:
            out += a * np.cos(2 * np.pi * sum(ki * xi for ki, xi in zip(k, x)))
        return out
    return Field.from_function(grid, fn)


@dataclass(frozen=True, eq=False)
class Torus:
    grid: TorusGrid
    metric: MetricSpec

    def __post_init__(self):
        if self.metric.is_sphere:
            raise ValueError("torus needs a torus metric")
        if self.metric.G.shape != (self.grid.d, self.grid.d):
            raise ValueError("metric dimension does not match the grid")
        if self.metric.phi is not None and self.metric.phi.grid != self.grid:
            raise ValueError("phi must live on the torus grid")

    @property
    def d(self) -> int:
        return self.grid.d

    kind = "torus"


@dataclass(frozen=True, eq=False)
class Sphere:
    L: int
    metric: MetricSpec

    def __post_init__(self):
        if not self.metric.is_sphere:
            raise ValueError("sphere needs a radius-only metric")
        if self.L < 1:
            raise ValueError("maximum degree L must be >= 1")

    d = 2
    kind = "sphere"


def torus(d: int = 2, N: int = 64, G=None, phi=None) -> Torus:
    """Convenience constructor; ``phi`` may be a Field or a list of (k, amplitude)."""
    grid = TorusGrid(d, N)
    if phi is not None and not isinstance(phi, Field):
        phi = conformal_modes(grid, phi)
    G = np.eye(d) if G is None else np.asarray(G, dtype=float)
    return Torus(grid, MetricSpec(G=G, phi=phi))


def sphere(R: float = 1.0, L: int = 16) -> Sphere:
    return Sphere(L, MetricSpec(R=R))


def volume(m) -> float:
    """Riemannian volume of the manifold."""
    if isinstance(m, Sphere):
        return 4 * np.pi * m.metric.R ** 2
    g = m.metric
    if g.phi is None:
        return g.sqrt_det
    return float(np.mean(g.density_fine(m.grid)))


def _group(values: np.ndarray, rtol: float) -> list[tuple[float, int]]:
    values = np.sort(values)
    out = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > rtol * abs(values[i]):
            out.append((float(values[start]), i - start))
            start = i
    return out


def _flat_spectrum(G: np.ndarray, count: int) -> list[tuple[float, int]]:
    d = G.shape[0]
    Ginv = np.linalg.inv(G)
    lmax = np.linalg.eigvalsh(G).max()
    r = 2
    while True:
        axis = np.arange(-r, r + 1)
        k = np.stack(np.meshgrid(*([axis] * d), indexing="ij")).reshape(d, -1).T
        k = k[np.any(k != 0, axis=1)]
        vals = 4 * np.pi ** 2 * np.einsum("ai,ij,aj->a", k, Ginv, k)
        groups = _group(vals, SPECTRUM_RTOL)
        # every lattice point outside the box has k^T G^-1 k >= (r+1)^2 / lmax
        bound = 4 * np.pi ** 2 * (r + 1) ** 2 / lmax
        if len(groups) >= count and groups[count - 1][0] * (1 + SPECTRUM_RTOL) < bound:
            return groups[:count]
        r *= 2


def _conformal_spectrum(m: Torus, count: int, tol: float = 1e-10) -> list[tuple[float, int]]:
    # Nonzero eigenvalues of S x = alpha M x have x M-orthogonal to constants.
    # Eliminating the constant coordinate leaves S_z z = alpha Mt z with Mt the
    # Schur complement of M; the spectrally preconditioned operator
    # S_z^{-1/2} Mt S_z^{-1/2} has the wanted eigenvalues 1/alpha at its top.
    grid, g = m.grid, m.metric
    stiff = g.sqrt_det * grid.symbol(g.Ginv)
    rho = g.density_fine(grid)
    n = grid.n

    def mass(X):
        X = np.asarray(X).reshape(n, -1)
        return np.column_stack([
            grid.load(rho * grid.to_fine(grid.from_coords(c))) for c in X.T])

    e0 = np.zeros(n)
    e0[0] = 1.0
    Me0 = mass(e0)[:, 0]
    m00 = Me0[0]
    s_half = 1.0 / np.sqrt(stiff[1:])

    def schur(Z):
        Z = np.asarray(Z).reshape(n - 1, -1)
        X = np.vstack([np.zeros((1, Z.shape[1])), Z])
        MX = mass(X)
        MX -= np.outer(Me0, MX[0] / m00)
        return MX[1:]

    def K(Z):
        Z = np.asarray(Z).reshape(n - 1, -1)
        return s_half[:, None] * schur(s_half[:, None] * Z)

    flat = _flat_spectrum(g.G, count + 2)
    k = sum(mult for _, mult in flat[:count + 1]) + 4
    if 5 * k >= n - 1:
        Kd = K(np.eye(n - 1))
        mu, W = scipy.linalg.eigh((Kd + Kd.T) / 2)
        mu, W = mu[::-1], W[:, ::-1]
    else:
        op = LinearOperator((n - 1, n - 1), matvec=lambda x: K(x)[:, 0],
                            matmat=K, dtype=float)
        rng = np.random.default_rng(0)
        X0 = rng.standard_normal((n - 1, k))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            mu, W = lobpcg(op, X0, tol=tol * 1e-3, maxiter=500, largest=True)
        order = np.argsort(mu)[::-1]
        mu, W = mu[order], W[:, order]
    alpha = 1.0 / mu[:k]
    # residual measured in the preconditioned (energy-scaled) norm
    res = np.linalg.norm(K(W[:, :k]) - W[:, :k] * mu[:k], axis=0) / np.abs(mu[:k])
    groups = _group(alpha, 1e-8)
    nkeep = sum(mult for _, mult in groups[:count])
    if res[:nkeep].max() > tol:
        raise EigensolverError(
            f"conformal spectrum: relative residual {res[:nkeep].max():.3e} exceeds {tol:.1e}",
            residuals=res)
    # the top group may be cut by the block size
    complete = groups[:-1]
    if len(complete) < count:
        raise EigensolverError(
            f"conformal spectrum: only {len(complete)} complete eigenvalue groups", residuals=res)
    return complete[:count]


def laplacian_spectrum(m, count: int) -> list[tuple[float, int]]:
    """First ``count`` distinct nonzero eigenvalues of ``-Delta_g`` with multiplicities.

    Flat tori and spheres are analytic; tori with a conformal factor are
    solved on the discrete space by LOBPCG (dense below a size cutoff).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(m, Sphere):
        R = m.metric.R
        return [(l * (l + 1) / R ** 2, 2 * l + 1) for l in range(1, count + 1)]
    if m.metric.is_flat:
        return _flat_spectrum(m.metric.G, count)
    return _conformal_spectrum(m, count)


def counting_function(spectrum: list[tuple[float, int]], lam: float) -> int:
    """Number of eigenvalues (with multiplicity) at most ``lam``."""
    return sum(mult for val, mult in spectrum if val <= lam)
