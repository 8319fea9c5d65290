"""Hilbert structure and operator calculus on the discrete torus space.

All quadrature is exact for band-limited integrands: products of two fields
are integrated on the 2x grid, where the trapezoid rule is exact.  With a
conformal factor the weight ``exp(2 phi)`` is not band-limited and the same
2x-grid rule defines the discrete inner product; every map and derivative
below is then the exact derivative of that discrete definition.

The nonlinearity enters through its fine-grid samples: ``F_map`` uses the
functional ``v -> int B_W(u, lam) v dmu`` evaluated on the 2x grid.  On flat
metrics this equals ``apply_A(nemytskii_B(u, lam))`` to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .field import AugmentedVector, Field, TorusGrid
from .manifold import MetricSpec
from .potential import Potential, B_fine, dB_fine

A_RTOL = 1e-12
STRUCTURE_RTOL = 1e-14


class IterativeSolveError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# -- metric helpers ---------------------------------------------------------

def _grid(*fields) -> TorusGrid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


def stiffness_diag(g: MetricSpec, grid: TorusGrid) -> np.ndarray:
    """Diagonal of ``int g(grad phi_a, grad phi_a) dmu`` in real coordinates.

    The Dirichlet form is conformally invariant in 2D, so the diagonal holds
    with or without ``phi``.
    """
    return g.sqrt_det * grid.symbol(g.Ginv)


def integrate(g: MetricSpec, u: Field) -> float:
    """``int_M u dmu_g``."""
    if g.phi is None:
        return g.sqrt_det * u.mean()
    return float(np.mean(u.fine * g.density_fine(u.grid)))


def l2_inner(g: MetricSpec, u: Field, v: Field) -> float:
    grid = _grid(u, v)
    if g.phi is None:
        return g.sqrt_det * float(u.coords @ v.coords)
    return float(np.mean(u.fine * v.fine * g.density_fine(grid)))


def dirichlet(g: MetricSpec, u: Field, v: Field) -> float:
    """``int_M g(grad u, grad v) dmu_g``."""
    grid = _grid(u, v)
    return float(np.sum(stiffness_diag(g, grid) * u.coords * v.coords))


def inner_H(g: MetricSpec, u: Field, v: Field) -> float:
    """``<u, v>_g = int g(grad u, grad v) + u v dmu_g``."""
    return dirichlet(g, u, v) + l2_inner(g, u, v)


def energy_E(eps: float, g: MetricSpec, u: Field, v: Field) -> float:
    """``E_{eps,g}(u, v) = int eps^2 g(grad u, grad v) + u v dmu_g``."""
    return eps ** 2 * dirichlet(g, u, v) + l2_inner(g, u, v)


# -- the solution operator A ------------------------------------------------

def mass_apply(g: MetricSpec, grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    if g.phi is None:
        return g.sqrt_det * x
    rho = g.density_fine(grid)
    return grid.load(rho * grid.to_fine(grid.from_coords(x)))


def E_apply(eps: float, g: MetricSpec, grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    return eps ** 2 * stiffness_diag(g, grid) * x + mass_apply(g, grid, x)


def solve_E(eps: float, g: MetricSpec, grid: TorusGrid, load: np.ndarray,
            rtol: float = A_RTOL) -> np.ndarray:
    """Coordinates of the E-Riesz representer of a load vector."""
    S = stiffness_diag(g, grid)
    if g.phi is None:
        return load / (g.sqrt_det + eps ** 2 * S)
    n = grid.n
    rbar = float(np.mean(g.density_fine(grid)))
    precond = 1.0 / (eps ** 2 * S + rbar)
    A = LinearOperator((n, n), matvec=lambda x: E_apply(eps, g, grid, np.ravel(x)), dtype=float)
    M = LinearOperator((n, n), matvec=lambda x: precond * np.ravel(x), dtype=float)
    bnorm = np.linalg.norm(load)
    if bnorm == 0:
        return np.zeros(n)
    x, info = cg(A, load, x0=precond * load, rtol=rtol * 0.1, atol=0.0, M=M, maxiter=10 * n)
    res = np.linalg.norm(E_apply(eps, g, grid, x) - load) / bnorm
    if res > rtol:
        raise IterativeSolveError(
            f"E-solve stalled at relative residual {res:.3e} (cg info {info})", res)
    return x


def _A_fine(eps, g, grid, s_fine) -> np.ndarray:
    """Coordinates of A applied to a fine-grid function."""
    return solve_E(eps, g, grid, grid.load(s_fine * g.density_fine(grid)))


def apply_A(eps: float, g: MetricSpec, f: Field) -> Field:
    """The Field ``w`` with ``E_{eps,g}(w, v) = int f v dmu_g`` for every discrete ``v``.

    On a flat metric this is the modewise multiplier ``1 / (1 + eps^2 alpha_k)``.
    """
    grid = f.grid
    if g.phi is None:
        return Field.from_coords(grid, f.coords / (1.0 + eps ** 2 * grid.symbol(g.Ginv)))
    return Field.from_coords(grid, _A_fine(eps, g, grid, f.fine))


# -- F and its state derivative ----------------------------------------------

def F_map(eps: float, g: MetricSpec, pot: Potential, u: Field, lam: float) -> tuple[Field, float]:
    """``(u - A(B_W(u, lam)), int u dmu_g)``; solutions of (P) map to ``(0, nu)``."""
    grid = u.grid
    w = _A_fine(eps, g, grid, B_fine(pot, u, lam))
    return u - Field.from_coords(grid, w), integrate(g, u)


def dF_map(eps: float, g: MetricSpec, pot: Potential, u: Field, lam: float,
           v: Field, Lam: float) -> tuple[Field, float]:
    """Derivative of :func:`F_map` in the state ``(u, lam)`` along ``(v, Lam)``."""
    grid = _grid(u, v)
    w = _A_fine(eps, g, grid, dB_fine(pot, u, v, Lam))
    return v - Field.from_coords(grid, w), integrate(g, v)


def residual_norm(eps, g, pot, u, lam, nu) -> float:
    """Primed norm of ``F_map(u, lam) - (0, nu)``."""
    r, mass = F_map(eps, g, pot, u, lam)
    return float(np.sqrt(max(energy_E(eps, g, r, r), 0.0) + (mass - nu) ** 2))


def strong_residual(eps: float, g: MetricSpec, pot: Potential, u: Field, lam: float) -> Field:
    """Band projection of ``-eps^2 Delta_g u + W'(u) - lam``."""
    grid = u.grid
    lap = Field.from_coeffs(grid, grid.grid_symbol(g.Ginv) * u.coeffs)
    lap_f = lap.fine
    if g.phi is not None:
        lap_f = lap_f * np.exp(-2.0 * g.phi.fine)
    uf = u.fine
    return Field.from_coeffs(grid, grid.from_fine(eps ** 2 * lap_f + pot.dW(uf) - lam))


# -- metric directions ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricTangent:
    """A metric direction ``h = H + psi g``.

    ``H`` is a constant symmetric matrix (allowed only on flat metrics, where
    it stays tangent to the discretized family); ``psi`` is a conformal
    direction, supported on 2D tori.
    """

    H: np.ndarray | None = None
    psi: Field | None = None

    @classmethod
    def of(cls, h) -> "MetricTangent":
        if isinstance(h, MetricTangent):
            return h
        if h is None:
            return cls()
        if isinstance(h, Field):
            return cls(psi=h)
        return cls(H=np.asarray(h, dtype=float))


def b_tensor(G: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``tr_g(h) g^{-1} / 2 - g^{-1} h g^{-1}`` for constant matrices."""
    Gi = np.linalg.inv(np.asarray(G, dtype=float))
    H = np.asarray(H, dtype=float)
    return np.trace(Gi @ H) * Gi / 2 - Gi @ H @ Gi


def _check_tangent(g: MetricSpec, h: MetricTangent, d: int):
    if h.H is not None:
        if h.H.shape != (d, d) or not np.allclose(h.H, h.H.T):
            raise ValueError("H must be a symmetric d x d matrix")
        if not g.is_flat:
            raise ValueError("constant-matrix directions need a flat metric")
    if h.psi is not None and d != 2:
        raise ValueError("conformal directions are supported on 2D tori only")


def trace_fine(g: MetricSpec, grid: TorusGrid, h) -> np.ndarray:
    """``tr_g h`` on the fine grid."""
    h = MetricTangent.of(h)
    tr = np.zeros(grid.fine_shape)
    if h.H is not None:
        t = np.trace(g.Ginv @ h.H)
        tr = tr + (t if g.phi is None else t * np.exp(-2.0 * g.phi.fine))
    if h.psi is not None:
        tr = tr + grid.d * h.psi.fine
    return tr


def _load_div(grid: TorusGrid, q: np.ndarray) -> np.ndarray:
    """Coordinates of ``v -> int q . grad v dx`` for a fine-grid vector field."""
    c = np.zeros(grid.shape, dtype=complex)
    for i in range(grid.d):
        c += 2j * np.pi * grid.wavenumbers[i] * grid.from_fine(q[i])
    return grid.to_coords(-c)


def _dE_load(eps, g, eta, h: MetricTangent, w: Field) -> np.ndarray:
    """Load vector of ``v -> dE_{(eps,g)}[eta, h](w, v)``."""
    grid = w.grid
    d = grid.d
    _check_tangent(g, h, d)
    rho = g.density_fine(grid)
    gw = w.gradient_fine()
    Gi = g.Ginv
    sd = g.sqrt_det
    q = np.zeros_like(gw)
    if eta:
        q += 2.0 * eps * eta * sd * np.einsum("ij,j...->i...", Gi, gw)
    if h.H is not None:
        q += eps ** 2 * sd * np.einsum("ij,j...->i...", b_tensor(g.G, h.H), gw)
    if h.psi is not None and d != 2:
        q += eps ** 2 * (d / 2 - 1) * sd * h.psi.fine * np.einsum("ij,j...->i...", Gi, gw)
    s = 0.5 * trace_fine(g, grid, h) * rho * w.fine
    return grid.load(s) + _load_div(grid, q)


def dE_direction(eps: float, g: MetricSpec, eta: float, h, u: Field, v: Field) -> float:
    """``dE_{(eps,g)}[eta, h](u, v)``.

    ``2 eps eta int g(grad u, grad v) + eps^2 int b_{g,h}(grad u, grad v)
    + 1/2 int (tr_g h) u v``, all against ``dmu_g``.
    """
    _grid(u, v)
    return float(_dE_load(eps, g, eta, MetricTangent.of(h), u) @ v.coords)


def _dA_fine(eps, g, eta, h: MetricTangent, grid, f_fine) -> np.ndarray:
    w = Field.from_coords(grid, _A_fine(eps, g, grid, f_fine))
    rho = g.density_fine(grid)
    load = grid.load(0.5 * trace_fine(g, grid, h) * rho * f_fine) - _dE_load(eps, g, eta, h, w)
    return solve_E(eps, g, grid, load)


def dA_direction(eps: float, g: MetricSpec, eta: float, h, f: Field) -> Field:
    """``dA_{(eps,g)}[eta, h] f`` from the identity
    ``E(dA f, v) = 1/2 int (tr_g h) f v dmu - dE[eta, h](A f, v)``."""
    h = MetricTangent.of(h)
    return Field.from_coords(f.grid, _dA_fine(eps, g, eta, h, f.grid, f.fine))


def dF_full(eps, g, pot, u, lam, eta, h, v, Lam) -> tuple[Field, float]:
    """Full derivative of ``F_W`` along ``(eta, h, v, Lam)``."""
    grid = _grid(u, v)
    h = MetricTangent.of(h)
    first = dF_map(eps, g, pot, u, lam, v, Lam)[0]
    dA_B = Field.from_coords(grid, _dA_fine(eps, g, eta, h, grid, B_fine(pot, u, lam)))
    rho = g.density_fine(grid)
    second = float(np.mean((0.5 * trace_fine(g, grid, h) * u.fine + v.fine) * rho))
    return first - dA_B, second


# -- the constrained energy ----------------------------------------------------

def J_value(eps, g, pot, u: Field, lam: float, nu: float) -> float:
    """``int eps^2/2 g(grad u, grad u) + W(u) - lam u dmu + lam nu``.

    The multiplier term carries ``+lam nu`` so that criticality in ``lam``
    is the volume constraint.
    """
    rho = g.density_fine(u.grid)
    uf = u.fine
    return (0.5 * eps ** 2 * dirichlet(g, u, u)
            + float(np.mean((pot.W(uf) - lam * uf) * rho)) + lam * nu)


def J_gradient(eps, g, pot, u: Field, lam: float, nu: float) -> AugmentedVector:
    """Gradient in the primed inner product: ``(u - A B_W(u, lam), nu - int u)``."""
    r, mass = F_map(eps, g, pot, u, lam)
    return AugmentedVector(r, nu - mass)


def weak_gradient(eps, g, pot, u: Field, lam: float, nu: float) -> np.ndarray:
    """Euclidean gradient of J in (coords, lam)."""
    grid = u.grid
    rho = g.density_fine(grid)
    field = E_apply(eps, g, grid, u.coords) - grid.load(B_fine(pot, u, lam) * rho)
    return np.append(field, nu - integrate(g, u))


# -- assembled matrices -----------------------------------------------------

def _mode_lookup(grid: TorusGrid):
    """Map integer wavevectors to signed half-lattice indices.

    Returns ``lookup(k) -> (index into modes or -1, sign)`` where the sign is
    -1 when ``-k`` is the stored representative.
    """
    N, d = grid.N, grid.d
    h = N // 2 - 1
    size = 2 * h + 1
    table = np.full((size,) * d, -1, dtype=np.int64)
    sign = np.zeros((size,) * d, dtype=np.int8)
    modes = grid.modes
    table[tuple((modes + h).T)] = np.arange(grid.m)
    sign[tuple((modes + h).T)] = 1
    table[tuple((-modes + h).T)] = np.arange(grid.m)
    sign[tuple((-modes + h).T)] = -1

    def lookup(k):
        k = np.asarray(k)
        inside = np.all(np.abs(k) <= h, axis=-1)
        kk = np.where(inside[..., None], k, 0) + h
        idx = table[tuple(np.moveaxis(kk, -1, 0))]
        sg = sign[tuple(np.moveaxis(kk, -1, 0))]
        idx = np.where(inside, idx, -1)
        sg = np.where(inside, sg, 0)
        return idx, sg

    return lookup


def multiplication_matrix(grid: TorusGrid, w_fine: np.ndarray,
                          rtol: float = STRUCTURE_RTOL):
    """Matrix of ``(v, z) -> int w v z dx`` in real coordinates.

    Fourier modes of ``w`` below ``rtol * max`` are dropped as structural
    zeros.  Returns a sparse matrix when the support of ``w`` is small and a
    dense array otherwise.
    """
    what = grid.fine_dft(w_fine)
    amax = np.abs(what).max()
    what = np.where(np.abs(what) > rtol * amax, what, 0.0)
    m, n = grid.m, grid.n
    modes = grid.modes
    r2 = np.sqrt(2.0)

    def wv(k):
        return what[grid.fine_index(k)]

    # constant row: int w * 1 * phi_b
    w0 = wv(np.zeros(grid.d, dtype=int)).real
    wk = wv(modes)
    row0 = np.concatenate([[w0], r2 * wk.real, -r2 * wk.imag])

    support = np.argwhere(np.abs(what) > 0)
    support = np.where(support >= grid.N, support - 2 * grid.N, support)
    dense = len(support) > max(64, n // 8)

    if dense:
        a = np.arange(m)
        A_, B_ = np.meshgrid(a, a, indexing="ij")
    else:
        lookup = _mode_lookup(grid)
        pa, pb = [], []
        ar = np.arange(m)
        for s in support:
            for cand in (modes - s, s - modes):
                idx, _ = lookup(cand)
                ok = idx >= 0
                pa.append(ar[ok])
                pb.append(idx[ok])
        if pa:
            pairs = np.unique(np.stack([np.concatenate(pa), np.concatenate(pb)], axis=1), axis=0)
        else:
            pairs = np.zeros((0, 2), dtype=int)
        A_, B_ = pairs[:, 0], pairs[:, 1]

    ka, kb = modes[A_], modes[B_]
    Rp = wv(ka + kb)
    Rm = wv(ka - kb)
    CC = Rp.real + Rm.real
    SS = Rm.real - Rp.real
    CS = Rm.imag - Rp.imag  # int w C_a S_b

    if dense:
        M = np.empty((n, n))
        M[0, :] = row0
        M[:, 0] = row0
        M[1:m + 1, 1:m + 1] = CC
        M[m + 1:, m + 1:] = SS
        M[1:m + 1, m + 1:] = CS
        M[m + 1:, 1:m + 1] = CS.T
        return M

    rows = [np.zeros(n, dtype=int), np.arange(1, n), 1 + A_, m + 1 + A_, 1 + A_, m + 1 + B_]
    cols = [np.arange(n), np.zeros(n - 1, dtype=int), 1 + B_, m + 1 + B_, m + 1 + B_, 1 + A_]
    vals = [row0, row0[1:], CC, SS, CS, CS]
    M = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    M.eliminate_zeros()
    return M


def _as_block(K, b):
    """``[[K, -b], [-b^T, 0]]`` keeping sparsity when possible."""
    if sparse.issparse(K):
        bs = sparse.csr_matrix(b[:, None])
        return sparse.bmat([[K, -bs], [-bs.T, None]], format="csr")
    n = K.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = K
    out[:n, n] = -b
    out[n, :n] = -b
    return out


def _plus_diag(M, diag):
    if sparse.issparse(M):
        return (M + sparse.diags(diag)).tocsr()
    out = np.array(M, dtype=float)
    out[np.diag_indices_from(out)] += diag
    return out


def constraint_vector(g: MetricSpec, grid: TorusGrid) -> np.ndarray:
    """Coordinates of ``v -> int v dmu_g``."""
    return grid.load(g.density_fine(grid))


def J_hessian(eps, g, pot, u: Field):
    """Hessian of J in (coords, lam): ``[[eps^2 S + M_{W''(u) rho}, -b], [-b^T, 0]]``.

    Independent of ``lam`` and ``nu``.
    """
    grid = u.grid
    rho = g.density_fine(grid)
    K = multiplication_matrix(grid, pot.d2W(u.fine) * rho)
    K = _plus_diag(K, eps ** 2 * stiffness_diag(g, grid))
    return _as_block(K, constraint_vector(g, grid))


def gram_matrix(eps, g, grid: TorusGrid):
    """Primed Gram matrix ``diag(E_{eps,g}, 1)`` in (coords, lam)."""
    if g.phi is None:
        diag = np.append(g.sqrt_det * (1.0 + eps ** 2 * grid.symbol(g.Ginv)), 1.0)
        return sparse.diags(diag, format="csr")
    E = multiplication_matrix(grid, g.density_fine(grid))
    E = _plus_diag(E, eps ** 2 * stiffness_diag(g, grid))
    if sparse.issparse(E):
        return sparse.block_diag([E, sparse.csr_matrix([[1.0]])], format="csr")
    out = np.zeros((grid.n + 1, grid.n + 1))
    out[:-1, :-1] = E
    out[-1, -1] = 1.0
    return out
