"""Dense linear algebra on matrices with hidden block-diagonal structure.

Constant solutions give diagonal Hessians in the Fourier basis and striped
solutions give one block per transverse wavenumber.  Splitting by connected
components of the sparsity pattern turns an O(n^3) dense problem into many
tiny ones; equal-size blocks are processed as one batched LAPACK call.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, rcond=0.0):
        super().__init__(message)
        self.rcond = rcond


def _pattern(M, rtol):
    if sparse.issparse(M):
        A = abs(M.tocsr())
        thr = rtol * (A.max() if A.nnz else 0.0)
        A.data[A.data <= thr] = 0.0
        A.eliminate_zeros()
        return A
    A = np.abs(np.asarray(M))
    thr = rtol * A.max(initial=0.0)
    return sparse.csr_matrix(A > thr)


def components(*mats, rtol: float = 0.0) -> list[np.ndarray]:
    """Index sets of the connected components of the joint sparsity pattern.

    Entries at or below ``rtol * max|M|`` are treated as structural zeros.
    """
    pat = None
    for M in mats:
        if M is None:
            continue
        P = _pattern(M, rtol)
        pat = P if pat is None else (pat + P)
    n = pat.shape[0]
    pat = pat + sparse.eye(n, format="csr")
    ncomp, labels = connected_components(pat, directed=False)
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=ncomp)
    return np.split(order, np.cumsum(counts)[:-1])


def _gather(M, idx: np.ndarray) -> np.ndarray:
    """Stack of submatrices ``M[idx[b]][:, idx[b]]`` for idx of shape (nb, s)."""
    if idx.shape[0] == 1 or idx.shape[1] > 64:
        if sparse.issparse(M):
            Mc = M.tocsr()
            return np.stack([Mc[i][:, i].toarray() for i in idx])
        return np.stack([np.asarray(M)[np.ix_(i, i)] for i in idx])
    rows = np.repeat(idx[:, :, None], idx.shape[1], axis=2)
    cols = np.repeat(idx[:, None, :], idx.shape[1], axis=1)
    if sparse.issparse(M):
        vals = np.asarray(M.tocsr()[rows.ravel(), cols.ravel()]).ravel()
        return vals.reshape(rows.shape)
    return np.asarray(M)[rows, cols]


def _by_size(comps):
    groups: dict[int, list[np.ndarray]] = {}
    for c in comps:
        groups.setdefault(len(c), []).append(c)
    return [(s, np.array(blocks)) for s, blocks in sorted(groups.items())]


class BlockEig:
    """Eigen-decomposition assembled from independent blocks."""

    def __init__(self, n, groups):
        self.n = n
        self._groups = groups  # list of (idx (nb, s), values (nb, s), vecs (nb, s, s))
        self.values = np.concatenate([v.ravel() for _, v, _ in groups]) if groups else np.zeros(0)
        sizes = [v.size for _, v, _ in groups]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vectors(self, which) -> np.ndarray:
        which = np.atleast_1d(np.asarray(which, dtype=int))
        out = np.zeros((self.n, len(which)))
        for col, i in enumerate(which):
            g = int(np.searchsorted(self._offsets, i, side="right") - 1)
            idx, vals, vecs = self._groups[g]
            s = vals.shape[1]
            b, j = divmod(int(i - self._offsets[g]), s)
            out[idx[b], col] = vecs[b][:, j]
        return out


def block_eigh(H, P=None, rtol: float = 0.0) -> BlockEig:
    """Generalized symmetric eigenproblem ``H x = mu P x`` block by block.

    ``P`` must be symmetric positive definite; eigenvectors come out
    P-orthonormal.
    """
    n = H.shape[0]
    comps = components(H, P, rtol=rtol)
    groups = []
    for s, idx in _by_size(comps):
        Hb = _gather(H, idx)
        Hb = (Hb + np.swapaxes(Hb, 1, 2)) / 2
        if P is None:
            vals, vecs = np.linalg.eigh(Hb)
        elif s > 256:
            vals = np.empty((len(idx), s))
            vecs = np.empty((len(idx), s, s))
            Pb = _gather(P, idx)
            for b in range(len(idx)):
                vals[b], vecs[b] = scipy.linalg.eigh(Hb[b], (Pb[b] + Pb[b].T) / 2)
        else:
            Pb = _gather(P, idx)
            L = np.linalg.cholesky((Pb + np.swapaxes(Pb, 1, 2)) / 2)
            Li = np.linalg.inv(L)
            C = Li @ Hb @ np.swapaxes(Li, 1, 2)
            vals, Y = np.linalg.eigh((C + np.swapaxes(C, 1, 2)) / 2)
            vecs = np.swapaxes(Li, 1, 2) @ Y
        groups.append((idx, vals, vecs))
    return BlockEig(n, groups)


def block_solve(H, rhs: np.ndarray, scale: np.ndarray | None = None,
                min_rcond: float = 1e-12, rtol: float = 0.0):
    """Solve ``H x = rhs`` with a reciprocal-condition check.

    ``scale`` is a positive diagonal used for symmetric Jacobi scaling
    before the condition estimate.  Raises :class:`SingularMatrixError` when
    the estimated 1-norm reciprocal condition number falls below
    ``min_rcond``.  Returns ``(x, rcond)``.
    """
    n = H.shape[0]
    d = np.ones(n) if scale is None else 1.0 / np.sqrt(scale)
    if sparse.issparse(H):
        Hs = sparse.diags(d) @ H @ sparse.diags(d)
    else:
        Hs = d[:, None] * np.asarray(H) * d[None, :]
    y = np.zeros(n)
    r = d * rhs
    norm_max = 0.0
    inv_norm_max = 0.0
    for s, idx in _by_size(components(Hs, rtol=rtol)):
        Hb = _gather(Hs, idx)
        norms = np.abs(Hb).sum(axis=1).max(axis=1)
        if s <= 256:
            try:
                Hi = np.linalg.inv(Hb)
            except np.linalg.LinAlgError:
                raise SingularMatrixError("exactly singular block", 0.0) from None
            if not np.all(np.isfinite(Hi)):
                raise SingularMatrixError("exactly singular block", 0.0)
            inv_norms = np.abs(Hi).sum(axis=1).max(axis=1)
            y[idx] = np.einsum("bij,bj->bi", Hi, r[idx])
        else:
            inv_norms = np.empty(len(idx))
            for b in range(len(idx)):
                lu, piv = scipy.linalg.lu_factor(Hb[b], check_finite=False)
                rc, info = scipy.linalg.lapack.dgecon(lu, norms[b], norm="1")
                if rc == 0.0:
                    raise SingularMatrixError("exactly singular block", 0.0)
                inv_norms[b] = 1.0 / (rc * norms[b])
                y[idx[b]] = scipy.linalg.lu_solve((lu, piv), r[idx[b]], check_finite=False)
        norm_max = max(norm_max, norms.max())
        inv_norm_max = max(inv_norm_max, inv_norms.max())
    rcond = 1.0 / (norm_max * inv_norm_max) if norm_max > 0 else 0.0
    if rcond < min_rcond:
        raise SingularMatrixError(f"reciprocal condition {rcond:.3e} below {min_rcond:.1e}", rcond)
    return d * y, rcond


def block_svd(D, rtol: float = 0.0):
    """Full SVD assembled blockwise: returns ``(U, s, Vt)`` as dense arrays.

    Intended for moderate sizes; the block split only saves time, the
    result is the SVD of the whole matrix up to ordering.
    """
    D = D.toarray() if sparse.issparse(D) else np.asarray(D)
    n = D.shape[0]
    U = np.zeros((n, n))
    Vt = np.zeros((n, n))
    s_all = np.zeros(n)
    pos = 0
    for s, idx in _by_size(components(D, rtol=rtol)):
        Db = _gather(D, idx)
        u, sv, vt = np.linalg.svd(Db)
        for b in range(len(idx)):
            cols = slice(pos, pos + s)
            U[idx[b], cols] = u[b]
            Vt[cols, idx[b]] = vt[b]
            s_all[cols] = sv[b]
            pos += s
    return U, s_all, Vt
