import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volac.field import Field, TorusGrid
from volac.manifold import (MetricSpec, counting_function, laplacian_spectrum, sphere, torus,
                            volume)


def lattice_spectrum(G, count, kmax=8):
    """Brute-force enumeration of 4 pi^2 k^T G^-1 k over an integer box."""
    Ginv = np.linalg.inv(G)
    d = G.shape[0]
    vals = {}
    for k in itertools.product(range(-kmax, kmax + 1), repeat=d):
        if any(k):
            k = np.array(k, dtype=float)
            a = round(float(4 * np.pi ** 2 * k @ Ginv @ k), 9)
            vals[a] = vals.get(a, 0) + 1
    return sorted(vals.items())[:count]


def sphere_galerkin(L, R=1.0):
    """Laplacian eigenvalues on the sphere from monomials of degree <= L.

    Monomials restricted to the sphere span the spherical harmonics of
    degree <= L, so Rayleigh-Ritz on that span is exact.  Integrals use a
    product Gauss rule that is exact for the polynomial degrees involved.
    """
    exps = [e for e in itertools.product(range(L + 1), repeat=3) if sum(e) <= L]
    nt, nphi = 2 * L + 4, 4 * L + 8
    zq, wz = np.polynomial.legendre.leggauss(nt)
    ph = 2 * np.pi * np.arange(nphi) / nphi
    Z, PH = np.meshgrid(zq, ph, indexing="ij")
    S = np.sqrt(1 - Z ** 2)
    X = np.stack([S * np.cos(PH), S * np.sin(PH), Z]).reshape(3, -1)
    w = (np.outer(wz, np.full(nphi, 2 * np.pi / nphi)) * R ** 2).ravel()
    vals, grads = [], []
    for e in exps:
        vals.append(np.prod([X[i] ** e[i] for i in range(3)], axis=0))
        g = np.zeros_like(X)
        for i in range(3):
            if e[i]:
                ee = list(e)
                ee[i] -= 1
                g[i] = e[i] * np.prod([X[j] ** ee[j] for j in range(3)], axis=0)
        # tangential part; coordinates scale by R so gradients scale by 1/R
        g = (g - X * np.sum(g * X, axis=0)) / R
        grads.append(g)
    V = np.array(vals)
    Gr = np.array(grads)
    M = (V * w) @ V.T
    K = np.einsum("aip,bip,p->ab", Gr, Gr, w)
    s, U = np.linalg.eigh(M)
    keep = s > 1e-10 * s.max()
    T = U[:, keep] / np.sqrt(s[keep])
    return np.sort(np.linalg.eigvalsh(T.T @ K @ T))


def group(values, atol=1e-8):
    out = []
    for v in np.sort(values):
        if out and abs(v - out[-1][0]) <= atol * max(1.0, abs(v)):
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return [(a, k) for a, k in out]


# -- volume ---------------------------------------------------------------------

def test_volume_unit_torus():
    assert volume(torus(2, 16)) == 1.0


def test_volume_stretched_torus():
    assert volume(torus(2, 16, G=np.diag([4.0, 1.0]))) == pytest.approx(2.0, rel=1e-15)


def test_volume_sphere():
    assert volume(sphere(1.0)) == pytest.approx(4 * np.pi, rel=1e-15)


def test_volume_conformal_matches_quadrature():
    m = torus(2, 16, phi=[((1, 0), 0.1)])
    x = np.arange(4096) / 4096
    oracle = np.mean(np.exp(2 * 0.1 * np.cos(2 * np.pi * x)))
    assert volume(m) == pytest.approx(oracle, rel=1e-13)


# -- spectrum -------------------------------------------------------------------

def test_flat_spectrum_first_entries():
    spectrum = laplacian_spectrum(torus(2, 16), 4)
    expected = [(4, 4), (8, 4), (16, 4), (20, 8)]
    for (a, k), (c, kk) in zip(spectrum, expected):
        assert a == pytest.approx(c * np.pi ** 2, rel=1e-14)
        assert k == kk


@pytest.mark.parametrize("G", [np.eye(2), np.diag([4.0, 1.0]), np.array([[1.0, 0.3], [0.3, 0.7]]),
                               np.eye(3), np.diag([1.0, 2.0, 0.5])])
def test_flat_spectrum_matches_lattice_enumeration(G):
    m = torus(G.shape[0], 16, G=G)
    spectrum = laplacian_spectrum(m, 6)
    oracle = lattice_spectrum(G, 6)
    assert [k for _, k in spectrum] == [k for _, k in oracle]
    np.testing.assert_allclose([a for a, _ in spectrum], [a for a, _ in oracle], rtol=1e-9)


def test_sphere_spectrum_closed_form():
    spectrum = laplacian_spectrum(sphere(1.0), 5)
    assert spectrum == [(l * (l + 1), 2 * l + 1) for l in range(1, 6)]


@pytest.mark.parametrize("R", [1.0, 2.5])
def test_sphere_spectrum_matches_galerkin(R):
    L = 4
    oracle = [g for g in group(sphere_galerkin(L, R), atol=1e-7) if g[0] > 1e-8]
    spectrum = laplacian_spectrum(sphere(R), L)
    assert [k for _, k in spectrum] == [k for _, k in oracle]
    np.testing.assert_allclose([a for a, _ in spectrum], [a for a, _ in oracle], rtol=1e-9)


def test_conformal_first_eigenvalue_matches_first_order_perturbation():
    # phi = a cos(4 pi x1) couples cos(2 pi x1) and sin(2 pi x1) with opposite signs
    a = 1e-3
    m = torus(2, 16, phi=[((2, 0), a)])
    spectrum = laplacian_spectrum(m, 3)
    base = 4 * np.pi ** 2
    predicted = [(base * (1 - a), 1), (base, 2), (base * (1 + a), 1)]
    assert [k for _, k in spectrum] == [k for _, k in predicted]
    for (val, _), (pred, _) in zip(spectrum, predicted):
        assert abs(val - pred) <= 10 * a ** 2 * base


def test_conformal_spectrum_splits_and_stays_close():
    a = 0.02
    m = torus(2, 16, phi=[((1, 1), a)])
    spectrum = laplacian_spectrum(m, 2)
    assert abs(spectrum[0][0] - 4 * np.pi ** 2) <= 4 * a * 4 * np.pi ** 2


def test_conformal_spectrum_matches_dense_generalized_problem():
    # oracle: dense S x = alpha M_rho x in the test's own Fourier basis
    N = 16
    grid = TorusGrid(2, N)
    phi = 0.05 * np.cos(2 * np.pi * (grid.fine_points[0] + 2 * grid.fine_points[1]))
    rho = np.exp(2 * phi)
    h = N // 2
    ks = [(i, j) for i in range(-h + 1, h) for j in range(-h + 1, h)]
    xf, yf = grid.fine_points
    E = np.array([np.exp(2j * np.pi * (k[0] * xf + k[1] * yf)).ravel() for k in ks])
    M = (E.conj() * rho.ravel()) @ E.T / rho.size
    S = np.diag([4 * np.pi ** 2 * (k[0] ** 2 + k[1] ** 2) for k in ks]).astype(complex)
    import scipy.linalg
    w = np.sort(scipy.linalg.eigh(S, M, eigvals_only=True))
    oracle = [g for g in group(w, atol=1e-7) if g[0] > 1e-8][:3]
    field = Field.from_function(grid, lambda x, y: 0.05 * np.cos(2 * np.pi * (x + 2 * y)))
    spectrum = laplacian_spectrum(torus(2, N, phi=field), 3)
    assert [k for _, k in spectrum] == [k for _, k in oracle]
    np.testing.assert_allclose([a for a, _ in spectrum], [a for a, _ in oracle], rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(-0.2, 0.2))
def test_spectrum_scales_inversely_with_metric(a, b, c):
    G = np.array([[a, c], [c, b]])
    if np.linalg.eigvalsh(G).min() <= 0.05:
        return
    s1 = laplacian_spectrum(torus(2, 16, G=G), 3)
    s2 = laplacian_spectrum(torus(2, 16, G=2.0 * G), 3)
    np.testing.assert_allclose([x for x, _ in s2], [x / 2 for x, _ in s1], rtol=1e-12)
    assert [k for _, k in s1] == [k for _, k in s2]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 2000.0), st.floats(0.0, 2000.0))
def test_counting_function_monotone(l1, l2):
    spectrum = laplacian_spectrum(torus(2, 16), 10)
    lo, hi = sorted((l1, l2))
    assert counting_function(spectrum, lo) <= counting_function(spectrum, hi)


def test_metric_validation():
    with pytest.raises(ValueError):
        MetricSpec(G=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        MetricSpec(G=np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        MetricSpec(R=-1.0)
    with pytest.raises(ValueError):
        torus(3, 16, phi=[((1, 0, 0), 0.1)])


def test_round_trip_grid_spectral(grid16, rng):
    u = Field.random(grid16, rng, kmax=7)
    back = Field.from_coords(grid16, u.coords)
    np.testing.assert_allclose(back.values, u.values, rtol=0, atol=1e-12 * np.abs(u.values).max())
