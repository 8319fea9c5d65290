"""Band-limited scalar fields on the flat torus [0, 1)^d.

Every field in the package lives in one fixed discrete space: trigonometric
polynomials whose wavevectors satisfy ``|k_i| < N/2`` on each axis (the
Nyquist modes are dropped so that first derivatives are unambiguous).  The
metric never changes this space; it only enters through quadrature weights
and operator coefficients.

Two representations are used throughout:

* grid values on the ``N^d`` collocation grid (what users see), and
* real coordinates in the L^2(dx)-orthonormal basis
  ``1, sqrt(2) cos(2 pi k.x), sqrt(2) sin(2 pi k.x)`` for ``k`` in a half
  lattice.  Dense linear algebra happens in these coordinates.

Nonlinear pointwise products are evaluated on a ``(2N)^d`` grid, which is
alias-free for products of up to three band-limited factors once the result
is truncated back to the band.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class TorusGrid:
    """Reference discretization of T^d with ``N`` points per axis.

    Parameters
    ----------
    d : int
        Torus dimension, 2 or 3.
    N : int
        Points per axis; a power of two, at least 16.
    """

    def __init__(self, d: int, N: int):
        if d not in (2, 3):
            raise ValueError(f"torus dimension must be 2 or 3, got {d}")
        if N < 16 or N & (N - 1):
            raise ValueError(f"N must be a power of two >= 16, got {N}")
        self.d = d
        self.N = N
        self.shape = (N,) * d
        self.fine_shape = (2 * N,) * d

        freqs = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
        kk = np.stack(np.meshgrid(*([freqs] * d), indexing="ij"))
        self.wavenumbers = kk
        flat = kk.reshape(d, -1)
        band = np.all(flat != -(N // 2), axis=0)
        self.band_mask = band.reshape(self.shape)

        nz = flat != 0
        first = np.argmax(nz, axis=0)
        lead = flat[first, np.arange(flat.shape[1])]
        positive = band & nz.any(axis=0) & (lead > 0)
        pos = np.flatnonzero(positive)
        modes = flat[:, pos].T.copy()
        self.modes = modes
        self._pos = pos
        self._neg = np.ravel_multi_index(tuple((-modes % N).T), self.shape)
        self.m = len(pos)
        self.n = 1 + 2 * self.m

        self._band = np.flatnonzero(band)
        band_modes = flat[:, self._band]
        self._band_fine = np.ravel_multi_index(
            tuple(band_modes % (2 * N)), self.fine_shape)

    def __repr__(self):
        return f"TorusGrid(d={self.d}, N={self.N})"

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and (self.d, self.N) == (other.d, other.N)

    def __hash__(self):
        return hash((self.d, self.N))

    @cached_property
    def points(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.N) / self.N
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def fine_points(self) -> tuple[np.ndarray, ...]:
        x = np.arange(2 * self.N) / (2 * self.N)
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def mode_of_coord(self) -> np.ndarray:
        """Integer wavevector attached to each real coordinate, shape (n, d)."""
        zero = np.zeros((1, self.d), dtype=int)
        return np.concatenate([zero, self.modes, self.modes])

    # -- transforms ---------------------------------------------------------

    def coeffs(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values) / self.N ** self.d

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs).real * self.N ** self.d

    def project(self, values: np.ndarray) -> np.ndarray:
        c = self.coeffs(values)
        c[~self.band_mask] = 0.0
        return self.values(c)

    def to_coords(self, coeffs: np.ndarray) -> np.ndarray:
        c = coeffs.ravel()
        cp = c[self._pos]
        r2 = np.sqrt(2.0)
        return np.concatenate([[c[0].real], r2 * cp.real, -r2 * cp.imag])

    def from_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.n,):
            raise ValueError(f"expected {self.n} coordinates, got {coords.shape}")
        m = self.m
        c = np.zeros(self.N ** self.d, dtype=complex)
        c[0] = coords[0]
        half = (coords[1:m + 1] - 1j * coords[m + 1:]) / np.sqrt(2.0)
        c[self._pos] = half
        c[self._neg] = half.conj()
        return c.reshape(self.shape)

    def to_fine(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate band-limited coefficients on the oversampled grid."""
        f = np.zeros(int(np.prod(self.fine_shape)), dtype=complex)
        f[self._band_fine] = coeffs.ravel()[self._band]
        return np.fft.ifftn(f.reshape(self.fine_shape)).real * (2 * self.N) ** self.d

    def from_fine(self, fine_values: np.ndarray) -> np.ndarray:
        """Band coefficients of the L^2(dx) projection of a fine-grid function."""
        F = np.fft.fftn(fine_values).ravel() / (2 * self.N) ** self.d
        c = np.zeros(self.N ** self.d, dtype=complex)
        c[self._band] = F[self._band_fine]
        return c.reshape(self.shape)

    def fine_dft(self, fine_values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(fine_values) / (2 * self.N) ** self.d

    def fine_index(self, k: np.ndarray) -> tuple[np.ndarray, ...]:
        """Index tuple into a fine DFT array for integer wavevectors ``k`` (..., d)."""
        k = np.asarray(k)
        return tuple(np.moveaxis(k % (2 * self.N), -1, 0))

    def load(self, fine_values: np.ndarray) -> np.ndarray:
        """Coordinates of the functional ``v -> int s v dx`` for fine-grid ``s``."""
        return self.to_coords(self.from_fine(fine_values))

    def symbol(self, M: np.ndarray) -> np.ndarray:
        """Per-coordinate value of ``(2 pi)^2 k^T M k``."""
        k = self.mode_of_coord.astype(float)
        return 4 * np.pi ** 2 * np.einsum("ai,ij,aj->a", k, M, k)

    def grid_symbol(self, M: np.ndarray) -> np.ndarray:
        """``(2 pi)^2 k^T M k`` on the full N^d coefficient array."""
        k = self.wavenumbers.astype(float)
        return 4 * np.pi ** 2 * np.einsum("i...,ij,j...->...", k, M, k)


@dataclass(frozen=True, eq=False)
class Field:
    """A real band-limited function on a torus grid.

    ``values`` are grid samples.  Construct through :meth:`from_values` or
    :meth:`from_function` when the input may carry out-of-band content.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_values(cls, grid: TorusGrid, values) -> "Field":
        return cls(grid, grid.project(np.asarray(values, dtype=float)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "Field":
        return cls.from_values(grid, fn(*grid.points))

    @classmethod
    def from_coeffs(cls, grid: TorusGrid, coeffs) -> "Field":
        c = np.array(coeffs, dtype=complex)
        c[~grid.band_mask] = 0.0
        return cls(grid, grid.values(c))

    @classmethod
    def from_coords(cls, grid: TorusGrid, coords) -> "Field":
        return cls(grid, grid.values(grid.from_coords(coords)))

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "Field":
        return cls.constant(grid, 0.0)

    @classmethod
    def random(cls, grid: TorusGrid, rng: np.random.Generator, kmax: int = 3,
               decay: float = 1.0) -> "Field":
        """Random smooth field with modes ``|k|_inf <= kmax``."""
        coords = rng.standard_normal(grid.n)
        k = grid.mode_of_coord
        kinf = np.abs(k).max(axis=1)
        coords[kinf > kmax] = 0.0
        coords /= (1.0 + np.sum(k ** 2, axis=1)) ** (decay / 2)
        return cls.from_coords(grid, coords)

    # -- representations --------------------------------------------------

    @cached_property
    def coeffs(self) -> np.ndarray:
        return self.grid.coeffs(self.values)

    @cached_property
    def coords(self) -> np.ndarray:
        return self.grid.to_coords(self.coeffs)

    @cached_property
    def fine(self) -> np.ndarray:
        return self.grid.to_fine(self.coeffs)

    def gradient_fine(self) -> np.ndarray:
        """Spectral gradient evaluated on the fine grid, shape (d, 2N, ...)."""
        g = self.grid
        return np.stack([g.to_fine(2j * np.pi * g.wavenumbers[i] * self.coeffs)
                         for i in range(g.d)])

    def derivative(self, axis: int) -> "Field":
        g = self.grid
        return Field.from_coeffs(g, 2j * np.pi * g.wavenumbers[axis] * self.coeffs)

    def shift(self, s) -> "Field":
        """The translate ``x -> u(x + s)``."""
        g = self.grid
        s = np.broadcast_to(np.asarray(s, dtype=float), (g.d,))
        phase = np.exp(2j * np.pi * np.einsum("i,i...->...", s, g.wavenumbers))
        return Field.from_coeffs(g, self.coeffs * phase)

    def mean(self) -> float:
        return float(self.coeffs.flat[0].real)

    def norm(self) -> float:
        """L^2(dx) norm on the unit cube."""
        return float(np.linalg.norm(self.coords))

    def is_constant(self, rtol: float = 1e-12) -> bool:
        c = self.coords
        return bool(np.all(np.abs(c[1:]) <= rtol * max(abs(c[0]), 1.0)))

    # -- arithmetic -------------------------------------------------------

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - float(other))

    def __rsub__(self, other):
        return Field(self.grid, float(other) - self.values)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, a):
        if isinstance(a, Field):
            raise TypeError("pointwise products must go through the de-aliased path")
        return Field(self.grid, float(a) * self.values)

    __rmul__ = __mul__

    def __truediv__(self, a):
        return Field(self.grid, self.values / float(a))

    def __repr__(self):
        return f"Field({self.grid!r}, mean={self.mean():.6g}, norm={self.norm():.6g})"


@dataclass(frozen=True)
class AugmentedVector:
    """An element ``(v, t)`` of the field space times the multiplier line."""

    field: Field
    scalar: float

    def __add__(self, other):
        return AugmentedVector(self.field + other.field, self.scalar + other.scalar)

    def __sub__(self, other):
        return AugmentedVector(self.field - other.field, self.scalar - other.scalar)

    def __mul__(self, a):
        return AugmentedVector(self.field * a, self.scalar * float(a))

    __rmul__ = __mul__

    @property
    def coords(self) -> np.ndarray:
        return np.append(self.field.coords, self.scalar)

    @classmethod
    def from_coords(cls, grid: TorusGrid, x) -> "AugmentedVector":
        x = np.asarray(x, dtype=float)
        return cls(Field.from_coords(grid, x[:-1]), float(x[-1]))
