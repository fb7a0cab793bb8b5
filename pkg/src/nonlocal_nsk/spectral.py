"""Periodic grids, real/spectral fields and exact Fourier calculus.

Coefficients are stored in the real-to-complex (``rfftn``) layout: the last
axis holds only the non-negative wavenumbers ``0..n/2`` and the conjugate
half is implied by Hermitian symmetry.  The forward transform carries the
``1/n**dim`` factor, so the coefficient of a pure mode ``cos(x)`` is ``1/2``
and Parseval reads ``||f||^2 = L**dim * sum_k |c_k|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft

__all__ = [
    "Grid",
    "RealField",
    "SpectralField",
    "make_grid",
    "forward_transform",
    "inverse_transform",
    "partial_derivative",
    "gradient",
    "divergence",
    "laplacian",
    "dealias",
    "sobolev_norm",
    "l2_inner",
    "random_band_limited",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic mesh on ``[0, length)**dim`` with ``n`` points per axis."""

    dim: int
    n: int
    length: float = 2 * np.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Per-axis physical wavenumbers ``2*pi*k/L`` in FFT order, k in -n/2..n/2-1."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.length

    @cached_property
    def integer_modes(self) -> tuple[np.ndarray, ...]:
        """Integer mode numbers per axis, broadcast to the spectral layout."""
        full = np.fft.fftfreq(self.n, d=1.0 / self.n)
        half = np.arange(self.n // 2 + 1, dtype=float)
        out = []
        for ax in range(self.dim):
            vals = half if ax == self.dim - 1 else full
            shape = [1] * self.dim
            shape[ax] = vals.size
            out.append(vals.reshape(shape))
        return tuple(out)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        scale = 2 * np.pi / self.length
        return tuple(scale * m for m in self.integer_modes)

    @cached_property
    def ik(self) -> tuple[np.ndarray, ...]:
        """Odd-derivative multipliers ``i*k`` with the Nyquist mode zeroed."""
        out = []
        for m, kk in zip(self.integer_modes, self.k):
            out.append(np.where(np.abs(m) == self.n // 2, 0.0, kk) * 1j)
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(kk**2 for kk in self.k)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """``1/|k|^2`` with the zero mode mapped to 0 (mean-free inverse Laplacian)."""
        out = np.zeros(self.spectral_shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / np.broadcast_to(self.k2, out.shape)[nz]
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.ones(self.spectral_shape, dtype=bool)
        for m in self.integer_modes:
            keep = keep & (np.abs(m) <= self.n / 3)
        return keep

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored coefficient in the full (two-sided) spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = [1] * (self.dim - 1) + [w.size]
        return np.broadcast_to(w.reshape(shape), self.spectral_shape)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    # raw-array transforms; leading axes are batch axes
    def fft(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.rfftn(values, axes=self.axes, norm="forward")

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return scipy.fft.irfftn(coeffs, s=self.shape, axes=self.axes, norm="forward")

    def sum_modes(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over the spectral axes, as if over the full spectrum."""
        return np.sum(self.weights * values, axis=self.axes)

    def norm_sq(self, coeffs: np.ndarray, s: float = 0.0) -> float:
        """Squared H^s norm of raw coefficients; batch axes are summed too."""
        dens = np.abs(coeffs) ** 2
        if s:
            dens = dens * (1.0 + self.k2) ** s
        return float(self.volume * np.sum(self.sum_modes(dens)))


def make_grid(dim: int, n: int, length: float = 2 * np.pi) -> Grid:
    return Grid(dim=dim, n=n, length=float(length))


@dataclass(frozen=True)
class RealField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        if isinstance(other, RealField):
            _same_grid(self.grid, other.grid)
            return RealField(self.grid, self.values + other.values)
        return RealField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, RealField):
            _same_grid(self.grid, other.grid)
            return RealField(self.grid, self.values - other.values)
        return RealField(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, RealField):
            _same_grid(self.grid, other.grid)
            return RealField(self.grid, self.values * other.values)
        return RealField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return RealField(self.grid, -self.values)


@dataclass(frozen=True)
class SpectralField:
    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.spectral_shape:
            raise ValueError(f"expected shape {self.grid.spectral_shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: SpectralField) -> SpectralField:
        _same_grid(self.grid, other.grid)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        _same_grid(self.grid, other.grid)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> SpectralField:
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def coefficient(self, mode: Sequence[int]) -> complex:
        """Coefficient of an integer wavevector, using conjugate symmetry when needed."""
        n = self.grid.n
        mode = [int(m) for m in mode]
        conj = mode[-1] < 0
        if conj:
            mode = [-m for m in mode]
        c = self.coeffs[tuple(m % n for m in mode[:-1]) + (mode[-1],)]
        return complex(np.conj(c) if conj else c)


def _same_grid(a: Grid, b: Grid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def forward_transform(f: RealField) -> SpectralField:
    return SpectralField(f.grid, f.grid.fft(f.values))


def inverse_transform(F: SpectralField) -> RealField:
    return RealField(F.grid, F.grid.ifft(F.coeffs))


def partial_derivative(F: SpectralField, axis: int) -> SpectralField:
    if not 0 <= axis < F.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {F.grid.dim}")
    return SpectralField(F.grid, F.grid.ik[axis] * F.coeffs)


def gradient(F: SpectralField) -> list[SpectralField]:
    return [partial_derivative(F, ax) for ax in range(F.grid.dim)]


def divergence(U: Sequence[SpectralField]) -> SpectralField:
    grid = U[0].grid
    if len(U) != grid.dim:
        raise ValueError(f"expected {grid.dim} components, got {len(U)}")
    return SpectralField(grid, sum(grid.ik[ax] * U[ax].coeffs for ax in range(grid.dim)))


def laplacian(F: SpectralField) -> SpectralField:
    return SpectralField(F.grid, -F.grid.k2 * F.coeffs)


def dealias(F: SpectralField) -> SpectralField:
    """Two-thirds rule: drop every mode with some ``|k_axis| > n/3``."""
    return SpectralField(F.grid, np.where(F.grid.dealias_mask, F.coeffs, 0.0))


def sobolev_norm(F: SpectralField | Sequence[SpectralField], s: float) -> float:
    """``sqrt(L**dim * sum_k (1+|k|^2)**s |c_k|^2)``; vector input sums components."""
    if isinstance(F, SpectralField):
        return np.sqrt(F.grid.norm_sq(F.coeffs, s))
    return float(np.sqrt(sum(c.grid.norm_sq(c.coeffs, s) for c in F)))


def l2_inner(F: SpectralField, G: SpectralField) -> float:
    _same_grid(F.grid, G.grid)
    grid = F.grid
    return float(grid.volume * np.real(grid.sum_modes(F.coeffs * np.conj(G.coeffs))))


def random_band_limited(
    grid: Grid, kmax: int, rng: np.random.Generator, decay: float = 0.0
) -> SpectralField:
    """Random real field with modes ``|k_axis| <= kmax`` and optional ``|k|^-decay`` envelope."""
    noise = rng.standard_normal(grid.shape)
    coeffs = grid.fft(noise)
    keep = np.ones(grid.spectral_shape, dtype=bool)
    for m in grid.integer_modes:
        keep &= np.abs(m) <= kmax
    coeffs = np.where(keep, coeffs, 0.0)
    if decay:
        coeffs = coeffs * (1.0 + grid.k2) ** (-decay / 2)
    # round-trip to enforce exact Hermitian symmetry on the self-conjugate planes,
    # then re-mask the round-off it leaves outside the band
    return SpectralField(grid, np.where(keep, grid.fft(grid.ifft(coeffs)), 0.0))
