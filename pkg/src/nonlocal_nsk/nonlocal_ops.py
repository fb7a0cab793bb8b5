"""The ``k_alpha`` multiplier family, Leray projection and the Korteweg force.

``k_alpha`` has symbol ``alpha / sqrt(alpha^2 + |xi|^2)``; its square is the
solution operator of the screened Poisson problem ``alpha^2 c - Lap c =
alpha^2 rho``.  Everything acts diagonally on Fourier coefficients.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .spectral import Grid, RealField, SpectralField

__all__ = [
    "check_alpha",
    "k_alpha_symbol",
    "k_alpha_sq_symbol",
    "apply_k_alpha",
    "apply_k_alpha_sq",
    "relaxation_residual",
    "leray_project",
    "korteweg_force",
    "korteweg_force_hat",
]


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be finite and positive, got {alpha}")
    return alpha


def k_alpha_symbol(grid: Grid, alpha: float) -> np.ndarray:
    alpha = check_alpha(alpha)
    return alpha / np.sqrt(alpha**2 + grid.k2)


def k_alpha_sq_symbol(grid: Grid, alpha: float) -> np.ndarray:
    alpha = check_alpha(alpha)
    return alpha**2 / (alpha**2 + grid.k2)


def apply_k_alpha(F: SpectralField, alpha: float) -> SpectralField:
    return SpectralField(F.grid, k_alpha_symbol(F.grid, alpha) * F.coeffs)


def apply_k_alpha_sq(F: SpectralField, alpha: float) -> SpectralField:
    """Screened Poisson solve: returns ``c`` with ``alpha^2 c - Lap c = alpha^2 F``."""
    return SpectralField(F.grid, k_alpha_sq_symbol(F.grid, alpha) * F.coeffs)


def relaxation_residual(F: SpectralField, alpha: float) -> SpectralField:
    """``(k_alpha^2 - I) F``, i.e. the multiplier ``-|xi|^2 / (alpha^2 + |xi|^2)``."""
    alpha = check_alpha(alpha)
    k2 = F.grid.k2
    return SpectralField(F.grid, -k2 / (alpha**2 + k2) * F.coeffs)


def _derivative_wavevector(grid: Grid) -> tuple[np.ndarray, ...]:
    return tuple(np.imag(ik) for ik in grid.ik)


def leray_project_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Project stacked coefficients ``(dim, ...)`` onto divergence-free fields.

    The projector uses the same Nyquist-zeroed wavevector as the spectral
    divergence, so the result has zero discrete divergence.
    """
    kd = _derivative_wavevector(grid)
    kk = sum(k**2 for k in kd)
    inv = np.divide(1.0, kk, out=np.zeros(np.broadcast(kk, coeffs[0]).shape), where=kk > 0)
    kdotc = sum(kd[j] * coeffs[j] for j in range(grid.dim))
    return np.stack([coeffs[j] - kd[j] * kdotc * inv for j in range(grid.dim)])


def leray_project(U: Sequence[SpectralField]) -> list[SpectralField]:
    grid = U[0].grid
    if len(U) != grid.dim:
        raise ValueError(f"expected {grid.dim} components, got {len(U)}")
    out = leray_project_hat(grid, np.stack([c.coeffs for c in U]))
    return [SpectralField(grid, c) for c in out]


def korteweg_force_hat(
    grid: Grid, rho_hat: np.ndarray, kappa: float, alpha: float | None, local: bool
) -> np.ndarray:
    """Dealiased coefficients of ``-kappa * grad(rho) * (k_alpha^2 Lap rho)``.

    With ``local=True`` the multiplier is dropped (``-kappa grad rho Lap rho``).
    Returns an array of shape ``(dim, *spectral_shape)``.
    """
    if kappa == 0:
        return np.zeros((grid.dim,) + grid.spectral_shape, dtype=complex)
    symbol = -grid.k2 if local else -grid.k2 * k_alpha_sq_symbol(grid, alpha)
    stacked = np.stack([ik * rho_hat for ik in grid.ik] + [symbol * rho_hat])
    phys = grid.ifft(stacked)
    force = -kappa * phys[:-1] * phys[-1]
    return np.where(grid.dealias_mask, grid.fft(force), 0.0)


def korteweg_force(
    rho: RealField, kappa: float, alpha: float | None = None, mode: str = "nonlocal"
) -> list[RealField]:
    """Capillary force per unit volume, in the form used with the modified pressure."""
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    if mode not in ("nonlocal", "local"):
        raise ValueError(f"mode must be 'nonlocal' or 'local', got {mode!r}")
    local = mode == "local"
    if not local:
        check_alpha(alpha)
    grid = rho.grid
    force = korteweg_force_hat(grid, grid.fft(rho.values), kappa, alpha, local)
    return [RealField(grid, f) for f in grid.ifft(force)]
