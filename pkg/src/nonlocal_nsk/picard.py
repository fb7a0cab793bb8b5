"""Linearized (Picard) iteration for the relaxed system with auxiliary gradient ``eta``.

Iterate ``n+1`` solves, over a fixed time mesh on ``[0, T]``::

    rho^n [u_t + (u^n . grad) u] - Lap u + grad pi = -kappa eta^n div(k_alpha^2 eta)
    eta_j,t + u^n . grad eta_j + (d_j u) . eta^n = 0
    rho_t + u . grad rho = 0,   div u = 0

with the previous iterate frozen.  The momentum/eta pair is co-advanced
first, then the density is transported by the new velocity.  Values of the
frozen iterate at RK4 half-steps come from cubic Lagrange interpolation in
time, which keeps the fixed point fourth-order consistent with ``simulate``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    FlowState,
    PhysParams,
    PressureSolveError,
    _dealiased_fft,
    _solve_pressure_hat,
    make_state,
)
from .nonlocal_ops import leray_project_hat
from .spectral import Grid, RealField

logger = logging.getLogger(__name__)

__all__ = [
    "PicardIterate",
    "ContractionReport",
    "constant_iterate",
    "linearized_step",
    "picard_solve",
    "contraction_metric",
    "eta_consistency",
]


@dataclass
class PicardIterate:
    """One Picard iterate stored on the shared time mesh (spectral coefficients)."""

    grid: Grid
    times: np.ndarray
    rho_hat: np.ndarray  # (nt, *spectral_shape)
    u_hat: np.ndarray  # (nt, dim, *spectral_shape)
    eta_hat: np.ndarray  # (nt, dim, *spectral_shape)
    index: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def rho(self, i: int) -> RealField:
        return RealField(self.grid, self.grid.ifft(self.rho_hat[i]))

    def u(self, i: int) -> tuple[RealField, ...]:
        return tuple(RealField(self.grid, c) for c in self.grid.ifft(self.u_hat[i]))

    def eta(self, i: int) -> tuple[RealField, ...]:
        return tuple(RealField(self.grid, c) for c in self.grid.ifft(self.eta_hat[i]))

    def state(self, i: int) -> FlowState:
        g = self.grid
        return make_state(
            g,
            g.ifft(self.rho_hat[i]),
            g.ifft(self.u_hat[i]),
            eta=g.ifft(self.eta_hat[i]),
            time=float(self.times[i]),
        )


@dataclass
class ContractionReport:
    x_sequence: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    converged: bool = False
    non_contraction: bool = False
    x_history: list[np.ndarray] = field(default_factory=list)
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.x_sequence)


def _time_mesh(T: float, dt: float) -> np.ndarray:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    nsteps = max(3, math.ceil(T / dt - 1e-9))
    return np.linspace(0.0, T, nsteps + 1)


def constant_iterate(init: FlowState, T: float, dt: float) -> PicardIterate:
    """Iterate 0: the initial data held constant in time, with ``eta = grad rho_0``."""
    g = init.grid
    times = _time_mesh(T, dt)
    nt = len(times)
    rho_hat = g.fft(init.rho.values)
    u_hat = g.fft(init.u_array())
    eta_hat = np.stack([ik * rho_hat for ik in g.ik])
    return PicardIterate(
        grid=g,
        times=times,
        rho_hat=np.broadcast_to(rho_hat, (nt,) + rho_hat.shape).copy(),
        u_hat=np.broadcast_to(u_hat, (nt,) + u_hat.shape).copy(),
        eta_hat=np.broadcast_to(eta_hat, (nt,) + eta_hat.shape).copy(),
        index=0,
    )


def _midpoint(arr: np.ndarray, k: int) -> np.ndarray:
    """Cubic Lagrange value of ``arr`` at the midpoint of step ``k``."""
    last = len(arr) - 2
    if k == 0:
        return (5 * arr[0] + 15 * arr[1] - 5 * arr[2] + arr[3]) / 16
    if k == last:
        return (arr[k - 2] - 5 * arr[k - 1] + 15 * arr[k] + 5 * arr[k + 1]) / 16
    return (-arr[k - 1] + 9 * arr[k] + 9 * arr[k + 1] - arr[k + 2]) / 16


class _Frozen:
    """Physical-space frozen coefficients of the previous iterate at stage times."""

    def __init__(self, prev: PicardIterate):
        self.prev = prev
        self._cache: dict[tuple[int, int], tuple[np.ndarray, ...]] = {}

    def _phys(self, hat_rho, hat_u, hat_eta):
        g = self.prev.grid
        d = g.dim
        phys = g.ifft(np.concatenate([hat_rho[None], hat_u, hat_eta]))
        return phys[0], phys[1 : 1 + d], phys[1 + d :]

    def at(self, k: int, half: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Frozen (rho, u, eta) at ``t_k + half * h/2`` for half in {0, 1, 2}."""
        if half == 2:
            k, half = k + 1, 0
        key = (k, half)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            p = self.prev
            if half == 0:
                self._cache[key] = self._phys(p.rho_hat[k], p.u_hat[k], p.eta_hat[k])
            else:
                self._cache[key] = self._phys(
                    _midpoint(p.rho_hat, k), _midpoint(p.u_hat, k), _midpoint(p.eta_hat, k)
                )
        return self._cache[key]


def _momentum_eta_rhs(grid, params, frozen, u_hat, eta_hat, pi_guess):
    R, V, H = frozen
    d = grid.dim
    ik = grid.ik
    blocks = [
        np.stack([ik[j] * u_hat[i] for i in range(d) for j in range(d)]),
        -grid.k2 * u_hat,
        np.stack([ik[j] * eta_hat[i] for i in range(d) for j in range(d)]),
    ]
    cap = params.capillary
    if cap:
        mult = params.multiplier(grid)
        blocks.append(sum(ik[j] * mult * eta_hat[j] for j in range(d))[None])
    phys = grid.ifft(np.concatenate(blocks))
    grad_u = phys[: d * d].reshape((d, d) + grid.shape)  # [i, j] = d_j u_i
    lap_u = phys[d * d : d * d + d]
    grad_eta = phys[d * d + d : 2 * d * d + d].reshape((d, d) + grid.shape)
    visc_force = lap_u.copy()
    if cap:
        visc_force -= params.kappa * H * phys[-1]
    g = visc_force / R - np.einsum("j...,ij...->i...", V, grad_u)
    eta_rhs = -np.einsum("j...,ij...->i...", V, grad_eta) - np.einsum("ij...,i...->j...", grad_u, H)
    spec = _dealiased_fft(grid, np.concatenate([g, eta_rhs]))
    pi_hat, flux, _ = _solve_pressure_hat(grid, R, spec[:d], pi_guess)
    return spec[:d] - flux, spec[d:], pi_hat


def _density_rhs(grid, rho_hat, U):
    grad = grid.ifft(np.stack([ik * rho_hat for ik in grid.ik]))
    return -_dealiased_fft(grid, np.einsum("j...,j...->...", U, grad))


def linearized_step(
    prev: PicardIterate, init: FlowState, params: PhysParams
) -> PicardIterate:
    """Compute iterate ``prev.index + 1`` on the mesh of ``prev``."""
    g = prev.grid
    times = prev.times
    nt = len(times)
    frozen = _Frozen(prev)

    u_hat = np.empty_like(prev.u_hat)
    eta_hat = np.empty_like(prev.eta_hat)
    u_hat[0] = g.fft(init.u_array())
    eta_hat[0] = np.stack([ik * g.fft(init.rho.values) for ik in g.ik])
    pi = np.zeros(g.spectral_shape, dtype=complex)
    pi_rate = None
    for k in range(nt - 1):
        h = times[k + 1] - times[k]
        u0, e0 = u_hat[k], eta_hat[k]
        du1, de1, p1 = _momentum_eta_rhs(g, params, frozen.at(k, 0), u0, e0, pi)
        guess = p1 if pi_rate is None else p1 + h / 2 * pi_rate
        du2, de2, p2 = _momentum_eta_rhs(
            g, params, frozen.at(k, 1), u0 + h / 2 * du1, e0 + h / 2 * de1, guess
        )
        du3, de3, p3 = _momentum_eta_rhs(
            g, params, frozen.at(k, 1), u0 + h / 2 * du2, e0 + h / 2 * de2, p2
        )
        du4, de4, p4 = _momentum_eta_rhs(
            g, params, frozen.at(k, 2), u0 + h * du3, e0 + h * de3, 2 * p3 - p1
        )
        u_new = u0 + h / 6 * (du1 + 2 * du2 + 2 * du3 + du4)
        u_hat[k + 1] = leray_project_hat(g, u_new)
        eta_hat[k + 1] = e0 + h / 6 * (de1 + 2 * de2 + 2 * de3 + de4)
        pi, pi_rate = p4, (p4 - p1) / h
        if not (np.all(np.isfinite(u_hat[k + 1])) and np.all(np.isfinite(eta_hat[k + 1]))):
            raise FloatingPointError(f"Picard iterate blew up at t={times[k + 1]:.6g}")

    # density transported by the freshly computed velocity
    rho_hat = np.empty_like(prev.rho_hat)
    rho_hat[0] = g.fft(init.rho.values)
    u_phys = g.ifft(u_hat)
    for k in range(nt - 1):
        h = times[k + 1] - times[k]
        U0, U1 = u_phys[k], u_phys[k + 1]
        Um = g.ifft(_midpoint(u_hat, k))
        r0 = rho_hat[k]
        k1 = _density_rhs(g, r0, U0)
        k2 = _density_rhs(g, r0 + h / 2 * k1, Um)
        k3 = _density_rhs(g, r0 + h / 2 * k2, Um)
        k4 = _density_rhs(g, r0 + h * k3, U1)
        rho_hat[k + 1] = r0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(rho_hat)):
        raise FloatingPointError("Picard density iterate is not finite")
    rmin = float(g.ifft(rho_hat).min())
    if rmin <= 0:
        raise FloatingPointError(f"Picard density iterate lost positivity (min {rmin:.3e})")
    return PicardIterate(
        grid=g, times=times, rho_hat=rho_hat, u_hat=u_hat, eta_hat=eta_hat, index=prev.index + 1
    )


def contraction_metric(a: PicardIterate, b: PicardIterate) -> np.ndarray:
    """``X(t) = ||d rho||^2 + ||d u||^2 + ||d eta||^2`` at every mesh time."""
    g = a.grid
    if a.grid != b.grid or len(a.times) != len(b.times):
        raise ValueError("iterates live on different meshes")

    def per_time(x):
        dens = g.sum_modes(np.abs(x) ** 2)
        return g.volume * dens.reshape(len(a.times), -1).sum(axis=1)

    return (
        per_time(a.rho_hat - b.rho_hat)
        + per_time(a.u_hat - b.u_hat)
        + per_time(a.eta_hat - b.eta_hat)
    )


def picard_solve(
    init: FlowState,
    params: PhysParams,
    T: float,
    tol: float = 1e-20,
    max_iter: int = 30,
    dt: float | None = None,
) -> tuple[PicardIterate, ContractionReport]:
    """Iterate until ``sup_t X^n <= tol`` or ``max_iter``.

    Three consecutive ratios above one, or an iterate that diverges outright,
    set ``non_contraction`` and stop the iteration without raising.  The last
    well-defined iterate is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if dt is None:
        from .dynamics import cfl_dt

        dt = cfl_dt(init, params, 0.5)
    prev = constant_iterate(init, T, dt)
    report = ContractionReport()
    growing = 0
    for _ in range(max_iter):
        try:
            nxt = linearized_step(prev, init, params)
        except (FloatingPointError, PressureSolveError) as exc:
            report.non_contraction, report.message = True, str(exc)
            logger.warning("Picard iteration diverged: %s", exc)
            break
        with np.errstate(over="ignore", invalid="ignore"):
            x = contraction_metric(nxt, prev)
        if not np.all(np.isfinite(x)):
            report.non_contraction, report.message = True, "contraction metric overflowed"
            break
        report.x_history.append(x)
        report.x_sequence.append(float(x.max()))
        if len(report.x_sequence) > 1:
            before = report.x_sequence[-2]
            ratio = report.x_sequence[-1] / before if before > 0 else 0.0
            report.ratios.append(ratio)
            growing = growing + 1 if ratio > 1 else 0
        logger.info("picard iterate %d: sup X = %.3e", nxt.index, report.x_sequence[-1])
        prev = nxt
        if report.x_sequence[-1] <= tol:
            report.converged = True
            break
        if growing >= 3:
            report.non_contraction = True
            report.message = "3 consecutive ratios above 1"
            logger.warning("Picard iteration is not contracting (3 growing ratios)")
            break
    return prev, report


def eta_consistency(iterate: PicardIterate) -> float:
    """``max_t ||eta - grad rho||_{L^2}`` over the mesh."""
    g = iterate.grid
    grad = np.stack([ik * iterate.rho_hat for ik in g.ik], axis=1)
    diff = iterate.eta_hat - grad
    dens = g.sum_modes(np.abs(diff) ** 2).reshape(len(iterate.times), -1).sum(axis=1)
    return float(np.sqrt(g.volume * dens).max())
