"""Variable-density incompressible dynamics for the relaxed, local and capillarity-free systems.

The prognostic variables are the density ``rho`` and the velocity ``u``; the
pressure ``pi`` is diagnosed each stage from the variable-coefficient
projection ``div(rho^-1 grad pi) = div g``.  Integration is explicit RK4 on
dealiased Fourier coefficients.  The accumulated viscous dissipation
``int_0^t ||grad u||^2`` is integrated alongside so energy budgets close to
the order of the time stepper.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .nonlocal_ops import check_alpha, k_alpha_sq_symbol, leray_project_hat
from .spectral import Grid, RealField

logger = logging.getLogger(__name__)

__all__ = [
    "System",
    "PhysParams",
    "FlowState",
    "Trajectory",
    "FixedStep",
    "CFLStep",
    "PressureSolveError",
    "StateInvariantError",
    "make_state",
    "density_rhs",
    "solve_pressure",
    "momentum_rhs",
    "rk4_step",
    "cfl_dt",
    "simulate",
    "kinetic_energy",
    "capillary_energy",
    "total_energy",
    "dissipation_rate",
    "mean_momentum",
    "divergence_norm",
]

PRESSURE_TOL = 1e-10
PRESSURE_MAX_ITER = 500
EPS = 1e-12


class System(str, Enum):
    RELAXED = "RelaxedINSK"
    LOCAL = "LocalINSK"
    NAVIER_STOKES = "NavierStokes"


class PressureSolveError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class StateInvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysParams:
    kappa: float = 1.0
    alpha: float = 16.0
    rho_bar: float = 1.0
    system: System = System.RELAXED
    kappa_max: float = 100.0
    viscosity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "system", System(self.system))
        if not (self.kappa >= 0):
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        if self.kappa > self.kappa_max:
            raise ValueError(f"kappa={self.kappa} exceeds kappa_max={self.kappa_max}")
        check_alpha(self.alpha)
        if not (self.rho_bar > 0):
            raise ValueError(f"rho_bar must be positive, got {self.rho_bar}")
        if self.viscosity != 1.0:
            raise ValueError("viscosity is normalized to 1")

    @property
    def capillary(self) -> bool:
        return self.system is not System.NAVIER_STOKES and self.kappa > 0

    def multiplier(self, grid: Grid) -> np.ndarray | float:
        """Symbol applied to ``Lap rho`` in the force: ``k_alpha^2`` or 1 (local)."""
        if self.system is System.LOCAL:
            return 1.0
        return k_alpha_sq_symbol(grid, self.alpha)


@dataclass(frozen=True)
class FlowState:
    grid: Grid
    rho: RealField
    u: tuple[RealField, ...]
    pi: RealField
    eta: tuple[RealField, ...] | None = None
    time: float = 0.0
    dissipation: float = 0.0

    def u_array(self) -> np.ndarray:
        return np.stack([c.values for c in self.u])

    def eta_array(self) -> np.ndarray | None:
        return None if self.eta is None else np.stack([c.values for c in self.eta])


def make_state(
    grid: Grid,
    rho: np.ndarray,
    u: np.ndarray,
    *,
    pi: np.ndarray | None = None,
    eta: np.ndarray | bool | None = None,
    time: float = 0.0,
    dissipation: float = 0.0,
) -> FlowState:
    """Build a FlowState from raw arrays; ``eta=True`` initialises ``eta = grad rho``."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.dim,) + grid.shape:
        raise ValueError(f"velocity must have shape {(grid.dim,) + grid.shape}")
    if eta is True:
        rho_hat = grid.fft(rho)
        eta = grid.ifft(np.stack([ik * rho_hat for ik in grid.ik]))
    elif eta is False:
        eta = None
    pi = np.zeros(grid.shape) if pi is None else pi
    return FlowState(
        grid=grid,
        rho=RealField(grid, rho),
        u=tuple(RealField(grid, c) for c in u),
        pi=RealField(grid, pi),
        eta=None if eta is None else tuple(RealField(grid, c) for c in np.asarray(eta)),
        time=float(time),
        dissipation=float(dissipation),
    )


# ---------------------------------------------------------------------------
# internal spectral state


@dataclass
class _Spec:
    rho: np.ndarray
    u: np.ndarray
    eta: np.ndarray | None
    pi: np.ndarray
    time: float
    diss: float
    pi_rate: np.ndarray | None = None  # d(pi_hat)/dt from the last step, for warm starts


def _to_spec(state: FlowState) -> _Spec:
    g = state.grid
    eta = state.eta_array()
    return _Spec(
        rho=g.fft(state.rho.values),
        u=g.fft(state.u_array()),
        eta=None if eta is None else g.fft(eta),
        pi=g.fft(state.pi.values),
        time=state.time,
        diss=state.dissipation,
    )


def _from_spec(grid: Grid, s: _Spec) -> FlowState:
    fields = [s.rho[None], s.u, s.pi[None]]
    if s.eta is not None:
        fields.append(s.eta)
    phys = grid.ifft(np.concatenate(fields))
    d = grid.dim
    return make_state(
        grid,
        phys[0],
        phys[1 : 1 + d],
        pi=phys[1 + d],
        eta=None if s.eta is None else phys[2 + d :],
        time=s.time,
        dissipation=s.diss,
    )


def _dealiased_fft(grid: Grid, values: np.ndarray) -> np.ndarray:
    return np.where(grid.dealias_mask, grid.fft(values), 0.0)


def _solve_pressure_hat(
    grid: Grid,
    rho: np.ndarray,
    g_hat: np.ndarray,
    guess: np.ndarray | None = None,
    tol: float = PRESSURE_TOL,
    max_iter: int = PRESSURE_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Solve ``div(D[rho^-1 grad pi]) = div g`` by preconditioned fixed point.

    Returns ``(pi_hat, flux_hat, iterations)`` where ``flux_hat`` holds the
    dealiased coefficients of ``rho^-1 grad pi``.
    """
    rmin, rmax = float(rho.min()), float(rho.max())
    if rmin <= 0:
        raise ValueError(f"density must be positive, min={rmin}")
    rho_ref = 2.0 / (1.0 / rmin + 1.0 / rmax)
    m = 1.0 / rho - 1.0 / rho_ref
    ik = grid.ik
    div_g = sum(ik[j] * g_hat[j] for j in range(grid.dim))
    scale = math.sqrt(grid.norm_sq(div_g))
    pi_hat = np.zeros(grid.spectral_shape, dtype=complex) if guess is None else guess.copy()
    pi_hat[(0,) * grid.dim] = 0.0
    if scale == 0.0:
        zero = np.zeros(grid.spectral_shape, dtype=complex)
        return zero, np.zeros_like(g_hat), 0
    residual = np.inf
    for it in range(max_iter + 1):
        grad_pi = grid.ifft(np.stack([ik[j] * pi_hat for j in range(grid.dim)]))
        var_flux = _dealiased_fft(grid, m * grad_pi)
        div_var = sum(ik[j] * var_flux[j] for j in range(grid.dim))
        r = div_g - div_var + grid.k2 * pi_hat / rho_ref
        residual = math.sqrt(grid.norm_sq(r)) / scale
        if residual <= tol:
            flux = var_flux + np.stack([ik[j] * pi_hat for j in range(grid.dim)]) / rho_ref
            return pi_hat, flux, it
        pi_hat = -rho_ref * grid.inv_k2 * (div_g - div_var)
    raise PressureSolveError(
        f"pressure solve did not converge in {max_iter} iterations "
        f"(relative residual {residual:.3e})",
        residual,
    )


def _rhs(grid: Grid, params: PhysParams, s: _Spec, pi_guess: np.ndarray | None = None):
    """Time derivatives of (rho, u, eta, dissipation) plus the pressure used."""
    d = grid.dim
    ik = grid.ik
    cap = params.capillary
    blocks = [s.rho[None]]
    blocks.append(np.stack([ik[j] * s.rho for j in range(d)]))
    blocks.append(s.u)
    blocks.append(np.stack([ik[j] * s.u[i] for i in range(d) for j in range(d)]))
    blocks.append(-grid.k2 * s.u)
    if cap:
        blocks.append((-grid.k2 * params.multiplier(grid) * s.rho)[None])
    if s.eta is not None:
        blocks.append(s.eta)
        blocks.append(np.stack([ik[j] * s.eta[i] for i in range(d) for j in range(d)]))
    phys = grid.ifft(np.concatenate(blocks))

    rho = phys[0]
    grad_rho = phys[1 : 1 + d]
    u = phys[1 + d : 1 + 2 * d]
    off = 1 + 2 * d
    grad_u = phys[off : off + d * d].reshape((d, d) + grid.shape)  # [i, j] = d_j u_i
    off += d * d
    lap_u = phys[off : off + d]
    off += d

    visc_force = lap_u.copy()
    if cap:
        lap_c = phys[off]
        off += 1
        visc_force -= params.kappa * grad_rho * lap_c
    adv = np.einsum("j...,ij...->i...", u, grad_u)
    g = visc_force / rho - adv
    u_dot_grad_rho = np.einsum("j...,j...->...", u, grad_rho)

    fwd = [g, u_dot_grad_rho[None]]
    if s.eta is not None:
        eta = phys[off : off + d]
        grad_eta = phys[off + d : off + d + d * d].reshape((d, d) + grid.shape)
        eta_rhs = -np.einsum("j...,ij...->i...", u, grad_eta) - np.einsum(
            "ij...,i...->j...", grad_u, eta
        )
        fwd.append(eta_rhs)
    spec = _dealiased_fft(grid, np.concatenate(fwd))
    g_hat = spec[:d]
    drho = -spec[d]
    deta = spec[d + 1 :] if s.eta is not None else None

    pi_hat, flux, _ = _solve_pressure_hat(grid, rho, g_hat, pi_guess)
    du = g_hat - flux
    ddiss = _grad_norm_sq(grid, s.u)
    return drho, du, deta, ddiss, pi_hat


def _grad_norm_sq(grid: Grid, u_hat: np.ndarray) -> float:
    kd2 = sum(np.abs(ik) ** 2 for ik in grid.ik)
    return float(grid.volume * np.sum(grid.sum_modes(kd2 * np.abs(u_hat) ** 2)))


def _axpy(s: _Spec, h: float, k) -> _Spec:
    drho, du, deta, ddiss, _ = k
    return _Spec(
        rho=s.rho + h * drho,
        u=s.u + h * du,
        eta=None if s.eta is None else s.eta + h * deta,
        pi=s.pi,
        time=s.time + h,
        diss=s.diss + h * ddiss,
    )


def _guess(pi: np.ndarray, rate: np.ndarray | None, h: float) -> np.ndarray:
    return pi if rate is None else pi + h * rate


def _rk4(grid: Grid, params: PhysParams, s: _Spec, dt: float) -> _Spec:
    k1 = _rhs(grid, params, s, s.pi)
    k2 = _rhs(grid, params, _axpy(s, dt / 2, k1), _guess(k1[4], s.pi_rate, dt / 2))
    k3 = _rhs(grid, params, _axpy(s, dt / 2, k2), k2[4])
    k4 = _rhs(grid, params, _axpy(s, dt, k3), 2 * k3[4] - k1[4])
    w = (dt / 6, dt / 3, dt / 3, dt / 6)
    ks = (k1, k2, k3, k4)
    rho = s.rho + sum(wi * k[0] for wi, k in zip(w, ks))
    u = s.u + sum(wi * k[1] for wi, k in zip(w, ks))
    eta = None if s.eta is None else s.eta + sum(wi * k[2] for wi, k in zip(w, ks))
    diss = s.diss + sum(wi * k[3] for wi, k in zip(w, ks))
    u = leray_project_hat(grid, u)
    out = _Spec(
        rho=rho, u=u, eta=eta, pi=k4[4], time=s.time + dt, diss=diss,
        pi_rate=(k4[4] - k1[4]) / dt,
    )
    _check_spec(grid, out)
    return out


def _check_spec(grid: Grid, s: _Spec):
    if not (np.all(np.isfinite(s.rho)) and np.all(np.isfinite(s.u))):
        raise StateInvariantError(f"non-finite state at t={s.time:.6g}")
    rmin = float(grid.ifft(s.rho).min())
    if rmin <= 0:
        raise StateInvariantError(f"density lost positivity at t={s.time:.6g} (min {rmin:.3e})")


# ---------------------------------------------------------------------------
# public operations


def density_rhs(state: FlowState) -> RealField:
    """``-u . grad rho``, dealiased."""
    g = state.grid
    rho_hat = g.fft(state.rho.values)
    grad = g.ifft(np.stack([ik * rho_hat for ik in g.ik]))
    prod = np.einsum("j...,j...->...", state.u_array(), grad)
    return RealField(g, g.ifft(-_dealiased_fft(g, prod)))


def solve_pressure(
    rho: RealField,
    g: Sequence[RealField],
    tol: float = PRESSURE_TOL,
    max_iter: int = PRESSURE_MAX_ITER,
) -> RealField:
    """Zero-mean ``pi`` with ``div(rho^-1 grad pi) = div g``.

    Raises PressureSolveError (carrying the final residual) if the fixed-point
    iteration does not reach ``tol`` within ``max_iter`` sweeps.
    """
    grid = rho.grid
    g_hat = _dealiased_fft(grid, np.stack([c.values for c in g]))
    pi_hat, _, _ = _solve_pressure_hat(grid, rho.values, g_hat, tol=tol, max_iter=max_iter)
    return RealField(grid, grid.ifft(pi_hat))


def momentum_rhs(state: FlowState, params: PhysParams) -> list[RealField]:
    """``du/dt = -(u.grad)u + rho^-1 (Lap u + F - grad pi)``, divergence free."""
    grid = state.grid
    s = _to_spec(state)
    _, du, _, _, _ = _rhs(grid, params, s, s.pi)
    return [RealField(grid, c) for c in grid.ifft(du)]


def rk4_step(state: FlowState, dt: float, params: PhysParams) -> FlowState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = state.grid
    return _from_spec(grid, _rk4(grid, params, _to_spec(state), dt))


def cfl_dt(state: FlowState, params: PhysParams, safety: float = 0.5) -> float:
    """Step bound from advection, explicit viscosity and the capillary term.

    For the local system the nonlocal cutoff ``alpha`` is replaced by the
    largest resolved wavenumber.
    """
    if not 0 < safety <= 1:
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    return safety * min(_cfl_candidates(state, params))


def _cfl_candidates(state: FlowState, params: PhysParams) -> tuple[float, float, float]:
    grid = state.grid
    dx = grid.dx
    umax = float(np.sqrt(np.sum(state.u_array() ** 2, axis=0)).max())
    rho = state.rho.values
    advective = dx / (umax + EPS)
    viscous = float(rho.min()) * dx**2 / (2 * grid.dim)
    if params.capillary:
        rho_hat = grid.fft(rho)
        grad = grid.ifft(np.stack([ik * rho_hat for ik in grid.ik]))
        gmax = float(np.sqrt(np.sum(grad**2, axis=0)).max())
        if params.system is System.LOCAL:
            cutoff = float(np.sqrt(np.max(np.where(grid.dealias_mask, grid.k2, 0.0))))
        else:
            cutoff = params.alpha
        capillary = 1.0 / (math.sqrt(params.kappa) * cutoff * gmax + EPS)
    else:
        capillary = math.inf
    return advective, viscous, capillary


# ---------------------------------------------------------------------------
# diagnostics


def kinetic_energy(state: FlowState) -> float:
    g = state.grid
    return 0.5 * float(np.sum(state.rho.values * state.u_array() ** 2)) * g.dx**g.dim


def capillary_energy(state: FlowState, params: PhysParams) -> float:
    """``(kappa/2) ||k_alpha grad rho||^2`` (``||grad rho||^2`` for the local system)."""
    if not params.capillary:
        return 0.0
    g = state.grid
    rho_hat = g.fft(state.rho.values)
    kd2 = sum(np.abs(ik) ** 2 for ik in g.ik)
    dens = kd2 * np.abs(rho_hat) ** 2 * params.multiplier(g)
    return 0.5 * params.kappa * float(g.volume * np.sum(g.sum_modes(dens)))


def total_energy(state: FlowState, params: PhysParams) -> float:
    return kinetic_energy(state) + capillary_energy(state, params)


def dissipation_rate(state: FlowState) -> float:
    g = state.grid
    return _grad_norm_sq(g, g.fft(state.u_array()))


def mean_momentum(state: FlowState) -> np.ndarray:
    g = state.grid
    return np.sum(state.rho.values * state.u_array(), axis=tuple(range(1, g.dim + 1))) * g.dx**g.dim


def divergence_norm(state: FlowState) -> float:
    g = state.grid
    u_hat = g.fft(state.u_array())
    div = sum(g.ik[j] * u_hat[j] for j in range(g.dim))
    return math.sqrt(g.norm_sq(div))


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class FixedStep:
    dt: float


@dataclass(frozen=True)
class CFLStep:
    safety: float = 0.5


@dataclass
class Trajectory:
    params: PhysParams
    frames: list[FlowState]
    steps: int = 0
    blew_up: bool = False
    message: str = ""
    monitor_values: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])

    @property
    def grid(self) -> Grid:
        return self.frames[0].grid


def _output_times(t_end: float, n_frames: int) -> np.ndarray:
    if t_end == 0:
        return np.array([0.0])
    return np.linspace(0.0, t_end, n_frames + 1)


def simulate(
    init: FlowState,
    params: PhysParams,
    t_end: float,
    dt_policy: FixedStep | CFLStep | float = CFLStep(0.5),
    n_frames: int = 32,
    monitors: Mapping[str, Callable[[FlowState], float]] | None = None,
    norm_ceiling: float = 1e8,
) -> Trajectory:
    """Integrate from ``init`` to ``t_end``, emitting ``n_frames + 1`` equally spaced states.

    Each frame interval is split into equal steps no longer than the policy's
    dt (the CFL bound is re-evaluated at the start of each interval).  Blow-up
    (non-finite values, density sign loss, pressure non-convergence, or an
    H^4/H^3 norm above ``norm_ceiling``) stops the run and returns the partial
    trajectory with ``blew_up`` set.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if isinstance(dt_policy, (int, float)):
        dt_policy = FixedStep(float(dt_policy))
    grid = init.grid
    if float(init.rho.values.min()) <= 0:
        raise ValueError("initial density must be strictly positive")
    monitors = dict(monitors or {})
    traj = Trajectory(params=params, frames=[init])
    traj.monitor_values = {name: [] for name in monitors}
    s = _to_spec(init)
    times = _output_times(t_end, n_frames)
    zero = (0,) * grid.dim
    for t_a, t_b in zip(times[:-1], times[1:]):
        if isinstance(dt_policy, FixedStep):
            dt_target = dt_policy.dt
        else:
            dt_target = cfl_dt(_from_spec(grid, s), params, dt_policy.safety)
        nsteps = max(1, math.ceil((t_b - t_a) / dt_target - 1e-9))
        h = (t_b - t_a) / nsteps
        for k in range(nsteps):
            try:
                s = _rk4(grid, params, s, h)
            except (StateInvariantError, PressureSolveError) as exc:
                traj.blew_up, traj.message = True, str(exc)
                logger.warning("simulation stopped: %s", exc)
                return traj
            s.time = t_a + (k + 1) * h
            traj.steps += 1
            rho_tilde = s.rho.copy()
            rho_tilde[zero] -= params.rho_bar
            big = max(math.sqrt(grid.norm_sq(rho_tilde, 4)), math.sqrt(grid.norm_sq(s.u, 3)))
            if not big <= norm_ceiling:
                traj.blew_up = True
                traj.message = f"norm ceiling exceeded at t={s.time:.6g} ({big:.3e})"
                logger.warning("simulation stopped: %s", traj.message)
                return traj
            if monitors:
                current = _from_spec(grid, s)
                for name, fn in monitors.items():
                    traj.monitor_values[name].append((s.time, float(fn(current))))
        s.time = float(t_b)
        traj.frames.append(_from_spec(grid, s))
    return traj


def with_params(params: PhysParams, **changes) -> PhysParams:
    return replace(params, **changes)
