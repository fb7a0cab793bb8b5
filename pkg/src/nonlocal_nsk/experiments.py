"""Parameter sweeps, rate fits and trajectory diagnostics.

The two sweeps compare relaxed-system runs against a limit-system reference
run on the same mesh with the same step, so that discretisation error
largely cancels in the difference:

* ``sweep_alpha``: relaxed vs local system as ``alpha`` grows,
* ``sweep_kappa``: relaxed vs capillarity-free system as ``kappa`` shrinks.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .dynamics import (
    FixedStep,
    FlowState,
    PhysParams,
    System,
    Trajectory,
    _cfl_candidates,
    make_state,
    simulate,
    total_energy,
    dissipation_rate,
)
from .nonlocal_ops import k_alpha_sq_symbol, k_alpha_symbol
from .spectral import Grid, make_grid, random_band_limited

logger = logging.getLogger(__name__)

__all__ = [
    "SweepConfig",
    "ConvergenceTable",
    "RateFit",
    "EnergyReport",
    "OrderParameterReport",
    "MaxPrincipleReport",
    "NormSeries",
    "CheckResult",
    "default_initial_state",
    "sweep_alpha",
    "sweep_kappa",
    "fit_rate",
    "order_parameter_error",
    "energy_report",
    "max_principle_report",
    "norm_tracker",
    "operator_checks",
    "sup_error",
    "resample",
]


def default_initial_state(
    grid: Grid, rho_bar: float = 1.0, amplitude: float = 0.2, carry_eta: bool = False
) -> FlowState:
    """``rho = rho_bar + A cos x cos y`` with the Taylor-Green velocity (extruded in 3D)."""
    coords = grid.coordinates()
    x, y = coords[0], coords[1]
    rho = rho_bar + amplitude * np.cos(x) * np.cos(y)
    u = np.zeros((grid.dim,) + grid.shape)
    u[0] = np.sin(x) * np.cos(y)
    u[1] = -np.cos(x) * np.sin(y)
    return make_state(grid, rho, u, eta=carry_eta)


@dataclass(frozen=True)
class SweepConfig:
    """Everything shared by the members of a sweep."""

    dim: int = 2
    n: int = 128
    length: float = 2 * np.pi
    kappa: float = 1.0
    alpha: float = 16.0
    rho_bar: float = 1.0
    amplitude: float = 0.2
    t_end: float = 0.25
    n_frames: int = 32
    dt: float | None = None
    safety: float = 0.5

    @property
    def grid(self) -> Grid:
        return make_grid(self.dim, self.n, self.length)

    def init(self) -> FlowState:
        return default_initial_state(self.grid, self.rho_bar, self.amplitude)

    def params(self, **changes) -> PhysParams:
        base = PhysParams(kappa=self.kappa, alpha=self.alpha, rho_bar=self.rho_bar)
        return replace(base, **changes)


@dataclass
class ConvergenceTable:
    parameter: str
    values: list[float]
    columns: dict[str, list[float]]
    valid: list[bool]
    reference: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size > 1:
            d = np.diff(v)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError(f"{self.parameter} values must be strictly monotone: {self.values}")
        for name, col in self.columns.items():
            if len(col) != len(self.values):
                raise ValueError(f"column {name} has wrong length")
            if any(c < 0 for c in col if not math.isnan(c)):
                raise ValueError(f"column {name} has negative errors")

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def _check_monotone(name: str, values: Sequence[float]):
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError(f"{name} list must be strictly monotone, got {list(values)}")


def sup_error(a: Trajectory, b: Trajectory, quantity: str, s: float) -> float:
    """``max`` over shared frames of the H^s norm of the difference of ``rho`` or ``u``."""
    if len(a.frames) != len(b.frames):
        raise ValueError("trajectories have different frame counts")
    g = a.grid
    worst = 0.0
    for fa, fb in zip(a.frames, b.frames):
        if quantity == "rho":
            diff = fa.rho.values - fb.rho.values
        elif quantity == "u":
            diff = fa.u_array() - fb.u_array()
        else:
            raise ValueError(f"unknown quantity {quantity!r}")
        worst = max(worst, math.sqrt(g.norm_sq(g.fft(diff), s)))
    return worst


def _shared_dt(config: SweepConfig, init: FlowState, members: Sequence[PhysParams]) -> float:
    if config.dt is not None:
        return config.dt
    return config.safety * min(min(_cfl_candidates(init, p)) for p in members)


def _run_member(args) -> Trajectory:
    init, params, t_end, dt, n_frames = args
    return simulate(init, params, t_end, FixedStep(dt), n_frames=n_frames)


def _run_all(jobs, workers: int) -> list[Trajectory]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_member, jobs))
    return [_run_member(j) for j in jobs]


def sweep_alpha(
    config: SweepConfig,
    alphas: Sequence[float],
    l_values: Sequence[int] = (0, 1, 2),
    workers: int = 1,
    return_runs: bool = False,
):
    """Relaxed runs over ``alphas`` against a local-system reference.

    Columns ``rho_err_l{l}`` hold ``sup_t ||rho^alpha - rho||_{H^{2+l}}`` and
    ``u_err_l{l}`` hold ``sup_t ||u^alpha - u||_{H^{1+l}}``.
    """
    if len(alphas) < 1:
        raise ValueError("an alpha sweep needs at least one value")
    _check_monotone("alpha", alphas)
    init = config.init()
    ref_params = config.params(system=System.LOCAL)
    members = [config.params(alpha=float(a)) for a in alphas]
    dt = _shared_dt(config, init, [ref_params] + members)
    jobs = [(init, p, config.t_end, dt, config.n_frames) for p in [ref_params] + members]
    runs = _run_all(jobs, workers)
    ref, member_runs = runs[0], runs[1:]
    if ref.blew_up:
        raise RuntimeError(f"reference run failed: {ref.message}")
    columns: dict[str, list[float]] = {}
    for l in l_values:
        columns[f"rho_err_l{l}"] = []
        columns[f"u_err_l{l}"] = []
    valid = []
    for run in member_runs:
        ok = not run.blew_up
        valid.append(ok)
        for l in l_values:
            columns[f"rho_err_l{l}"].append(sup_error(run, ref, "rho", 2 + l) if ok else math.nan)
            columns[f"u_err_l{l}"].append(sup_error(run, ref, "u", 1 + l) if ok else math.nan)
    table = ConvergenceTable(
        parameter="alpha",
        values=[float(a) for a in alphas],
        columns=columns,
        valid=valid,
        reference=f"LocalINSK n={config.n} dim={config.dim} kappa={config.kappa} "
        f"t_end={config.t_end} dt={dt!r}",
    )
    if return_runs:
        return table, ref, member_runs
    return table


def sweep_kappa(
    config: SweepConfig, kappas: Sequence[float], workers: int = 1, return_runs: bool = False
):
    """Relaxed runs over ``kappas`` (fixed alpha) against a Navier-Stokes reference; H^3 errors."""
    if len(kappas) < 1:
        raise ValueError("a kappa sweep needs at least one value")
    _check_monotone("kappa", kappas)
    init = config.init()
    ref_params = config.params(system=System.NAVIER_STOKES, kappa=0.0)
    members = [config.params(kappa=float(k)) for k in kappas]
    dt = _shared_dt(config, init, [ref_params] + members)
    jobs = [(init, p, config.t_end, dt, config.n_frames) for p in [ref_params] + members]
    runs = _run_all(jobs, workers)
    ref, member_runs = runs[0], runs[1:]
    if ref.blew_up:
        raise RuntimeError(f"reference run failed: {ref.message}")
    columns = {"rho_err_h3": [], "u_err_h3": []}
    valid = []
    for run in member_runs:
        ok = not run.blew_up
        valid.append(ok)
        columns["rho_err_h3"].append(sup_error(run, ref, "rho", 3) if ok else math.nan)
        columns["u_err_h3"].append(sup_error(run, ref, "u", 3) if ok else math.nan)
    table = ConvergenceTable(
        parameter="kappa",
        values=[float(k) for k in kappas],
        columns=columns,
        valid=valid,
        reference=f"NavierStokes n={config.n} dim={config.dim} alpha={config.alpha} "
        f"t_end={config.t_end} dt={dt!r}",
    )
    if return_runs:
        return table, ref, member_runs
    return table


def fit_rate(table: ConvergenceTable, column: str) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(parameter)``.

    Invalid rows are skipped; rows with zero error are dropped with a warning.
    """
    x = np.asarray(table.values, dtype=float)
    y = table.column(column)
    keep = np.asarray(table.valid, dtype=bool) & np.isfinite(y)
    zero = keep & (y <= 0)
    if zero.any():
        warnings.warn(
            f"dropping {int(zero.sum())} zero-error row(s) from {column} fit",
            RuntimeWarning,
            stacklevel=2,
        )
    keep &= y > 0
    if keep.sum() < 3:
        raise ValueError(f"rate fit needs at least 3 valid points, got {int(keep.sum())}")
    res = stats.linregress(np.log(x[keep]), np.log(y[keep]))
    r2 = min(1.0, max(0.0, float(res.rvalue) ** 2))
    return RateFit(float(res.slope), float(res.intercept), r2, int(keep.sum()))


@dataclass(frozen=True)
class OrderParameterReport:
    error: float
    bound: float
    frame_errors: np.ndarray
    frame_bounds: np.ndarray


def order_parameter_error(trajectory: Trajectory, alpha: float, l: float) -> OrderParameterReport:
    """``sup_t ||k_alpha^2 rho - rho||_{H^{2+l}}`` and its bound ``alpha^{l-2} sup_t ||rho||_{H^4}``.

    The inequality is checked frame by frame (with a 1e-10 relative rounding
    allowance); a violation raises ``AssertionError``.
    """
    if not 0 <= l <= 2:
        raise ValueError(f"l must lie in [0, 2], got {l}")
    g = trajectory.grid
    sym = k_alpha_sq_symbol(g, alpha) - 1.0
    errs, bounds = [], []
    for fr in trajectory.frames:
        rho_hat = g.fft(fr.rho.values)
        errs.append(math.sqrt(g.norm_sq(sym * rho_hat, 2 + l)))
        bounds.append(alpha ** (l - 2) * math.sqrt(g.norm_sq(rho_hat, 4)))
    errs, bounds = np.array(errs), np.array(bounds)
    if np.any(errs > bounds * (1 + 1e-10)):
        i = int(np.argmax(errs - bounds))
        raise AssertionError(
            f"order-parameter bound violated at t={trajectory.frames[i].time}: "
            f"{errs[i]:.6e} > {bounds[i]:.6e}"
        )
    return OrderParameterReport(float(errs.max()), float(bounds.max()), errs, bounds)


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        d = self.dissipation
        if np.any(d < 0) or np.any(np.diff(d) < -1e-12 * max(1.0, float(np.abs(d).max()))):
            raise ValueError("cumulative dissipation must be nonnegative and nondecreasing")

    @property
    def max_relative_residual(self) -> float:
        return float(np.abs(self.residual).max() / self.energy[0]) if self.energy[0] else 0.0


def energy_report(
    trajectory: Trajectory, params: PhysParams | None = None, method: str = "integrated"
) -> EnergyReport:
    """Energy budget ``E(t) - E(0) + int_0^t ||grad u||^2``.

    ``method="integrated"`` uses the dissipation integral carried through the
    time stepper; ``"trapezoid"`` rebuilds it from the frames.
    """
    params = params or trajectory.params
    frames = trajectory.frames
    times = np.array([f.time for f in frames])
    energy = np.array([total_energy(f, params) for f in frames])
    if method == "integrated":
        diss = np.array([f.dissipation for f in frames]) - frames[0].dissipation
    elif method == "trapezoid":
        rate = np.array([dissipation_rate(f) for f in frames])
        diss = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(times))])
    else:
        raise ValueError(f"unknown method {method!r}")
    return EnergyReport(times, energy, diss, energy - energy[0] + diss)


@dataclass(frozen=True)
class MaxPrincipleReport:
    rho_min: float
    rho_max: float
    overshoot: float
    bounds: tuple[float, float]


def max_principle_report(
    trajectory: Trajectory, bounds: tuple[float, float] | None = None
) -> MaxPrincipleReport:
    """Extremes of the density over all frames versus the initial bounds."""
    if bounds is None:
        r0 = trajectory.frames[0].rho.values
        bounds = (float(r0.min()), float(r0.max()))
    lo = min(float(f.rho.values.min()) for f in trajectory.frames)
    hi = max(float(f.rho.values.max()) for f in trajectory.frames)
    overshoot = max(bounds[0] - lo, hi - bounds[1], 0.0)
    return MaxPrincipleReport(lo, hi, overshoot, bounds)


@dataclass
class NormSeries:
    times: np.ndarray
    rho_h4: np.ndarray
    u_h3: np.ndarray
    grad_u_h3_integral: np.ndarray
    dtu_h2_integral: np.ndarray
    m_functional: np.ndarray


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(t) < 2:
        return np.zeros_like(y)
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])


def norm_tracker(trajectory: Trajectory, rho_bar: float | None = None) -> NormSeries:
    """Norm histories entering the a-priori bound functional ``M(t)``.

    ``d_t u`` is approximated by (central) differences between frames, so
    accuracy is limited by the output spacing.
    """
    rho_bar = trajectory.params.rho_bar if rho_bar is None else rho_bar
    g = trajectory.grid
    times = trajectory.times
    zero = (0,) * g.dim
    rho_h4, u_h3, grad_u_h3 = [], [], []
    u_hats = []
    for f in trajectory.frames:
        rh = g.fft(f.rho.values)
        rh[zero] -= rho_bar
        uh = g.fft(f.u_array())
        u_hats.append(uh)
        rho_h4.append(math.sqrt(g.norm_sq(rh, 4)))
        u_h3.append(math.sqrt(g.norm_sq(uh, 3)))
        grads = np.stack([ik * uh for ik in g.ik])
        grad_u_h3.append(g.norm_sq(grads, 3))
    rho_h4, u_h3, grad_u_h3 = map(np.array, (rho_h4, u_h3, grad_u_h3))
    if len(times) > 1:
        dtu = np.gradient(np.stack(u_hats), times, axis=0)
        dtu_h2 = np.array([g.norm_sq(d, 2) for d in dtu])
    else:
        dtu_h2 = np.zeros(1)
    integrand = (1 + rho_h4**2 + u_h3**2) ** 2
    m = (1 + rho_h4[0] ** 2 + u_h3[0] ** 2) + _cumtrapz(integrand, times)
    return NormSeries(
        times, rho_h4, u_h3, _cumtrapz(grad_u_h3, times), _cumtrapz(dtu_h2, times), m
    )


def resample(coeffs: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    """Move spectral coefficients between grids by zero padding / truncation."""
    if src.dim != dst.dim or src.length != dst.length:
        raise ValueError("grids must share dimension and length")
    lead = coeffs.shape[: coeffs.ndim - src.dim]
    out = np.zeros(lead + dst.spectral_shape, dtype=complex)
    m = min(src.n, dst.n) // 2  # keep |k| < m on full axes, k < m on the half axis
    full = list(range(m)) + list(range(-m + 1, 0))
    idx_src = [[k % src.n for k in full] for _ in range(src.dim - 1)] + [list(range(m))]
    idx_dst = [[k % dst.n for k in full] for _ in range(dst.dim - 1)] + [list(range(m))]
    out[(...,) + np.ix_(*idx_dst)] = coeffs[(...,) + np.ix_(*idx_src)]
    return out


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tolerance: float
    passed: bool


def operator_checks(
    grid: Grid, alpha: float, trials: int = 100, rng: np.random.Generator | None = None,
    kmax: int | None = None,
) -> list[CheckResult]:
    """Randomised check of the k_alpha bounds, self-adjointness and multiplier identity.

    ``worst`` is the largest observed ``lhs / rhs`` for inequalities (pass if
    ``<= 1`` up to a 1e-12 rounding allowance), and the largest relative
    discrepancy for identities.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    kmax = grid.n // 4 if kmax is None else kmax
    s_values = (0, 1, 2, 3)
    l_values = (0.0, 0.5, 1.0, 2.0)
    k1 = k_alpha_symbol(grid, alpha)
    k2sym = k_alpha_sq_symbol(grid, alpha)
    worst = {
        "nonexpansive": 0.0,
        "gradient_bound": 0.0,
        "approximation_bound": 0.0,
        "self_adjoint": 0.0,
        "multiplier_identity": 0.0,
    }
    for _ in range(trials):
        f = random_band_limited(grid, kmax, rng).coeffs
        h = random_band_limited(grid, kmax, rng).coeffs
        for s in s_values:
            nf = grid.norm_sq(f, s)
            worst["nonexpansive"] = max(worst["nonexpansive"], math.sqrt(grid.norm_sq(k1 * f, s) / nf))
            grad = np.stack([ik * k2sym * f for ik in grid.ik])
            worst["gradient_bound"] = max(
                worst["gradient_bound"], math.sqrt(grid.norm_sq(grad, s) / nf) / alpha
            )
            for l in l_values:
                lhs = math.sqrt(grid.norm_sq((k2sym - 1) * f, s))
                rhs = alpha ** (-l) * math.sqrt(grid.norm_sq(f, s + l))
                worst["approximation_bound"] = max(worst["approximation_bound"], lhs / rhs)
        lhs = grid.volume * np.real(grid.sum_modes(k1 * f * np.conj(h)))
        rhs = grid.volume * np.real(grid.sum_modes(f * np.conj(k1 * h)))
        scale = math.sqrt(grid.norm_sq(f) * grid.norm_sq(h))
        worst["self_adjoint"] = max(worst["self_adjoint"], abs(lhs - rhs) / scale)
        a = -grid.k2 / (alpha**2 + grid.k2) * f
        b = alpha**-2 * (k2sym * (-grid.k2 * f))
        nz = np.abs(a) > 0
        rel = np.abs(a - b)[nz] / np.abs(a)[nz]
        worst["multiplier_identity"] = max(worst["multiplier_identity"], float(rel.max(initial=0.0)))
    guard = 1 + 1e-12
    tolerances = {
        "nonexpansive": guard,
        "gradient_bound": guard,
        "approximation_bound": guard,
        "self_adjoint": 1e-12,
        "multiplier_identity": 1e-14,
    }
    return [CheckResult(k, v, tolerances[k], v <= tolerances[k]) for k, v in worst.items()]
