"""
Generalized Navier-Stokes-Boussinesq dynamics

    eps (dv/dt + (v . grad) v) + K v + grad p = F(x, y),   div v = 0
    dy/dt + (v . grad) y = G(x, y)

and their zero-inertia (eps -> 0) limit K v + grad p = F(x, y).

Steps are split as: momentum (semi-Lagrangian self-advection, then relaxation toward P_K F / K), transport of y by
the new v, then the G source. The relaxation integrates eps dv/dt = P F - K v exactly over the step with F frozen,
mode by mode: v_new = u + (P v_adv - u) exp(-k dt / eps) where u = P_K F / K and k = 1 (K=identity) or |2 pi k|^2
(K=neg_laplacian). It is stable for any dt / eps and tends to the zero-inertia velocity u as eps -> 0.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from ot_convection.dumps import DiagnosticSeries
from ot_convection.errors import InvariantCheck
from ot_convection.forcing import ForcingSpec, evaluate_forcing
from ot_convection.grid import (
    BoxGrid, DissipationKind, Grid, ScalarField, TorusGrid, VectorField, advect, gradient, project, resolved_part,
    sample_at
)

logger = logging.getLogger(__name__)

GNSB_COLUMNS = ("t", "total_energy", "dissipation", "excess", "y_err_vs_hf")

SPLITTINGS = ("lie", "strang")

_stiff_warned = set()


@dataclass
class GNSBState:
    y: VectorField
    v: VectorField
    p: ScalarField
    eps: float
    kind: DissipationKind
    t: float = 0.0

    def __post_init__(self):
        self.kind = DissipationKind.parse(self.kind)
        grid = self.y.grid
        if self.eps < 0.0:
            raise ValueError("Inertia eps must be non-negative")
        if self.y.rank not in (grid.d, 2 * grid.d):
            raise ValueError(f"y must carry m = d or 2d components, got {self.y.rank}")
        if self.v.rank != grid.d:
            raise ValueError(f"v must carry {grid.d} components, got {self.v.rank}")
        if isinstance(grid, BoxGrid) and self.kind is DissipationKind.NEG_LAPLACIAN:
            raise ValueError("Box runs support K=identity or K=none only")

    @classmethod
    def start(cls, y: VectorField, kind, eps: float, v: Optional[VectorField] = None) -> "GNSBState":
        grid = y.grid
        v = VectorField.zeros(grid, grid.d) if v is None else v
        return cls(y=y, v=v, p=ScalarField.zeros(grid), eps=eps, kind=kind)

    @property
    def grid(self) -> Grid:
        return self.y.grid


def _mode_rates(grid: Grid, kind: DissipationKind) -> np.ndarray:
    if kind is DissipationKind.NEG_LAPLACIAN:
        return grid.wavenumber_squared
    return np.ones(grid.shape)


def _unresolved_free(v: VectorField) -> VectorField:
    if isinstance(v.grid, TorusGrid):
        return resolved_part(v)
    return v


def equilibrium_velocity(y: VectorField, spec: ForcingSpec, kind: DissipationKind,
                         mean_mode_damping: bool = False) -> Tuple[VectorField, ScalarField]:
    """ u = P_K F(x, y) / K, the velocity of K u + grad p = F(x, y), div u = 0. """
    kind = DissipationKind.parse(kind)
    if not kind.is_dissipative:
        raise ValueError("The zero-inertia balance needs a strictly dissipative K (K=none is excluded)")
    F, _ = evaluate_forcing(spec, y.grid.coordinates, y.values)
    u, p = project(VectorField(y.grid, F), kind)
    if mean_mode_damping:
        u = _unresolved_free(u)
    return u, p


def _relax(w: VectorField, u: VectorField, tau: float, kind: DissipationKind, mean_mode_damping: bool) -> VectorField:
    """ u + (P w - u) exp(-k tau), mode by mode; modes with k = 0 are set to zero. """
    grid = w.grid
    w_div, _ = project(w, DissipationKind.IDENTITY)
    if kind is DissipationKind.NONE:
        # eps dv/dt = P F: no relaxation, u is the forcing itself
        velocity = VectorField(grid, w_div.values + tau * u.values)
    elif kind is DissipationKind.IDENTITY:
        velocity = VectorField(grid, u.values + (w_div.values - u.values) * math.exp(-tau))
    else:
        rates = _mode_rates(grid, kind)
        axes = tuple(range(1, grid.d + 1))
        u_hat = np.fft.fftn(u.values, axes=axes)
        w_hat = np.fft.fftn(w_div.values, axes=axes)
        v_hat = np.where(rates > 0, u_hat + (w_hat - u_hat) * np.exp(-rates * tau), 0.0)
        velocity = VectorField(grid, np.real(np.fft.ifftn(v_hat, axes=axes)))
    if mean_mode_damping:
        velocity = _unresolved_free(velocity)
    return velocity


def _forcing_target(y: VectorField, spec: ForcingSpec, kind: DissipationKind,
                    mean_mode_damping: bool) -> Tuple[VectorField, ScalarField]:
    if kind is DissipationKind.NONE:
        F, _ = evaluate_forcing(spec, y.grid.coordinates, y.values)
        return project(VectorField(y.grid, F), DissipationKind.IDENTITY)
    return equilibrium_velocity(y, spec, kind, mean_mode_damping)


def _momentum(v: VectorField, y: VectorField, spec: ForcingSpec, kind: DissipationKind, eps: float, dt: float,
              mean_mode_damping: bool) -> Tuple[VectorField, ScalarField]:
    advected = advect(v, v, dt)
    target, p = _forcing_target(y, spec, kind, mean_mode_damping)
    tau = dt / eps
    return _relax(advected, target, tau, kind, mean_mode_damping), p


def _transport(y: VectorField, v: VectorField, spec: ForcingSpec, dt: float) -> VectorField:
    return advect(y, v, dt, lifted=spec.lifted_axes)


def _react(y: VectorField, spec: ForcingSpec, dt: float) -> VectorField:
    _, G = evaluate_forcing(spec, y.grid.coordinates, y.values)
    return VectorField(y.grid, y.values + dt * G)


def _warn_if_stiff(dt: float, eps: float):
    if dt / eps > 1.0 and (dt, eps) not in _stiff_warned:
        _stiff_warned.add((dt, eps))
        logger.warning("Stiff step dt/eps = %.3g > 1; zero_inertia_step is the cheaper model here", dt / eps)


def gnsb_step(state: GNSBState, spec: ForcingSpec, dt: float, splitting: str = "lie",
              mean_mode_damping: bool = False) -> GNSBState:
    """
    One GNSB step, eps > 0.

    lie     momentum over dt with F(y_n), transport y by v_n+1, then y += dt G
    strang  momentum dt/2, G dt/2, transport dt, G dt/2, momentum dt/2 with F(y_n+1)

    p is the pressure of the forcing balance at the last momentum stage.
    """
    if state.eps <= 0.0:
        raise ValueError("gnsb_step needs eps > 0; use zero_inertia_step for the eps = 0 limit")
    _warn_if_stiff(dt, state.eps)
    kind = state.kind
    if splitting == "lie":
        v, p = _momentum(state.v, state.y, spec, kind, state.eps, dt, mean_mode_damping)
        y = _react(_transport(state.y, v, spec, dt), spec, dt)
    elif splitting == "strang":
        v_half, _ = _momentum(state.v, state.y, spec, kind, state.eps, 0.5 * dt, mean_mode_damping)
        y = _react(state.y, spec, 0.5 * dt)
        y = _react(_transport(y, v_half, spec, dt), spec, 0.5 * dt)
        v, p = _momentum(v_half, y, spec, kind, state.eps, 0.5 * dt, mean_mode_damping)
    else:
        raise ValueError(f"Unknown splitting {splitting!r}; expected one of {SPLITTINGS}")
    return replace(state, y=y, v=v, p=p, t=state.t + dt)


def zero_inertia_step(state: GNSBState, spec: ForcingSpec, dt: float, mean_mode_damping: bool = False) -> GNSBState:
    """
    One step of the eps = 0 system: y is transported by u = P_K F(y_n) / K and receives dt G; the returned state
    carries the balance velocity of the new y.
    """
    kind = DissipationKind.parse(state.kind)
    if not kind.is_dissipative:
        raise ValueError("zero_inertia_step needs a strictly dissipative K (K=none is excluded)")
    u, _ = equilibrium_velocity(state.y, spec, kind, mean_mode_damping)
    y = _react(_transport(state.y, u, spec, dt), spec, dt)
    v, p = equilibrium_velocity(y, spec, kind, mean_mode_damping)
    return replace(state, y=y, v=v, p=p, eps=0.0, t=state.t + dt)


# ----- energy bookkeeping -----

def _periodic_part(y: VectorField, spec: ForcingSpec) -> np.ndarray:
    """ y with lifted (position) components replaced by their periodic offsets on the torus. """
    values = y.values.copy()
    if isinstance(y.grid, TorusGrid):
        for component, axis in enumerate(spec.lifted_axes):
            if axis is not None:
                values[component] -= y.grid.coordinates[axis]
    return values


def _lifted_velocity(y: VectorField, v: VectorField, spec: ForcingSpec) -> np.ndarray:
    drift = np.zeros_like(y.values)
    if isinstance(y.grid, TorusGrid):
        for component, axis in enumerate(spec.lifted_axes):
            if axis is not None:
                drift[component] = v.values[axis]
    return drift


def velocity_dissipation(v: VectorField, kind: DissipationKind) -> float:
    kind = DissipationKind.parse(kind)
    if kind is DissipationKind.NONE:
        return 0.0
    if kind is DissipationKind.IDENTITY:
        return float(np.mean(np.sum(v.values ** 2, axis=0)))
    return sum(
        float(np.mean(np.sum(gradient(ScalarField(v.grid, component)).values ** 2, axis=0)))
        for component in v.values
    )


@dataclass
class EnergyTerms:
    """ total = 1/2 int (eps |v|^2 + |y|^2), dissipation = int v . Kv, work = int F . v + G . y. """

    total: float
    dissipation: float
    work: float


def energy_terms(state: GNSBState, spec: ForcingSpec) -> EnergyTerms:
    """
    On the torus, position components enter through their periodic offsets y_c - x_k, whose source is G_c - v_k.
    """
    y_periodic = _periodic_part(state.y, spec)
    F, G = evaluate_forcing(spec, state.grid.coordinates, state.y.values)
    source = G - _lifted_velocity(state.y, state.v, spec)
    total = 0.5 * (state.eps * np.mean(np.sum(state.v.values ** 2, axis=0)) + np.mean(np.sum(y_periodic ** 2, axis=0)))
    work = np.mean(np.sum(F * state.v.values, axis=0)) + np.mean(np.sum(source * y_periodic, axis=0))
    return EnergyTerms(float(total), velocity_dissipation(state.v, state.kind), float(work))


@dataclass
class GNSBRun:
    series: DiagnosticSeries
    final: GNSBState
    dt: float
    energies: List[EnergyTerms] = field(default_factory=list)
    checks: Dict[str, InvariantCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())


@dataclass
class EnergyReport:
    residuals: np.ndarray
    max_excess: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_excess <= self.tolerance


def energy_tolerance(grid: Grid, dt: float, initial_energy: float, constant: float) -> float:
    return constant * (grid.h ** 2 + dt) * (1.0 + initial_energy)


def energy_inequality_check(run: GNSBRun, constant: float = 10.0) -> EnergyReport:
    """
    Per-step residual (E_n+1 - E_n)/dt + D_n+1 - W_n+1 of the weak energy inequality; only positive residuals
    (excess) count against the scheme tolerance C (h^2 + dt) (1 + E_0).
    """
    energies = run.energies
    residuals = np.array([
        (after.total - before.total) / run.dt + after.dissipation - after.work
        for before, after in zip(energies[:-1], energies[1:])
    ])
    max_excess = float(max(0.0, np.max(residuals))) if residuals.size else 0.0
    tolerance = energy_tolerance(run.final.grid, run.dt, energies[0].total if energies else 0.0, constant)
    return EnergyReport(residuals=residuals, max_excess=max_excess, tolerance=tolerance)


def gnsb_run(y0: VectorField, spec: ForcingSpec, kind, eps: float, T: float, dt: float,
             v0: Optional[VectorField] = None, splitting: str = "lie", mean_mode_damping: bool = False,
             stride: int = 0, on_snapshot: Optional[Callable[[int, GNSBState], None]] = None,
             energy_constant: float = 10.0) -> GNSBRun:
    """ GNSB when eps > 0, the zero-inertia system when eps == 0; one diagnostic row per step. """
    if dt <= 0.0 or T < 0.0:
        raise ValueError("gnsb_run needs dt > 0 and T >= 0")
    if y0.rank != spec.m:
        raise ValueError(f"{spec.kind} forcing needs y0 with m = {spec.m} components, got {y0.rank}")
    steps = int(round(T / dt))
    state = GNSBState.start(y0, kind, eps, v0)
    if eps == 0.0:
        v, p = equilibrium_velocity(y0, spec, state.kind, mean_mode_damping)
        state = replace(state, v=v, p=p)

    energies = [energy_terms(state, spec)]
    if stride and on_snapshot:
        on_snapshot(0, state)
    logger.info("GNSB run: %s forcing, eps=%g, K=%s, %d steps of %.3g", spec.kind, eps, state.kind.value, steps, dt)
    for step in range(1, steps + 1):
        if eps == 0.0:
            state = zero_inertia_step(state, spec, dt, mean_mode_damping)
        else:
            state = gnsb_step(state, spec, dt, splitting, mean_mode_damping)
        state = replace(state, t=step * dt)
        energies.append(energy_terms(state, spec))
        if stride and on_snapshot and (step % stride == 0 or step == steps):
            on_snapshot(step, state)

    run = GNSBRun(series=DiagnosticSeries(GNSB_COLUMNS), final=state, dt=dt, energies=energies)
    report = energy_inequality_check(run, energy_constant)
    excess = np.concatenate([[0.0], np.maximum(report.residuals, 0.0)])
    for step, terms in enumerate(energies):
        run.series.append(
            t=step * dt, total_energy=terms.total, dissipation=terms.dissipation, excess=excess[step], y_err_vs_hf=0.0
        )
    check = InvariantCheck("energy_inequality", report.tolerance)
    check.record(report.max_excess, int(np.argmax(excess)) if excess.size else None)
    run.checks["energy_inequality"] = check
    return run


# ----- zero-inertia rate -----

def _relaxation_mismatch(c: np.ndarray, d: np.ndarray, grid: Grid, kind: DissipationKind, eps: float,
                         dt: float) -> float:
    """
    Exact integral over one step of mean |c + d exp(-k s / eps)|^2, with c and d mode-wise for K=neg_laplacian.
    """
    if kind is DissipationKind.IDENTITY:
        cc = float(np.mean(np.sum(c * c, axis=0)))
        cd = float(np.mean(np.sum(c * d, axis=0)))
        dd = float(np.mean(np.sum(d * d, axis=0)))
        decay = -math.expm1(-dt / eps)
        return cc * dt + 2.0 * cd * eps * decay + dd * eps * (-math.expm1(-2.0 * dt / eps)) / 2.0

    axes = tuple(range(1, grid.d + 1))
    scale = float(grid.size) ** 2
    rates = _mode_rates(grid, kind)
    c_hat = np.fft.fftn(c, axes=axes)
    # the relaxation zeroes modes with k = 0 at once
    d_hat = np.where(rates > 0, np.fft.fftn(d, axes=axes), 0.0)
    safe = np.where(rates > 0, rates, 1.0)
    first = np.where(rates > 0, -np.expm1(-rates * dt / eps) * eps / safe, dt)
    second = np.where(rates > 0, -np.expm1(-2.0 * rates * dt / eps) * eps / (2.0 * safe), dt)
    cc = np.sum(np.abs(c_hat) ** 2, axis=0)
    cd = np.sum(np.real(c_hat * np.conj(d_hat)), axis=0)
    dd = np.sum(np.abs(d_hat) ** 2, axis=0)
    return float(np.sum(cc * dt + 2.0 * cd * first + dd * second) / scale)


@dataclass
class RateReport:
    eps: List[float]
    y_errors: List[float]
    v_errors: List[float]
    y_slope: float
    v_slope: float
    series: Dict[float, DiagnosticSeries] = field(default_factory=dict)

    def serialize(self) -> dict:
        return {
            "eps": self.eps,
            "y_errors": self.y_errors,
            "v_errors": self.v_errors,
            "y_slope": self.y_slope,
            "v_slope": self.v_slope,
        }


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """ Least-squares slope of log y against log x; nan when some y is not positive. """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(ys <= 0.0) or xs.size < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def hf_reference(y0: VectorField, spec: ForcingSpec, kind, T: float, dt: float,
                 mean_mode_damping: bool = False) -> List[Tuple[np.ndarray, np.ndarray]]:
    """ (y_n, v_n) of the zero-inertia run at every step n = 0..T/dt. """
    kind = DissipationKind.parse(kind)
    steps = int(round(T / dt))
    state = GNSBState.start(y0, kind, 0.0)
    v, _ = equilibrium_velocity(y0, spec, kind, mean_mode_damping)
    trajectory = [(y0.values.copy(), v.values.copy())]
    for _ in range(steps):
        state = zero_inertia_step(state, spec, dt, mean_mode_damping)
        trajectory.append((state.y.values.copy(), state.v.values.copy()))
    return trajectory


def eps_error(y0: VectorField, spec: ForcingSpec, kind, eps: float, T: float, dt: float,
              hf: List[Tuple[np.ndarray, np.ndarray]], v0: Optional[VectorField] = None,
              mean_mode_damping: bool = False) -> Tuple[float, float, DiagnosticSeries]:
    """
    Runs GNSB at eps in lockstep with a stored zero-inertia trajectory. Returns sup_t |y_eps - y_hf|_2, the square
    root of the time integral of |v_eps - v_hf|^2 (integrated exactly across each relaxation step), and the series.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive in the zero-inertia rate experiment")
    kind = DissipationKind.parse(kind)
    steps = int(round(T / dt))
    state = GNSBState.start(y0, kind, eps, v0)
    series = DiagnosticSeries(GNSB_COLUMNS)
    energies = [energy_terms(state, spec)]
    sup_y = 0.0
    integral = 0.0
    series.append(t=0.0, total_energy=energies[0].total, dissipation=energies[0].dissipation, excess=0.0,
                  y_err_vs_hf=0.0)
    for step in range(1, steps + 1):
        y_hf, u_hf = hf[step - 1]
        advected = advect(state.v, state.v, dt)
        w_div, _ = project(advected, DissipationKind.IDENTITY)
        u_eps, _ = equilibrium_velocity(state.y, spec, kind, mean_mode_damping)
        if mean_mode_damping:
            w_div = _unresolved_free(w_div)
        integral += _relaxation_mismatch(
            u_eps.values - u_hf, w_div.values - u_eps.values, state.grid, kind, eps, dt
        )
        before = energies[-1]
        state = replace(gnsb_step(state, spec, dt, "lie", mean_mode_damping), t=step * dt)
        energies.append(energy_terms(state, spec))
        after = energies[-1]
        y_error = math.sqrt(float(np.mean(np.sum((state.y.values - hf[step][0]) ** 2, axis=0))))
        sup_y = max(sup_y, y_error)
        residual = (after.total - before.total) / dt + after.dissipation - after.work
        series.append(t=step * dt, total_energy=after.total, dissipation=after.dissipation,
                      excess=max(0.0, residual), y_err_vs_hf=y_error)
    return sup_y, math.sqrt(integral), series


def rate_report(eps_list: Sequence[float], results: Sequence[Tuple[float, float, DiagnosticSeries]]) -> RateReport:
    """ Assembles per-eps (y error, v error, series) results, in eps order, into slopes. """
    y_errors = [result[0] for result in results]
    v_errors = [result[1] for result in results]
    for eps, y_error, v_error in zip(eps_list, y_errors, v_errors):
        logger.info("eps=%.1e: sup y error %.3e, v error %.3e", eps, y_error, v_error)
    return RateReport(
        eps=list(eps_list),
        y_errors=y_errors,
        v_errors=v_errors,
        y_slope=loglog_slope(eps_list, y_errors),
        v_slope=loglog_slope(eps_list, v_errors),
        series={eps: result[2] for eps, result in zip(eps_list, results)},
    )


def check_eps_list(eps_list: Sequence[float]) -> List[float]:
    eps_list = [float(eps) for eps in eps_list]
    if not eps_list or any(eps <= 0.0 for eps in eps_list):
        raise ValueError("Every eps in the rate experiment must be positive")
    return eps_list


def sqrt_eps_experiment(y0: VectorField, spec: ForcingSpec, kind, eps_list: Sequence[float], T: float, dt: float,
                        v0: Optional[VectorField] = None, mean_mode_damping: bool = False) -> RateReport:
    """
    Rate of GNSB -> zero-inertia convergence as eps -> 0.

    =====
    Errors
    =====
    y error     sup over steps of |y_eps - y_hf|_2
    v error     (int_0^T |v_eps - v_hf|_2^2 dt)^(1/2), exact within each step for the frozen-forcing relaxation

    Slopes are least-squares fits in log-log; the v slope is the O(sqrt(eps)) dissipation-norm rate.
    """
    eps_list = check_eps_list(eps_list)
    kind = DissipationKind.parse(kind)
    if not kind.is_dissipative:
        raise ValueError("The zero-inertia limit needs a strictly dissipative K")
    hf = hf_reference(y0, spec, kind, T, dt, mean_mode_damping)
    results = [eps_error(y0, spec, kind, eps, T, dt, hf, v0, mean_mode_damping) for eps in eps_list]
    return rate_report(eps_list, results)


def linear_ode_rate(f_matrix: np.ndarray, f_offset: np.ndarray, g_matrix: np.ndarray, g_offset: np.ndarray,
                    y0: np.ndarray, v0: np.ndarray, eps_list: Sequence[float], T: float) -> Tuple[List[float], float]:
    """
    Spatially uniform oracle: eps v' = A_F y + b_F - v, y' = A_G y + b_G against the balance v = A_F y + b_F.
    Integrates the squared velocity mismatch alongside with a stiff solver and returns (errors, slope).
    """
    d, m = f_matrix.shape
    errors = []
    for eps in eps_list:
        def rhs(_, state):
            v, y = state[:d], state[d:d + m]
            balance = f_matrix @ y + f_offset
            return np.concatenate([(balance - v) / eps, g_matrix @ y + g_offset, [np.sum((v - balance) ** 2)]])

        start = np.concatenate([v0, y0, [0.0]])
        solution = solve_ivp(rhs, (0.0, T), start, method="Radau", rtol=1e-10, atol=1e-13)
        errors.append(math.sqrt(solution.y[-1, -1]))
    return errors, loglog_slope(eps_list, errors)


# ----- Lagrangian view -----

@dataclass
class ParcelTrajectories:
    """ Parcel positions X(t, a) started at the grid nodes a, and their values Y(t, a) = y(t, X(t, a)). """

    atoms: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    t: float

    def uniformity(self, bins: int = 4) -> float:
        """
        Largest relative deviation of the coarse histogram of X (mod 1 on the torus) from uniform; 0 for an exactly
        measure preserving X at this resolution.
        """
        d = self.positions.shape[1]
        cells = np.floor(np.mod(self.positions, 1.0) * bins).astype(int) % bins
        flat = np.ravel_multi_index(tuple(cells.T), (bins,) * d)
        counts = np.bincount(flat, minlength=bins ** d)
        expected = len(self.positions) / bins ** d
        return float(np.max(np.abs(counts / expected - 1.0)))


def lagrangian_trajectories(y0: VectorField, spec: ForcingSpec, kind, eps: float, T: float, dt: float,
                            v0: Optional[VectorField] = None, mean_mode_damping: bool = False) -> ParcelTrajectories:
    """
    Runs the Eulerian system (GNSB for eps > 0, zero-inertia for eps == 0) and integrates dX/dt = v(t, X) with
    Heun's rule on the stored velocities. Box parcels are clamped to the closed box.
    """
    grid = y0.grid
    atoms = grid.coordinates.reshape(grid.d, -1).T
    positions = atoms.copy()
    state = GNSBState.start(y0, kind, eps, v0)
    if eps == 0.0:
        v, p = equilibrium_velocity(y0, spec, state.kind, mean_mode_damping)
        state = replace(state, v=v, p=p)
    steps = int(round(T / dt))
    for _ in range(steps):
        before = state.v
        if eps == 0.0:
            # the zero-inertia step transports with the balance velocity of y_n
            state = zero_inertia_step(state, spec, dt, mean_mode_damping)
            after = before
        else:
            state = gnsb_step(state, spec, dt, "lie", mean_mode_damping)
            after = state.v
        predictor = positions + dt * sample_at(before, positions.T).T
        positions = positions + 0.5 * dt * (sample_at(before, positions.T).T + sample_at(after, predictor.T).T)
        if isinstance(grid, BoxGrid):
            positions = np.clip(positions, 0.0, 1.0)

    values = sample_at(VectorField(grid, _periodic_part(state.y, spec)), positions.T).T
    if isinstance(grid, TorusGrid):
        for component, axis in enumerate(spec.lifted_axes):
            if axis is not None:
                values[:, component] += positions[:, axis]
    return ParcelTrajectories(atoms=atoms, positions=positions, values=values, t=steps * dt)
