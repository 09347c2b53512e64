"""
The rearrangement flow dy/dt + (P_K y . grad) y = 0 in Eulerian form, and its Lagrangian minimizing-movement
discretization over permutations of the atoms of D.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np
from scipy import stats

from ot_convection.dumps import DiagnosticSeries
from ot_convection.errors import InvariantCheck
from ot_convection.grid import DissipationKind, ScalarField, VectorField, advect, gradient, project
from ot_convection.rearrange import LagrangianCloud, Permutation, check_permutation, polar_factorize

logger = logging.getLogger(__name__)

AHT_COLUMNS = ("t", "transport_cost", "dissipation", "max_y", "v_l2", "mom1_drift", "mom2_drift", "strat_score")

SCHEMES = ("euler", "midpoint")


@dataclass
class AHTState:
    y: VectorField
    v: VectorField
    p: ScalarField
    t: float
    kind: DissipationKind

    @classmethod
    def initial(cls, y: VectorField, kind, t: float = 0.0) -> "AHTState":
        kind = DissipationKind.parse(kind)
        if not kind.is_dissipative:
            raise ValueError("The AHT flow needs a strictly dissipative K")
        if y.rank != y.grid.d:
            raise ValueError(f"AHT carries y with {y.grid.d} components, got {y.rank}")
        v, p = project(y, kind)
        return cls(y=y, v=v, p=p, t=t, kind=kind)


def aht_step(state: AHTState, dt: float, scheme: str = "euler") -> AHTState:
    """
    One step: y is advected by v = P_K y (euler: v at the start of the step; midpoint: v re-projected from the
    half-step transport), then v and p are recomputed from the new y.
    """
    if scheme == "euler":
        velocity = state.v
    elif scheme == "midpoint":
        half = advect(state.y, state.v, 0.5 * dt)
        velocity, _ = project(half, state.kind)
    else:
        raise ValueError(f"Unknown AHT scheme {scheme!r}; expected one of {SCHEMES}")
    y = advect(state.y, velocity, dt)
    return AHTState.initial(y, state.kind, t=state.t + dt)


def transport_cost(state: AHTState) -> float:
    """ Cell-average quadrature of 1/2 |y - x|^2; torus anchors are the representatives in [0,1)^d. """
    x = state.y.grid.coordinates
    return 0.5 * float(np.mean(np.sum((state.y.values - x) ** 2, axis=0)))


def dissipation(state: AHTState) -> float:
    """ Integral of v . Kv: |v|^2 for K=identity, |grad v|^2 (spectral) for K=neg_laplacian. """
    kind = DissipationKind.parse(state.kind)
    if kind is DissipationKind.IDENTITY:
        return float(np.mean(np.sum(state.v.values ** 2, axis=0)))
    if kind is DissipationKind.NEG_LAPLACIAN:
        total = 0.0
        for component in state.v.values:
            total += float(np.mean(np.sum(gradient(ScalarField(state.v.grid, component)).values ** 2, axis=0)))
        return total
    raise ValueError("dissipation is undefined for K=none")


def stratification_score(y: VectorField) -> float:
    """
    Spearman rank correlation between -x_d and the horizontal mean of theta = -y_d. 1 means theta decreases
    strictly with height (stable stratification); 0 is returned for a flat profile.
    """
    grid = y.grid
    theta = -y.values[-1]
    profile = theta.mean(axis=tuple(range(grid.d - 1))) if grid.d > 1 else theta
    heights = grid.coordinates[-1].reshape(-1, grid.n)[0] if grid.d > 1 else grid.coordinates[0]
    if np.ptp(profile) == 0.0:
        return 0.0
    correlation, _ = stats.spearmanr(-heights, profile)
    return float(correlation)


def _moments(y: VectorField):
    return y.mean(), float(np.mean(np.sum(y.values ** 2, axis=0)))


@dataclass
class AHTRun:
    series: DiagnosticSeries
    final: AHTState
    checks: Dict[str, InvariantCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())


def balance_tolerance(state: AHTState, dt: float, constant: float) -> float:
    """ C (h^2 + dt) (1 + max|y0|^2): the first-order splitting freezes v over the step. """
    return constant * (state.y.grid.h ** 2 + dt) * (1.0 + state.y.max_norm() ** 2)


def aht_run(y0: VectorField, kind, T: float, dt: float, scheme: str = "euler", stride: int = 0,
            on_snapshot: Optional[Callable[[int, AHTState], None]] = None, balance_constant: float = 10.0,
            monotone_rtol: Optional[float] = None) -> AHTRun:
    """
    Integrates to T and records one diagnostic row per step (including t=0).

    =====
    Checks
    =====
    max_norm        max|y(t)| <= max|y0| (linear interpolation is a convex combination)
    energy_balance  (cost_{n+1} - cost_n)/dt + dissipation_n <= C (h^2 + dt) (1 + max|y0|^2)
    cost_monotone   cost_{n+1} <= cost_n (1 + monotone_rtol), only when monotone_rtol is given

    on_snapshot(step, state) is called at t=0, every `stride` steps and at the final step when stride > 0.
    """
    if dt <= 0.0 or T < 0.0:
        raise ValueError("aht_run needs dt > 0 and T >= 0")
    steps = int(round(T / dt))
    state = AHTState.initial(y0, kind)

    initial_max = y0.max_norm()
    mean0, second0 = _moments(y0)
    checks = {
        "max_norm": InvariantCheck("max_norm", 1e-12 * max(1.0, initial_max)),
        "energy_balance": InvariantCheck("energy_balance", balance_tolerance(state, dt, balance_constant)),
    }
    if monotone_rtol is not None:
        checks["cost_monotone"] = InvariantCheck("cost_monotone", 0.0)

    series = DiagnosticSeries(AHT_COLUMNS)

    def record(current: AHTState) -> float:
        mean, second = _moments(current.y)
        cost = transport_cost(current)
        series.append(
            t=current.t,
            transport_cost=cost,
            dissipation=dissipation(current),
            max_y=current.y.max_norm(),
            v_l2=current.v.l2_norm(),
            mom1_drift=float(np.linalg.norm(mean - mean0)),
            mom2_drift=abs(second - second0),
            strat_score=stratification_score(current.y),
        )
        return cost

    cost = record(state)
    if stride and on_snapshot:
        on_snapshot(0, state)
    logger.info("AHT run: %s grid n=%d, K=%s, %d steps of %.3g", y0.grid.kind, y0.grid.n, state.kind.value, steps, dt)

    for step in range(1, steps + 1):
        diss = series.rows[-1][2]
        new_state = aht_step(state, dt, scheme)
        new_state = replace(new_state, t=step * dt)
        new_cost = record(new_state)
        checks["max_norm"].record(new_state.y.max_norm() - initial_max, step)
        checks["energy_balance"].record((new_cost - cost) / dt + diss, step)
        if monotone_rtol is not None:
            checks["cost_monotone"].record(new_cost - cost * (1.0 + monotone_rtol), step)
        state, cost = new_state, new_cost
        if stride and on_snapshot and (step % stride == 0 or step == steps):
            on_snapshot(step, state)

    for check in checks.values():
        if not check.passed:
            logger.warning("AHT check %s failed: worst %.3e > %.3e", check.name, check.worst, check.tolerance)
    return AHTRun(series=series, final=state, checks=checks)


# ----- Lagrangian minimizing movement -----

@dataclass
class JKOState:
    """ X_n as a permutation of atoms: X(a_i) = a_X[i]. """

    atoms: np.ndarray
    y0: np.ndarray
    X: Permutation
    h: float
    n: int = 0

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        self.y0 = np.asarray(self.y0, dtype=float)
        if self.atoms.ndim == 1:
            self.atoms = self.atoms[:, np.newaxis]
        if self.y0.ndim == 1:
            self.y0 = self.y0[:, np.newaxis]
        if self.atoms.shape != self.y0.shape:
            raise ValueError(f"Atoms {self.atoms.shape} and y0 {self.y0.shape} must share shape (m = d)")
        if self.h <= 0.0:
            raise ValueError("The minimizing-movement step h must be positive")
        self.X = check_permutation(self.X)

    @classmethod
    def start(cls, atoms: np.ndarray, y0: np.ndarray, h: float) -> "JKOState":
        return cls(atoms=atoms, y0=y0, X=np.arange(len(atoms)), h=h)

    @property
    def t(self) -> float:
        return self.n * self.h

    def positions(self, X: Optional[Permutation] = None) -> np.ndarray:
        return self.atoms[self.X if X is None else X]

    def energy(self, X: Optional[Permutation] = None) -> float:
        """ 1/2 mean |X(a) - y0(a)|^2. """
        return 0.5 * math.fsum(np.sum((self.positions(X) - self.y0) ** 2, axis=1)) / len(self.atoms)


def jko_objective(state: JKOState, X: Permutation) -> float:
    """ mean of |X(a) - X_prev(a)|^2 / 2h + 1/2 |X(a) - y0(a)|^2, summed exactly. """
    moved = np.sum((state.positions(X) - state.positions()) ** 2, axis=1) / (2.0 * state.h)
    anchored = 0.5 * np.sum((state.positions(X) - state.y0) ** 2, axis=1)
    return math.fsum(np.concatenate([moved, anchored])) / len(state.atoms)


def jko_aht_step(state: JKOState, method: str = "auto") -> JKOState:
    """
    X_new is the measure preserving factor of the polar factorization of z = (X_prev + h y0) / (1 + h). If an
    approximate solver returns a permutation that raises the objective, X_prev is kept.
    """
    z = (state.positions() + state.h * state.y0) / (1.0 + state.h)
    _, X_new = polar_factorize(LagrangianCloud(state.atoms, z), method)
    if jko_objective(state, X_new) > jko_objective(state, state.X):
        logger.warning("Minimizing-movement step %d did not descend; keeping the previous permutation", state.n + 1)
        X_new = state.X.copy()
    return JKOState(atoms=state.atoms, y0=state.y0, X=X_new, h=state.h, n=state.n + 1)
