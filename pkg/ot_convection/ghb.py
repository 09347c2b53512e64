"""
Generalized hydrostatic Boussinesq dynamics by convex rearrangement (CR).

Each step moves the values by explicit Euler on G and rearranges the result onto the atoms:

    Y_n+1 = [Y_n + h G(a, Y_n)]*

so every iterate is cyclically monotone with respect to the atoms. The trajectory between steps is the linear
interpolation in t.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ot_convection.dumps import DiagnosticSeries
from ot_convection.errors import InvariantCheck, StaleAssignmentError
from ot_convection.forcing import rotate_quarter
from ot_convection.rearrange import (
    LagrangianCloud, MonotonicityReport, TransportAssignment, cyclical_monotonicity_check, rearrangement
)

logger = logging.getLogger(__name__)

CR_COLUMNS = ("t", "l2_norm", "bound_margin", "monotonicity_worst", "weak_residual_max")

GHB_KINDS = ("zero", "contract", "expand", "rotate", "custom")
ANCHORS = ("atoms", "origin")


@dataclass
class GhbForcing:
    """
    zero      G = 0
    contract  G = kappa (a - y)        drift towards the atoms
    expand    G = kappa (y - a)        aggregation type, run only while atoms do not collide
    rotate    G = kappa J (y - a)      semi-geostrophic, d = 2
    custom    G = A (y - a) + b

    anchor="origin" replaces a by 0.
    """

    kind: str
    d: int
    kappa: float = 1.0
    anchor: str = "atoms"
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in GHB_KINDS:
            raise ValueError(f"Unknown GHB forcing {self.kind!r}; expected one of {GHB_KINDS}")
        if self.anchor not in ANCHORS:
            raise ValueError(f"Unknown anchor {self.anchor!r}; expected one of {ANCHORS}")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.kind == "rotate" and self.d != 2:
            raise ValueError("The rotate preset applies J and needs d=2")
        if self.kind == "custom":
            if self.matrix is None:
                raise ValueError("custom GHB forcing needs a d x d matrix")
            self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            self.offset = np.zeros(self.d) if self.offset is None else np.asarray(self.offset, dtype=float)
            if self.matrix.shape != (self.d, self.d) or self.offset.shape != (self.d,):
                raise ValueError(f"custom GHB forcing needs a {self.d} x {self.d} matrix and a length {self.d} offset")
            self.kappa = max(float(np.linalg.norm(self.matrix, 2)), float(np.linalg.norm(self.offset)), self.kappa)

    def __call__(self, atoms: np.ndarray, values: np.ndarray) -> np.ndarray:
        """ G at atoms (N, d) and values (N, d), shape (N, d). """
        anchors = atoms if self.anchor == "atoms" else np.zeros_like(atoms)
        if self.kind == "zero":
            return np.zeros_like(values)
        if self.kind == "contract":
            return self.kappa * (anchors - values)
        if self.kind == "expand":
            return self.kappa * (values - anchors)
        if self.kind == "rotate":
            return self.kappa * rotate_quarter((values - anchors).T).T
        return (values - anchors) @ self.matrix.T + self.offset

    @property
    def diameter(self) -> float:
        return math.sqrt(self.d)

    @property
    def bound_constant(self) -> float:
        """ c = kappa (1 + diam D) in |Y_n+1| <= h c + (1 + h c) |Y_n|. """
        return self.kappa * (1.0 + self.diameter)


@dataclass
class CRState:
    """
    cloud holds Y* on the atoms. assignment is the last rearrangement and source the values it was computed for,
    so that cloud.values == source[assignment.sigma] while the polar data is current.
    """

    cloud: LagrangianCloud
    h: float
    forcing: GhbForcing
    t: float = 0.0
    n: int = 0
    assignment: Optional[TransportAssignment] = None
    source: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError("The CR step h must be positive")
        if self.cloud.m != self.cloud.d:
            raise ValueError("CR states carry values in the atoms' space (m = d)")
        if self.forcing.d != self.cloud.d:
            raise ValueError(f"Forcing is for d={self.forcing.d}, cloud has d={self.cloud.d}")

    @classmethod
    def start(cls, atoms: np.ndarray, y0: np.ndarray, h: float, forcing: GhbForcing) -> "CRState":
        return cls(cloud=LagrangianCloud(atoms, y0), h=h, forcing=forcing)

    @property
    def atoms(self) -> np.ndarray:
        return self.cloud.atoms

    @property
    def values(self) -> np.ndarray:
        return self.cloud.values


def cr_step(state: CRState, method: str = "auto") -> CRState:
    """ Y_n+1 = [Y_n + h G(a, Y_n)]*. """
    moved = state.values + state.h * state.forcing(state.atoms, state.values)
    assignment = rearrangement(state.cloud.with_values(moved), method)
    return replace(
        state,
        cloud=state.cloud.with_values(moved[assignment.sigma]),
        t=state.t + state.h,
        n=state.n + 1,
        assignment=assignment,
        source=moved,
    )


# ----- test functions -----

class BumpFunction:
    """ Tensor bump prod_j phi((y_j - c_j) / r) with phi(s) = exp(-1 / (1 - s^2)) on |s| < 1. """

    def __init__(self, center: Sequence[float], radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def _scaled(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        s = (points - self.center) / self.radius
        inside = np.abs(s) < 1.0
        gap = np.where(inside, 1.0 - s ** 2, 1.0)
        factors = np.where(inside, np.exp(-1.0 / gap), 0.0)
        return s, factors

    def __call__(self, points: np.ndarray) -> np.ndarray:
        _, factors = self._scaled(points)
        return np.prod(factors, axis=1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        s, factors = self._scaled(points)
        value = np.prod(factors, axis=1)[:, np.newaxis]
        inside = np.abs(s) < 1.0
        gap = np.where(inside, 1.0 - s ** 2, 1.0)
        return np.where(inside, value * (-2.0 * s / gap ** 2) / self.radius, 0.0)

    def __repr__(self):
        return f"BumpFunction(center={self.center.tolist()}, radius={self.radius})"


class ConstantFunction:
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.full(points.shape[0], self.value)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return np.zeros_like(points)


class MomentFunction:
    """ |y - c|^2, the second moment about c. """

    def __init__(self, center: Sequence[float]):
        self.center = np.asarray(center, dtype=float)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.sum((points - self.center) ** 2, axis=1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return 2.0 * (points - self.center)


def default_battery(d: int) -> List[BumpFunction]:
    """ Five bumps over the unit cell plus one wide bump. """
    centers = [[0.5] * d, [0.25] * d, [0.75] * d, [0.25, 0.75][:d] if d > 1 else [0.4],
               [0.75, 0.25][:d] if d > 1 else [0.6]]
    battery = [BumpFunction(center, 0.5) for center in centers]
    battery.append(BumpFunction([0.5] * d, 2.0))
    return battery


def _average(values: np.ndarray) -> float:
    return math.fsum(values) / len(values)


def weak_equation_residual(trajectory: Sequence[LagrangianCloud], forcing: GhbForcing, h: float,
                           test_functions: Optional[Sequence] = None) -> np.ndarray:
    """
    |(int f(Y_n+1) - int f(Y_n-1)) / 2h - int grad f(Y_n) . G(a, Y_n)| for n = 1..len-2, one column per f.
    Integrals over the atoms are sums in exact arithmetic, so that permuted clouds integrate identically.
    """
    if len(trajectory) < 3:
        return np.zeros((0, len(test_functions or ())))
    battery = list(test_functions) if test_functions is not None else default_battery(trajectory[0].d)
    residuals = np.zeros((len(trajectory) - 2, len(battery)))
    for n in range(1, len(trajectory) - 1):
        before, current, after = trajectory[n - 1], trajectory[n], trajectory[n + 1]
        velocity = forcing(current.atoms, current.values)
        for k, f in enumerate(battery):
            lhs = (_average(f(after.values)) - _average(f(before.values))) / (2.0 * h)
            rhs = _average(np.sum(f.gradient(current.values) * velocity, axis=1))
            residuals[n - 1, k] = abs(lhs - rhs)
    return residuals


# ----- density -----

@dataclass
class DensityField:
    """ Histogram of the value cloud: weights sum to one over cells with the given edges. """

    weights: np.ndarray
    edges: List[np.ndarray]
    bandwidth: Optional[float] = None

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def cell_centers(self) -> np.ndarray:
        """ (cells, d) in row-major cell order. """
        centers = [0.5 * (edge[:-1] + edge[1:]) for edge in self.edges]
        mesh = np.meshgrid(*centers, indexing="ij")
        return np.stack([axis.ravel() for axis in mesh], axis=1)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(f(self.cell_centers) * self.weights.ravel()))


def density_bounds(value_sets: Sequence[np.ndarray], margin: float = 0.05) -> List[Tuple[float, float]]:
    """ A common bounding box of several value arrays (N, d); degenerate axes are widened to unit length. """
    values = np.concatenate([np.asarray(values, dtype=float).reshape(len(values), -1) for values in value_sets])
    bounds = []
    for low, high in zip(values.min(axis=0), values.max(axis=0)):
        if high - low == 0.0:
            low, high = low - 0.5, high + 0.5
        pad = margin * (high - low)
        bounds.append((float(low - pad), float(high + pad)))
    return bounds


def density_estimate(values, bins: int = 32, bounds: Optional[Sequence[Tuple[float, float]]] = None,
                     bandwidth: Optional[float] = None) -> DensityField:
    """
    rho of the value cloud on an auxiliary grid covering its bounding box. bandwidth (in value units) switches on
    Gaussian smoothing; the smoothed weights are renormalized to mass one.
    """
    if isinstance(values, LagrangianCloud):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, np.newaxis]
    if values.shape[0] == 0:
        raise ValueError("density_estimate needs a non-empty cloud")
    if bounds is None:
        bounds = density_bounds([values], margin=0.0)
    counts, edges = np.histogramdd(values, bins=bins, range=bounds)
    weights = counts / values.shape[0]
    if bandwidth:
        widths = [edge[1] - edge[0] for edge in edges]
        weights = ndimage.gaussian_filter(weights, sigma=[bandwidth / width for width in widths], mode="constant")
        weights = weights / np.sum(weights)
    return DensityField(weights=weights, edges=list(edges), bandwidth=bandwidth)


def matched_atoms(state: CRState) -> np.ndarray:
    """ Row j is the atom a_sigma^-1(j) matched to source value j, the discrete Y_j + grad phi(Y_j). """
    _require_current(state)
    return state.atoms[state.assignment.inverse]


def continuity_residual(trajectory: Sequence[CRState], test_functions: Optional[Sequence] = None, bins: int = 32,
                        bandwidth: Optional[float] = None) -> np.ndarray:
    """
    |(int f rho_n+1 - int f rho_n-1) / 2h - int grad f . w rho_n| for the histogram densities, with the velocity
    w(Y_i) = G(a_i, Y_i) taken at the matched atom of each value. One column per test function.
    """
    if len(trajectory) < 3:
        return np.zeros((0, len(test_functions or ())))
    battery = list(test_functions) if test_functions is not None else default_battery(trajectory[0].cloud.d)
    bounds = density_bounds([state.values for state in trajectory])
    densities = [density_estimate(state.cloud, bins, bounds, bandwidth) for state in trajectory]
    residuals = np.zeros((len(trajectory) - 2, len(battery)))
    for n in range(1, len(trajectory) - 1):
        state = trajectory[n]
        velocity = state.forcing(matched_atoms(state)[state.assignment.sigma], state.values)
        for k, f in enumerate(battery):
            lhs = (densities[n + 1].integrate(f) - densities[n - 1].integrate(f)) / (2.0 * state.h)
            rhs = _average(np.sum(f.gradient(state.values) * velocity, axis=1))
            residuals[n - 1, k] = abs(lhs - rhs)
    return residuals


# ----- Monge-Ampere certificate -----

def _require_current(state: CRState):
    if state.assignment is None or state.source is None:
        raise StaleAssignmentError("State carries no rearrangement; run cr_step first")
    if not np.array_equal(state.values, state.source[state.assignment.sigma]):
        raise StaleAssignmentError("Cloud values changed since the last rearrangement")


@dataclass
class MACertificate:
    """ Pushforward identity residual per test function plus the discrete ellipticity (cyclic monotonicity). """

    identity_residuals: List[float]
    monotonicity: MonotonicityReport
    tolerance: float

    @property
    def identity_residual(self) -> float:
        return max(self.identity_residuals, default=0.0)

    @property
    def passed(self) -> bool:
        return self.identity_residual <= self.tolerance and self.monotonicity.passed

    def serialize(self) -> dict:
        return {
            "identity_residual": self.identity_residual,
            "monotonicity": self.monotonicity.serialize(),
            "passed": self.passed,
        }


def weak_ma_certificate(state: CRState, test_functions: Optional[Sequence] = None, tol: float = 1e-12,
                        trials: int = 1000) -> MACertificate:
    """
    sum_i f(a_i) / N == sum_j f(matched atom of source value j) / N for every test function f, where the matched
    atom of value j is a_sigma^-1(j). Exact by construction; a nonzero residual means the polar data is corrupt.
    """
    _require_current(state)
    battery = list(test_functions) if test_functions is not None else default_battery(state.cloud.d)
    matched = matched_atoms(state)
    residuals = [abs(_average(f(state.atoms)) - _average(f(matched))) for f in battery]
    monotonicity = cyclical_monotonicity_check(state.cloud, trials=trials, tol=1e-10)
    return MACertificate(identity_residuals=residuals, monotonicity=monotonicity, tolerance=tol)


# ----- runs -----

@dataclass
class CRRun:
    trajectory: List[CRState]
    series: DiagnosticSeries
    checks: Dict[str, InvariantCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    @property
    def times(self) -> np.ndarray:
        return np.array([state.t for state in self.trajectory])

    def values_at(self, t: float) -> np.ndarray:
        """ Y^h(t), linear in t between steps and constant past the last step. """
        times = self.times
        if t <= times[0]:
            return self.trajectory[0].values.copy()
        if t >= times[-1]:
            return self.trajectory[-1].values.copy()
        index = int(np.searchsorted(times, t, side="right")) - 1
        weight = (t - times[index]) / (times[index + 1] - times[index])
        return (1.0 - weight) * self.trajectory[index].values + weight * self.trajectory[index + 1].values


def sup_l2_distance(run_a: CRRun, run_b: CRRun) -> float:
    """ sup over the union of both time grids of |Y_a(t) - Y_b(t)|_2 (the interpolants are piecewise linear). """
    if run_a.trajectory[0].atoms.shape != run_b.trajectory[0].atoms.shape:
        raise ValueError("Runs are on different atom sets")
    times = np.union1d(run_a.times, run_b.times)
    times = times[times <= min(run_a.times[-1], run_b.times[-1]) + 1e-12]
    size = run_a.trajectory[0].cloud.size
    return max(
        math.sqrt(math.fsum(((run_a.values_at(t) - run_b.values_at(t)) ** 2).ravel()) / size) for t in times
    )


def cr_run(atoms: np.ndarray, y0: np.ndarray, forcing: GhbForcing, T: float, h: float, method: str = "auto",
           stride: int = 0, on_snapshot: Optional[Callable[[int, CRState], None]] = None,
           test_functions: Optional[Sequence] = None, monotonicity_trials: int = 1000) -> CRRun:
    """
    CR trajectory on [0, T] with per-step diagnostics.

    =====
    Checks
    =====
    monotonicity   every rearranged iterate is cyclically monotone (tolerance 1e-10)
    bound          |Y_n+1|_2 <= h c + (1 + h c) |Y_n|_2 with c = kappa (1 + diam D), exact inequality

    The weak-equation residual column holds the largest residual over the test battery at each interior step.
    """
    if h <= 0.0 or T < 0.0:
        raise ValueError("cr_run needs h > 0 and T >= 0")
    steps = int(round(T / h))
    state = CRState.start(atoms, y0, h, forcing)
    trajectory = [state]
    checks = {
        "monotonicity": InvariantCheck("monotonicity", 1e-10),
        "bound": InvariantCheck("bound", 0.0),
    }
    margins = [0.0]
    worsts = [0.0]
    c = forcing.bound_constant
    if stride and on_snapshot:
        on_snapshot(0, state)
    logger.info("CR run: %s forcing on %d atoms, %d steps of h=%.3g", forcing.kind, state.cloud.size, steps, h)

    for step in range(1, steps + 1):
        new_state = cr_step(state, method)
        new_state = replace(new_state, t=step * h)
        margin = h * c + (1.0 + h * c) * state.cloud.l2_norm() - new_state.cloud.l2_norm()
        report = cyclical_monotonicity_check(new_state.cloud, trials=monotonicity_trials, seed=step)
        checks["bound"].record(-margin, step)
        checks["monotonicity"].record(report.worst, step)
        margins.append(margin)
        worsts.append(report.worst)
        trajectory.append(new_state)
        state = new_state
        if stride and on_snapshot and (step % stride == 0 or step == steps):
            on_snapshot(step, state)

    residuals = weak_equation_residual([s.cloud for s in trajectory], forcing, h, test_functions)
    weak_max = np.zeros(len(trajectory))
    if residuals.size:
        weak_max[1:-1] = residuals.max(axis=1)

    series = DiagnosticSeries(CR_COLUMNS)
    for index, current in enumerate(trajectory):
        series.append(
            t=current.t,
            l2_norm=current.cloud.l2_norm(),
            bound_margin=margins[index],
            monotonicity_worst=worsts[index],
            weak_residual_max=weak_max[index],
        )
    for check in checks.values():
        if not check.passed:
            logger.warning("CR check %s failed: worst %.3e > %.3e", check.name, check.worst, check.tolerance)
    return CRRun(trajectory=trajectory, series=series, checks=checks)


@dataclass
class DependenceReport:
    distances: List[float]
    bounds: List[float]

    @property
    def passed(self) -> bool:
        return all(distance <= bound for distance, bound in zip(self.distances, self.bounds))


def continuous_dependence_1d(atoms: np.ndarray, y0: np.ndarray, z0: np.ndarray, forcing: GhbForcing, T: float,
                             h: float) -> DependenceReport:
    """
    |Y*(t) - Z*(t)|_2 against e^(kappa t) |y0 - z0|_2 for two 1D CR runs driven by the same forcing.
    """
    if forcing.d != 1:
        raise ValueError("The continuous dependence estimate is one-dimensional")
    run_y = cr_run(atoms, y0, forcing, T, h, monotonicity_trials=10)
    run_z = cr_run(atoms, z0, forcing, T, h, monotonicity_trials=10)
    initial = run_y.trajectory[0].cloud.l2_distance(run_z.trajectory[0].cloud)
    distances = [a.cloud.l2_distance(b.cloud) for a, b in zip(run_y.trajectory, run_z.trajectory)]
    bounds = [math.exp(forcing.kappa * a.t) * initial for a in run_y.trajectory]
    return DependenceReport(distances=distances, bounds=bounds)
