"""
Discrete rearrangement with convex potential.

A value cloud {y_j} is paired with the fixed uniform atoms {a_i} of D by the assignment sigma minimizing
sum_i |a_i - y_sigma(i)|^2. The paired map a_i -> y_sigma(i) is cyclically monotone, which is the discrete meaning of
"gradient of a convex potential", and X = sigma^-1 is the measure preserving factor of the polar factorization
y = y* o X.

Conventions used throughout:
    cost matrix   c[i, j] = |a_i - y_j|^2, rows are atoms, columns are values
    sigma[i]      index of the value carried by atom i after rearrangement
    duals         u_i + w_j <= c[i, j] for all pairs, with equality (up to epsilon) on the matched pairs
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from ot_convection.errors import AssignmentSizeError, AuctionError
from ot_convection.presets import Lcg64

logger = logging.getLogger(__name__)

Permutation = np.ndarray

AUCTION_SCALING = 0.25
AUCTION_FINAL_RATIO = 1e-9


def check_permutation(sigma: Sequence[int]) -> Permutation:
    sigma = np.asarray(sigma)
    if sigma.ndim != 1 or not np.issubdtype(sigma.dtype, np.integer):
        raise ValueError("A permutation is a one-dimensional integer array")
    if not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
        raise ValueError("Array is not a bijection of {0..N-1}")
    return sigma


def invert_permutation(sigma: Permutation) -> Permutation:
    inverse = np.empty_like(sigma)
    inverse[sigma] = np.arange(sigma.size)
    return inverse


def _as_points(array) -> np.ndarray:
    points = np.asarray(array, dtype=float)
    if points.ndim == 1:
        points = points[:, np.newaxis]
    if points.ndim != 2:
        raise ValueError(f"Point arrays must have shape (N,) or (N, dim), got {points.shape}")
    return points


@dataclass(frozen=True, eq=False)
class LagrangianCloud:
    """ Atoms a_i of D, each of mass 1/N, paired with values Y_i in R^m. Atoms are read-only. """

    atoms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        atoms = _as_points(self.atoms).copy()
        values = _as_points(self.values).copy()
        if atoms.shape[0] < 1:
            raise ValueError("A cloud needs at least one atom")
        if atoms.shape[0] != values.shape[0]:
            raise ValueError(f"{atoms.shape[0]} atoms but {values.shape[0]} values")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(values))):
            raise ValueError("Cloud atoms and values must be finite")
        atoms.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "LagrangianCloud":
        return LagrangianCloud(self.atoms, values)

    def is_degenerate(self) -> bool:
        """ True when some value is repeated, so that the optimal assignment is not unique. """
        return np.unique(self.values, axis=0).shape[0] < self.size

    def l2_norm(self) -> float:
        """ sqrt(sum_i |Y_i|^2 / N), summed exactly so that bound checks do not depend on ordering. """
        return math.sqrt(math.fsum((self.values ** 2).ravel()) / self.size)

    def l2_distance(self, other: "LagrangianCloud") -> float:
        return math.sqrt(math.fsum(((self.values - other.values) ** 2).ravel()) / self.size)


def cost_matrix(atoms: np.ndarray, values: np.ndarray) -> np.ndarray:
    difference = atoms[:, np.newaxis, :] - values[np.newaxis, :, :]
    return np.sum(difference ** 2, axis=2)


@dataclass
class TransportAssignment:
    sigma: Permutation
    cost: float
    atom_potential: Optional[np.ndarray]
    value_potential: Optional[np.ndarray]
    epsilon: float
    method: str
    phases: int = 0
    rounds: int = 0

    @property
    def inverse(self) -> Permutation:
        return invert_permutation(self.sigma)

    def slackness_gap(self, costs: np.ndarray) -> float:
        """
        max_i (c[i, sigma(i)] - u_i - w_sigma(i)) together with the worst dual infeasibility; <= epsilon for a
        correct assignment.
        """
        if self.atom_potential is None or self.value_potential is None:
            raise ValueError(f"{self.method} assignments carry no dual potentials")
        reduced = costs - self.atom_potential[:, np.newaxis] - self.value_potential[np.newaxis, :]
        matched = reduced[np.arange(self.sigma.size), self.sigma]
        return float(max(np.max(matched), -np.min(reduced)))


def _total_cost(costs: np.ndarray, sigma: Permutation) -> float:
    return math.fsum(costs[np.arange(sigma.size), sigma])


def assign_exact(atoms, values) -> TransportAssignment:
    """
    Exact optimal assignment with dual potentials (shortest augmenting paths with potentials).

    Columns are scanned in increasing index order and ties in the reduced costs go to the lowest column index, so
    the result is deterministic.

    Raises AssignmentSizeError above settings.OT_CONVECTION["HUNGARIAN_MAX_ATOMS"] atoms; use assign_auction there.
    """
    atoms, values = _as_points(atoms), _as_points(values)
    size = atoms.shape[0]
    limit = settings.OT_CONVECTION["HUNGARIAN_MAX_ATOMS"]
    if size > limit:
        raise AssignmentSizeError(
            f"assign_exact is capped at {limit} atoms ({size} given); use assign_auction", size=size, limit=limit
        )
    costs = cost_matrix(atoms, values)

    # index 0 is a sentinel column; rows and columns are 1-based below
    u = np.zeros(size + 1)
    w = np.zeros(size + 1)
    owner = np.zeros(size + 1, dtype=int)
    way = np.zeros(size + 1, dtype=int)
    for row in range(1, size + 1):
        owner[0] = row
        column = 0
        slack = np.full(size, np.inf)
        used = np.zeros(size + 1, dtype=bool)
        while True:
            used[column] = True
            current = owner[column]
            free = ~used[1:]
            reduced = costs[current - 1] - u[current] - w[1:]
            better = free & (reduced < slack)
            slack[better] = reduced[better]
            way[1:][better] = column
            candidates = np.where(free, slack, np.inf)
            next_column = int(np.argmin(candidates)) + 1
            delta = candidates[next_column - 1]
            visited = np.flatnonzero(used)
            u[owner[visited]] += delta
            w[visited] -= delta
            slack[free] -= delta
            column = next_column
            if owner[column] == 0:
                break
        while column:
            previous = way[column]
            owner[column] = owner[previous]
            column = previous

    sigma = np.empty(size, dtype=int)
    sigma[owner[1:] - 1] = np.arange(size)
    return TransportAssignment(
        sigma=sigma,
        cost=_total_cost(costs, sigma),
        atom_potential=u[1:].copy(),
        value_potential=w[1:].copy(),
        epsilon=0.0,
        method="exact",
    )


def auction_schedule(spread: float, size: int, final: Optional[float] = None) -> List[float]:
    """ Geometric epsilon ladder: spread/8, then x1/4 per phase, ending exactly at final. """
    if final is None:
        final = spread * AUCTION_FINAL_RATIO / size
    if final <= 0.0:
        raise ValueError("The final auction epsilon must be positive")
    schedule = []
    epsilon = spread / 8.0
    while epsilon > final:
        schedule.append(epsilon)
        epsilon *= AUCTION_SCALING
    schedule.append(final)
    return schedule


def _auction_phase(costs: np.ndarray, prices: np.ndarray, epsilon: float, max_rounds: int) -> Tuple[np.ndarray, int]:
    """ One Jacobi bidding phase from an empty assignment; prices are updated in place. """
    size = costs.shape[0]
    assigned = np.full(size, -1)
    owner = np.full(size, -1)
    rounds = 0
    while True:
        bidders = np.flatnonzero(assigned < 0)
        if bidders.size == 0:
            return assigned, rounds
        if rounds >= max_rounds:
            raise AuctionError(
                f"Auction phase hit {max_rounds} rounds with {bidders.size} atoms unassigned (epsilon {epsilon:.3e})",
                epsilon=epsilon,
                gap=bidders.size / size,
            )
        rounds += 1
        totals = costs[bidders] + prices
        best_object = np.argmin(totals, axis=1)
        rows = np.arange(bidders.size)
        best = totals[rows, best_object]
        if size > 1:
            totals[rows, best_object] = np.inf
            second = np.min(totals, axis=1)
        else:
            second = best
        bids = prices[best_object] + (second - best) + epsilon

        # highest bid per object wins, lowest bidder index on equal bids
        order = np.lexsort((bidders, -bids, best_object))
        objects = best_object[order]
        first = np.ones(objects.size, dtype=bool)
        first[1:] = objects[1:] != objects[:-1]
        won = objects[first]
        winners = bidders[order][first]

        outbid = owner[won]
        assigned[outbid[outbid >= 0]] = -1
        owner[won] = winners
        assigned[winners] = won
        prices[won] = bids[order][first]


def assign_auction(atoms, values, epsilon_schedule: Optional[Sequence[float]] = None,
                   max_rounds: Optional[int] = None) -> TransportAssignment:
    """
    epsilon-scaling auction for the same problem as assign_exact.

    =====
    Bidding
    =====
    Atoms bid for values with benefit -c[i, j]. Each phase restarts from an empty assignment with the prices of the
    previous phase. Bids are placed simultaneously (Jacobi); each contested value goes to the highest bid, the lowest
    atom index winning equal bids, so results do not depend on evaluation order.

    =====
    Output
    =====
    The final assignment satisfies epsilon-complementary slackness for the last epsilon, so its cost is within
    N * epsilon_final of optimal. Duals: w_j = -price_j and u_i = min_j (c[i, j] - w_j).

    Raises AuctionError carrying the current epsilon and the unassigned fraction when a phase exceeds max_rounds.
    """
    atoms, values = _as_points(atoms), _as_points(values)
    size = atoms.shape[0]
    costs = cost_matrix(atoms, values)
    spread = float(np.max(costs) - np.min(costs))
    if spread == 0.0:
        sigma = np.arange(size)
        zeros = np.zeros(size)
        return TransportAssignment(sigma, _total_cost(costs, sigma), costs[:, 0].copy(), zeros, 0.0, "auction")

    schedule = list(epsilon_schedule) if epsilon_schedule is not None else auction_schedule(spread, size)
    if not schedule or any(epsilon <= 0.0 for epsilon in schedule):
        raise ValueError("The auction epsilon schedule must be a non-empty list of positive values")
    if max_rounds is None:
        max_rounds = 100 * size + 1000

    prices = np.zeros(size)
    total_rounds = 0
    assigned = np.arange(size)
    for epsilon in schedule:
        assigned, rounds = _auction_phase(costs, prices, epsilon, max_rounds)
        total_rounds += rounds
        logger.debug("Auction phase epsilon=%.3e finished in %d rounds", epsilon, rounds)

    value_potential = -prices
    atom_potential = np.min(costs - value_potential[np.newaxis, :], axis=1)
    return TransportAssignment(
        sigma=assigned,
        cost=_total_cost(costs, assigned),
        atom_potential=atom_potential,
        value_potential=value_potential,
        epsilon=schedule[-1],
        method="auction",
        phases=len(schedule),
        rounds=total_rounds,
    )


def sort_rearrange_1d(values) -> np.ndarray:
    """ Monotone rearrangement of reals: the values in ascending order. """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("sort_rearrange_1d takes a one-dimensional array")
    if not np.all(np.isfinite(values)):
        raise ValueError("sort_rearrange_1d needs finite values")
    return np.sort(values, kind="stable")


def _sorted_assignment(cloud: LagrangianCloud) -> TransportAssignment:
    atom_order = np.argsort(cloud.atoms[:, 0], kind="stable")
    value_order = np.argsort(cloud.values[:, 0], kind="stable")
    sigma = np.empty(cloud.size, dtype=int)
    sigma[atom_order] = value_order
    costs = np.sum((cloud.atoms - cloud.values[sigma]) ** 2, axis=1)
    return TransportAssignment(sigma, math.fsum(costs), None, None, 0.0, "sort")


def rearrangement(cloud: LagrangianCloud, method: str = "auto") -> TransportAssignment:
    """
    Optimal assignment of the cloud's values to its atoms. method is "auto", "sort" (d = m = 1), "exact" or
    "auction"; auto sorts in 1D and otherwise uses the exact solver up to its size cap.
    """
    if cloud.m != cloud.d:
        raise ValueError(f"Rearrangement needs values in the atoms' space (m={cloud.m}, d={cloud.d})")
    if cloud.is_degenerate():
        logger.warning("Cloud of %d atoms has repeated values; the optimal assignment is not unique", cloud.size)
    if method == "auto":
        if cloud.d == 1:
            method = "sort"
        elif cloud.size <= settings.OT_CONVECTION["HUNGARIAN_MAX_ATOMS"]:
            method = "exact"
        else:
            method = "auction"
    if method == "sort":
        if cloud.d != 1:
            raise ValueError("The sort path only applies to one-dimensional clouds")
        return _sorted_assignment(cloud)
    if method == "exact":
        return assign_exact(cloud.atoms, cloud.values)
    if method == "auction":
        return assign_auction(cloud.atoms, cloud.values)
    raise ValueError(f"Unknown assignment method {method!r}")


def convex_rearrange(cloud: LagrangianCloud, method: str = "auto") -> LagrangianCloud:
    """ y -> y*: atom a_i carries y_sigma(i). The multiset of values is unchanged. """
    assignment = rearrangement(cloud, method)
    return cloud.with_values(cloud.values[assignment.sigma])


def polar_factorize(cloud: LagrangianCloud, method: str = "auto") -> Tuple[LagrangianCloud, Permutation]:
    """ Returns (y*, X) with y_i = y*_X(i) exactly on atoms. """
    assignment = rearrangement(cloud, method)
    rearranged = cloud.with_values(cloud.values[assignment.sigma])
    return rearranged, assignment.inverse


@dataclass
class MonotonicityReport:
    worst: float
    passed: bool
    cycles_checked: int
    degenerate: bool
    tolerance: float
    worst_cycle: List[int] = field(default_factory=list)

    def serialize(self) -> dict:
        return {
            "worst": self.worst,
            "passed": self.passed,
            "cycles_checked": self.cycles_checked,
            "degenerate": self.degenerate,
            "tolerance": self.tolerance,
        }


def _cycle_sums(atoms: np.ndarray, values: np.ndarray, cycles: np.ndarray) -> np.ndarray:
    following = np.roll(cycles, -1, axis=1)
    terms = np.sum(atoms[cycles] * (values[cycles] - values[following]), axis=2)
    return np.sum(terms, axis=1)


def cyclical_monotonicity_check(cloud: LagrangianCloud, trials: int = 1000, cycle_len: int = 4,
                                tol: float = 1e-10, seed: int = 0) -> MonotonicityReport:
    """
    Checks sum_k a_ik . (y_ik - y_ik+1) >= -tol along index cycles. Every 2-cycle is checked when N <= 2048; on
    top of that `trials` random cycles with lengths 2..cycle_len are drawn from Lcg64(seed). worst is the largest
    violation found (0 when none).
    """
    if cycle_len < 2:
        raise ValueError("cycle_len must be at least 2")
    atoms, values = cloud.atoms, cloud.values
    size = cloud.size
    worst = 0.0
    worst_cycle: List[int] = []
    checked = 0
    if size > 1:
        if size <= 2048:
            gram = atoms @ values.T
            own = np.diag(gram)
            pairs = own[:, np.newaxis] + own[np.newaxis, :] - gram - gram.T
            i, j = np.unravel_index(int(np.argmin(pairs)), pairs.shape)
            checked += size * (size - 1) // 2
            if -pairs[i, j] > worst:
                worst, worst_cycle = float(-pairs[i, j]), [int(i), int(j)]

        rng = Lcg64(seed)
        lengths = range(2, cycle_len + 1)
        per_length = max(1, trials // len(lengths))
        for length in lengths:
            cycles = rng.integers(per_length * length, size).reshape(per_length, length)
            sums = _cycle_sums(atoms, values, cycles)
            checked += per_length
            index = int(np.argmin(sums))
            if -sums[index] > worst:
                worst, worst_cycle = float(-sums[index]), cycles[index].tolist()

    return MonotonicityReport(
        worst=worst,
        passed=worst <= tol,
        cycles_checked=checked,
        degenerate=cloud.is_degenerate(),
        tolerance=tol,
        worst_cycle=worst_cycle,
    )
