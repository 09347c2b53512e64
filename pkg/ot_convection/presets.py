"""
Seeded initial data.

All pseudo-random presets draw from Lcg64 so that initial data can be reproduced bit-exactly by any reimplementation:

    state_0     = seed mod 2**64, then one step is discarded
    state_{k+1} = (6364136223846793005 * state_k + 1442695040888963407) mod 2**64
    uniform_k   = (state_k >> 11) * 2**-53                      in [0, 1)
    normal pair = Box-Muller on (1 - u1, u2)

Band-limited fields are finite Fourier sums whose coefficients are drawn in a fixed order (mode by mode, cosine
coefficient before sine coefficient, component-major).
"""

from typing import Callable, Dict, List, Tuple

import numpy as np

from ot_convection.grid import BoxGrid, Grid, TorusGrid, VectorField, gradient, ScalarField

_MULTIPLIER = 6364136223846793005
_INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1


class Lcg64:

    def __init__(self, seed: int):
        self.state = seed & _MASK
        self._next()

    def _next(self) -> int:
        self.state = (_MULTIPLIER * self.state + _INCREMENT) & _MASK
        return self.state

    def uniform(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        draws = np.array([(self._next() >> 11) * 2.0 ** -53 for _ in range(count)])
        return low + (high - low) * draws

    def normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).ravel()[:count]

    def integers(self, count: int, high: int) -> np.ndarray:
        return np.minimum((self.uniform(count) * high).astype(int), high - 1)


def _modes(d: int, k_max: int) -> List[Tuple[int, ...]]:
    """ Half-space of nonzero integer wavevectors with max-norm <= k_max (each real mode listed once). """
    axis = range(-k_max, k_max + 1)
    if d == 1:
        return [(k,) for k in range(1, k_max + 1)]
    return [(k1, k2) for k1 in axis for k2 in axis if (k1 > 0) or (k1 == 0 and k2 > 0)]


def band_limited(grid: Grid, rank: int, seed: int, amplitude: float = 1.0, k_max: int = 3) -> np.ndarray:
    """
    Smooth periodic random field, shape (rank, *grid.shape), scaled so its max norm equals amplitude (unless the
    field is identically zero).
    """
    rng = Lcg64(seed)
    x = grid.coordinates
    values = np.zeros((rank,) + grid.shape)
    for component in range(rank):
        for mode in _modes(grid.d, k_max):
            phase = 2.0 * np.pi * sum(k * x[j] for j, k in enumerate(mode))
            weight = 1.0 / (1.0 + sum(k * k for k in mode))
            a, b = rng.uniform(2, -1.0, 1.0)
            values[component] += weight * (a * np.cos(phase) + b * np.sin(phase))
    peak = np.max(np.sqrt(np.sum(values ** 2, axis=0)))
    return values if peak == 0.0 else amplitude * values / peak


# ----- Eulerian presets -----

def top_heavy_theta(grid: Grid, width: float = 0.1, tilt: float = 0.05) -> np.ndarray:
    """ Density anomaly increasing with height through a slightly tilted interface (unstable stratification). """
    x1, x2 = grid.coordinates
    return np.tanh((x2 - 0.5 - tilt * np.cos(np.pi * x1)) / width)


def aht_initial(preset: str, grid: Grid, seed: int, amplitude: float) -> VectorField:
    x = grid.coordinates
    if preset == "zero":
        return VectorField(grid, np.zeros_like(x))
    if preset == "identity":
        return VectorField(grid, x.copy())
    if preset == "darcy":
        if grid.d != 2:
            raise ValueError("The darcy preset needs d=2")
        theta = top_heavy_theta(grid)
        return VectorField(grid, np.stack([np.zeros_like(theta), -amplitude * theta]))
    if preset == "stratified":
        # purely vertical and x2-dependent: a gradient on every domain
        theta = -np.tanh((x[-1] - 0.5) / 0.1)
        values = np.zeros_like(x)
        values[-1] = -amplitude * theta
        return VectorField(grid, values)
    if preset == "gradient":
        if not isinstance(grid, TorusGrid):
            raise ValueError("The gradient preset is built spectrally and needs the torus")
        psi = np.prod(np.sin(2.0 * np.pi * x), axis=0) / (2.0 * np.pi)
        return VectorField(grid, amplitude * gradient(ScalarField(grid, psi)).values)
    if preset == "random_smooth":
        return VectorField(grid, band_limited(grid, grid.d, seed, amplitude))
    if preset == "windowed_smooth":
        # vanishes with its gradient on the cell faces, so the [0,1) anchor never sees a jump
        values = band_limited(grid, grid.d, seed) * np.prod(np.sin(np.pi * x) ** 2, axis=0)
        peak = np.max(np.sqrt(np.sum(values ** 2, axis=0)))
        return VectorField(grid, amplitude * values / peak)
    raise ValueError(f"Unknown AHT preset {preset!r}")


# ----- Lagrangian presets -----

def box_atoms(n: int, d: int) -> np.ndarray:
    """ Atoms a_i of D: the cell centers of a BoxGrid in row-major order, shape (n**d, d). """
    return BoxGrid(n, d).coordinates.reshape(d, -1).T.copy()


def _stretch(atoms: np.ndarray) -> np.ndarray:
    d = atoms.shape[1]
    scale = np.array([1.5, 0.75][:d])
    shift = np.array([-0.2, 0.1][:d])
    return atoms * scale + shift


def cloud_values(preset: str, atoms: np.ndarray, seed: int, amplitude: float = 1.0) -> np.ndarray:
    count, d = atoms.shape
    rng = Lcg64(seed)
    if preset == "identity":
        return atoms.copy()
    if preset == "uniform_random":
        return amplitude * rng.uniform(count * d).reshape(count, d)
    if preset == "two_clusters":
        centers = np.array([[0.25] * d, [0.75] * d])
        labels = rng.integers(count, 2)
        return centers[labels] + 0.05 * amplitude * rng.normal(count * d).reshape(count, d)
    if preset == "stretch":
        return _stretch(atoms)
    if preset == "scrambled_stretch":
        values = _stretch(atoms)
        order = np.argsort(rng.uniform(count), kind="stable")
        return values[order] + 1e-3 * amplitude * rng.normal(count * d).reshape(count, d)
    if preset == "reversed":
        return atoms[::-1].copy()
    raise ValueError(f"Unknown cloud preset {preset!r}")


AHT_PRESETS = ("zero", "identity", "darcy", "stratified", "gradient", "random_smooth", "windowed_smooth")
CLOUD_PRESETS = ("identity", "uniform_random", "two_clusters", "stretch", "scrambled_stretch", "reversed")


def gnsb_initial(preset: str, grid: Grid, m: int, seed: int, amplitude: float) -> VectorField:
    """
    y0 for the GNSB family. For m = 2d the components are (y_tilde, y_hat) with the labels y_hat = x.
    """
    d = grid.d
    x = grid.coordinates
    if preset == "uniform":
        values = np.ones((m,) + grid.shape) * amplitude
    elif preset == "anchored":
        anchors = x + band_limited(grid, d, seed, amplitude)
        values = anchors if m == d else np.concatenate([anchors, x])
    elif preset == "buoyant":
        if m != d:
            raise ValueError("The buoyant preset carries y = (0, -theta) and needs m = d")
        values = np.zeros((m,) + grid.shape)
        values[-1] = band_limited(grid, 1, seed, amplitude)[0]
    elif preset == "random_smooth":
        values = band_limited(grid, m, seed, amplitude)
    else:
        raise ValueError(f"Unknown GNSB preset {preset!r}")
    return VectorField(grid, values)


GNSB_PRESETS = ("uniform", "anchored", "buoyant", "random_smooth")


def density_profile(name: str, delta: float = 0.5) -> Callable[[np.ndarray], np.ndarray]:
    """ Non-negative label densities lambda(a), mu(a) with unit mass on the unit square. """
    if name == "uniform":
        return lambda a: np.ones(a.shape[1:])
    if name == "cosine":
        if not 0.0 <= delta <= 1.0:
            raise ValueError("cosine density amplitude must lie in [0, 1]")
        return lambda a: 1.0 + delta * np.prod(np.cos(2.0 * np.pi * a), axis=0)
    raise ValueError(f"Unknown density profile {name!r}")


def carrier_velocity(name: str, speed: float = 0.1) -> Callable[[np.ndarray], np.ndarray]:
    """ Carrier velocity W(a) for the constant-speed carrier law. """
    if name == "zero":
        return lambda a: np.zeros_like(a)
    if name == "uniform":
        return lambda a: speed * np.ones_like(a)
    if name == "swirl":
        def swirl(a):
            if a.shape[0] != 2:
                raise ValueError("swirl carriers need d=2")
            return speed * np.stack([-np.sin(2.0 * np.pi * a[1]), np.sin(2.0 * np.pi * a[0])])
        return swirl
    raise ValueError(f"Unknown carrier velocity {name!r}")


DENSITY_PROFILES: Dict[str, str] = {"uniform": "lambda = 1", "cosine": "1 + delta cos(2 pi a1) cos(2 pi a2)"}
CARRIER_PROFILES: Dict[str, str] = {"zero": "W = 0", "uniform": "W = speed (1, 1)", "swirl": "rotational W"}
