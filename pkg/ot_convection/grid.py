"""
Uniform grids on the d-torus and on the unit box, fields sampled on them, and the differential operators the flow
solvers are assembled from.

Torus operators are spectral (FFT). Derivative wavenumbers zero the Nyquist mode, and the Laplacian uses the same
wavenumbers, so divergence(gradient(p)) == laplacian(p) holds to round-off and the Leray projector is exactly
idempotent. The box only supports the K=Identity projection, through a cell-centered finite-volume Neumann problem
solved with conjugate gradients.
"""

import enum
import functools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from django.conf import settings
from scipy import ndimage

from ot_convection.errors import CFLError, ConvergenceError

logger = logging.getLogger(__name__)

CFL_WARN = 0.5
CFL_MAX = 1.0


class DissipationKind(enum.Enum):
    NONE = "none"
    IDENTITY = "identity"
    NEG_LAPLACIAN = "neg_laplacian"

    @classmethod
    def parse(cls, value: Union[str, "DissipationKind"]) -> "DissipationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown dissipation kind {value!r}; expected one of {[k.value for k in cls]}")

    @property
    def is_dissipative(self) -> bool:
        return self is not DissipationKind.NONE


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    """ Unit periodic torus T^d = R^d/Z^d sampled at x_j = j*h, h = 1/n. """

    d: int
    n: int

    kind: ClassVar[str] = "torus"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"Torus dimension must be 1 or 2, got d={self.d}")
        if self.n < 8 or not _is_power_of_two(self.n):
            raise ValueError(f"Torus points per axis must be a power of two >= 8, got n={self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @cached_property
    def coordinates(self) -> np.ndarray:
        """ Node coordinates, shape (d, n, ..., n), representatives in [0, 1)^d. """
        axis = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> List[np.ndarray]:
        """ Derivative wavenumbers 2*pi*k per axis, broadcast to the grid shape, Nyquist entry zeroed. """
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n)
        k[self.n // 2] = 0.0
        return list(np.meshgrid(*([k] * self.d), indexing="ij"))

    @cached_property
    def wavenumber_squared(self) -> np.ndarray:
        return sum(kj ** 2 for kj in self.wavenumbers)


@dataclass(frozen=True)
class BoxGrid:
    """ Unit box D = [0,1]^d with n cells per axis and cell-centered nodes (i + 1/2)h; |D| = 1. """

    n: int
    d: int = 2

    kind: ClassVar[str] = "box"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"Box dimension must be 1 or 2, got d={self.d}")
        if self.n < 1:
            raise ValueError(f"Box cells per axis must be positive, got n={self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @cached_property
    def coordinates(self) -> np.ndarray:
        axis = (np.arange(self.n) + 0.5) * self.h
        return np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(self.d))


Grid = Union[TorusGrid, BoxGrid]


@dataclass
class Field:
    """ Samples on a grid, components first: values.shape == (rank, *grid.shape). """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == self.grid.d:
            self.values = self.values[np.newaxis]
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError(f"Field shape {self.values.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Field values must be finite")

    @property
    def rank(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid: Grid, rank: int = 1) -> "Field":
        return cls(grid, np.zeros((rank,) + grid.shape))

    def copy(self) -> "Field":
        return type(self)(self.grid, self.values.copy())

    def norm_pointwise(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values ** 2, axis=0))

    def max_norm(self) -> float:
        return float(np.max(self.norm_pointwise()))

    def l2_norm(self) -> float:
        """ sqrt of the cell-average of |f|^2 (the domain has unit measure). """
        return float(np.sqrt(np.mean(np.sum(self.values ** 2, axis=0))))

    def mean(self) -> np.ndarray:
        return self.values.reshape(self.rank, -1).mean(axis=1)

    def inner(self, other: "Field") -> float:
        return float(np.mean(np.sum(self.values * other.values, axis=0)))


class ScalarField(Field):
    def __post_init__(self):
        super().__post_init__()
        if self.rank != 1:
            raise ValueError(f"Scalar field must have one component, got {self.rank}")


class VectorField(Field):
    pass


def _require_torus(field: Field, operation: str) -> TorusGrid:
    if not isinstance(field.grid, TorusGrid):
        raise ValueError(f"{operation} needs a torus grid; box operators are internal to the Neumann solver")
    return field.grid


def _axes(grid: Grid) -> Tuple[int, ...]:
    return tuple(range(1, grid.d + 1))


def _fft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.fftn(values, axes=_axes(grid))


def _ifft(values_hat: np.ndarray, grid: Grid) -> np.ndarray:
    return np.real(np.fft.ifftn(values_hat, axes=_axes(grid)))


def gradient(p: ScalarField) -> VectorField:
    grid = _require_torus(p, "gradient")
    p_hat = np.fft.fftn(p.values[0])
    return VectorField(grid, np.stack([np.real(np.fft.ifftn(1j * kj * p_hat)) for kj in grid.wavenumbers]))


def divergence(v: VectorField) -> ScalarField:
    grid = _require_torus(v, "divergence")
    if v.rank != grid.d:
        raise ValueError(f"divergence needs {grid.d} components, got {v.rank}")
    total = sum(1j * kj * np.fft.fftn(v.values[j]) for j, kj in enumerate(grid.wavenumbers))
    return ScalarField(grid, np.real(np.fft.ifftn(total)))


def laplacian(f: Field) -> Field:
    """ Componentwise spectral Laplacian with the derivative wavenumbers. """
    grid = _require_torus(f, "laplacian")
    return type(f)(grid, _ifft(-grid.wavenumber_squared * _fft(f.values, grid), grid))


def _helmholtz_parts(y: VectorField) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ Returns (y_hat, gradient-part hat, pressure hat) of the Helmholtz decomposition on the torus. """
    grid = _require_torus(y, "projection")
    if y.rank != grid.d:
        raise ValueError(f"projection needs {grid.d} components, got {y.rank}")
    y_hat = _fft(y.values, grid)
    k_sq = grid.wavenumber_squared
    resolved = k_sq > 0
    k_dot_y = sum(kj * y_hat[j] for j, kj in enumerate(grid.wavenumbers))
    p_hat = np.zeros_like(k_dot_y)
    p_hat[resolved] = -1j * k_dot_y[resolved] / k_sq[resolved]
    grad_hat = np.stack([1j * kj * p_hat for kj in grid.wavenumbers])
    return y_hat, grad_hat, p_hat


def leray_project(y: VectorField) -> Tuple[VectorField, ScalarField]:
    """ y = v + grad p with div v = 0; the zero-frequency part of y stays in v and p has zero mean. """
    y_hat, grad_hat, p_hat = _helmholtz_parts(y)
    grid = y.grid
    v = VectorField(grid, _ifft(y_hat - grad_hat, grid))
    p = ScalarField(grid, np.real(np.fft.ifftn(p_hat)))
    return v, p


def stokes_project(y: VectorField) -> Tuple[VectorField, ScalarField]:
    """
    Solves -lap v + grad p = y - ybar, div v = 0 on the torus. Modes with zero derivative wavenumber (the mean and
    pure Nyquist modes) are removed from y and get v_hat = 0.
    """
    y_hat, grad_hat, p_hat = _helmholtz_parts(y)
    grid = y.grid
    k_sq = grid.wavenumber_squared
    v_hat = np.zeros_like(y_hat)
    resolved = k_sq > 0
    v_hat[:, resolved] = (y_hat - grad_hat)[:, resolved] / k_sq[resolved]
    v = VectorField(grid, _ifft(v_hat, grid))
    p = ScalarField(grid, np.real(np.fft.ifftn(p_hat)))
    return v, p


def resolved_part(y: Field) -> Field:
    """ y with the modes stokes_project discards (mean, pure Nyquist) filtered out. """
    grid = _require_torus(y, "resolved_part")
    return type(y)(grid, _ifft(_fft(y.values, grid) * (grid.wavenumber_squared > 0), grid))


def stokes_residual(y: VectorField, v: VectorField, p: ScalarField) -> float:
    residual = -laplacian(v).values + gradient(p).values - resolved_part(y).values
    return float(np.max(np.abs(residual)))


def project(y: VectorField, kind: DissipationKind) -> Tuple[VectorField, ScalarField]:
    """ v = P_K y for the strictly dissipative K, on whichever grid y lives on. """
    kind = DissipationKind.parse(kind)
    if kind is DissipationKind.IDENTITY:
        if isinstance(y.grid, BoxGrid):
            return neumann_poisson_project(y)
        return leray_project(y)
    if kind is DissipationKind.NEG_LAPLACIAN:
        if isinstance(y.grid, BoxGrid):
            raise ValueError("K=neg_laplacian is only available on the torus")
        return stokes_project(y)
    raise ValueError("K=none has no projection; the operator must be strictly dissipative")


# ----- box (K=Identity) -----

@functools.lru_cache(maxsize=8)
def _neumann_matrix(n: int, d: int) -> sp.csr_matrix:
    """ Positive semi-definite -lap with homogeneous Neumann faces, scaled by h^2. """
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    one_d = sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr")
    if d == 1:
        return one_d
    eye = sp.identity(n, format="csr")
    return (sp.kron(one_d, eye) + sp.kron(eye, one_d)).tocsr()


def _interior_faces(y: VectorField) -> List[np.ndarray]:
    """ Face averages of component k on the n-1 interior faces normal to axis k. """
    faces = []
    for k in range(y.grid.d):
        component = y.values[k]
        lower = np.take(component, range(0, y.grid.n - 1), axis=k)
        upper = np.take(component, range(1, y.grid.n), axis=k)
        faces.append(0.5 * (lower + upper))
    return faces


def _face_divergence(faces: List[np.ndarray], h: float) -> np.ndarray:
    """ Cell divergence of interior-face fluxes; the boundary faces carry zero flux. """
    total = 0.0
    for k, flux in enumerate(faces):
        pad = [(0, 0)] * flux.ndim
        pad[k] = (1, 1)
        total = total + np.diff(np.pad(flux, pad), axis=k) / h
    return total


def _face_gradient(p: np.ndarray, d: int, h: float) -> List[np.ndarray]:
    return [np.diff(p, axis=k) / h for k in range(d)]


@dataclass
class NeumannSolution:
    v: VectorField
    p: ScalarField
    face_velocity: List[np.ndarray]
    iterations: int
    residual: float

    def divergence_max(self) -> float:
        return float(np.max(np.abs(_face_divergence(self.face_velocity, self.v.grid.h))))


def neumann_poisson_solve(y: VectorField) -> NeumannSolution:
    grid = y.grid
    if not isinstance(grid, BoxGrid):
        raise ValueError("neumann_poisson_project needs a box grid")
    if y.rank != grid.d:
        raise ValueError(f"neumann_poisson_project needs {grid.d} components, got {y.rank}")
    options = settings.OT_CONVECTION
    h = grid.h
    faces = _interior_faces(y)
    rhs = -(_face_divergence(faces, h) * h * h).ravel()
    rhs -= rhs.mean()

    iterations = 0
    if np.max(np.abs(rhs)) == 0.0:
        p_flat = np.zeros(grid.size)
        residual = 0.0
    else:
        matrix = _neumann_matrix(grid.n, grid.d)

        def count(_):
            nonlocal iterations
            iterations += 1

        p_flat, info = spla.cg(
            matrix, rhs, rtol=options["CG_TOLERANCE"], atol=0.0, maxiter=options["CG_MAX_ITERATIONS"], callback=count
        )
        residual = float(np.linalg.norm(matrix @ p_flat - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if info != 0:
            raise ConvergenceError(
                f"Neumann CG did not converge after {iterations} iterations (relative residual {residual:.3e})",
                residual=residual,
                iterations=iterations,
            )
        logger.debug("Neumann CG converged in %d iterations, relative residual %.2e", iterations, residual)
        # rhs was scaled by h^2, so the solve already returns p in physical units (lap p = div y)
        p_flat = p_flat - p_flat.mean()

    p = p_flat.reshape(grid.shape)
    face_velocity = [flux - g for flux, g in zip(faces, _face_gradient(p, grid.d, h))]

    cell_velocity = []
    for k, flux in enumerate(face_velocity):
        pad = [(0, 0)] * flux.ndim
        pad[k] = (1, 1)
        padded = np.pad(flux, pad)
        lower = np.take(padded, range(0, grid.n), axis=k)
        upper = np.take(padded, range(1, grid.n + 1), axis=k)
        cell_velocity.append(0.5 * (lower + upper))

    return NeumannSolution(
        v=VectorField(grid, np.stack(cell_velocity)),
        p=ScalarField(grid, p),
        face_velocity=face_velocity,
        iterations=iterations,
        residual=residual,
    )


def neumann_poisson_project(y: VectorField) -> Tuple[VectorField, ScalarField]:
    """ Helmholtz decomposition on the box: lap p = div y with grad p . n = y . n on the boundary, v = y - grad p. """
    solution = neumann_poisson_solve(y)
    return solution.v, solution.p


# ----- transport -----

def cfl_number(v: VectorField, dt: float) -> float:
    return v.max_norm() * abs(dt) / v.grid.h


def _interpolate(component: np.ndarray, coords: np.ndarray, grid: Grid) -> np.ndarray:
    if isinstance(grid, TorusGrid):
        return ndimage.map_coordinates(component, coords, order=1, mode="grid-wrap")
    return ndimage.map_coordinates(component, np.clip(coords, 0.0, grid.n - 1), order=1, mode="nearest")


def sample_at(f: Field, points: np.ndarray) -> np.ndarray:
    """ Linear interpolation of f at physical points of shape (d, P); returns (rank, P). Torus points wrap. """
    grid = f.grid
    coords = np.asarray(points, dtype=float) / grid.h
    if isinstance(grid, BoxGrid):
        coords = coords - 0.5
    return np.stack([_interpolate(component, coords, grid) for component in f.values])


def advect(f: Field, v: VectorField, dt: float, lifted: Optional[Sequence[Optional[int]]] = None) -> Field:
    """
    Semi-Lagrangian update f'(x) = f(x - displacement) with a midpoint back-trace and (bi)linear interpolation, so
    max|f'| <= max|f|. Periodic wrap on the torus, clamped departure points on the box.

    lifted[c] = k marks component c as a position x_k + (periodic offset) on the torus: the offset is interpolated
    and the unwrapped departure coordinate added back, so positions never jump across the period.
    """
    grid = f.grid
    if v.grid != grid:
        raise ValueError("advect needs f and v on the same grid")
    if v.rank != grid.d:
        raise ValueError(f"advecting velocity needs {grid.d} components, got {v.rank}")
    cfl = cfl_number(v, dt)
    if cfl > CFL_MAX:
        raise CFLError(f"CFL number {cfl:.3f} exceeds {CFL_MAX}", cfl=cfl)
    if cfl > CFL_WARN:
        logger.warning("CFL number %.3f above %.1f", cfl, CFL_WARN)
    if not np.any(v.values):
        return f.copy()

    index = np.stack(np.meshgrid(*([np.arange(grid.n, dtype=float)] * grid.d), indexing="ij"))
    scale = dt / grid.h
    midpoint = index - 0.5 * scale * v.values
    velocity_mid = np.stack([_interpolate(component, midpoint, grid) for component in v.values])
    departure = index - scale * velocity_mid
    if lifted is None or not isinstance(grid, TorusGrid):
        return type(f)(grid, np.stack([_interpolate(component, departure, grid) for component in f.values]))

    if len(lifted) != f.rank:
        raise ValueError(f"lifted needs one entry per component ({f.rank}), got {len(lifted)}")
    moved = []
    for component, axis in zip(f.values, lifted):
        if axis is None:
            moved.append(_interpolate(component, departure, grid))
        else:
            offset = component - grid.coordinates[axis]
            moved.append(_interpolate(offset, departure, grid) + departure[axis] * grid.h)
    return type(f)(grid, np.stack(moved))
