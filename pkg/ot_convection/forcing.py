"""
Right-hand sides F(x, y) (momentum) and G(x, y) (transport source) of the GNSB family.

For the spring models y = (y_tilde, y_hat): y_tilde are the carrier (anchor) positions and y_hat the parcel labels.
Springs are Hookean, k(xi) = kappa xi, with the elongation xi radially clipped to |xi| <= clip_radius.

    hookean     F = kappa (y - x)                                 G = 0                            m = d
    boussinesq  F = y                                             G = 0                            m = d
    model1      F = -lambda(y_hat) kappa (x - y_tilde)            G = (W(y_hat), 0)                m = 2d
    model2      F = -lambda(y_hat) kappa (x - y_tilde)            G = (-mu(y_hat) kappa (y_tilde - x), 0)
    model3      F = -lambda(y_hat) kappa (x - y_tilde)            G = (J mu(y_hat) kappa (y_tilde - x), 0), d = 2
    custom      F = A_F y + b_F                                   G = A_G y + b_G

J(v) = (-v2, v1).
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ot_convection.presets import carrier_velocity, density_profile

FORCING_KINDS = ("hookean", "boussinesq", "model1", "model2", "model3", "custom")
SPRING_MODELS = ("model1", "model2", "model3")


def rotate_quarter(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[1], v[0]])


def clip_elongation(xi: np.ndarray, radius: float) -> np.ndarray:
    length = np.sqrt(np.sum(xi ** 2, axis=0))
    scale = np.minimum(1.0, radius / np.maximum(length, 1e-300))
    return xi * scale


@dataclass
class ForcingSpec:
    kind: str
    d: int
    kappa: float = 1.0
    density: str = "uniform"
    density_delta: float = 0.5
    friction: str = "uniform"
    friction_delta: float = 0.5
    carrier: str = "zero"
    carrier_speed: float = 0.1
    clip_radius: Optional[float] = None
    f_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    f_offset: Optional[np.ndarray] = field(default=None, repr=False)
    g_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    g_offset: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in FORCING_KINDS:
            raise ValueError(f"Unknown forcing kind {self.kind!r}; expected one of {FORCING_KINDS}")
        if self.kappa <= 0.0:
            raise ValueError("Spring stiffness kappa must be positive")
        if self.kind == "model3" and self.d != 2:
            raise ValueError("model3 rotates carriers with J and needs d=2")
        if self.clip_radius is not None and self.clip_radius <= 0.0:
            raise ValueError("clip_radius must be positive")
        if self.kind == "custom":
            self._check_custom()
        # build once so that bad profile names fail at construction
        self.lam = density_profile(self.density, self.density_delta)
        self.mu = density_profile(self.friction, self.friction_delta)
        self.carrier_law = carrier_velocity(self.carrier, self.carrier_speed)

    def _check_custom(self):
        if self.g_matrix is None:
            raise ValueError("custom forcing needs g_matrix (m x m)")
        self.g_matrix = np.atleast_2d(np.asarray(self.g_matrix, dtype=float))
        m = self.g_matrix.shape[0]
        self.f_matrix = np.zeros((self.d, m)) if self.f_matrix is None else np.asarray(self.f_matrix, dtype=float)
        self.f_offset = np.zeros(self.d) if self.f_offset is None else np.asarray(self.f_offset, dtype=float)
        self.g_offset = np.zeros(m) if self.g_offset is None else np.asarray(self.g_offset, dtype=float)
        if self.g_matrix.shape != (m, m) or self.f_matrix.shape != (self.d, m):
            raise ValueError(f"custom forcing needs f_matrix ({self.d} x m) and g_matrix (m x m)")
        if self.f_offset.shape != (self.d,) or self.g_offset.shape != (m,):
            raise ValueError("custom forcing offsets must match the F and G dimensions")

    @property
    def m(self) -> int:
        if self.kind == "custom":
            return self.g_matrix.shape[0]
        return 2 * self.d if self.kind in SPRING_MODELS else self.d

    @property
    def radius(self) -> float:
        """ Clipping radius, 10 domain diameters unless set. """
        return self.clip_radius if self.clip_radius is not None else 10.0 * float(np.sqrt(self.d))

    @property
    def lifted_axes(self) -> Tuple[Optional[int], ...]:
        """ Components that are positions in D (x_k + periodic offset on the torus), by axis. """
        if self.kind == "hookean":
            return tuple(range(self.d))
        if self.kind in SPRING_MODELS:
            return tuple(range(self.d)) * 2
        return (None,) * self.m

    def lipschitz_bound(self) -> float:
        """ kappa (1 + max(lambda, mu)) for the spring models; kappa for hookean. """
        peaks = [1.0 + (self.density_delta if self.density == "cosine" else 0.0),
                 1.0 + (self.friction_delta if self.friction == "cosine" else 0.0)]
        return self.kappa * (1.0 + max(peaks))


def evaluate_forcing(spec: ForcingSpec, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    x has shape (d, ...) and y shape (m, ...); returns F with shape (d, ...) and G with shape (m, ...).
    """
    d = spec.d
    if x.shape[0] != d or y.shape[0] != spec.m:
        raise ValueError(f"{spec.kind} forcing needs x with {d} and y with {spec.m} components")

    if spec.kind == "boussinesq":
        return y.copy(), np.zeros_like(y)
    if spec.kind == "hookean":
        return spec.kappa * clip_elongation(y - x, spec.radius), np.zeros_like(y)
    if spec.kind == "custom":
        F = np.tensordot(spec.f_matrix, y, axes=1) + spec.f_offset.reshape((d,) + (1,) * (y.ndim - 1))
        G = np.tensordot(spec.g_matrix, y, axes=1) + spec.g_offset.reshape((spec.m,) + (1,) * (y.ndim - 1))
        return F, G

    anchors, labels = y[:d], y[d:]
    elongation = clip_elongation(x - anchors, spec.radius)
    F = -spec.lam(labels) * spec.kappa * elongation
    if spec.kind == "model1":
        carrier = spec.carrier_law(labels)
    elif spec.kind == "model2":
        carrier = spec.mu(labels) * spec.kappa * elongation
    else:
        carrier = rotate_quarter(-spec.mu(labels) * spec.kappa * elongation)
    return F, np.concatenate([carrier, np.zeros_like(labels)])
