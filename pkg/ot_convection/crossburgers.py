"""
Cross-Burgers dynamics on the periodic interval s in [0, 2 pi):

    dB/dt + dB/ds x B = d2B/ds2                B(t, s) in R^3
    dB/dt + [dB/ds, B] = d2B/ds2               B(t, s) skew d x d, [A, B] = AB - BA

and the exact special family B = (alpha cos s, alpha sin s, beta - 1) with

    alpha' = -beta alpha,    beta' = alpha^2,    equivalently lambda'' + exp(2 lambda) = 0 with lambda = log alpha.

Vector samples are stored (3, n_s), matrix samples (d, d, n_s); s is always the last axis.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ot_convection.dumps import DiagnosticSeries
from ot_convection.errors import InstabilityError, InvariantCheck

logger = logging.getLogger(__name__)

CB_COLUMNS = ("t", "l2", "decay_residual", "err_vs_family")

SCHEMES = ("imex", "rk2")

GROWTH_LIMIT = 10.0
SKEW_TOLERANCE = 1e-12


def s_nodes(n_s: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_s) / n_s


def _check_samples(n_s: int):
    if n_s < 4 or n_s & (n_s - 1):
        raise ValueError(f"n_s must be a power of two >= 4, got {n_s}")


def _wavenumbers(n_s: int) -> Tuple[np.ndarray, np.ndarray]:
    """ (derivative wavenumbers with the Nyquist entry zeroed, squared wavenumbers for the diffusion). """
    k = np.fft.fftfreq(n_s, d=1.0 / n_s)
    derivative = k.copy()
    derivative[n_s // 2] = 0.0
    return derivative, k ** 2


def s_derivative(values: np.ndarray) -> np.ndarray:
    derivative, _ = _wavenumbers(values.shape[-1])
    return np.real(np.fft.ifft(1j * derivative * np.fft.fft(values, axis=-1), axis=-1))


def hat(b: np.ndarray) -> np.ndarray:
    """ R^3 -> so(3): hat(b) c = b x c. b has shape (3, ...). """
    zero = np.zeros_like(b[0])
    return np.array([
        [zero, -b[2], b[1]],
        [b[2], zero, -b[0]],
        [-b[1], b[0], zero],
    ])


def vee(B: np.ndarray) -> np.ndarray:
    return np.array([B[2, 1], B[0, 2], B[1, 0]])


def special_family(alpha: float, beta: float, n_s: int) -> np.ndarray:
    s = s_nodes(n_s)
    return np.array([alpha * np.cos(s), alpha * np.sin(s), np.full(n_s, beta - 1.0)])


# ----- PDE -----

@dataclass
class CrossBurgersState:
    B: np.ndarray
    t: float = 0.0
    cross: bool = True
    viscous: bool = True

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim != 2 or self.B.shape[0] != 3:
            raise ValueError(f"Cross-Burgers samples have shape (3, n_s), got {self.B.shape}")
        _check_samples(self.B.shape[1])
        if not np.all(np.isfinite(self.B)):
            raise ValueError("Cross-Burgers samples must be finite")

    @property
    def n_s(self) -> int:
        return self.B.shape[1]


def _cross_term(B: np.ndarray) -> np.ndarray:
    return -np.cross(s_derivative(B), B, axis=0)


def _bracket_term(B: np.ndarray) -> np.ndarray:
    derivative = s_derivative(B)
    product = np.einsum("ijs,jks->iks", derivative, B)
    return -(product - np.einsum("ijs,jks->iks", B, derivative))


def _integrate(values: np.ndarray, nonlinear: Callable[[np.ndarray], np.ndarray], dt: float, scheme: str,
               viscous: bool) -> np.ndarray:
    """
    imex  integrating-factor RK4: exact heat semigroup, classical RK4 on the transformed nonlinear part
    rk2   explicit Heun on the full right-hand side (stable for dt n_s^2 / 4 below about 2)
    """
    _, k_sq = _wavenumbers(values.shape[-1])
    rate = k_sq if viscous else np.zeros_like(k_sq)

    def to_hat(u):
        return np.fft.fft(u, axis=-1)

    def from_hat(u_hat):
        return np.real(np.fft.ifft(u_hat, axis=-1))

    if scheme == "imex":
        half = np.exp(-rate * dt / 2.0)
        full = half * half
        u_hat = to_hat(values)
        k1 = to_hat(nonlinear(values))
        k2 = to_hat(nonlinear(from_hat(half * (u_hat + 0.5 * dt * k1))))
        k3 = to_hat(nonlinear(from_hat(half * u_hat + 0.5 * dt * k2)))
        k4 = to_hat(nonlinear(from_hat(full * u_hat + dt * half * k3)))
        u_hat = full * u_hat + dt / 6.0 * (full * k1 + 2.0 * half * (k2 + k3) + k4)
        return from_hat(u_hat)
    if scheme == "rk2":
        def rhs(u):
            return nonlinear(u) + from_hat(-rate * to_hat(u))

        predictor = values + dt * rhs(values)
        return values + 0.5 * dt * (rhs(values) + rhs(predictor))
    raise ValueError(f"Unknown cross-Burgers scheme {scheme!r}; expected one of {SCHEMES}")


def _guard_growth(before: np.ndarray, after: np.ndarray):
    old = float(np.sqrt(np.mean(before ** 2)))
    new = float(np.sqrt(np.mean(after ** 2)))
    if not np.all(np.isfinite(after)) or (old > 0.0 and new > GROWTH_LIMIT * old):
        growth = new / old if old > 0.0 and np.isfinite(new) else float("inf")
        raise InstabilityError(f"Norm grew by {growth:.3g}x in one step; reduce dt or use the imex scheme",
                               growth=growth)


def cb_pde_step(state: CrossBurgersState, dt: float, scheme: str = "imex") -> CrossBurgersState:
    if state.cross:
        nonlinear = _cross_term
    else:
        def nonlinear(B):
            return np.zeros_like(B)
    B = _integrate(state.B, nonlinear, dt, scheme, state.viscous)
    _guard_growth(state.B, B)
    return replace(state, B=B, t=state.t + dt)


def check_skew(B: np.ndarray, tol: float = SKEW_TOLERANCE):
    if B.ndim != 3 or B.shape[0] != B.shape[1]:
        raise ValueError(f"Bracket samples have shape (d, d, n_s), got {B.shape}")
    asymmetry = float(np.max(np.abs(B + np.transpose(B, (1, 0, 2)))))
    if asymmetry > tol:
        raise ValueError(f"Samples are not skew-symmetric (|B + B^T| = {asymmetry:.3e})")


def bracket_step(B: np.ndarray, dt: float, scheme: str = "imex", viscous: bool = True) -> np.ndarray:
    """ One step of the skew-matrix bracket equation, any d. The result is projected onto the skew matrices. """
    B = np.asarray(B, dtype=float)
    check_skew(B)
    _check_samples(B.shape[-1])
    stepped = _integrate(B, _bracket_term, dt, scheme, viscous)
    _guard_growth(B, stepped)
    return 0.5 * (stepped - np.transpose(stepped, (1, 0, 2)))


def l2_energy(B: np.ndarray) -> float:
    """ 1/2 int_0^2pi |B|^2 ds. """
    return float(np.pi * np.mean(np.sum(B ** 2, axis=tuple(range(B.ndim - 1)))))


def s_dissipation(B: np.ndarray) -> float:
    """ int_0^2pi |dB/ds|^2 ds. """
    derivative = s_derivative(B)
    return float(2.0 * np.pi * np.mean(np.sum(derivative ** 2, axis=tuple(range(B.ndim - 1)))))


def decay_residual(before: np.ndarray, after: np.ndarray, dt: float) -> float:
    """ (E_n+1 - E_n)/dt + trapezoidal int |dB/ds|^2: zero for exact solutions of the viscous equation. """
    return (l2_energy(after) - l2_energy(before)) / dt + 0.5 * (s_dissipation(before) + s_dissipation(after))


# ----- special family -----

@dataclass
class SpecialSolutionState:
    alpha: float
    beta: float
    t: float = 0.0

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")

    @property
    def invariant(self) -> float:
        return self.alpha ** 2 + self.beta ** 2

    def profile(self, n_s: int) -> np.ndarray:
        return special_family(self.alpha, self.beta, n_s)


def _family_rhs(alpha: float, beta: float) -> Tuple[float, float]:
    return -beta * alpha, alpha * alpha


def cb_ode_step(sol: SpecialSolutionState, dt: float) -> SpecialSolutionState:
    """ Classical RK4 on (alpha, beta); alpha is clamped at zero against round-off. """
    a, b = sol.alpha, sol.beta
    k1 = _family_rhs(a, b)
    k2 = _family_rhs(a + 0.5 * dt * k1[0], b + 0.5 * dt * k1[1])
    k3 = _family_rhs(a + 0.5 * dt * k2[0], b + 0.5 * dt * k2[1])
    k4 = _family_rhs(a + dt * k3[0], b + dt * k3[1])
    alpha = a + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    beta = b + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    return SpecialSolutionState(alpha=max(alpha, 0.0), beta=beta, t=sol.t + dt)


def lambda_form_step(lam: float, lam_dot: float, dt: float) -> Tuple[float, float]:
    """ Kick-drift-kick leapfrog for lambda'' = -exp(2 lambda). """
    lam_dot = lam_dot - 0.5 * dt * math.exp(2.0 * lam)
    lam = lam + dt * lam_dot
    lam_dot = lam_dot - 0.5 * dt * math.exp(2.0 * lam)
    return lam, lam_dot


def lambda_energy(lam: float, lam_dot: float) -> float:
    """ H = 1/2 lambda'^2 + 1/2 exp(2 lambda). """
    return 0.5 * lam_dot ** 2 + 0.5 * math.exp(2.0 * lam)


def lambda_shadow_energy(lam: float, lam_dot: float, dt: float) -> float:
    """
    Modified energy of the leapfrog map, H + dt^2 (V'' p^2 / 12 - V'^2 / 24) with V = exp(2 lambda) / 2. It is
    conserved to O(dt^4), so its drift measures secular error without the O(dt^2) oscillation of H.
    """
    force = math.exp(2.0 * lam)
    return lambda_energy(lam, lam_dot) + dt * dt * (2.0 * force * lam_dot ** 2 / 12.0 - force ** 2 / 24.0)


@dataclass
class LambdaDrift:
    raw: float
    shadow: float
    steps: int


def lambda_energy_drift(lam: float, lam_dot: float, T: float, dt: float) -> LambdaDrift:
    """ Largest deviation of H and of the shadow energy from their initial values over [0, T]. """
    steps = int(round(T / dt))
    h0 = lambda_energy(lam, lam_dot)
    shadow0 = lambda_shadow_energy(lam, lam_dot, dt)
    raw = shadow = 0.0
    for _ in range(steps):
        lam, lam_dot = lambda_form_step(lam, lam_dot, dt)
        raw = max(raw, abs(lambda_energy(lam, lam_dot) - h0))
        shadow = max(shadow, abs(lambda_shadow_energy(lam, lam_dot, dt) - shadow0))
    return LambdaDrift(raw=raw, shadow=shadow, steps=steps)


# ----- runs -----

@dataclass
class CBRun:
    series: DiagnosticSeries
    final: CrossBurgersState
    family: Optional[SpecialSolutionState] = None
    checks: Dict[str, InvariantCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())


def relative_l2(B: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.sqrt(np.mean(reference ** 2)))
    error = float(np.sqrt(np.mean((B - reference) ** 2)))
    return error / scale if scale > 0.0 else error


def cb_run(B0: np.ndarray, T: float, dt: float, scheme: str = "imex", cross: bool = True,
           family: Optional[SpecialSolutionState] = None, stride: int = 0,
           on_snapshot: Optional[Callable[[int, CrossBurgersState], None]] = None,
           decay_tolerance: Optional[float] = None, family_tolerance: Optional[float] = None) -> CBRun:
    """
    Integrates the vector equation to T. When `family` is given the special family is advanced in lockstep with
    cb_ode_step and err_vs_family holds the relative L2 error; otherwise the column is nan.

    The decay identity only holds with the cross term on (it is orthogonal to B) or off; it is checked when
    decay_tolerance is given. family_tolerance bounds the error against the family.
    """
    if dt <= 0.0 or T < 0.0:
        raise ValueError("cb_run needs dt > 0 and T >= 0")
    steps = int(round(T / dt))
    state = CrossBurgersState(B=B0, cross=cross)
    series = DiagnosticSeries(CB_COLUMNS)
    checks = {}
    if decay_tolerance is not None:
        checks["decay_identity"] = InvariantCheck("decay_identity", decay_tolerance)
    if family is not None and family_tolerance is not None:
        checks["family_error"] = InvariantCheck("family_error", family_tolerance)

    def family_error(current: CrossBurgersState) -> float:
        if family is None:
            return float("nan")
        return relative_l2(current.B, family.profile(current.n_s))

    series.append(t=0.0, l2=math.sqrt(2.0 * l2_energy(state.B)), decay_residual=0.0, err_vs_family=family_error(state))
    if stride and on_snapshot:
        on_snapshot(0, state)
    logger.info("Cross-Burgers run: n_s=%d, %s scheme, %d steps of %.3g", state.n_s, scheme, steps, dt)
    for step in range(1, steps + 1):
        new_state = replace(cb_pde_step(state, dt, scheme), t=step * dt)
        if family is not None:
            family = cb_ode_step(family, dt)
        residual = decay_residual(state.B, new_state.B, dt)
        error = family_error(new_state)
        series.append(t=new_state.t, l2=math.sqrt(2.0 * l2_energy(new_state.B)), decay_residual=residual,
                      err_vs_family=error)
        if "decay_identity" in checks:
            checks["decay_identity"].record(abs(residual), step)
        if "family_error" in checks:
            checks["family_error"].record(error, step)
        state = new_state
        if stride and on_snapshot and (step % stride == 0 or step == steps):
            on_snapshot(step, state)
    return CBRun(series=series, final=state, family=family, checks=checks)
