"""Exact singlet predictions on a small dense complex-matrix engine.

Angle convention: spin-1/2.  The measurement direction for angle ``theta``
is ``n(theta) = (sin theta, 0, cos theta)`` in the x-z plane, and the singlet
correlation is ``-cos(theta_x - theta_y)``.  Photon-polarization experiments
double the angles (``-cos 2 theta``); that convention is *not* used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError, InvariantViolation

MAX_DIM = 8
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)

OUTCOMES = (1, -1)


def as_matrix(m) -> np.ndarray:
    """Validate and return a complex matrix of dimension at most 8."""
    arr = np.asarray(m, dtype=complex)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-d matrix, got shape {arr.shape}")
    if arr.shape[0] > MAX_DIM or arr.shape[1] > MAX_DIM or 0 in arr.shape:
        raise InputError(f"matrix dimensions must be in 1..{MAX_DIM}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("matrix has non-finite entries")
    return arr


def _finite_angle(theta: float, name: str = "theta") -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        raise InputError(f"{name} must be finite, got {theta}")
    return theta


@dataclass(frozen=True)
class QuantumState:
    rho: np.ndarray

    def __post_init__(self):
        rho = as_matrix(self.rho)
        if rho.shape not in ((2, 2), (4, 4)):
            raise InputError(f"density matrix must be 2x2 or 4x4, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise InputError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > TRACE_TOL:
            raise InputError(f"density matrix trace {np.trace(rho).real} != 1")
        if np.min(np.linalg.eigvalsh(rho)) < -PSD_TOL:
            raise InputError("density matrix is not positive semidefinite")
        rho = rho.copy()
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_vector(cls, psi) -> "QuantumState":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        norm = np.vdot(psi, psi).real
        if not math.isfinite(norm) or norm <= 0:
            raise InputError("state vector must be non-zero and finite")
        psi = psi / math.sqrt(norm)
        return cls(np.outer(psi, psi.conj()))


@dataclass(frozen=True)
class SpinObservable:
    angle: float
    matrix: np.ndarray = field(repr=False)

    def eigenvector(self, outcome: int) -> np.ndarray:
        return _eigenvector(self.angle, outcome)


def spin_observable(theta: float) -> SpinObservable:
    """``sigma . n(theta)``; eigenvalues are exactly +1 and -1."""
    theta = _finite_angle(theta)
    c, s = math.cos(theta), math.sin(theta)
    matrix = s * SIGMA_X + c * SIGMA_Z
    matrix.flags.writeable = False
    return SpinObservable(theta, matrix)


def _eigenvector(theta: float, outcome: int) -> np.ndarray:
    # closed form eigenvectors of [[cos, sin], [sin, -cos]]
    h = theta / 2
    if outcome == 1:
        return np.array([math.cos(h), math.sin(h)], dtype=complex)
    if outcome == -1:
        return np.array([-math.sin(h), math.cos(h)], dtype=complex)
    raise InputError(f"outcome must be +1 or -1, got {outcome}")


def singlet_vector() -> np.ndarray:
    """``(|+-> - |-+>)/sqrt 2`` in the theta = 0 eigenbasis."""
    return np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2)


def singlet_state() -> QuantumState:
    psi = singlet_vector()
    return QuantumState(np.outer(psi, psi.conj()))


def partial_trace(rho, keep: int) -> np.ndarray:
    """Reduced 2x2 density matrix of subsystem ``keep`` (0 or 1) of a 4x4 state."""
    r = as_matrix(rho).reshape(2, 2, 2, 2)
    if keep == 0:
        return np.einsum("ijkj->ik", r)
    if keep == 1:
        return np.einsum("jijk->ik", r)
    raise InputError("keep must be 0 or 1")


def _require_pair_state(state: QuantumState) -> None:
    if not isinstance(state, QuantumState):
        raise InputError("state must be a QuantumState")
    if state.dim != 4:
        raise InputError(f"two-particle state required, got dimension {state.dim}")


def joint_probabilities(state: QuantumState, theta_x: float, theta_y: float) -> dict[tuple[int, int], float]:
    """``p(alpha, beta) = <alpha beta| rho |alpha beta>`` for alpha, beta in {+1, -1}."""
    _require_pair_state(state)
    theta_x = _finite_angle(theta_x, "theta_x")
    theta_y = _finite_angle(theta_y, "theta_y")
    table = {}
    for alpha in OUTCOMES:
        for beta in OUTCOMES:
            v = np.kron(_eigenvector(theta_x, alpha), _eigenvector(theta_y, beta))
            p = np.vdot(v, state.rho @ v).real
            if p < -PSD_TOL:
                raise InvariantViolation(f"negative probability {p}")
            table[(alpha, beta)] = max(p, 0.0)
    total = sum(table.values())
    if abs(total - 1) > 1e-12:
        raise InvariantViolation(f"probabilities sum to {total}")
    return table


def correlation(state: QuantumState, theta_x: float, theta_y: float) -> float:
    """``E(A_x B_y) = Tr(rho A_x (x) B_y)``."""
    _require_pair_state(state)
    op = np.kron(spin_observable(theta_x).matrix, spin_observable(theta_y).matrix)
    return float(np.trace(state.rho @ op).real)


# CHSH sign pattern over the pairs (a,b), (a,b'), (a',b), (a',b').
CHSH_SIGNS = (1, -1, 1, 1)


def chsh_combination(e_ab: float, e_abp: float, e_apb: float, e_apbp: float) -> float:
    s = CHSH_SIGNS
    return s[0] * e_ab + s[1] * e_abp + s[2] * e_apb + s[3] * e_apbp


def chsh_quantum(a: float, a_prime: float, b: float, b_prime: float,
                 state: QuantumState | None = None) -> float:
    state = singlet_state() if state is None else state
    return chsh_combination(
        correlation(state, a, b),
        correlation(state, a, b_prime),
        correlation(state, a_prime, b),
        correlation(state, a_prime, b_prime),
    )


TSIRELSON = 2 * math.sqrt(2)


# ---------------------------------------------------------------- smearing

def adaptive_simpson(f: Callable[[float], float], lo: float, hi: float,
                     tol: float = 1e-12, min_depth: int = 2,
                     max_depth: int = 50) -> tuple[float, float]:
    """Adaptive Simpson quadrature; returns (value, error estimate)."""
    if hi == lo:
        return 0.0, 0.0

    def recurse(a, fa, m, fm, b, fb, whole, tol, depth):
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        delta = left + right - whole
        if depth >= max_depth or (depth >= min_depth and abs(delta) <= 15 * tol):
            return left + right + delta / 15, abs(delta) / 15
        lv, le = recurse(a, fa, lm, flm, m, fm, left, tol / 2, depth + 1)
        rv, re_ = recurse(m, fm, rm, frm, b, fb, right, tol / 2, depth + 1)
        return lv + rv, le + re_

    flo, fhi = f(lo), f(hi)
    mid = 0.5 * (lo + hi)
    fmid = f(mid)
    whole = (hi - lo) / 6 * (flo + 4 * fmid + fhi)
    return recurse(lo, flo, mid, fmid, hi, fhi, whole, tol, 0)


@dataclass(frozen=True)
class AngleSmearing:
    """Spread of an analyser direction around ``center``.

    ``density`` is a weight function of the absolute angle on
    ``[center - half_width, center + half_width]``; ``None`` means uniform.
    A zero half-width is a sharp direction.
    """

    center: float
    half_width: float = 0.0
    density: Callable[[float], float] | None = None

    def __post_init__(self):
        _finite_angle(self.center, "center")
        if not (math.isfinite(self.half_width) and self.half_width >= 0):
            raise InputError(f"half_width must be finite and >= 0, got {self.half_width}")
        if self.half_width > 0:
            mass, _ = adaptive_simpson(self.weight, self.lo, self.hi, tol=1e-12)
            if abs(mass - 1) > 1e-9:
                raise InputError(f"smearing density integrates to {mass}, not 1")

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    def weight(self, theta: float) -> float:
        if self.density is None:
            return 1.0 / (2 * self.half_width)
        return float(self.density(theta))

    def moment(self, fn: Callable[[float], float], tol: float) -> tuple[float, float]:
        """Average of ``fn`` under the smearing, with an error estimate."""
        if self.half_width == 0:
            return fn(self.center), 0.0
        return adaptive_simpson(lambda t: fn(t) * self.weight(t), self.lo, self.hi, tol=tol)


def smeared_correlation(sx: AngleSmearing, sy: AngleSmearing,
                        tol: float = 1e-9) -> tuple[float, float]:
    """Singlet correlation averaged over two smeared directions.

    The integrand ``cos(t1 - t2)`` separates into ``cos t1 cos t2 + sin t1 sin t2``
    and the measure is a product, so the double integral is assembled from four
    one-dimensional adaptive integrals.  Returns ``(value, error_bound)``.
    """
    part = tol / 8
    cx, ecx = sx.moment(math.cos, part)
    sx_, esx = sx.moment(math.sin, part)
    cy, ecy = sy.moment(math.cos, part)
    sy_, esy = sy.moment(math.sin, part)
    value = -(cx * cy + sx_ * sy_)
    # |cos moment|, |sin moment| <= 1
    err = ecx + ecy + esx + esy + ecx * ecy + esx * esy
    return value, err
