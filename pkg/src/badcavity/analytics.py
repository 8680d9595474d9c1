"""Closed-form steady-state and spectrum results for the triplet space.

The moment vector is x = [<S+>, <S->, <Sz>, <S+Sz>, <SzS->, <S+^2>, <S-^2>, <Sz^2>]
with dynamics dx/dt = A x - b (no qubit decay, no Stark shift, real chi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

SHOT_NOISE_FLOOR = 1.0 / (2.0 * math.pi)


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MomentSystem:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    v: np.ndarray
    gamma_p: float
    eta_eff: float
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class SpectrumTable:
    delta: np.ndarray
    values: np.ndarray
    kind: str
    stderr: np.ndarray | None = None
    n_records: int = 0

    def __post_init__(self):
        if self.kind not in ("periodogram", "analytic"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.delta.ndim != 1 or self.delta.shape != self.values.shape:
            raise ValueError("frequency grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.delta) <= 0):
            raise ValueError("frequency grid must be strictly increasing")


def build_moment_system(chi: float, Delta_q: float, gamma_p: float, theta: float = 0.0,
                        theta_kappa: float = 0.0, eta_eff: float = 1.0) -> MomentSystem:
    if gamma_p <= 0:
        raise ValueError("gamma_p must be positive")
    c, D, g = float(chi), float(Delta_q), float(gamma_p)
    i = 1j
    A = np.array([
        [i * D, 0, -i * c / 2, g / 2, 0, 0, 0, 0],
        [0, -i * D, i * c / 2, 0, g / 2, 0, 0, 0],
        [-i * c, i * c, -g, 0, 0, 0, 0, g / 2],
        [-4 * g, 0, i * c / 2, -3 * g + i * D, 0, -i * c, 0, -3 * i * c / 4],
        [0, -4 * g, -i * c / 2, 0, -3 * g - i * D, 0, i * c, 3 * i * c / 4],
        [-i * c, 0, 0, -i * c, 0, -g + 2 * i * D, 0, 0],
        [0, i * c, 0, 0, i * c, 0, -g - 2 * i * D, 0],
        [-2 * i * c, 2 * i * c, -2 * g, -2 * i * c, 2 * i * c, 0, 0, -3 * g],
    ], dtype=complex)
    b = np.array([0, 0, 4 * g, -2 * i * c, 2 * i * c, 0, 0, -8 * g], dtype=complex)
    C = np.zeros((8, 8), dtype=complex)
    C[0, 2], C[0, 7] = 0.5, -0.25
    C[1, 6] = 1
    C[2, 4] = 1
    C[3, 7] = 1
    C[4, 6] = -2
    C[5, 0], C[5, 3] = 2, 1
    C[7, 4] = -2
    d = np.array([2, 0, 0, -4, 0, 0, 0, 0], dtype=complex)
    v = np.zeros(8, dtype=complex)
    v[0] = 1
    v[1] = -np.exp(-2j * (theta - theta_kappa))
    return MomentSystem(A=A, b=b, C=C, d=d, v=v, gamma_p=g, eta_eff=float(eta_eff),
                        params=dict(chi=c, Delta_q=D, gamma_p=g, theta=theta,
                                    theta_kappa=theta_kappa, eta_eff=eta_eff))


def single_qubit_system(chi: float, Delta_q_eff: float, gamma_par_eff: float,
                        gamma_perp_eff: float, theta: float = 0.0, theta_kappa: float = 0.0,
                        eta_eff: float = 1.0, gamma_p: float = 1.0) -> MomentSystem:
    """Three-moment system [<s+>, <s->, <sz>] of a single decaying, dephasing qubit.

    The effective rates already contain the cavity-induced contributions:
    gamma_par_eff = gamma_par + gamma_p, gamma_perp_eff = 1/tau + gamma_par_eff/2 and
    Delta_q_eff = Delta_q - gamma_p Delta_cq / (2 kappa).
    """
    c, D = float(chi), float(Delta_q_eff)
    gpar, gperp = float(gamma_par_eff), float(gamma_perp_eff)
    i = 1j
    A = np.array([
        [-(gperp - i * D), 0, -i * c / 2],
        [0, -(gperp + i * D), i * c / 2],
        [-i * c, i * c, -gpar],
    ], dtype=complex)
    b = np.array([0, 0, gpar], dtype=complex)
    C = np.array([[0, 0, 0.5], [0, 0, 0], [0, -1, 0]], dtype=complex)
    d = np.array([0.5, 0, 0], dtype=complex)
    v = np.array([1, -np.exp(-2j * (theta - theta_kappa)), 0], dtype=complex)
    return MomentSystem(A=A, b=b, C=C, d=d, v=v, gamma_p=float(gamma_p), eta_eff=float(eta_eff),
                        params=dict(chi=c, Delta_q_eff=D, gamma_par_eff=gpar,
                                    gamma_perp_eff=gperp, theta=theta,
                                    theta_kappa=theta_kappa, eta_eff=eta_eff))


def _solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError(f"moment matrix is singular (condition number {cond:.3e})")
    return np.linalg.solve(M, rhs)


def steady_state(ms: MomentSystem) -> np.ndarray:
    """x_SS solving A x = b."""
    return _solve(ms.A, ms.b)


def mean_sx(x: np.ndarray) -> float:
    return float((x[0] + x[1]).real)


def mean_sx_closed_form(chi: float, Delta_q: float, gamma_p: float) -> float:
    c2, D2, g2 = chi**2, Delta_q**2, gamma_p**2
    num = -2.0 * chi * Delta_q * (g2 + 4.0 * D2 + 2.0 * c2)
    den = (g2 + 4.0 * D2) * (g2 + D2 + c2) + 0.75 * c2**2
    return num / den


def single_qubit_sx_closed_form(chi: float, Delta_q_eff: float, gamma_par_eff: float,
                                gamma_perp_eff: float) -> float:
    return -chi * Delta_q_eff / (
        Delta_q_eff**2 + gamma_perp_eff**2 * (1.0 + chi**2 / (gamma_perp_eff * gamma_par_eff)))


def regression_source(ms: MomentSystem, x_ss: np.ndarray | None = None) -> np.ndarray:
    """y(t,0) - y(t,inf) = (C - <S->) x_SS + d in steady state."""
    x = steady_state(ms) if x_ss is None else x_ss
    return ms.C @ x - x[1] * x + ms.d


def analytic_spectrum(ms: MomentSystem, delta) -> SpectrumTable:
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    src = regression_source(ms)
    eye = np.eye(ms.dim)
    vals = np.empty(delta.shape)
    for k, w in enumerate(delta):
        r = _solve(ms.A + 1j * w * eye, src) + _solve(ms.A - 1j * w * eye, src)
        z = ms.v @ r
        vals[k] = SHOT_NOISE_FLOOR - ms.gamma_p * ms.eta_eff / (2 * math.pi) * 2.0 * z.real
    return SpectrumTable(delta=delta, values=vals, kind="analytic")


def correlation_vector(ms: MomentSystem, taus) -> np.ndarray:
    """e^{A tau} [(C - <S->) x_SS + d] for each tau >= 0, shape (len(taus), dim)."""
    src = regression_source(ms)
    return np.array([expm(ms.A * t) @ src for t in np.atleast_1d(taus)])


def photocurrent_correlation(ms: MomentSystem, taus) -> np.ndarray:
    """Regular (non-delta) part of R(tau) for tau >= 0."""
    y = correlation_vector(ms, taus)
    return ms.gamma_p * ms.eta_eff * 2.0 * (y @ ms.v).real


@dataclass(frozen=True)
class Peak:
    center: float
    fwhm: float
    height: float


def peak_characterize(table: SpectrumTable, floor: float = SHOT_NOISE_FLOOR,
                      min_height: float = 1e-9) -> Peak:
    x, y = np.asarray(table.delta), np.asarray(table.values)
    k = int(np.argmax(y))
    if y[k] - floor <= min_height:
        raise ValueError("no spectral peak above the floor")
    if 0 < k < len(y) - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        x0, x1, x2 = x[k - 1], x[k], x[k + 1]
        # vertex of the parabola through the three top samples
        denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
        a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
        bq = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
        cq = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / denom
        if a < 0:
            center = -bq / (2 * a)
            top = cq - bq**2 / (4 * a)
        else:
            center, top = x1, y1
    else:
        center, top = x[k], y[k]
    height = top - floor
    half = floor + height / 2.0

    left = k
    while left > 0 and y[left] > half:
        left -= 1
    right = k
    while right < len(y) - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise ValueError("half-maximum crossing lies outside the frequency grid")
    xl = x[left] + (half - y[left]) * (x[left + 1] - x[left]) / (y[left + 1] - y[left])
    xr = x[right - 1] + (half - y[right - 1]) * (x[right] - x[right - 1]) / (y[right] - y[right - 1])
    return Peak(center=float(center), fwhm=float(xr - xl), height=float(height))


def optimal_drive(Delta_q: float, gamma_p: float = 1.0) -> tuple[float, float]:
    """Rabi frequency maximizing |<S_x>_SS| and the maximal value."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda c: -abs(mean_sx_closed_form(c, Delta_q, gamma_p)),
                          bounds=(1e-6, 20.0 * max(Delta_q, gamma_p)), method="bounded",
                          options=dict(xatol=1e-10))
    return float(res.x), float(-res.fun)
