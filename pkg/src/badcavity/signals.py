"""Acceptance signals computed from homodyne photocurrent records.

All signals are cumulative in time, so the ``*_series`` helpers return their
values at several integration times from one pass over stacked currents of
shape (n_records, n_steps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .analytics import SpectrumTable
from .sme import TrajectoryRecord

PHASE_TOL = 1e-3
WEIGHTED_WINDOW_SHIFT = 0.5


class CriterionMismatch(ValueError):
    """An acceptance rule was applied to a record it cannot judge."""


@dataclass(frozen=True)
class LockinConfig:
    Omega_l: float
    tau_l: float

    def __post_init__(self):
        if not self.tau_l > 0:
            raise ValueError(f"tau_l must be positive, got {self.tau_l}")


@dataclass(frozen=True)
class SignalResult:
    zeta_meanI: float | None = None
    zeta_meanI_weighted: float | None = None
    zeta_lockin: float | None = None

    def __post_init__(self):
        if self.zeta_lockin is not None and self.zeta_lockin < 0:
            raise ValueError("zeta_lockin must be non-negative")


def _end_steps(n_steps: int, dt: float, T) -> np.ndarray:
    if T is None:
        return np.array([n_steps])
    k = np.rint(np.atleast_1d(np.asarray(T, dtype=float)) / dt).astype(np.int64)
    if np.any(k < 1) or np.any(k > n_steps):
        raise ValueError(f"integration times {T} fall outside the record (0, {n_steps * dt}]")
    return k


def dc_series(currents: np.ndarray, dt: float, T=None) -> np.ndarray:
    """(1/sqrt(T)) * integral_0^T I dt for each row and each T."""
    I = np.atleast_2d(currents)
    k = _end_steps(I.shape[1], dt, T)
    cum = np.cumsum(I, axis=1) * dt
    return cum[:, k - 1] / np.sqrt(k * dt)


def transient_weight(n_steps: int, dt: float, gamma_p: float = 1.0) -> np.ndarray:
    t_mid = (np.arange(n_steps) + 0.5) * dt
    return 1.0 - np.exp(-gamma_p * t_mid)


def weighted_dc_series(currents: np.ndarray, dt: float, gamma_p: float = 1.0,
                       T=None) -> np.ndarray:
    """DC signal with the current weighted by 1 - exp(-gamma_p t)."""
    I = np.atleast_2d(currents)
    return dc_series(I * transient_weight(I.shape[1], dt, gamma_p), dt, T)


def lockin_output(currents: np.ndarray, dt: float, cfg: LockinConfig) -> np.ndarray:
    """Filter state L_k = L_{k-1} exp(-(i Omega_l + 1/tau_l) dt) + I_k dt."""
    a = np.exp(-(1j * cfg.Omega_l + 1.0 / cfg.tau_l) * dt)
    return lfilter([dt], [1.0, -a], np.atleast_2d(currents).astype(complex), axis=1)


def lockin_series(currents: np.ndarray, dt: float, cfg: LockinConfig, T=None) -> np.ndarray:
    """(2 / (T tau_l)) * sum |L_k|^2 dt up to each T."""
    L = lockin_output(currents, dt, cfg)
    k = _end_steps(L.shape[1], dt, T)
    cum = np.cumsum(np.abs(L) ** 2, axis=1) * dt
    return 2.0 * cum[:, k - 1] / (k * dt * cfg.tau_l)


def _signal(record: TrajectoryRecord) -> np.ndarray:
    return record.current - record.background


def zeta_mean_current(record: TrajectoryRecord, T: float | None = None) -> float:
    return float(dc_series(_signal(record), record.dt, T)[0, 0])


def zeta_mean_current_weighted(record: TrajectoryRecord, gamma_p: float = 1.0,
                               T: float | None = None) -> float:
    return float(weighted_dc_series(_signal(record), record.dt, gamma_p, T)[0, 0])


def zeta_lockin(record: TrajectoryRecord, cfg: LockinConfig, T: float | None = None) -> float:
    return float(lockin_series(_signal(record), record.dt, cfg, T)[0, 0])


def periodogram_values(currents: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid 2 pi k / (n dt), k = 0..n//2, and (dt / 2 pi n)|sum_j I_j e^{-i Delta t_j}|^2."""
    I = np.atleast_2d(currents)
    n = I.shape[1]
    spec = np.abs(np.fft.rfft(I, axis=1)) ** 2 * dt / (2.0 * math.pi * n)
    grid = 2.0 * math.pi * np.arange(spec.shape[1]) / (n * dt)
    return grid, spec


def periodogram(record: TrajectoryRecord) -> SpectrumTable:
    grid, spec = periodogram_values(_signal(record), record.dt)
    return SpectrumTable(delta=grid, values=spec[0], kind="periodogram", n_records=1)


def average_periodogram(records) -> SpectrumTable:
    records = list(records)
    if not records:
        raise ValueError("no records to average")
    dt = records[0].dt
    grid, spec = periodogram_values(np.stack([_signal(r) for r in records]), dt)
    return spectrum_from_stack(grid, spec)


def spectrum_from_stack(grid: np.ndarray, spec: np.ndarray) -> SpectrumTable:
    n = spec.shape[0]
    err = spec.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(grid.shape, np.nan)
    return SpectrumTable(delta=grid, values=spec.mean(axis=0), kind="periodogram",
                         stderr=err, n_records=n)


@dataclass(frozen=True)
class Optimal:
    f_min: float


@dataclass(frozen=True)
class DCWindow:
    threshold: float
    center: float = 0.0
    weighted: bool = False
    gamma_p: float = 1.0


@dataclass(frozen=True)
class Lockin:
    threshold: float
    config: LockinConfig


def singlet_overlap(rho: np.ndarray) -> float:
    from .spin import SINGLET
    return float((SINGLET.conj() @ rho @ SINGLET).real)


def accept(obj, criterion) -> bool:
    """Apply one acceptance rule to a trajectory record or a density matrix."""
    if isinstance(criterion, Optimal):
        if isinstance(obj, TrajectoryRecord):
            overlap = obj.final_overlap
        else:
            rho = np.asarray(obj)
            if rho.shape != (4, 4):
                raise CriterionMismatch("optimal criterion needs a record or a 4x4 state")
            overlap = singlet_overlap(rho)
        return overlap >= criterion.f_min
    if not isinstance(obj, TrajectoryRecord):
        raise CriterionMismatch(f"{type(criterion).__name__} needs a photocurrent record")
    if isinstance(criterion, DCWindow):
        if abs(math.cos(obj.theta)) > PHASE_TOL:
            raise CriterionMismatch(
                f"DC window expects the background-free phase theta = -pi/2, got {obj.theta:g}")
        z = (zeta_mean_current_weighted(obj, criterion.gamma_p) if criterion.weighted
             else zeta_mean_current(obj))
        return abs(z - criterion.center) <= criterion.threshold
    if isinstance(criterion, Lockin):
        if abs(math.sin(obj.theta)) > PHASE_TOL:
            raise CriterionMismatch(
                f"lock-in analysis expects theta = 0, got {obj.theta:g}")
        return zeta_lockin(obj, criterion.config) <= criterion.threshold
    raise TypeError(f"unknown acceptance criterion {criterion!r}")


def analyze(record: TrajectoryRecord, *, gamma_p: float = 1.0,
            lockin: LockinConfig | None = None, T: float | None = None) -> SignalResult:
    return SignalResult(
        zeta_meanI=zeta_mean_current(record, T),
        zeta_meanI_weighted=zeta_mean_current_weighted(record, gamma_p, T),
        zeta_lockin=None if lockin is None else zeta_lockin(record, lockin, T),
    )
