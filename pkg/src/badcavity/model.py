"""Effective qubit-only model obtained after eliminating the cavity field.

The full Hamiltonian (cavity mode a, drive beta, rotating frame at the drive)

    H = Delta_c a^dag a + i sqrt(2 kappa1) (beta a^dag - beta^* a)
        + Delta_q/2 S_z + g (S_+ a + S_- a^dag)

is never time-evolved here. Writing a = alpha_c + a' and eliminating a' in the
bad-cavity regime kappa >> g, chi, gamma_par, 1/tau leaves the effective
Hamiltonian, collapse operators and homodyne measurement operator built below.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .spin import CATALOG

ADIABATIC_RATIO = 20.0


class AdiabaticityWarning(UserWarning):
    """kappa is not large enough for the elimination of the cavity field."""


@dataclass(frozen=True)
class SystemParams:
    kappa1: float
    kappa2: float
    Delta_c: float = 0.0
    Delta_q: float = 0.0
    g: float = 50.0
    delta_g: float = 0.0
    delta_omega_q: float = 0.0
    beta: float = 0.0
    gamma_par: float = 0.0
    tau_phase: float = math.inf
    eta: float = 1.0
    theta: float = -math.pi / 2

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "g", "gamma_par"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.tau_phase > 0:
            raise ValueError(f"tau_phase must be positive or inf, got {self.tau_phase}")
        if self.kappa <= 0:
            raise ValueError("kappa1 + kappa2 must be positive")

    @property
    def kappa(self) -> float:
        return self.kappa1 + self.kappa2

    @classmethod
    def from_rates(
        cls,
        chi: float,
        Delta_q: float,
        *,
        gamma_p: float = 1.0,
        kappa: float = 5000.0,
        kappa1_fraction: float = 1e-6,
        Delta_c: float = 0.0,
        delta_chi: float = 0.0,
        **kw,
    ) -> "SystemParams":
        """Parameters giving exactly the requested gamma_p and real chi.

        g is solved from gamma_p = 2 g^2 kappa / (kappa^2 + Delta_cq^2) and the
        drive amplitude from chi = 2 g alpha_c; Delta_c = 0 keeps beta real.
        """
        kappa1 = kappa1_fraction * kappa
        kappa2 = kappa - kappa1
        d_cq = Delta_c - Delta_q
        g = math.sqrt(gamma_p * (kappa**2 + d_cq**2) / (2.0 * kappa))
        alpha = chi / (2.0 * g)
        if Delta_c != 0.0:
            raise ValueError("from_rates requires Delta_c = 0 so that beta is real")
        beta = alpha * kappa / math.sqrt(2.0 * kappa1) if chi else 0.0
        delta_g = delta_chi / (2.0 * alpha) if delta_chi else 0.0
        return cls(kappa1=kappa1, kappa2=kappa2, Delta_c=Delta_c, Delta_q=Delta_q,
                   g=g, beta=beta, delta_g=delta_g, **kw)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedParams:
    alpha_c: complex
    chi: float
    gamma_p: float
    theta_kappa: float
    eta_eff: float
    Delta_cq: float
    background_I: float

    @property
    def delta_chi_per_delta_g(self) -> complex:
        return 2.0 * self.alpha_c


def derive_params(p: SystemParams) -> DerivedParams:
    kappa = p.kappa
    if kappa == 0:
        raise ValueError("kappa must be non-zero")
    alpha_c = math.sqrt(2.0 * p.kappa1) * p.beta / complex(kappa, p.Delta_c)
    d_cq = p.Delta_c - p.Delta_q
    gamma_p = 2.0 * p.g**2 * kappa / (kappa**2 + d_cq**2)
    eta_eff = p.eta * p.kappa2 / kappa
    background = 2.0 * math.sqrt(2.0 * p.kappa2 * p.eta) * (
        alpha_c.real * math.cos(p.theta) + alpha_c.imag * math.sin(p.theta))
    return DerivedParams(
        alpha_c=alpha_c,
        chi=2.0 * p.g * abs(alpha_c),
        gamma_p=gamma_p,
        theta_kappa=math.atan2(-d_cq, kappa),
        eta_eff=eta_eff,
        Delta_cq=d_cq,
        background_I=background,
    )


def _check_adiabatic(p: SystemParams, d: DerivedParams) -> None:
    rates = [p.g, d.chi, p.gamma_par]
    if math.isfinite(p.tau_phase):
        rates.append(1.0 / p.tau_phase)
    slowest_allowed = ADIABATIC_RATIO * max(rates)
    if p.kappa < slowest_allowed:
        warnings.warn(
            f"kappa = {p.kappa:g} is below {ADIABATIC_RATIO:g} x max(g, chi, gamma_par, 1/tau) "
            f"= {slowest_allowed:g}; the adiabatic elimination may be inaccurate",
            AdiabaticityWarning, stacklevel=3)


@dataclass(frozen=True)
class EffectiveModel:
    H_eff: np.ndarray
    collapse_ops: tuple[tuple[str, np.ndarray], ...]
    d_eff: np.ndarray
    derived: DerivedParams
    params: SystemParams
    stark: np.ndarray = field(repr=False)

    @property
    def eta(self) -> float:
        """Detector efficiency multiplying the measurement superoperator."""
        return self.params.eta

    @property
    def gamma_p(self) -> float:
        return self.derived.gamma_p

    def rate_scale(self) -> float:
        """Fastest decay or oscillation rate of the qubit dynamics."""
        p, d = self.params, self.derived
        rates = [d.gamma_p, d.chi, abs(p.Delta_q), p.gamma_par,
                 abs(p.delta_omega_q), abs(2.0 * d.alpha_c * p.delta_g)]
        if math.isfinite(p.tau_phase):
            rates.append(1.0 / p.tau_phase)
        return max(r for r in rates if r > 0) if any(r > 0 for r in rates) else 1.0


def build_effective_model(p: SystemParams, *, include_stark: bool = True) -> EffectiveModel:
    d = derive_params(p)
    _check_adiabatic(p, d)
    cat = CATALOG
    kappa = p.kappa
    g_j = (p.g + p.delta_g / 2.0, p.g - p.delta_g / 2.0)
    dq_j = (p.Delta_q + p.delta_omega_q / 2.0, p.Delta_q - p.delta_omega_q / 2.0)

    H = np.zeros((4, 4), dtype=complex)
    for j in range(2):
        sm = cat.sigma_minus[j]
        H += 0.5 * dq_j[j] * cat.sigma_z[j]
        H += g_j[j] * (d.alpha_c * sm.conj().T + np.conj(d.alpha_c) * sm)
    stark = -d.Delta_cq * p.g**2 / (kappa**2 + d.Delta_cq**2) * (cat.S_plus @ cat.S_minus)
    if include_stark:
        H = H + stark

    ops = [("c1", math.sqrt(d.gamma_p) * cat.S_minus)]
    if p.gamma_par > 0:
        ops += [(f"c{2 + j}", math.sqrt(p.gamma_par) * cat.sigma_minus[j]) for j in range(2)]
    if math.isfinite(p.tau_phase):
        ops += [(f"c{4 + j}", cat.sigma_z[j] / math.sqrt(2.0 * p.tau_phase)) for j in range(2)]

    d_eff = math.sqrt(2.0 * p.kappa2) * (
        d.alpha_c * np.eye(4) - 1j * p.g * cat.S_minus / complex(kappa, d.Delta_cq)
    ) * np.exp(-1j * p.theta)

    return EffectiveModel(H_eff=H, collapse_ops=tuple(ops), d_eff=d_eff, derived=d,
                          params=p, stark=stark)


def photocurrent_coefficients(m: EffectiveModel) -> tuple[float, float, float]:
    """Coefficients of I(t) = c_x <S_x> + c_y <S_y> + background + xi(t)."""
    d = m.derived
    amp = math.sqrt(d.gamma_p * d.eta_eff)
    phase = m.params.theta - d.theta_kappa
    return -amp * math.sin(phase), -amp * math.cos(phase), d.background_I
