import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from badcavity import signals as sig
from badcavity.model import SystemParams, build_effective_model
from badcavity.sme import IntegratorConfig, run_trajectory
from badcavity.spin import SINGLET, ket, projector

RNG = np.random.default_rng(20)


def white(n_rec, n, dt, rng=RNG):
    return rng.standard_normal((n_rec, n)) / math.sqrt(dt)


def test_dc_of_white_noise_is_standard_normal():
    z = sig.dc_series(white(4000, 1000, 1e-2), 1e-2)[:, 0]
    assert abs(z.mean()) < 3 / math.sqrt(4000)
    assert z.var(ddof=1) == pytest.approx(1.0, abs=0.07)


def test_dc_of_constant_current():
    dt, c = 1e-3, 0.7
    z = sig.dc_series(np.full((1, 5000), c), dt, [1.0, 5.0])
    np.testing.assert_allclose(z[0], [c * 1.0, c * math.sqrt(5.0)], rtol=1e-12)


def test_dc_rejects_times_outside_record():
    with pytest.raises(ValueError):
        sig.dc_series(np.zeros((1, 10)), 0.1, [2.0])


def test_weighted_dc_constant_current_quadrature():
    dt, c, g, T = 1e-3, 1.3, 1.0, 4.0
    n = int(T / dt)
    z = sig.weighted_dc_series(np.full((1, n), c), dt, g)[0, 0]
    exact = c * (T - (1 - math.exp(-g * T)) / g) / math.sqrt(T)
    assert z == pytest.approx(exact, rel=1e-6)


def test_weighted_dc_ignores_early_transient():
    dt = 1e-4
    z = sig.weighted_dc_series(np.full((1, 100), 5.0), dt, 1.0)[0, 0]
    assert abs(z) < 5e-3


def test_weighted_dc_reduces_noise_variance():
    dt, T = 1e-2, 5.0
    z = sig.weighted_dc_series(white(4000, int(T / dt), dt), dt, 1.0)[:, 0]
    expect = (T - 2 * (1 - math.exp(-T)) + (1 - math.exp(-2 * T)) / 2) / T
    assert expect < 1
    assert z.var(ddof=1) == pytest.approx(expect, rel=0.07)


def test_lockin_white_noise_mean_is_one():
    dt, T, tau = 1e-2, 100.0, 1.0
    cfg = sig.LockinConfig(Omega_l=10.0, tau_l=tau)
    z = sig.lockin_series(white(300, int(T / dt), dt), dt, cfg)[:, 0]
    # transient start lowers the mean by tau / (2 T)
    target = 1 - tau / (2 * T)
    assert abs(z.mean() - target) < 3 * z.std(ddof=1) / math.sqrt(z.size) + 5e-3


def _tone_zeta_exact(A, Om, Om_l, tau, T, n=400001):
    """(2 / (T tau)) int_0^T |L|^2 for I = A cos(Om t), L from the continuous filter."""
    t = np.linspace(0, T, n)
    s = 1j * Om_l + 1 / tau
    L = 0.5 * A * ((np.exp(1j * Om * t) - np.exp(-s * t)) / (s + 1j * Om)
                   + (np.exp(-1j * Om * t) - np.exp(-s * t)) / (s - 1j * Om))
    return 2.0 / (T * tau) * trapezoid(np.abs(L) ** 2, t)


def test_lockin_tone_quadrature_oracle():
    dt, T, A, Om, tau = 1e-3, 40.0, 0.8, 10.0, 1.0
    t = (np.arange(int(T / dt)) + 1) * dt
    cfg = sig.LockinConfig(Omega_l=Om, tau_l=tau)
    z = sig.lockin_series(A * np.cos(Om * t)[None, :], dt, cfg)[0, 0]
    assert z == pytest.approx(_tone_zeta_exact(A, Om, Om, tau, T), rel=2e-3)
    # long-time value A^2 tau / 2
    assert z == pytest.approx(A * A * tau / 2, rel=0.05)


def test_lockin_selectivity_and_linearity():
    dt, T, tau = 1e-3, 40.0, 1.0
    t = (np.arange(int(T / dt)) + 1) * dt
    cfg = sig.LockinConfig(Omega_l=10.0, tau_l=tau)
    on = np.cos(10.0 * t)
    off = np.cos(30.0 * t)
    z_on, z_off, z_sum = (sig.lockin_series(x[None, :], dt, cfg)[0, 0]
                          for x in (on, off, on + off))
    assert z_off < z_on / 10
    assert abs(z_sum - (z_on + z_off)) < 0.05 * (z_on + z_off)


def test_lockin_config_validation():
    with pytest.raises(ValueError):
        sig.LockinConfig(Omega_l=1.0, tau_l=0.0)
    with pytest.raises(ValueError):
        sig.SignalResult(zeta_lockin=-1.0)


def test_periodogram_white_noise_level():
    dt = 1e-2
    grid, spec = sig.periodogram_values(white(2000, 1000, dt), dt)
    table = sig.spectrum_from_stack(grid, spec)
    inner = slice(1, -1)
    z = (table.values[inner] - 1 / (2 * math.pi)) / table.stderr[inner]
    assert np.mean(np.abs(z) < 3) > 0.99
    assert grid[1] == pytest.approx(2 * math.pi / (1000 * dt))


def test_periodogram_parseval():
    dt = 1e-2
    I = white(3, 1000, dt)
    grid, P = sig.periodogram_values(I, dt)
    n = I.shape[1]
    two_sided_mean = (P[:, 0] + 2 * P[:, 1:-1].sum(axis=1) + P[:, -1]) / n
    np.testing.assert_allclose(two_sided_mean, dt / (2 * math.pi) * (I**2).mean(axis=1),
                               rtol=1e-10)


def _record(theta, initial, seed=1, T=1.0):
    m = build_effective_model(SystemParams.from_rates(16.5, 10.0, theta=theta))
    cfg = IntegratorConfig.for_model(m, T)
    return run_trajectory(m, cfg, projector(initial), seed=seed)


def test_record_signals_subtract_background():
    rec = _record(0.0, SINGLET)
    assert abs(rec.background) > 1
    z = sig.zeta_mean_current(rec)
    noise = sig.dc_series(rec.current - rec.background, rec.dt)[0, 0]
    assert z == pytest.approx(noise)
    assert abs(z) < 5


def test_accept_rules():
    rec_dc = _record(-math.pi / 2, ket("eg"))
    rec_ac = _record(0.0, ket("eg"))
    rho = projector(SINGLET)
    assert sig.accept(rho, sig.Optimal(0.8))
    assert sig.accept(0.05 * np.eye(4) + 0.8 * rho, sig.Optimal(0.8))
    assert not sig.accept(projector(ket("eg")), sig.Optimal(0.8))
    z = sig.zeta_mean_current(rec_dc)
    assert sig.accept(rec_dc, sig.DCWindow(abs(z) + 1e-9)) is True
    assert sig.accept(rec_dc, sig.DCWindow(abs(z) - 1e-9)) is False
    lk = sig.LockinConfig(9.9, 0.65)
    zl = sig.zeta_lockin(rec_ac, lk)
    assert sig.accept(rec_ac, sig.Lockin(zl, lk))
    with pytest.raises(sig.CriterionMismatch):
        sig.accept(rec_ac, sig.DCWindow(1.96))
    with pytest.raises(sig.CriterionMismatch):
        sig.accept(rec_dc, sig.Lockin(1.0, lk))
    with pytest.raises(sig.CriterionMismatch):
        sig.accept(rho, sig.DCWindow(1.96))


def test_dc_window_rejects_outside_value():
    rec = _record(-math.pi / 2, ket("eg"))
    z = sig.zeta_mean_current(rec)
    assert sig.accept(rec, sig.DCWindow(1.96, center=z + 2.5)) is False


def test_analyze_returns_all_requested_signals():
    rec = _record(0.0, ket("eg"))
    r = sig.analyze(rec, lockin=sig.LockinConfig(9.9, 0.65))
    assert r.zeta_lockin >= 0 and r.zeta_meanI is not None and r.zeta_meanI_weighted is not None
    assert sig.analyze(rec).zeta_lockin is None
