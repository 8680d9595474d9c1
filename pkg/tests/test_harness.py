import math
from dataclasses import replace

import numpy as np
import pytest

from badcavity import harness as hs
from badcavity.model import SystemParams
from badcavity.spin import SINGLET, ket, projector


@pytest.fixture(scope="module")
def small_ensemble():
    cfg = hs.EnsembleConfig(params=SystemParams.from_rates(16.5, 10.0), n_trajectories=24,
                            t_final=2.0, T_grid=(1.0, 2.0), sample_times=(0.5,), seed=7,
                            chunk_size=10)
    return cfg, hs.run_ensemble(cfg)


def test_initial_states():
    np.testing.assert_allclose(hs.initial_state("singlet"), projector(SINGLET))
    prod = hs.initial_state("product")
    assert np.trace(prod).real == pytest.approx(1.0)
    assert (SINGLET.conj() @ prod @ SINGLET).real == pytest.approx(0.5)
    np.testing.assert_allclose(hs.initial_state(2 * ket("gg")), projector(ket("gg")))
    with pytest.raises(ValueError):
        hs.initial_state("bell")
    with pytest.raises(ValueError):
        hs.initial_state(np.eye(4))


def test_threshold_for_success_synthetic():
    s = np.array([0.1, -0.2, 0.05, 3.0, -1.0, 0.4])
    ov = np.array([0.9, 0.8, 1.0, 0.0, 0.1, 0.6])
    thr, F = hs.threshold_for_success(s, ov, 0.5)
    assert thr == pytest.approx(0.2)
    assert F == pytest.approx((0.9 + 0.8 + 1.0) / 3)
    thr, F = hs.threshold_for_success(s, ov, 1.0)
    assert F == pytest.approx(ov.mean())
    thr, _ = hs.threshold_for_success(s, ov, 1 / 6, window_center=0.4)
    assert thr == pytest.approx(0.0)
    for bad in (1.2, 0.0, -0.1):
        with pytest.raises(ValueError):
            hs.threshold_for_success(s, ov, bad)


def test_fidelity_curve_and_bound():
    rng = np.random.default_rng(3)
    ov = rng.uniform(size=200)
    stat = -ov
    c = hs.fidelity_vs_success_curve(stat, ov)
    assert c["psuccess"][-1] == 1.0
    assert c["fidelity"][-1] == pytest.approx(ov.mean())
    assert np.all(np.diff(c["fidelity"]) <= 1e-12)  # optimal ordering is monotone
    assert np.all(c["fidelity"] <= c["fidelity_bound"] + 1e-12 + (c["psuccess"] < ov.mean()))
    np.testing.assert_allclose(c["fidelity_bound"][c["psuccess"] >= ov.mean()],
                               ov.mean() / c["psuccess"][c["psuccess"] >= ov.mean()])


def test_summary_shapes_and_evaluate(small_ensemble):
    cfg, s = small_ensemble
    assert s.overlap.shape == (24, 2)
    np.testing.assert_allclose(s.T_grid, [1.0, 2.0])
    assert 0.5 in s.sample_times and 1.0 in s.sample_times
    assert np.all((s.overlap >= -1e-12) & (s.overlap <= 1 + 1e-12))
    assert s.min_eigenvalue.min() > -1e-10
    r = s.evaluate("optimal", 0.5, 2.0)
    assert r.psuccess == 0.5 and r.accepted.sum() == 12
    assert r.fidelity >= s.final_overlap.mean()
    assert np.all(s.final_overlap[r.accepted] >= r.threshold)
    rd = s.evaluate("dc", 0.25)
    assert np.all(np.abs(s.zeta_dc[rd.accepted, -1]) <= rd.threshold)
    with pytest.raises(KeyError):
        s.t_index(1.5)
    with pytest.raises(ValueError):
        s.statistic("lockin")
    assert s.criteria() == ["optimal", "dc", "dc_weighted"]


def test_ensemble_deterministic_across_threads(small_ensemble):
    cfg, s = small_ensemble
    s2 = hs.run_ensemble(replace(cfg, threads=3))
    np.testing.assert_array_equal(s.overlap, s2.overlap)
    np.testing.assert_array_equal(s.zeta_dc, s2.zeta_dc)
    assert s.noise_checksums == s2.noise_checksums
    s3 = hs.run_ensemble(replace(cfg, seed=8))
    assert s3.noise_checksums != s.noise_checksums


def test_ensemble_config_validation():
    p = SystemParams.from_rates(16.5, 10.0)
    with pytest.raises(ValueError):
        hs.EnsembleConfig(params=p, n_trajectories=1)
    with pytest.raises(ValueError):
        hs.EnsembleConfig(params=p, targets=(1.5,))
    with pytest.raises(ValueError):
        hs.EnsembleConfig(params=p, initial="bell")


def test_conditioned_overlap_and_histogram(small_ensemble):
    _, s = small_ensemble
    c = hs.conditioned_overlap(s)
    assert np.all(c["fraction"] <= 1.0)
    ok = ~np.isnan(c["conditioned_mean"])
    assert np.all(c["conditioned_mean"][ok] >= 0.5)
    h = hs.overlap_histogram(s, [1.0, 2.0], bins=10)
    assert len(h["edges"]) == 11
    assert sorted(h["counts"]) == [1.0, 2.0]
    assert all(v.sum() == s.n for v in h["counts"].values())


def test_lockin_from_spectrum():
    from badcavity.model import build_effective_model
    m = build_effective_model(SystemParams.from_rates(10.0, 0.0, theta=0.0))
    lk = hs.lockin_from_spectrum(m)
    assert lk.Omega_l == pytest.approx(9.89, abs=0.02)
    assert lk.tau_l == pytest.approx(1 / 1.54, rel=0.03)


def test_apply_axis():
    p = SystemParams.from_rates(16.5, 10.0)
    assert hs.apply_axis(p, "gamma_par", 0.01).gamma_par == 0.01
    assert hs.apply_axis(p, "dephasing", 0.02).tau_phase == pytest.approx(50.0)
    assert hs.apply_axis(p, "delta_omega_q", 0.3).delta_omega_q == 0.3
    from badcavity.model import derive_params
    q = hs.apply_axis(p, "delta_chi", 0.1)
    assert 2 * abs(derive_params(q).alpha_c) * q.delta_g == pytest.approx(0.1)
    with pytest.raises(ValueError):
        hs.apply_axis(p, "temperature", 1.0)
    with pytest.raises(ValueError):
        hs.apply_axis(SystemParams.from_rates(0.0, 10.0), "delta_chi", 0.1)


def test_loglog_slope_and_refine():
    x = np.array([1.0, 2.0, 4.0])
    assert hs.loglog_slope(x, 3 * x ** 0.5) == pytest.approx(0.5)
    T = np.array([1.0, 2.0, 5.0, 10.0])
    F = -(np.log(T) - math.log(3.0)) ** 2 + 0.9
    Topt, Fopt = hs._refine_optimum(T, F)
    assert Topt == pytest.approx(3.0, rel=1e-9) and Fopt == pytest.approx(0.9)
    assert hs._refine_optimum(T, -T) == (1.0, -1.0)


def test_singlet_population_rate_reference_cases():
    p = SystemParams.from_rates(16.5, 10.0)
    rho = hs.initial_state("singlet")
    assert hs.singlet_population_rate(rho, p) == pytest.approx(0.0, abs=1e-12)
    g = hs.singlet_population_rate(rho, p.with_(gamma_par=0.03))
    assert g == pytest.approx(-0.03)
    assert hs.singlet_population_rate(rho, p.with_(delta_omega_q=0.4)) == pytest.approx(0.0)


@pytest.mark.parametrize("kw", [dict(), dict(gamma_par=0.02), dict(tau_phase=20.0),
                                dict(delta_omega_q=0.3), dict(delta_g=0.4)])
def test_deterministic_ode_residual(kw):
    p = SystemParams.from_rates(16.5, 10.0).with_(**kw)
    assert hs.deterministic_ode_check(p, t_final=3.0, n_samples=16) < 1e-9
