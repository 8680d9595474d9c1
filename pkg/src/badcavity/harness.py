"""Monte Carlo ensembles, acceptance statistics and decoherence sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import signals as sig
from .analytics import build_moment_system, analytic_spectrum, peak_characterize, SpectrumTable
from .model import EffectiveModel, SystemParams, build_effective_model, derive_params
from .sme import IntegratorConfig, Propagator, TrajectoryAbort, run_batch
from .spin import SINGLET, ket, projector, to_singlet_triplet_basis

log = logging.getLogger(__name__)

INITIAL_STATES = ("eg", "product", "singlet")
SAMPLE_BUDGET = 20_000_000  # currents held in memory per chunk
SINGLET_CUT, TRIPLET_CUT = 0.8, 0.2
DEFAULT_T_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
SWEEP_AXES = ("gamma_par", "dephasing", "delta_chi", "delta_omega_q")


def initial_state(selector) -> np.ndarray:
    if isinstance(selector, str):
        if selector == "eg":
            return projector(ket("eg"))
        if selector == "product":
            # (|g> + |e>)(|g> - |e>)/2
            return projector(0.5 * (ket("gg") - ket("ee")) + SINGLET / math.sqrt(2.0))
        if selector == "singlet":
            return projector(SINGLET)
        raise ValueError(f"unknown initial state {selector!r}; choose from {INITIAL_STATES}")
    rho = np.asarray(selector, dtype=complex)
    if rho.shape == (4,):
        rho = projector(rho / np.linalg.norm(rho))
    if rho.shape != (4, 4) or abs(np.trace(rho).real - 1.0) > 1e-9:
        raise ValueError("custom initial state must be a unit-trace 4x4 density matrix")
    return rho


def lockin_from_spectrum(model: EffectiveModel) -> sig.LockinConfig:
    """Demodulate at the analytic peak with time constant 1/FWHM."""
    d = model.derived
    ms = build_moment_system(d.chi, model.params.Delta_q, d.gamma_p, model.params.theta,
                             d.theta_kappa, d.eta_eff)
    omega = math.hypot(d.chi, model.params.Delta_q)
    span = max(omega, 10 * d.gamma_p)
    grid = np.linspace(0.0, omega + span, 8001)
    peak = peak_characterize(analytic_spectrum(ms, grid))
    return sig.LockinConfig(Omega_l=peak.center, tau_l=1.0 / peak.fwhm)


@dataclass(frozen=True)
class EnsembleConfig:
    params: SystemParams
    n_trajectories: int = 2000
    initial: object = "eg"
    t_final: float = 10.0
    dt: float | None = None
    record_stride: int = 100
    seed: int = 0
    T_grid: tuple = ()
    sample_times: tuple = ()
    targets: tuple = (0.5,)
    lockin: sig.LockinConfig | None = None
    weighted_center: float = sig.WEIGHTED_WINDOW_SHIFT
    spectrum: bool = False
    chunk_size: int = 500
    threads: int = 1
    drift_step: str = "exact"
    scheme: str = "kraus"

    def __post_init__(self):
        if self.n_trajectories < 2:
            raise ValueError("n_trajectories must be at least 2")
        initial_state(self.initial)
        for p in self.targets:
            if not 0.0 < p <= 1.0:
                raise ValueError(f"success-probability target {p} outside (0, 1]")

    @property
    def analysis_times(self) -> np.ndarray:
        T = sorted(set(float(t) for t in self.T_grid if t <= self.t_final) | {float(self.t_final)})
        return np.array(T)


@dataclass
class EnsembleSummary:
    config: EnsembleConfig
    model: EffectiveModel
    dt: float
    T_grid: np.ndarray
    overlap: np.ndarray          # (N, nT) overlap at each analysis time
    zeta_dc: np.ndarray          # (N, nT)
    zeta_weighted: np.ndarray    # (N, nT)
    zeta_lockin: np.ndarray | None
    sample_times: np.ndarray
    overlap_samples: np.ndarray  # (N, n_samples)
    current_samples: np.ndarray  # (N, n_samples - 1) interval means
    min_eigenvalue: np.ndarray
    noise_checksums: list
    lockin: sig.LockinConfig | None = None
    spectra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.overlap.shape[0]

    @property
    def final_overlap(self) -> np.ndarray:
        return self.overlap[:, -1]

    def t_index(self, T: float) -> int:
        k = int(np.argmin(np.abs(self.T_grid - T)))
        if not math.isclose(self.T_grid[k], T, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"T = {T} is not an analysis time of this ensemble")
        return k

    def statistic(self, criterion: str, T: float | None = None) -> np.ndarray:
        """Per-trajectory quantity whose smallest values are accepted first."""
        k = -1 if T is None else self.t_index(T)
        if criterion == "optimal":
            return -self.overlap[:, k]
        if criterion == "dc":
            return np.abs(self.zeta_dc[:, k])
        if criterion == "dc_weighted":
            return np.abs(self.zeta_weighted[:, k] - self.config.weighted_center)
        if criterion == "lockin":
            if self.zeta_lockin is None:
                raise ValueError("ensemble was run without a lock-in configuration")
            return self.zeta_lockin[:, k]
        raise ValueError(f"unknown criterion {criterion!r}")

    def criteria(self) -> list:
        out = ["optimal", "dc", "dc_weighted"]
        if self.zeta_lockin is not None:
            out.append("lockin")
        return out

    def evaluate(self, criterion: str, target: float, T: float | None = None):
        k = -1 if T is None else self.t_index(T)
        stat = self.statistic(criterion, T)
        n_acc = _n_accept(target, self.n)
        order = np.argsort(stat, kind="stable")
        acc = np.zeros(self.n, dtype=bool)
        acc[order[:n_acc]] = True
        thr = float(stat[order[n_acc - 1]])
        if criterion == "optimal":
            thr = -thr
        return CriterionResult(criterion=criterion, target=target, T=float(self.T_grid[k]),
                               threshold=thr, psuccess=n_acc / self.n,
                               fidelity=float(self.overlap[acc, k].mean()), accepted=acc)


@dataclass(frozen=True)
class CriterionResult:
    criterion: str
    target: float
    T: float
    threshold: float
    psuccess: float
    fidelity: float
    accepted: np.ndarray = field(repr=False)


def _n_accept(target: float, n: int) -> int:
    if target > 1.0:
        raise ValueError(f"target success probability {target} is unreachable (> 1)")
    if target <= 0.0:
        raise ValueError("target success probability must be positive")
    return max(1, min(n, int(round(target * n))))


def threshold_for_success(signals, overlaps, target_psuccess: float,
                          window_center: float = 0.0) -> tuple[float, float]:
    """Threshold on |signal - center| accepting the requested fraction, and its fidelity."""
    s = np.abs(np.asarray(signals, dtype=float) - window_center)
    ov = np.asarray(overlaps, dtype=float)
    if s.size == 0:
        raise ValueError("no signals")
    k = _n_accept(target_psuccess, s.size)
    order = np.argsort(s, kind="stable")
    return float(s[order[k - 1]]), float(ov[order[:k]].mean())


def fidelity_vs_success_curve(stat, overlaps) -> dict:
    """F and threshold for every achievable success probability k/N.

    ``stat`` is the quantity accepted in increasing order (|zeta - center|,
    zeta_lockin, or minus the overlap). The bound curve assumes perfectly
    separated singlet and triplet signals: F = min(1, m / p) with m the mean
    singlet overlap of the ensemble.
    """
    stat = np.asarray(stat, dtype=float)
    ov = np.asarray(overlaps, dtype=float)
    order = np.argsort(stat, kind="stable")
    k = np.arange(1, stat.size + 1)
    p = k / stat.size
    F = np.cumsum(ov[order]) / k
    m = ov.mean()
    return dict(psuccess=p, fidelity=F, threshold=stat[order],
                fidelity_bound=np.minimum(1.0, m / p))


def _chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(a, min(n, a + chunk)) for a in range(0, n, chunk)]


def _integrator_config(cfg: EnsembleConfig, model: EffectiveModel) -> IntegratorConfig:
    if cfg.dt is None:
        return IntegratorConfig.for_model(model, cfg.t_final, record_stride=cfg.record_stride,
                                          rng_master_seed=cfg.seed, drift_step=cfg.drift_step,
                                          scheme=cfg.scheme)
    n = max(1, int(round(cfg.t_final / cfg.dt)))
    return IntegratorConfig(dt=cfg.t_final / n, t_final=cfg.t_final,
                            record_stride=cfg.record_stride, rng_master_seed=cfg.seed,
                            drift_step=cfg.drift_step, scheme=cfg.scheme)


def run_ensemble(cfg: EnsembleConfig) -> EnsembleSummary:
    model = build_effective_model(cfg.params)
    icfg = _integrator_config(cfg, model)
    dt = icfg.dt
    T_grid = cfg.analysis_times
    T_steps = np.rint(T_grid / dt).astype(np.int64)
    extra = np.rint(np.array([t for t in cfg.sample_times if t <= cfg.t_final]) / dt)
    extra_steps = np.union1d(T_steps, extra.astype(np.int64))
    rho0 = initial_state(cfg.initial)
    prop = Propagator.from_model(model)
    gamma_p = model.derived.gamma_p
    lockin = cfg.lockin
    chunk = max(1, min(cfg.chunk_size, SAMPLE_BUDGET // max(1, icfg.n_steps)))
    bounds = _chunk_bounds(cfg.n_trajectories, chunk)

    def work(bound):
        idx = range(*bound)
        try:
            recs = run_batch(model, icfg, rho0, idx, extra_sample_steps=extra_steps, propagator=prop)
        except TrajectoryAbort as exc:
            log.error("trajectory abort: %s", exc)
            raise
        I = np.stack([r.current for r in recs]) - model.derived.background_I
        samples = recs[0].sample_steps
        pos = np.searchsorted(samples, T_steps)
        ov_all = np.stack([r.overlap for r in recs])
        out = dict(
            overlap=ov_all[:, pos],
            dc=sig.dc_series(I, dt, T_grid),
            weighted=sig.weighted_dc_series(I, dt, gamma_p, T_grid),
            lockin=None if lockin is None else sig.lockin_series(I, dt, lockin, T_grid),
            ov_samples=ov_all,
            cur_samples=_interval_means(I, samples),
            min_eig=np.array([r.min_eigenvalue for r in recs]),
            checksums=[r.noise_checksum for r in recs],
            sample_times=samples * dt,
        )
        if cfg.spectrum:
            grid, spec = sig.periodogram_values(I, dt)
            fin = ov_all[:, -1]
            out["spec"] = dict(grid=grid, **{
                name: (spec[mask].sum(0), (spec[mask] ** 2).sum(0), int(mask.sum()))
                for name, mask in (("all", np.ones(fin.size, bool)),
                                   ("singlet", fin >= SINGLET_CUT),
                                   ("triplet", fin <= TRIPLET_CUT))})
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    spectra = {}
    if cfg.spectrum:
        grid = parts[0]["spec"]["grid"]
        for name in ("all", "singlet", "triplet"):
            s = sum(p["spec"][name][0] for p in parts)
            s2 = sum(p["spec"][name][1] for p in parts)
            n = sum(p["spec"][name][2] for p in parts)
            if n == 0:
                continue
            mean = s / n
            var = (s2 / n - mean**2) * n / max(n - 1, 1)
            spectra[name] = SpectrumTable(delta=grid, values=mean, kind="periodogram",
                                          stderr=np.sqrt(np.maximum(var, 0) / n), n_records=n)
    return EnsembleSummary(
        config=cfg, model=model, dt=dt, T_grid=T_grid,
        overlap=cat("overlap"), zeta_dc=cat("dc"), zeta_weighted=cat("weighted"),
        zeta_lockin=None if lockin is None else cat("lockin"),
        sample_times=parts[0]["sample_times"], overlap_samples=cat("ov_samples"),
        current_samples=cat("cur_samples"), min_eigenvalue=cat("min_eig"),
        noise_checksums=[c for p in parts for c in p["checksums"]],
        lockin=lockin, spectra=spectra)


def _interval_means(I: np.ndarray, steps: np.ndarray) -> np.ndarray:
    cum = np.concatenate([np.zeros((I.shape[0], 1)), np.cumsum(I, axis=1)], axis=1)
    widths = np.diff(steps)
    return (cum[:, steps[1:]] - cum[:, steps[:-1]]) / widths


def overlap_histogram(summary: EnsembleSummary, times, bins: int = 20) -> dict:
    """Distribution of the singlet overlap at selected times (counts per bin)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    cols = {}
    for t in times:
        k = int(np.argmin(np.abs(summary.sample_times - t)))
        ov = np.clip(summary.overlap_samples[:, k], 0.0, 1.0)
        cols[float(summary.sample_times[k])] = np.histogram(ov, bins=edges)[0]
    return dict(edges=edges, counts=cols)


def conditioned_overlap(summary: EnsembleSummary, cut: float = 0.5) -> dict:
    """Mean overlap, mean overlap among runs with overlap >= cut, and their fraction."""
    ov = summary.overlap_samples
    sel = ov >= cut
    frac = sel.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(sel.any(axis=0), (ov * sel).sum(0) / sel.sum(0), np.nan)
    return dict(t=summary.sample_times, mean=ov.mean(axis=0), conditioned_mean=cond,
                fraction=frac, stderr=ov.std(axis=0, ddof=1) / math.sqrt(ov.shape[0]))


def _refine_optimum(T: np.ndarray, F: np.ndarray) -> tuple[float, float]:
    """Parabolic refinement of the best fidelity in log(T)."""
    k = int(np.argmax(F))
    if 0 < k < len(F) - 1:
        x = np.log(T[k - 1:k + 2])
        a, b, c = np.polyfit(x, F[k - 1:k + 2], 2)
        if a < 0:
            xs = -b / (2 * a)
            if x[0] <= xs <= x[2]:
                return float(math.exp(xs)), float(c - b * b / (4 * a))
    return float(T[k]), float(F[k])


def apply_axis(params: SystemParams, axis: str, value: float) -> SystemParams:
    if axis == "gamma_par":
        return params.with_(gamma_par=value)
    if axis == "dephasing":
        return params.with_(tau_phase=1.0 / value)
    if axis == "delta_chi":
        alpha = derive_params(params).alpha_c
        if abs(alpha) == 0:
            raise ValueError("delta_chi sweep needs a driven system")
        return params.with_(delta_g=value / (2.0 * abs(alpha)))
    if axis == "delta_omega_q":
        return params.with_(delta_omega_q=value)
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


@dataclass
class SweepResult:
    axis: str
    rows: list
    optima: list


def sweep_point(base: EnsembleConfig, axis: str, value: float, targets, T_grid,
                criteria=("optimal", "dc")) -> tuple[list, list]:
    if value <= 0:
        raise ValueError("sweep values must be positive")
    cfg = replace(base, params=apply_axis(base.params, axis, value), T_grid=tuple(T_grid),
                  t_final=max(T_grid), targets=tuple(targets))
    summary = run_ensemble(cfg)
    rows, optima = [], []
    for crit in criteria:
        for p in targets:
            Fs = []
            for T in summary.T_grid:
                r = summary.evaluate(crit, p, T)
                Fs.append(r.fidelity)
                rows.append(dict(axis=axis, value=value, T=float(T), psuccess=p,
                                 criterion=crit, threshold=r.threshold, fidelity=r.fidelity))
            T_best, F_best = _refine_optimum(summary.T_grid, np.array(Fs))
            k = int(np.argmax(Fs))
            optima.append(dict(axis=axis, value=value, psuccess=p, criterion=crit,
                               T_grid_best=float(summary.T_grid[k]), F_grid_best=float(Fs[k]),
                               T_opt=T_best, F_opt=F_best))
    return rows, optima


def sweep_decoherence(base: EnsembleConfig, axis: str, values, targets=(0.5,),
                      T_grid=DEFAULT_T_GRID, criteria=("optimal", "dc")) -> SweepResult:
    rows, optima = [], []
    for v in values:
        r, o = sweep_point(base, axis, float(v), targets, T_grid, criteria)
        rows += r
        optima += o
    return SweepResult(axis=axis, rows=rows, optima=optima)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# singlet-triplet basis indices {ee, +, -, gg}
_EE, _PL, _MI, _GG = 0, 1, 2, 3


def singlet_population_rate(rho: np.ndarray, params: SystemParams) -> float:
    """Right-hand side of the deterministic singlet-population equation.

    The inhomogeneous-drive term is written so that the rate is real:
    -(i dchi/2) [(r_gg,- - r_ee,-) - (r_-,gg - r_-,ee)] / sqrt(2).
    """
    d = derive_params(params)
    if abs(d.alpha_c.imag) > 1e-12 * max(1.0, abs(d.alpha_c)):
        raise ValueError("the singlet-population check assumes a real cavity field")
    dchi = 2.0 * d.alpha_c.real * params.delta_g
    inv_tau = 0.0 if math.isinf(params.tau_phase) else 1.0 / params.tau_phase
    r = to_singlet_triplet_basis(rho)
    gpar = params.gamma_par
    rate = (-(inv_tau + gpar) * r[_MI, _MI] + inv_tau * r[_PL, _PL] + gpar * r[_EE, _EE]
            - 0.5j * params.delta_omega_q * (r[_PL, _MI] - r[_MI, _PL])
            - 0.5j * dchi * ((r[_GG, _MI] - r[_EE, _MI]) - (r[_MI, _GG] - r[_MI, _EE]))
            / math.sqrt(2.0))
    return float(rate.real)


def deterministic_ode_check(params: SystemParams, initial=None, t_final: float = 5.0,
                            n_samples: int = 51) -> float:
    """Max deviation between the simulated d rho_--/dt (eta = 0) and the closed form."""
    from scipy.linalg import expm
    from .sme import from_vec, to_vec, drift

    model = build_effective_model(params.with_(eta=0.0))
    prop = Propagator.from_model(model)
    rho0 = initial_state("eg" if initial is None else initial)
    r0 = to_vec(rho0)
    worst = 0.0
    for t in np.linspace(0.0, t_final, n_samples):
        rho = from_vec(expm(prop.L * t) @ r0)
        sim = (SINGLET.conj() @ drift(rho, model) @ SINGLET).real
        worst = max(worst, abs(sim - singlet_population_rate(rho, params)))
    return worst
