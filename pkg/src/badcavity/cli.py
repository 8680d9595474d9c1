"""Command-line entry point: simulate, spectrum, sweep and steady-state."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analytics as an
from . import harness as hs
from . import io
from .config import ConfigError, RunConfig
from .model import build_effective_model, derive_params
from .sme import TrajectoryAbort

log = logging.getLogger("badcavity")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RATE = "gamma_p"
TIME = "1/gamma_p"


class SelfCheckError(RuntimeError):
    pass


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    return cfg.override("ensemble", **over) if over else cfg


def _manifest(cfg: RunConfig, command: str, **extra) -> str:
    entries = {"command": command, "config_hash": cfg.config_hash(),
               "seed": cfg["ensemble"]["seed"], "code_version": io.code_version()}
    entries.update(extra)
    return io.manifest_text(entries)


def _write_bundle_head(out: Path, cfg: RunConfig):
    io.atomic_write(out / "config.toml", cfg.to_toml())


def _lockin(cfg: RunConfig, model):
    wanted = "lockin" in cfg["analysis"]["criteria"]
    mode = cfg.lockin_config()
    if not wanted:
        return None
    if mode == "off":
        raise ConfigError("[analysis] criteria includes 'lockin' but lockin = 'off'")
    return hs.lockin_from_spectrum(model) if mode == "auto" else mode


# simulate

def trajectory_records(summary: hs.EnsembleSummary, results) -> list:
    """One JSON-ready record per trajectory (decimated current and overlap)."""
    cfg = summary.config
    t = summary.sample_times.tolist()
    recs = []
    for i in range(summary.n):
        recs.append({
            "seed": cfg.seed, "index": i, "t": t,
            "I": summary.current_samples[i].tolist(),
            "overlap": summary.overlap_samples[i].tolist(),
            "zeta": {"dc": float(summary.zeta_dc[i, -1]),
                     "dc_weighted": float(summary.zeta_weighted[i, -1]),
                     **({"lockin": float(summary.zeta_lockin[i, -1])}
                        if summary.zeta_lockin is not None else {})},
            "accepted": {f"{r.criterion}@{r.target:g}": bool(r.accepted[i]) for r in results},
            "noise_sha256": summary.noise_checksums[i],
        })
    return recs


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = io.resolve_output_dir(args.out, cfg["output"]["dir"], "simulate")
    model = build_effective_model(cfg.system_params())
    ecfg = replace(cfg.ensemble_config(lockin=_lockin(cfg, model)),
                   sample_times=tuple(cfg["analysis"]["histogram_times"]))
    crits = [c for c in cfg["analysis"]["criteria"]]
    _write_bundle_head(out, cfg)
    summary = hs.run_ensemble(ecfg)

    rows, final = [], []
    for c in crits:
        for p in ecfg.targets:
            for T in summary.T_grid:
                r = summary.evaluate(c, p, T)
                rows.append(dict(criterion=c, T=float(T), target=p, threshold=r.threshold,
                                 psuccess=r.psuccess, fidelity=r.fidelity))
                if T == summary.T_grid[-1]:
                    final.append(r)
    io.write_csv(out / "summary.csv",
                 ["criterion", "T", "target", "threshold", "psuccess", "fidelity"], rows,
                 {"T": TIME, "threshold": "signal units"},
                 [f"ensemble of {summary.n} trajectories, dt = {summary.dt!r}"])

    curve_rows = []
    for c in crits:
        cur = hs.fidelity_vs_success_curve(summary.statistic(c), summary.final_overlap)
        sign = -1.0 if c == "optimal" else 1.0
        for k in range(summary.n):
            curve_rows.append([c, cur["psuccess"][k], sign * cur["threshold"][k],
                               cur["fidelity"][k], cur["fidelity_bound"][k]])
    io.write_csv(out / "fidelity_curve.csv",
                 ["criterion", "psuccess", "threshold", "fidelity", "fidelity_bound"],
                 curve_rows, {"threshold": "signal units"},
                 [f"T = {summary.T_grid[-1]!r}; optimal thresholds are minimum overlaps"])

    times = [t for t in cfg["analysis"]["histogram_times"] if t <= ecfg.t_final]
    hist = hs.overlap_histogram(summary, times, cfg["analysis"]["histogram_bins"])
    tcols = [f"T={t:g}" for t in hist["counts"]]
    hrows = [[hist["edges"][b], hist["edges"][b + 1], *(v[b] for v in hist["counts"].values())]
             for b in range(len(hist["edges"]) - 1)]
    io.write_csv(out / "overlap_histogram.csv", ["overlap_lo", "overlap_hi", *tcols], hrows,
                 {c: "counts" for c in tcols} | {"T": TIME},
                 ["trajectory counts per singlet-overlap bin; T in units of 1/gamma_p"])

    co = hs.conditioned_overlap(summary)
    io.write_csv(out / "mean_overlap.csv",
                 ["t", "mean", "stderr", "conditioned_mean", "fraction_above_half"],
                 zip(co["t"], co["mean"], co["stderr"], co["conditioned_mean"], co["fraction"]),
                 {"t": TIME})

    if cfg["output"]["jsonl"]:
        io.atomic_write(out / "trajectories.jsonl", io.jsonl_text(trajectory_records(summary, final)))

    lines = [f"{r.criterion:12s} p={r.target:<5g} T={r.T:<6g} threshold={r.threshold:.4f} "
             f"F={r.fidelity:.4f}" for r in final]
    lines.append(f"min eigenvalue over samples: {summary.min_eigenvalue.min():.3e}")
    io.atomic_write(out / "summary.txt", "\n".join(lines) + "\n")
    io.atomic_write(out / "manifest.txt", _manifest(
        cfg, "simulate", n_trajectories=summary.n, dt=repr(summary.dt),
        lockin="" if ecfg.lockin is None else f"{ecfg.lockin.Omega_l!r},{ecfg.lockin.tau_l!r}"))
    if not args.quiet:
        print("\n".join(lines))
    return EXIT_OK


# spectrum

def _moment_system(params):
    d = derive_params(params)
    return an.build_moment_system(d.chi, params.Delta_q, d.gamma_p, params.theta,
                                  d.theta_kappa, d.eta_eff)


def _spectrum_grid(cfg: RunConfig) -> np.ndarray:
    a = cfg["analysis"]
    if not (a["n_delta"] >= 2 and a["delta_max"] > a["delta_min"]):
        raise ConfigError("[analysis] spectrum needs a frequency grid: "
                          "delta_min < delta_max and n_delta >= 2")
    return np.linspace(float(a["delta_min"]), float(a["delta_max"]), int(a["n_delta"]))


def cmd_spectrum(args) -> int:
    cfg = _load(args)
    grid = _spectrum_grid(cfg)
    out = io.resolve_output_dir(args.out, cfg["output"]["dir"], "spectrum")
    params = cfg.system_params()
    ms = _moment_system(params)
    table = an.analytic_spectrum(ms, grid)
    peak = an.peak_characterize(table)
    _write_bundle_head(out, cfg)
    io.write_csv(out / "spectrum_analytic.csv", ["delta", "S"], zip(table.delta, table.values),
                 {"delta": RATE, "S": "1/gamma_p (shot noise = 1/2pi)"})
    report = {"Delta0": repr(peak.center), "fwhm": repr(peak.fwhm), "height": repr(peak.height)}
    if cfg["ensemble"]["n_trajectories"] > 0:
        cfg_sim = cfg.override("analysis", spectrum=True)
        summary = hs.run_ensemble(cfg_sim.ensemble_config())
        names = [n for n in ("all", "triplet", "singlet") if n in summary.spectra]
        g = summary.spectra["all"].delta
        sel = (g >= grid[0]) & (g <= grid[-1])
        ana = an.analytic_spectrum(ms, g[sel]).values
        cols = ["delta", "analytic"]
        data = [g[sel], ana]
        for n in names:
            cols += [f"{n}", f"{n}_stderr"]
            data += [summary.spectra[n].values[sel], summary.spectra[n].stderr[sel]]
        io.write_csv(out / "spectrum_simulated.csv", cols, zip(*data),
                     {c: ("1/gamma_p" if c != "delta" else RATE) for c in cols},
                     [f"records: " + ", ".join(f"{n}={summary.spectra[n].n_records}"
                                                 for n in names)])
        if "triplet" in summary.spectra:
            tp = summary.spectra["triplet"]
            try:
                sp = an.peak_characterize(an.SpectrumTable(tp.delta[sel], tp.values[sel],
                                                           "periodogram"))
                report.update(sim_Delta0=repr(sp.center), sim_fwhm=repr(sp.fwhm),
                              sim_height=repr(sp.height))
            except ValueError as exc:
                log.warning("no peak in simulated spectrum: %s", exc)
    io.atomic_write(out / "peak.txt", io.manifest_text(report))
    io.atomic_write(out / "manifest.txt", _manifest(cfg, "spectrum"))
    if not args.quiet:
        print(io.manifest_text(report), end="")
    return EXIT_OK


# sweep

SWEEP_COLUMNS = ["axis", "value", "T", "psuccess", "criterion", "threshold", "fidelity"]
OPTIMA_COLUMNS = ["axis", "value", "psuccess", "criterion", "T_grid_best", "F_grid_best",
                  "T_opt", "F_opt"]


def _str_rows(rows, columns):
    return [[str(io._fmt(r[c])) for c in columns] for r in rows]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    a = cfg["analysis"]
    if not a["sweep_axis"]:
        raise ConfigError("[analysis] sweep_axis is required for sweep")
    if not a["sweep_values"]:
        raise ConfigError("[analysis] sweep_values must not be empty")
    out = io.resolve_output_dir(args.out, cfg["output"]["dir"], "sweep")
    h = cfg.config_hash()
    values = [float(v) for v in a["sweep_values"]]
    done: dict[int, tuple[list, list]] = {}
    if (out / "manifest.txt").exists() and io.read_manifest(out / "manifest.txt").get("config_hash") == h:
        _, rows = io.read_csv(out / "sweep.csv") if (out / "sweep.csv").exists() else ([], [])
        _, opt = io.read_csv(out / "optima.csv") if (out / "optima.csv").exists() else ([], [])
        for k, v in enumerate(values):
            key = str(io._fmt(v))
            o = [r for r in opt if r[1] == key]
            if o:
                done[k] = ([r for r in rows if r[1] == key], o)
        if done and not args.quiet:
            print(f"resuming: {len(done)} of {len(values)} values already complete")
    _write_bundle_head(out, cfg)
    model = build_effective_model(cfg.system_params())
    base = cfg.ensemble_config(lockin=_lockin(cfg, model))
    crits = tuple(a["criteria"])
    T_grid = cfg.sweep_T_grid()
    for k, v in enumerate(values):
        if k not in done:
            rows, optima = hs.sweep_point(base, a["sweep_axis"], v, base.targets, T_grid, crits)
            done[k] = (_str_rows(rows, SWEEP_COLUMNS), _str_rows(optima, OPTIMA_COLUMNS))
            if not args.quiet:
                for o in optima:
                    print(f"{a['sweep_axis']}={v:g} {o['criterion']} p={o['psuccess']:g} "
                          f"T_opt={o['T_opt']:.3g} F_opt={o['F_opt']:.4f}")
        ks = sorted(done)
        status = "complete" if len(ks) == len(values) else "partial"
        io.write_csv(out / "sweep.csv", SWEEP_COLUMNS, [r for j in ks for r in done[j][0]],
                     {"value": RATE, "T": TIME})
        io.write_csv(out / "optima.csv", OPTIMA_COLUMNS, [r for j in ks for r in done[j][1]],
                     {"value": RATE, "T_grid_best": TIME, "T_opt": TIME})
        io.atomic_write(out / "manifest.txt", _manifest(cfg, "sweep", status=status))
    return EXIT_OK


# steady state

def steady_state_report(chi: float, Delta_q: float, gamma_p: float, theta: float = 0.0):
    ms = an.build_moment_system(chi, Delta_q, gamma_p, theta)
    x = an.steady_state(ms)
    sx = an.mean_sx(x)
    sx_cf = an.mean_sx_closed_form(chi, Delta_q, gamma_p)
    labels = ["S+", "S-", "Sz", "S+Sz", "SzS-", "S+^2", "S-^2", "Sz^2"]
    entries = {"chi": repr(chi), "Delta_q": repr(Delta_q), "gamma_p": repr(gamma_p)}
    for lab, val in zip(labels, x):
        entries[f"x_SS[{lab}]"] = f"{float(val.real)!r}{float(val.imag):+.17g}j"
    entries.update({"Sx_solve": repr(sx), "Sx_closed_form": repr(sx_cf),
                    "Sx_difference": repr(abs(sx - sx_cf))})
    return entries, abs(sx - sx_cf)


def cmd_steady_state(args) -> int:
    if args.config:
        p = _load(args).system_params()
        d = derive_params(p)
        chi, Dq, gp = d.chi, p.Delta_q, d.gamma_p
    else:
        if args.chi is None or args.delta_q is None:
            raise ConfigError("steady-state needs --chi and --delta-q (or --config)")
        chi, Dq, gp = args.chi, args.delta_q, args.gamma_p
    entries, diff = steady_state_report(chi, Dq, gp)
    text = io.manifest_text(entries)
    if args.out:
        io.atomic_write(Path(args.out) / "steady_state.txt", text)
    if not args.quiet:
        print(text, end="")
    if diff > 1e-8:
        raise SelfCheckError(f"solve and closed form disagree by {diff:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help=f"output directory (default under ${io.OUTPUT_ROOT_ENV})")
    common.add_argument("--seed", type=int, help="override [ensemble] seed")
    common.add_argument("--threads", type=int, help="override [ensemble] threads")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    ap = argparse.ArgumentParser(prog="badcavity",
                                 description="Singlet preparation by continuous measurement in a bad cavity")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (("simulate", cmd_simulate, "run one trajectory ensemble"),
                          ("spectrum", cmd_spectrum, "analytic and simulated photocurrent spectra"),
                          ("sweep", cmd_sweep, "decoherence / inhomogeneity sweep")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.set_defaults(func=fn, needs_config=True)
    sp = sub.add_parser("steady-state", parents=[common], help="analytic steady state of the moments")
    sp.add_argument("--chi", type=float)
    sp.add_argument("--delta-q", type=float)
    sp.add_argument("--gamma-p", type=float, default=1.0)
    sp.set_defaults(func=cmd_steady_state, needs_config=False)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.needs_config and not args.config:
            raise ConfigError(f"{args.command} requires --config")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajectoryAbort as exc:
        print(f"trajectory aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (an.SingularSystemError, SelfCheckError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
