import json

import pytest

from badcavity import cli
from badcavity import io as bio

SMALL = """
[system]
chi = 16.5
Delta_q = 10.0
[integrator]
t_final = 10.0
[ensemble]
n_trajectories = 8
seed = 11
chunk_size = 3
[analysis]
T_grid = [5.0, 10.0]
targets = [0.5]
criteria = ["optimal", "dc", "dc_weighted"]
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_steady_state_reference(capsys):
    assert cli.main(["steady-state", "--chi", "16.5", "--delta-q", "10"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "Sx_closed_form" in out
    entries, diff = cli.steady_state_report(16.5, 10.0, 1.0)
    assert abs(float(entries["Sx_solve"])) == pytest.approx(1.52, abs=0.01)
    assert diff < 1e-8


def test_steady_state_undriven():
    entries, _ = cli.steady_state_report(0.0, 10.0, 1.0)
    assert float(entries["Sx_solve"]) == pytest.approx(0.0, abs=1e-12)
    assert complex(entries["x_SS[Sz]"]).real == pytest.approx(-2.0)
    assert complex(entries["x_SS[Sz^2]"]).real == pytest.approx(4.0)


def test_steady_state_needs_arguments():
    assert cli.main(["steady-state", "--chi", "1.0"]) == cli.EXIT_CONFIG


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, "[system]\nggamma = 1.0\n")
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "ggamma" in capsys.readouterr().err
    nogrid = write(tmp_path, "[analysis]\nn_delta = 0\n", "g.toml")
    assert cli.main(["spectrum", "--config", nogrid, "--out", str(tmp_path / "s")]) == 2
    nosweep = write(tmp_path, '[analysis]\nsweep_axis = "gamma_par"\nsweep_values = []\n', "w.toml")
    assert cli.main(["sweep", "--config", nosweep, "--out", str(tmp_path / "w")]) == 2


def test_analytic_spectrum_only(tmp_path):
    cfg = write(tmp_path, "[system]\nchi = 10.0\nDelta_q = 0.0\ntheta = 0.0\n"
                          "[ensemble]\nn_trajectories = 0\n"
                          "[analysis]\ndelta_min = 0.0\ndelta_max = 20.0\nn_delta = 401\n")
    out = tmp_path / "spec"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    cols, rows = bio.read_csv(out / "spectrum_analytic.csv")
    assert len(rows) == 401
    assert not (out / "spectrum_simulated.csv").exists()
    assert "9.8" in (out / "peak.txt").read_text()


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    base = tmp_path_factory.mktemp("sim")
    cfg = write(base, SMALL)
    a, b = base / "a", base / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--quiet",
                     "--threads", "3"]) == 0
    return a, b


def test_simulate_bundle(simulated):
    a, _ = simulated
    for name in ("config.toml", "summary.csv", "fidelity_curve.csv", "overlap_histogram.csv",
                 "mean_overlap.csv", "trajectories.jsonl", "summary.txt", "manifest.txt"):
        assert (a / name).exists(), name
    cols, rows = bio.read_csv(a / "overlap_histogram.csv")
    assert cols[2:] == ["T=1", "T=2", "T=5", "T=10"]
    assert all(sum(int(r[k]) for r in rows) == 8 for k in range(2, 6))
    recs = [json.loads(ln) for ln in (a / "trajectories.jsonl").read_text().splitlines()]
    assert [r["index"] for r in recs] == list(range(8))
    assert sum(r["accepted"]["optimal@0.5"] for r in recs) == 4
    assert "# units:" in (a / "summary.csv").read_text()
    man = bio.read_manifest(a / "manifest.txt")
    assert man["seed"] == "11"


def test_simulate_is_reproducible_across_threads(simulated, tmp_path):
    a, b = simulated
    assert (a / "trajectories.jsonl").read_bytes() == (b / "trajectories.jsonl").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_seed_override_changes_noise(simulated, tmp_path):
    a, _ = simulated
    cfg = write(tmp_path, SMALL)
    c = tmp_path / "c"
    assert cli.main(["simulate", "--config", cfg, "--out", str(c), "--quiet", "--seed", "12"]) == 0
    assert (a / "trajectories.jsonl").read_bytes() != (c / "trajectories.jsonl").read_bytes()


SWEEP = """
[system]
chi = 16.5
Delta_q = 10.0
[ensemble]
n_trajectories = 6
seed = 5
[analysis]
T_grid = [1.0, 2.0]
targets = [0.5]
criteria = ["optimal", "dc"]
sweep_axis = "gamma_par"
sweep_values = [0.01, 0.02]
"""


def test_sweep_resume_matches_single_run(tmp_path):
    full = write(tmp_path, SWEEP)
    one = write(tmp_path, SWEEP.replace("[0.01, 0.02]", "[0.01]"), "one.toml")
    ref, res = tmp_path / "ref", tmp_path / "res"
    assert cli.main(["sweep", "--config", full, "--out", str(ref), "--quiet"]) == 0
    assert bio.read_manifest(ref / "manifest.txt")["status"] == "complete"
    # interrupted run: only the first value finished
    assert cli.main(["sweep", "--config", one, "--out", str(res), "--quiet"]) == 0
    man = (res / "manifest.txt").read_text()
    h_full = bio.read_manifest(ref / "manifest.txt")["config_hash"]
    h_one = bio.read_manifest(res / "manifest.txt")["config_hash"]
    (res / "manifest.txt").write_text(man.replace(h_one, h_full).replace("complete", "partial"))
    assert cli.main(["sweep", "--config", full, "--out", str(res), "--quiet"]) == 0
    assert (res / "optima.csv").read_text() == (ref / "optima.csv").read_text()
    assert (res / "sweep.csv").read_text() == (ref / "sweep.csv").read_text()
