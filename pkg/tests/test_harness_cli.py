import json

import numpy as np
import pytest

from normsgd.cli import main
from normsgd.data import gen_synthetic_classification, parse_libsvm, serialize_libsvm
from normsgd.harness import (
    CSV_VERSION,
    ConfigError,
    ExperimentConfig,
    cmd_rates,
    cmd_solve,
    load_config,
    parse_config,
    read_trajectory_csv,
)

SMALL = """\
# tiny synthetic run
problem = synthetic
n_samples = 120
n_features = 12
density = 0.3
methods = norm_sgd, prox_sgd
alphas = 2.0
beta = 10
batch_size = 16
epochs = 2   # two passes
seeds = 0, 1
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_parse_config_values():
    cfg = parse_config(SMALL + "lam = alpha\nbeta = L\nnu = 1/N\nbatch_size = full\ndiagnostic_mode = yes\n")
    assert cfg.methods == ["norm_sgd", "prox_sgd"]
    assert cfg.seeds == [0, 1] and cfg.epochs == 2.0
    assert cfg.lam is None and cfg.beta is None and cfg.nu is None
    assert cfg.batch_size == 0 and cfg.diagnostic_mode is True


@pytest.mark.parametrize(
    "text, match",
    [
        ("colour = red\n", "unknown key"),
        ("epochs\n", "expected key = value"),
        ("seeds = a, b\n", "bad value"),
        ("seeds = \n", "at least one seed"),
        ("methods = sgd\n", "methods"),
        ("problem = libsvm\ndata_path = /nonexistent/file.svm\n", "not found"),
        ("gamma = 0.5\n", "gamma"),
        ("epochs = none\n", "epochs or max_iters"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_cli_exit_codes_for_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_thing = 3\n")
    assert main(["solve", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["solve"]) == 2
    assert main(["nonsense"]) == 2


def test_solve_outputs_and_byte_determinism(small_cfg, tmp_path):
    assert main(["solve", "--config", str(small_cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", str(small_cfg), "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted([
        "norm_sgd_a2_s0.csv", "norm_sgd_a2_s1.csv", "prox_sgd_a2_s0.csv", "prox_sgd_a2_s1.csv", "summary.json",
    ])
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = (tmp_path / "a" / "norm_sgd_a2_s0.csv").read_text().splitlines()
    assert text[0].startswith(f"# {CSV_VERSION}")
    assert text[1] == "k,epoch,psi,fnat,fnor,merit,sparsity,elapsed"
    cols = read_trajectory_csv(tmp_path / "a" / "prox_sgd_a2_s1.csv")
    assert np.all(np.diff(cols["k"]) > 0)
    assert np.all(np.isnan(cols["fnor"])) and np.all(np.isfinite(cols["psi"]))
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["oracle_parity"] and summary["reference_converged"]
    assert {r["grad_calls"] for r in summary["runs"]} == {16}


def test_csv_values_round_trip(small_cfg, tmp_path):
    from normsgd.harness import build_problem, make_run_config
    from normsgd.solvers import run_solver

    cfg = load_config(small_cfg)
    cmd_solve(cfg, tmp_path)
    prob = build_problem(cfg)
    traj = run_solver(prob, make_run_config(cfg, prob, 2.0, 0), "norm_sgd")
    cols = read_trajectory_csv(tmp_path / "norm_sgd_a2_s0.csv")
    np.testing.assert_array_equal(cols["psi"], traj.column("psi"))
    np.testing.assert_array_equal(cols["merit"], traj.column("merit"))


def test_seed_list_override_and_zero_epochs(small_cfg, tmp_path):
    text = small_cfg.read_text().replace("epochs = 2   # two passes", "epochs = 0")
    small_cfg.write_text(text)
    assert main(["solve", "--config", str(small_cfg), "--out", str(tmp_path / "z"), "--seed-list", "5"]) == 0
    cols = read_trajectory_csv(tmp_path / "z" / "norm_sgd_a2_s5.csv")
    assert cols["k"].tolist() == [0.0]
    assert not (tmp_path / "z" / "norm_sgd_a2_s0.csv").exists()


def test_wallclock_column_optional(small_cfg, tmp_path):
    cfg = load_config(small_cfg)
    cfg.record_wallclock = True
    cmd_solve(cfg, tmp_path)
    assert np.all(np.isfinite(read_trajectory_csv(tmp_path / "norm_sgd_a2_s0.csv")["elapsed"]))


def test_reference_failure_marks_target_unavailable(small_cfg, tmp_path):
    cfg = load_config(small_cfg)
    cfg.det_max_iter = 1
    cfg.det_tol = 1e-14
    summary = cmd_solve(cfg, tmp_path)
    assert summary["accuracy_target_available"] is False
    assert all(r["epochs_to_accuracy"] is None for r in summary["runs"])


def test_solve_from_libsvm_file(tmp_path):
    design = gen_synthetic_classification(80, 6, 0.5, seed=2)
    (tmp_path / "train.svm").write_bytes(serialize_libsvm(design))
    cfg_path = tmp_path / "f.cfg"
    cfg_path.write_text("problem = libsvm\ndata_path = train.svm\nalphas = 1\nbeta = 5\nbatch_size = 10\nepochs = 1\nseeds = 0\n")
    cfg = load_config(cfg_path)
    summary = cmd_solve(cfg, tmp_path / "out")
    assert summary["n_samples"] == 80 and summary["dim"] == 6


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "div.cfg"
    path.write_text("problem = power_abs\npower = 4\nn_features = 3\nalphas = 100\nbeta = 1\nmax_iters = 200\nseeds = 0\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    assert "nonfinite" in capsys.readouterr().err


def test_rates_table(tmp_path):
    cfg = ExperimentConfig(
        problem="quadratic_l1", n_samples=50, n_features=4, data_seed=0, nu=0.05, alphas=[5.0], beta=5.0,
        lam=0.5, batch_size=0, noise_std=0.5, max_iters=2000, record_every=10, seeds=[0, 1],
        rates_gammas=[0.75, 1.0], rates_problems=["quadratic_l1"], det_tol=1e-12,
    )
    rows = cmd_rates(cfg, tmp_path)
    assert [r["gamma"] for r in rows] == [0.75, 1.0]
    assert rows[0]["pred_phi_x"] == pytest.approx(0.125) and rows[0]["pred_phi"] == pytest.approx(0.5)
    assert rows[1]["pred_phi_x"] == 0.5
    header = (tmp_path / "rates.csv").read_text().splitlines()[0]
    assert header.split(",")[:4] == ["problem", "theta", "gamma", "alpha"]
    assert len(list((tmp_path / "series").iterdir())) == 4
    assert (tmp_path / "rate_surface.csv").read_text().startswith("gamma,theta,phi,phi_x\n")


def test_rates_empty_grid_and_fit_failure(tmp_path):
    cfg = ExperimentConfig(problem="quadratic_l1", rates_gammas=[], rates_problems=[], seeds=[0])
    assert cmd_rates(cfg, tmp_path) == []
    assert (tmp_path / "rates.csv").read_text().count("\n") == 1
    # power_abs started at its minimizer: the series is identically zero
    cfg = ExperimentConfig(
        problem="power_abs", n_features=2, alphas=[1.0], beta=1.0, lam=1.0, max_iters=50, seeds=[0],
        rates_gammas=[0.75], rates_problems=["power_abs:2"],
    )
    from normsgd import harness

    orig = harness.make_run_config
    harness.make_run_config = lambda *a, **k: orig(*a, **k, x0=np.zeros(2))
    try:
        rows = cmd_rates(cfg, tmp_path / "z")
    finally:
        harness.make_run_config = orig
    assert rows[0]["flag"] == "fit_failed" and rows[0]["iter_slope"] is None


def descent_cfg(tmp_path, **extra):
    items = dict(problem="quadratic_l1", n_samples=40, n_features=4, data_seed=0, nu=0.1, lam=0.5,
                 schedule="constant", alphas=1e-7, batch_size="full", max_iters=300, seeds=0,
                 diagnostic_mode="true")
    items.update(extra)
    path = tmp_path / "d.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items() if v is not None))
    return path


def test_descent_check_refusals(tmp_path, capsys):
    assert main(["descent-check", "--config", str(descent_cfg(tmp_path, diagnostic_mode=None))]) == 2
    assert "diagnostic_mode" in capsys.readouterr().err
    assert main(["descent-check", "--config", str(descent_cfg(tmp_path, diagnostic_size_limit=10))]) == 2
    assert "too large" in capsys.readouterr().err


def test_descent_check_scaled_window_reports_only(tmp_path):
    out = tmp_path / "o"
    assert main(["descent-check", "--config", str(descent_cfg(tmp_path, time_window_scale=1000, alphas=1e-4)), "--out", str(out)]) == 0
    report = json.loads((out / "descent_report.json").read_text())
    assert report["T"] > 0 and "total_violations" in report
    assert (out / "descent_windows_s0.csv").read_text().startswith("window,m_k,tau_k,merit,fnor,s_k,margin\n")


def test_gen_data_examples(tmp_path):
    p1, p2, p0 = tmp_path / "a.svm", tmp_path / "b.svm", tmp_path / "e.svm"
    args = ["--n-samples", "10", "--n-features", "5", "--density", "1", "--seed", "7"]
    assert main(["gen-data", str(p1), *args]) == 0
    assert main(["gen-data", str(p2), *args]) == 0
    data = p1.read_bytes()
    assert data == p2.read_bytes() and data.count(b"\n") == 10
    assert serialize_libsvm(parse_libsvm(data)) == data
    assert main(["gen-data", str(p0), "--n-samples", "0", "--n-features", "5"]) == 0
    assert p0.read_bytes() == b"" and parse_libsvm(p0.read_bytes()).n_samples == 0


def test_gen_data_io_failure(tmp_path, capsys):
    target = tmp_path / "no_such_dir" / "x.svm"
    assert main(["gen-data", str(target), "--n-samples", "3", "--n-features", "2"]) == 2
    assert "No such file or directory" in capsys.readouterr().err
