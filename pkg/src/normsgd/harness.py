"""Experiment orchestration behind the ``normsgd`` command line.

Configuration files are flat ``key = value`` text, one key per line, ``#``
starts a comment, lists are comma separated. See :data:`CONFIG_KEYS` for the
accepted keys; anything else is rejected.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import rates
from .data import gen_synthetic_classification, load_libsvm, serialize_libsvm
from .diagnostics import descent_audit, time_indices, universal_time_window, window_errors, xi_from_lipschitz
from .problems import SyntheticSpec, make_problem, make_quadratic_l1_data, make_regularizer
from .prox import CompositeProblem, normal_map
from .solvers import RunConfig, StepSchedule, Trajectory, deterministic_prox_grad, run_solver

logger = logging.getLogger(__name__)

CSV_VERSION = "normsgd-trajectory/1"
TRAJECTORY_HEADER = ["k", "epoch", "psi", "fnat", "fnor", "merit", "sparsity", "elapsed"]
RATES_HEADER = [
    "problem", "theta", "gamma", "alpha", "n_seeds",
    "iter_slope", "iter_r2", "psi_slope", "psi_r2",
    "pred_phi_x", "pred_phi", "iter_dev", "psi_dev", "flag",
]


class ConfigError(ValueError):
    """Invalid or unsupported experiment configuration (exit code 2)."""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str, keyword: str) -> Optional[float]:
    return None if s.strip().lower() == keyword else float(s)


def _split(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


@dataclass
class ExperimentConfig:
    """All experiment settings; defaults follow the sparse classification setup.

    ``lam=None`` ties the prox parameter to the step-size scale alpha,
    ``beta=None`` uses the Lipschitz estimate, ``nu=None`` means ``1/N``
    (finite sums) or 0, ``batch_size=0`` means the full batch.
    """

    problem: str = "synthetic"
    data_path: Optional[str] = None
    libsvm_n_features: Optional[int] = None
    n_samples: int = 2000
    n_features: int = 500
    density: float = 0.05
    data_seed: int = 0
    power: float = 2.0
    regularizer: str = "l1"
    nu: Optional[float] = None
    nu2: float = 0.0
    methods: list = field(default_factory=lambda: ["norm_sgd", "prox_sgd"])
    alphas: list = field(default_factory=lambda: [1.0])
    lam: Optional[float] = None
    beta: Optional[float] = None
    gamma: float = 1.0
    schedule: str = "polynomial"
    batch_size: int = 256
    epochs: Optional[float] = 20.0
    max_iters: Optional[int] = None
    seeds: list = field(default_factory=lambda: list(range(10)))
    diagnostic_mode: bool = False
    diagnostic_size_limit: float = 1e7
    record_every: int = 1
    noise_std: float = 0.0
    lipschitz: Optional[float] = None
    residual_lam: float = 1.0
    time_window_scale: float = 1.0
    kl_constant: Optional[float] = None
    det_tol: float = 1e-5
    det_max_iter: int = 100_000
    accuracy: float = 0.01
    record_wallclock: bool = False
    threads: int = 1
    out: str = "out"
    rates_gammas: list = field(default_factory=lambda: [0.75, 1.0])
    rates_problems: list = field(default_factory=lambda: ["quadratic_l1"])
    rates_burn_in: float = 0.1

    def validate(self) -> "ExperimentConfig":
        if self.problem not in ("synthetic", "libsvm", "quadratic_l1", "power_abs"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.problem == "libsvm":
            if not self.data_path:
                raise ConfigError("problem = libsvm needs data_path")
            if not Path(self.data_path).is_file():
                raise ConfigError(f"data file not found: {self.data_path}")
        bad = [m for m in self.methods if m not in ("norm_sgd", "prox_sgd", "det_prox_grad")]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of norm_sgd, prox_sgd, det_prox_grad; got {self.methods}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.alphas or any(a <= 0 for a in self.alphas):
            raise ConfigError("alphas must be a nonempty list of positive numbers")
        if self.epochs is None and self.max_iters is None:
            raise ConfigError("set epochs or max_iters")
        if self.schedule not in ("polynomial", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.regularizer not in ("l1", "elastic_net", "zero"):
            raise ConfigError(f"unknown regularizer {self.regularizer!r}")
        if self.batch_size < 0 or self.record_every < 1 or self.threads < 1:
            raise ConfigError("batch_size, record_every and threads must be positive")
        if self.schedule == "polynomial" and not 0.5 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (1/2, 1]")
        return self


def _convert(name: str, raw: str):
    raw = raw.strip()
    if name in ("methods", "rates_problems"):
        return _split(raw)
    if name in ("alphas", "rates_gammas"):
        return [float(v) for v in _split(raw)]
    if name == "seeds":
        return [int(v) for v in _split(raw)]
    if name in ("diagnostic_mode", "record_wallclock"):
        return _parse_bool(raw)
    if name == "lam":
        return _opt_float(raw, "alpha")
    if name == "beta":
        return _opt_float(raw, "l")
    if name == "nu":
        return None if raw.lower() in ("1/n", "auto") else float(raw)
    if name in ("lipschitz", "kl_constant"):
        return _opt_float(raw, "auto")
    if name == "epochs":
        return _opt_float(raw, "none")
    if name in ("max_iters", "libsvm_n_features"):
        return None if raw.lower() in ("none", "auto") else int(raw)
    if name == "batch_size":
        return 0 if raw.lower() == "full" else int(raw)
    if name in ("n_samples", "n_features", "data_seed", "record_every", "det_max_iter", "threads"):
        return int(raw)
    if name in ("problem", "data_path", "regularizer", "schedule", "out"):
        return raw
    return float(raw)


CONFIG_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def parse_config(text: str, base_dir: Optional[Path] = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from None
    if base_dir is not None and values.get("data_path") and not os.path.isabs(values["data_path"]):
        values["data_path"] = str(base_dir / values["data_path"])
    return ExperimentConfig(**values).validate()


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, base_dir=Path(path).parent)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


# --- problem construction -------------------------------------------------


def build_problem(cfg: ExperimentConfig, kind: Optional[str] = None) -> CompositeProblem:
    """Instantiate the configured problem (``kind`` overrides ``cfg.problem``, e.g. ``power_abs:4``)."""
    kind = kind or cfg.problem
    name, _, arg = kind.partition(":")
    if name in ("synthetic", "libsvm"):
        if name == "libsvm":
            design = load_libsvm(cfg.data_path, n_features=cfg.libsvm_n_features)
        else:
            design = gen_synthetic_classification(cfg.n_samples, cfg.n_features, cfg.density, cfg.data_seed)
        nu = cfg.nu if cfg.nu is not None else 1.0 / design.n_samples
        prob = make_problem(design, make_regularizer(cfg.regularizer, nu, cfg.nu2))
    elif name == "quadratic_l1":
        A, b = make_quadratic_l1_data(cfg.n_samples, cfg.n_features, cfg.data_seed)
        nu = cfg.nu if cfg.nu is not None else 1.0 / cfg.n_samples
        prob = make_problem(SyntheticSpec("quadratic_l1", A=A, b=b), make_regularizer(cfg.regularizer, nu, cfg.nu2))
    elif name == "power_abs":
        p = float(arg) if arg else cfg.power
        reg = make_regularizer(cfg.regularizer, cfg.nu or 0.0, cfg.nu2) if cfg.nu else make_regularizer("zero")
        prob = make_problem(SyntheticSpec("power_abs", p=p), reg, dim=cfg.n_features)
    else:
        raise ConfigError(f"unknown problem {kind!r}")
    if cfg.lipschitz is not None:
        prob.metadata["lipschitz"] = cfg.lipschitz
    return prob


def make_run_config(cfg: ExperimentConfig, problem: CompositeProblem, alpha: float, seed: int, **extra) -> RunConfig:
    lip = problem.metadata.get("lipschitz")
    if cfg.schedule == "constant":
        schedule = StepSchedule.constant(alpha)
    else:
        beta = cfg.beta
        if beta is None:
            if not lip:
                raise ConfigError("beta = L needs a known Lipschitz constant; set beta or lipschitz")
            beta = lip
        schedule = StepSchedule(alpha, beta=beta, gamma=cfg.gamma)
    n = problem.n_samples
    batch = n if (cfg.batch_size == 0 and n) else (cfg.batch_size or 1)
    if n is not None:
        batch = min(batch, n)
    kw = dict(
        lam=cfg.lam if cfg.lam is not None else alpha,
        schedule=schedule,
        batch_size=batch,
        max_iters=cfg.max_iters,
        max_epochs=cfg.epochs if cfg.max_iters is None else None,
        seed=seed,
        record_every=cfg.record_every,
        diagnostic_mode=cfg.diagnostic_mode,
        diagnostic_size_limit=cfg.diagnostic_size_limit,
        noise_std=cfg.noise_std,
        lipschitz=lip,
        residual_lam=cfg.residual_lam,
    )
    kw.update(extra)
    if kw["max_iters"] is None and n is None:
        raise ConfigError("problems without a finite sum need max_iters")
    return RunConfig(**kw)


def reference_solution(cfg: ExperimentConfig, problem: CompositeProblem) -> tuple[np.ndarray, float, bool]:
    """Best deterministic proximal-gradient solution over three starting points."""
    if "x_star" in problem.metadata:
        return problem.metadata["x_star"], problem.metadata["psi_star"], True
    d = problem.dim
    starts = [np.full(d, 1.0 / d), np.zeros(d), 0.1 * np.random.default_rng(cfg.data_seed).standard_normal(d)]
    best = None
    for x0 in starts:
        x, val, ok = deterministic_prox_grad(problem, lam=1.0, tol=cfg.det_tol, max_iter=cfg.det_max_iter, x0=x0)
        if best is None or (ok and not best[2]) or (ok == best[2] and val < best[1]):
            best = (x, val, ok)
    if not best[2]:
        logger.warning("reference solve did not reach tol=%g in %d iterations", cfg.det_tol, cfg.det_max_iter)
    return best


# --- trajectory files -------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path, meta: dict, include_time: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        tags = " ".join(f"{k}={v}" for k, v in meta.items())
        fh.write(f"# {CSV_VERSION} {tags}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for row in traj.rows:
            vals = list(row)
            if not include_time:
                vals[-1] = None
            w.writerow([_fmt(v) for v in vals])


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory file as float arrays (blank cells become NaN)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(f"# {CSV_VERSION}"):
            raise ValueError(f"{path}: not a {CSV_VERSION} file")
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(float(v) if v else math.nan)
    return {h: np.asarray(v) for h, v in cols.items()}


def _run_name(method: str, alpha: float, seed: int) -> str:
    return f"{method}_a{alpha:g}_s{seed}"


def _map(fn, jobs, threads: int):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# --- commands ---------------------------------------------------------------


def cmd_solve(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (method, alpha, seed) combination and write CSVs plus ``summary.json``.

    Epochs-to-accuracy is the first recorded epoch with
    ``psi(x^k) - psi* <= accuracy * max(1, psi*)``.
    """
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    x_star, psi_star, ref_ok = reference_solution(cfg, problem)

    stochastic = [m for m in cfg.methods if m != "det_prox_grad"]
    jobs = [(m, a, s) for m in stochastic for a in cfg.alphas for s in cfg.seeds]

    def run(job):
        method, alpha, seed = job
        traj = run_solver(problem, make_run_config(cfg, problem, alpha, seed), method)
        name = _run_name(method, alpha, seed)
        meta = {"method": method, "alpha": _fmt(alpha), "seed": seed}
        write_trajectory_csv(traj, out / f"{name}.csv", meta, include_time=cfg.record_wallclock)
        return name, traj.oracle_calls

    results = _map(run, jobs, cfg.threads)

    target = psi_star + cfg.accuracy * max(1.0, psi_star)
    runs = []
    for (method, alpha, seed), (name, calls) in zip(jobs, results):
        cols = read_trajectory_csv(out / f"{name}.csv")
        hit = np.flatnonzero(cols["psi"] <= target) if ref_ok else np.zeros(0, dtype=int)
        runs.append({
            "method": method,
            "alpha": alpha,
            "seed": seed,
            "file": f"{name}.csv",
            "epochs_to_accuracy": float(cols["epoch"][hit[0]]) if hit.size else None,
            "final_psi": float(cols["psi"][-1]),
            "final_fnat": float(cols["fnat"][-1]),
            "final_sparsity": float(cols["sparsity"][-1]),
            "grad_calls": calls["grad"],
            "prox_calls": calls["prox"],
        })

    aggregate = {}
    for method in stochastic:
        per_alpha = {}
        for alpha in cfg.alphas:
            sel = [r for r in runs if r["method"] == method and r["alpha"] == alpha]
            reached = [r["epochs_to_accuracy"] for r in sel if r["epochs_to_accuracy"] is not None]
            per_alpha[_fmt(alpha)] = {
                "runs": len(sel),
                "reached": len(reached),
                "mean_epochs_to_accuracy": float(np.mean(reached)) if reached and len(reached) == len(sel) else None,
                "mean_final_psi": float(np.mean([r["final_psi"] for r in sel])),
                "mean_final_sparsity": float(np.mean([r["final_sparsity"] for r in sel])),
            }
        aggregate[method] = per_alpha

    calls_by_method = {}
    for r in runs:
        calls_by_method.setdefault(r["method"], set()).add((r["alpha"], r["seed"], r["grad_calls"], r["prox_calls"]))
    parity = len({frozenset(v) for v in calls_by_method.values()}) <= 1

    summary = {
        "problem": cfg.problem,
        "n_samples": problem.n_samples,
        "dim": problem.dim,
        "lipschitz": problem.metadata.get("lipschitz"),
        "psi_star": psi_star,
        "reference_converged": ref_ok,
        "accuracy_target_available": ref_ok,
        "accuracy": cfg.accuracy,
        "runs": runs,
        "aggregate": aggregate,
        "oracle_parity": parity,
    }
    if "det_prox_grad" in cfg.methods:
        summary["det_prox_grad"] = {"psi": psi_star, "converged": ref_ok, "sparsity": float(100.0 * np.mean(np.abs(x_star) <= 1e-8))}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _rate_series(problem, run_cfg, x_star, psi_star):
    traj = run_solver(problem, run_cfg, "norm_sgd")
    k = traj.column("k")
    dist = np.linalg.norm(np.asarray(traj.iterates) - x_star, axis=1)
    gap = np.abs(traj.column("psi") - psi_star)
    return k, dist, gap


def _fit_positive(k, v, burn_in):
    keep = (v > 0) & np.isfinite(v)
    return rates.fit_loglog_slope(np.column_stack([k[keep], v[keep]]), burn_in=burn_in)


def cmd_rates(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Empirical rate table over ``rates_problems x rates_gammas x alphas``.

    Per seed, ``||x^k - x*||`` and ``|psi(x^k) - psi*|`` series are written to
    ``series/``; slopes are fitted per seed (``k >= rates_burn_in * K``) from
    those files and averaged.
    """
    out = Path(out_dir or cfg.out)
    series_dir = out / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for pname in cfg.rates_problems:
        problem = build_problem(cfg, pname)
        theta = problem.metadata.get("known_theta")
        x_star, psi_star, ok = reference_solution(cfg, problem)
        for gamma in cfg.rates_gammas:
            for alpha in cfg.alphas:
                cells.append((pname, problem, theta, x_star, psi_star, ok, gamma, alpha))

    rows = []
    for pname, problem, theta, x_star, psi_star, ok, gamma, alpha in cells:
        cell_cfg = ExperimentConfig(**{**cfg.__dict__, "gamma": gamma})
        tag = f"{pname.replace(':', '')}_g{gamma:g}_a{alpha:g}"

        def run(seed):
            rc = make_run_config(cell_cfg, problem, alpha, seed, keep_iterates=True)
            k, dist, gap = _rate_series(problem, rc, x_star, psi_star)
            path = series_dir / f"{tag}_s{seed}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "iterate_dist", "psi_gap"])
                for row in zip(k, dist, gap):
                    w.writerow([_fmt(v) for v in row])
            return path

        paths = _map(run, cfg.seeds, cfg.threads)
        it_fits, psi_fits, flag = [], [], "ok" if ok else "reference_not_converged"
        for path in paths:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            k = data[:, 0]
            burn = cfg.rates_burn_in * k.max()
            try:
                it_fits.append(_fit_positive(k, data[:, 1], burn))
                psi_fits.append(_fit_positive(k, data[:, 2], burn))
            except ValueError:
                logger.warning("slope fit failed for %s", path)
                flag = "fit_failed"
        pred_x = pred = None
        if theta is not None:
            if gamma >= 1.0:
                pred_x, pred = (0.5, 1.0) if theta <= 0.5 else (None, None)
            else:
                try:
                    pred_x, pred = rates.phi_x_rate(gamma, theta), rates.phi_rate(gamma, theta)
                except rates.NoGuaranteeError:
                    flag = "no_guarantee"
        it_slope = float(np.mean([f[0] for f in it_fits])) if flag != "fit_failed" and it_fits else None
        psi_slope = float(np.mean([f[0] for f in psi_fits])) if flag != "fit_failed" and psi_fits else None
        rows.append({
            "problem": pname,
            "theta": theta,
            "gamma": gamma,
            "alpha": alpha,
            "n_seeds": len(paths),
            "iter_slope": it_slope,
            "iter_r2": float(np.mean([f[1] for f in it_fits])) if it_slope is not None else None,
            "psi_slope": psi_slope,
            "psi_r2": float(np.mean([f[1] for f in psi_fits])) if psi_slope is not None else None,
            "pred_phi_x": pred_x,
            "pred_phi": pred,
            "iter_dev": it_slope + pred_x if it_slope is not None and pred_x is not None else None,
            "psi_dev": psi_slope + pred if psi_slope is not None and pred is not None else None,
            "flag": flag,
        })

    with open(out / "rates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATES_HEADER)
        for r in rows:
            w.writerow([r[h] if isinstance(r[h], str) else _fmt(r[h]) for h in RATES_HEADER])
    surface_gammas = [g for g in cfg.rates_gammas if g > 2.0 / 3.0]
    (out / "rate_surface.csv").write_text(rates.rate_surface_csv(surface_gammas, np.linspace(0.0, 0.95, 20)))
    return rows


def cmd_descent_check(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Audit approximate descent of the merit function over time windows for norM-SGD runs."""
    if not cfg.diagnostic_mode:
        raise ConfigError("descent-check needs diagnostic_mode = true (exact errors e^k are required)")
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    size = problem.dim * (problem.n_samples or 1)
    if size > cfg.diagnostic_size_limit:
        raise ConfigError(
            f"problem too large for diagnostic mode (d*N = {size:g} > {cfg.diagnostic_size_limit:g}); "
            "use a smaller dataset or raise diagnostic_size_limit"
        )
    lip = problem.metadata.get("lipschitz")
    if not lip:
        raise ConfigError("descent-check needs a Lipschitz constant; set lipschitz")
    alpha = cfg.alphas[0]
    lam = cfg.lam if cfg.lam is not None else alpha
    xi = xi_from_lipschitz(lip, lam)
    T = universal_time_window(lip, lam, cfg.kl_constant) * cfg.time_window_scale

    report = {"lipschitz": lip, "lam": lam, "alpha": alpha, "xi": xi, "T": T, "seeds": {}}
    for seed in cfg.seeds:
        rc = make_run_config(cfg, problem, alpha, seed, diagnostic_mode=True, record_every=10**9)
        traj = run_solver(problem, rc, "norm_sgd")
        n_iter = traj.e_hist.shape[0]
        steps = rc.schedule.steps(n_iter)
        part = time_indices(steps, T, horizon=n_iter)
        werr = window_errors(traj.e_hist, steps, part)
        merits, fnor = [], []
        for m in part.indices:
            F, x = normal_map(problem, traj.z_hist[m], lam)
            fn = float(np.linalg.norm(F))
            fnor.append(fn)
            merits.append(problem.psi(x) + 0.5 * xi * lam * fn * fn)
        burn = part.burn_in if part.burn_in is not None else part.n_windows
        audit = descent_audit(merits, fnor, werr, xi, T, burn)
        report["seeds"][str(seed)] = {
            **audit.summary(),
            "windows": part.n_windows,
            "burn_in_reached": part.burn_in is not None,
            "violating_windows": audit.violations,
        }
        with open(out / f"descent_windows_s{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window", "m_k", "tau_k", "merit", "fnor", "s_k", "margin"])
            for k in range(part.n_windows):
                margin = audit.margins[k - burn] if k >= burn else None
                w.writerow([k, part.indices[k]] + [_fmt(v) for v in (part.tau[k], merits[k], fnor[k], werr.s[k], margin)])
    report["total_violations"] = sum(v["violations"] for v in report["seeds"].values())
    (out / "descent_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_gen_data(n_samples: int, n_features: int, density: float, seed: int, path) -> bytes:
    design = gen_synthetic_classification(n_samples, n_features, density, seed)
    payload = serialize_libsvm(design)
    Path(path).write_bytes(payload)
    return payload
