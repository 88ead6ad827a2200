"""norM-SGD, prox-SGD and the deterministic proximal gradient reference solver.

Randomness: a run owns one ``SeedSequence(seed)`` which is spawned into two
child streams, the first driving minibatch permutations and the second the
additive gradient noise. Both are advanced once per iteration (the noise
stream only when ``noise_std > 0``), so a trajectory is a pure function of
``(problem, config, seed)``.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diagnostics import sparsity, xi_from_lipschitz
from .problems import minibatch_sampler
from .prox import CompositeProblem, ProxOracle, natural_residual, normal_map

__all__ = [
    "NonfiniteIterateError",
    "StepSchedule",
    "NormalMapState",
    "RunConfig",
    "Trajectory",
    "norm_sgd_step",
    "prox_sgd_step",
    "run_solver",
    "deterministic_prox_grad",
    "counted",
]

METHODS = ("norm_sgd", "prox_sgd")


class NonfiniteIterateError(FloatingPointError):
    def __init__(self, k: int, what: str = "iterate"):
        self.k = k
        super().__init__(f"nonfinite {what} at iteration {k}")


@dataclass(frozen=True)
class StepSchedule:
    """``alpha_k = alpha / (beta + k)**gamma`` or a constant ``alpha``."""

    alpha: float
    beta: float = 1.0
    gamma: float = 1.0
    kind: str = "polynomial"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind == "polynomial":
            if self.beta <= 0:
                raise ValueError("beta must be positive")
            if not 0.5 < self.gamma <= 1.0:
                raise ValueError("gamma must lie in (1/2, 1]")
        elif self.kind != "constant":
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, alpha: float) -> "StepSchedule":
        return cls(alpha=alpha, kind="constant")

    def __call__(self, k):
        if self.kind == "constant":
            return np.full(np.shape(k), self.alpha) if np.ndim(k) else self.alpha
        return self.alpha / (self.beta + np.asarray(k, dtype=np.float64)) ** self.gamma

    def steps(self, n: int) -> np.ndarray:
        return np.asarray(self(np.arange(n)), dtype=np.float64)


@dataclass(frozen=True)
class NormalMapState:
    z: np.ndarray
    x: np.ndarray
    k: int = 0


def _check_step_inputs(v: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != v.shape:
        raise ValueError(f"dimension mismatch: gradient {g.shape} vs iterate {v.shape}")
    if not np.all(np.isfinite(g)):
        raise NonfiniteIterateError(k, "gradient")
    return g


def norm_sgd_step(state: NormalMapState, g, alpha: float, lam: float, prox: ProxOracle) -> NormalMapState:
    """One norM-SGD update; ``g`` must be a gradient estimate at ``state.x``.

    ``z+ = z - alpha*(g + (z - x)/lam)`` and ``x+ = prox_{lam*phi}(z+)``.
    """
    g = _check_step_inputs(state.z, g, state.k)
    z = state.z - alpha * (g + (state.z - state.x) / lam)
    if not np.all(np.isfinite(z)):
        raise NonfiniteIterateError(state.k + 1)
    return NormalMapState(z=z, x=prox.prox(z, lam), k=state.k + 1)


def prox_sgd_step(x, g, alpha: float, prox: ProxOracle, k: int = 0) -> np.ndarray:
    """``prox_{alpha*phi}(x - alpha*g)``; the prox scale follows the step size."""
    x = np.asarray(x, dtype=np.float64)
    g = _check_step_inputs(x, g, k)
    if alpha == 0:
        return x.copy()
    out = prox.prox(x - alpha * g, alpha)
    if not np.all(np.isfinite(out)):
        raise NonfiniteIterateError(k + 1)
    return out


class _CountingProx(ProxOracle):
    def __init__(self, inner: ProxOracle, counts: Counter):
        self.inner = inner
        self.kind = inner.kind
        self.counts = counts

    def value(self, x) -> float:
        return self.inner.value(x)

    def prox(self, z, lam):
        self.counts["prox"] += 1
        return self.inner.prox(z, lam)

    def params(self) -> dict:
        return self.inner.params()


def counted(problem: CompositeProblem) -> tuple[CompositeProblem, Counter]:
    """Copy of ``problem`` whose stochastic-gradient and prox oracles count calls."""
    counts: Counter = Counter()

    def stoch(x, batch=None, rng=None):
        counts["grad"] += 1
        return problem.stochastic_grad(x, batch, rng)

    return replace(problem, stochastic_grad=stoch, regularizer=_CountingProx(problem.regularizer, counts)), counts


@dataclass
class RunConfig:
    """Inputs of a single solver run.

    ``max_epochs`` counts passes over the data for finite-sum problems and is
    converted to iterations; otherwise ``max_iters`` is required.
    ``residual_lam`` is the prox parameter of the recorded natural residual.
    ``lipschitz`` (if known) fixes ``xi`` for the recorded merit values.
    """

    lam: float
    schedule: StepSchedule
    batch_size: int = 1
    max_iters: Optional[int] = None
    max_epochs: Optional[float] = None
    seed: int = 0
    record_every: int = 1
    diagnostic_mode: bool = False
    noise_std: float = 0.0
    lipschitz: Optional[float] = None
    residual_lam: float = 1.0
    keep_iterates: bool = False
    x0: Optional[np.ndarray] = None
    diagnostic_size_limit: float = 1e7

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        if self.max_iters is None and self.max_epochs is None:
            raise ValueError("budget must be finite: set max_iters or max_epochs")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    def iterations(self, problem: CompositeProblem) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        if problem.n_samples is None:
            raise ValueError("max_epochs needs a finite-sum problem; use max_iters")
        per_epoch = -(-problem.n_samples // self.batch_size)
        return int(round(self.max_epochs * per_epoch))


TRAJECTORY_COLUMNS = ("k", "epoch", "psi", "fnat", "fnor", "merit", "sparsity", "elapsed")


@dataclass
class Trajectory:
    """Recorded diagnostics of one run.

    ``rows`` hold the values of :data:`TRAJECTORY_COLUMNS`; ``fnor`` and
    ``merit`` are ``None`` for prox-SGD. In diagnostic mode ``z_hist`` and
    ``e_hist`` hold every iterate ``z^k`` (k = 0..K) and error
    ``e^k = g^k - grad f(x^k)`` (k = 0..K-1).
    """

    method: str
    rows: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    oracle_calls: dict = field(default_factory=dict)
    z_hist: Optional[np.ndarray] = None
    e_hist: Optional[np.ndarray] = None
    x_final: Optional[np.ndarray] = None
    z_final: Optional[np.ndarray] = None
    xi: Optional[float] = None

    def column(self, name: str) -> np.ndarray:
        j = TRAJECTORY_COLUMNS.index(name)
        return np.array([np.nan if r[j] is None else r[j] for r in self.rows], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)


def _record(problem, cfg, method, k, n_seen, x, z, xi, t0):
    psi = problem.psi(x)
    fnat = float(np.linalg.norm(natural_residual(problem, x, cfg.residual_lam)))
    fnor = h = None
    if method == "norm_sgd":
        F, _ = normal_map(problem, z, cfg.lam)
        fnor = float(np.linalg.norm(F))
        if xi is not None:
            h = psi + 0.5 * xi * cfg.lam * fnor * fnor
    epoch = n_seen / problem.n_samples if problem.n_samples else float(k)
    return (k, epoch, psi, fnat, fnor, h, sparsity(x), time.perf_counter() - t0)


def run_solver(problem: CompositeProblem, cfg: RunConfig, method: str = "norm_sgd") -> Trajectory:
    """Run norM-SGD or prox-SGD to the configured budget.

    The initial point is ``cfg.x0`` (default ``ones(d)/d``). For norM-SGD it
    is used as ``z^0`` and ``x^0 = prox(z^0)``, which differs from ``cfg.x0``
    whenever the prox moves it. Diagnostics are evaluated with uncounted
    full-gradient oracles; ``oracle_calls`` reports only the per-iteration
    stochastic-gradient and prox calls made by the method itself.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    n_iter = cfg.iterations(problem)
    d = problem.dim
    if cfg.diagnostic_mode:
        size = d * (problem.n_samples or 1)
        if size > cfg.diagnostic_size_limit:
            raise ValueError(
                f"diagnostic mode needs a full gradient per iteration; d*N={size:g} exceeds "
                f"the limit {cfg.diagnostic_size_limit:g}"
            )
    finite_sum = problem.n_samples is not None
    if finite_sum and cfg.batch_size > problem.n_samples:
        raise ValueError("batch_size exceeds the number of samples")

    sampler_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    sampler = minibatch_sampler(problem.n_samples, cfg.batch_size, sampler_seq) if finite_sum else None
    noise_rng = np.random.default_rng(noise_seq)
    steps = cfg.schedule.steps(n_iter)
    lip = cfg.lipschitz if cfg.lipschitz is not None else problem.metadata.get("lipschitz")
    xi = xi_from_lipschitz(lip, cfg.lam) if lip is not None else None

    work, counts = counted(problem)
    x0 = np.full(d, 1.0 / d) if cfg.x0 is None else np.array(cfg.x0, dtype=np.float64)
    if x0.shape != (d,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({d},)")

    traj = Trajectory(method=method, xi=xi)
    if method == "norm_sgd":
        state = NormalMapState(z=x0, x=problem.prox(x0, cfg.lam), k=0)
        x, z = state.x, state.z
    else:
        x, z = x0, None

    z_hist = e_hist = None
    if cfg.diagnostic_mode:
        z_hist = np.empty((n_iter + 1, d))
        e_hist = np.empty((n_iter, d))
        z_hist[0] = z if z is not None else x

    t0 = time.perf_counter()
    n_seen = 0

    def record(k):
        traj.rows.append(_record(problem, cfg, method, k, n_seen, x, z, xi, t0))
        if cfg.keep_iterates:
            traj.iterates.append(x.copy())

    record(0)
    for k in range(n_iter):
        batch = next(sampler) if finite_sum else None
        g = work.stochastic_grad(x, batch, noise_rng)
        if cfg.noise_std > 0:
            g = g + cfg.noise_std * noise_rng.standard_normal(d)
        if not np.all(np.isfinite(g)):
            raise NonfiniteIterateError(k, "gradient")
        if cfg.diagnostic_mode:
            e_hist[k] = g - problem.smooth_grad(x)
        n_seen += len(batch) if finite_sum else 1
        if method == "norm_sgd":
            state = norm_sgd_step(state, g, steps[k], cfg.lam, work.regularizer)
            x, z = state.x, state.z
        else:
            x = prox_sgd_step(x, g, steps[k], work.regularizer, k)
        if cfg.diagnostic_mode:
            z_hist[k + 1] = z if z is not None else x
        if (k + 1) % cfg.record_every == 0 or k + 1 == n_iter:
            record(k + 1)

    traj.oracle_calls = {"grad": counts["grad"], "prox": counts["prox"]}
    traj.z_hist, traj.e_hist = z_hist, e_hist
    traj.x_final, traj.z_final = x, z
    return traj


def deterministic_prox_grad(
    problem: CompositeProblem,
    lam: float = 1.0,
    step: Optional[float] = None,
    tol: float = 1e-5,
    max_iter: int = 100_000,
    x0=None,
) -> tuple[np.ndarray, float, bool]:
    """Full-gradient proximal gradient method ``x+ = prox_{step*phi}(x - step*grad f(x))``.

    Stops once ``||x - prox_{lam*phi}(x - lam*grad f(x))|| < tol``. ``step``
    defaults to ``1/L`` with ``L`` from the problem metadata. Returns
    ``(x, psi(x), converged)``; without convergence the iterate with the
    smallest objective value is returned.
    """
    if step is None:
        lip = problem.metadata.get("lipschitz")
        if not lip:
            raise ValueError("no Lipschitz constant available; pass step explicitly")
        step = 1.0 / lip
    x = np.full(problem.dim, 1.0 / problem.dim) if x0 is None else np.array(x0, dtype=np.float64)
    best_x, best_psi = x, problem.psi(x)
    for k in range(max_iter + 1):
        grad = problem.smooth_grad(x)
        if np.linalg.norm(x - problem.prox(x - lam * grad, lam)) < tol:
            return x, problem.psi(x), True
        if k == max_iter:
            break
        x = problem.prox(x - step * grad, step)
        if not np.all(np.isfinite(x)):
            raise NonfiniteIterateError(k + 1)
        val = problem.psi(x)
        if val < best_psi:
            best_x, best_psi = x, val
    return best_x, best_psi, False
