"""Concrete composite problems and minibatch sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .data import SparseDesign, gen_synthetic_classification, lipschitz_estimate
from .prox import CompositeProblem, ElasticNetProx, L1Prox, ProxOracle, ZeroProx

__all__ = [
    "SyntheticSpec",
    "tanh_loss_value",
    "tanh_loss_grad",
    "make_problem",
    "make_regularizer",
    "make_quadratic_l1_data",
    "minibatch_sampler",
]


def tanh_loss_value(design: SparseDesign, x) -> float:
    """``(1/N) sum_i (1 - tanh(b_i * a_i @ x))``."""
    if design.n_samples == 0:
        raise ValueError("empty design")
    t = design.labels * (design.matrix @ x)
    return float(np.mean(1.0 - np.tanh(t)))


def tanh_loss_grad(design: SparseDesign, x, batch=None) -> np.ndarray:
    """Minibatch gradient ``(1/|S|) sum_{i in S} -b_i a_i sech^2(b_i a_i @ x)``.

    ``batch=None`` is the full sample.
    """
    if batch is None:
        A, b = design.matrix, design.labels
    else:
        batch = np.asarray(batch)
        if batch.size == 0:
            raise ValueError("empty batch")
        A, b = design.matrix[batch], design.labels[batch]
    th = np.tanh(b * (A @ x))
    w = -b * (1.0 - th * th)
    return np.asarray(A.T @ w).ravel() / A.shape[0]


@dataclass
class SyntheticSpec:
    """Description of a test problem.

    kind is one of ``quadratic_l1`` (needs ``A``, ``b``), ``power_abs``
    (needs ``p >= 2``) or ``tanh_classification`` (``n_samples``,
    ``n_features``, ``density``, ``seed``).
    """

    kind: str
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    nu: Optional[float] = None
    p: float = 2.0
    n_samples: int = 0
    n_features: int = 0
    density: float = 1.0
    seed: int = 0
    known_theta: Optional[float] = None
    extra: dict = field(default_factory=dict)


def make_regularizer(kind: str, nu: float = 0.0, nu2: float = 0.0) -> ProxOracle:
    if kind == "zero":
        return ZeroProx()
    if kind == "l1":
        return L1Prox(nu)
    if kind == "elastic_net":
        return ElasticNetProx(nu, nu2)
    raise ValueError(f"unknown regularizer {kind!r}")


def make_quadratic_l1_data(n_samples: int, n_features: int, seed: int, noise: float = 0.1):
    """Random well-conditioned least-squares data ``(A, b)`` with a sparse planted solution."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_samples, n_features)) / np.sqrt(n_samples)
    x_true = rng.standard_normal(n_features)
    x_true[rng.random(n_features) < 0.3] = 0.0
    b = A @ x_true + noise * rng.standard_normal(n_samples)
    return A, b


def _quadratic_problem(A: np.ndarray, b: np.ndarray, reg: ProxOracle) -> CompositeProblem:
    # f(x) = 0.5 * ||Ax - b||^2 = sum_i f_i(x); minibatch estimates rescale by N/|S|
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]

    def value(x):
        r = A @ x - b
        return 0.5 * float(r @ r)

    def grad(x):
        return A.T @ (A @ x - b)

    def stoch(x, batch=None, rng=None):
        if batch is None:
            return grad(x)
        As = A[batch]
        return (n / len(batch)) * (As.T @ (As @ x - b[batch]))

    lip = float(np.linalg.norm(A, 2) ** 2) if A.size else 0.0
    return CompositeProblem(
        dim=A.shape[1],
        smooth_value=value,
        smooth_grad=grad,
        stochastic_grad=stoch,
        regularizer=reg,
        n_samples=n,
        lower_bound_hint=0.0,
        metadata={"kind": "quadratic_l1", "known_theta": 0.5, "lipschitz": lip},
    )


def _power_abs_problem(p: float, dim: int, reg: ProxOracle) -> CompositeProblem:
    # f(x) = sum_i |x_i|^p / p, KL exponent 1 - 1/p at the origin
    if p < 2:
        raise ValueError(f"power_abs needs p >= 2, got {p}")

    def value(x):
        return float(np.sum(np.abs(x) ** p) / p)

    def grad(x):
        return np.sign(x) * np.abs(x) ** (p - 1)

    def stoch(x, batch=None, rng=None):
        return grad(x)

    return CompositeProblem(
        dim=dim,
        smooth_value=value,
        smooth_grad=grad,
        stochastic_grad=stoch,
        regularizer=reg,
        n_samples=None,
        lower_bound_hint=0.0,
        metadata={
            "kind": "power_abs",
            "p": p,
            "known_theta": 1.0 - 1.0 / p,
            "lipschitz": 1.0 if p == 2 else None,
            "x_star": np.zeros(dim),
            "psi_star": 0.0,
        },
    )


def _tanh_problem(design: SparseDesign, reg: ProxOracle) -> CompositeProblem:
    def value(x):
        return tanh_loss_value(design, x)

    def grad(x):
        return tanh_loss_grad(design, x)

    def stoch(x, batch=None, rng=None):
        return tanh_loss_grad(design, x, batch)

    return CompositeProblem(
        dim=design.n_features,
        smooth_value=value,
        smooth_grad=grad,
        stochastic_grad=stoch,
        regularizer=reg,
        n_samples=design.n_samples,
        lower_bound_hint=0.0,
        metadata={"kind": "tanh_classification", "lipschitz": lipschitz_estimate(design), "design": design},
    )


def make_problem(spec, regularizer: Optional[ProxOracle] = None, dim: int = 1) -> CompositeProblem:
    """Build a :class:`CompositeProblem` from a spec or a sparse design.

    A :class:`SparseDesign` gives the tanh classification loss with
    ``nu = 1/N`` l1 regularization unless ``regularizer`` is passed.
    ``dim`` is only used by ``power_abs``.
    """
    if isinstance(spec, SparseDesign):
        if spec.n_samples == 0:
            raise ValueError("empty design")
        reg = regularizer if regularizer is not None else L1Prox(1.0 / spec.n_samples)
        return _tanh_problem(spec, reg)
    if not isinstance(spec, SyntheticSpec):
        raise TypeError(f"unsupported problem spec {type(spec).__name__}")

    if spec.kind == "quadratic_l1":
        if spec.A is None or spec.b is None:
            raise ValueError("quadratic_l1 needs A and b")
        reg = regularizer if regularizer is not None else L1Prox(spec.nu if spec.nu is not None else 0.0)
        prob = _quadratic_problem(spec.A, spec.b, reg)
    elif spec.kind == "power_abs":
        reg = regularizer if regularizer is not None else ZeroProx()
        prob = _power_abs_problem(spec.p, dim, reg)
    elif spec.kind == "tanh_classification":
        if not 0.0 < spec.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        design = gen_synthetic_classification(spec.n_samples, spec.n_features, spec.density, spec.seed)
        nu = spec.nu if spec.nu is not None else 1.0 / spec.n_samples
        prob = _tanh_problem(design, regularizer if regularizer is not None else L1Prox(nu))
    else:
        raise ValueError(f"unknown problem kind {spec.kind!r}")
    if spec.known_theta is not None:
        prob.metadata["known_theta"] = spec.known_theta
    return prob


def minibatch_sampler(n: int, batch: int, seed) -> Iterator[np.ndarray]:
    """Endless stream of index batches, without replacement inside each epoch.

    Every epoch is a fresh permutation of ``range(n)`` cut into consecutive
    chunks of ``batch``; a short final chunk is kept. ``seed`` may be an int,
    a SeedSequence or a Generator.
    """
    if not 1 <= batch <= n:
        raise ValueError(f"need 1 <= batch <= n, got batch={batch}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        perm = rng.permutation(n)
        for lo in range(0, n, batch):
            yield perm[lo:lo + batch]

