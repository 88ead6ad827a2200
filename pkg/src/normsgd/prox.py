"""Proximity operators and first-order stationarity maps.

For a composite objective ``psi = f + phi`` with ``f`` smooth and ``phi``
convex, the quantities used throughout the package are

* ``prox_{lam*phi}(z) = argmin_y phi(y) + ||y - z||^2 / (2*lam)``
* the Moreau envelope gradient ``(z - prox(z)) / lam``
* the natural residual ``F_nat(x) = x - prox(x - lam*grad f(x))``
* the normal map ``F_nor(z) = grad f(prox(z)) + (z - prox(z)) / lam``

Both residuals vanish exactly at stationary points (through ``x = prox(z)``
for the normal map).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ProxOracle",
    "ZeroProx",
    "L1Prox",
    "ElasticNetProx",
    "CompositeProblem",
    "prox_l1",
    "prox_elastic_net",
    "moreau_env_grad",
    "natural_residual",
    "normal_map",
]


def _as_vector(z) -> np.ndarray:
    return np.asarray(z, dtype=np.float64)


def prox_l1(z, t: float) -> np.ndarray:
    """Soft-thresholding ``sgn(z) * max(0, |z| - t)``, componentwise."""
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    z = _as_vector(z)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def prox_elastic_net(z, lam: float, nu1: float, nu2: float) -> np.ndarray:
    """Prox of ``lam * (nu1*||x||_1 + nu2*||x||^2)``.

    Closed form ``shrink(z, lam*nu1) / (1 + 2*lam*nu2)``.
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if nu1 < 0 or nu2 < 0:
        raise ValueError("elastic net weights must be nonnegative")
    return prox_l1(z, lam * nu1) / (1.0 + 2.0 * lam * nu2)


class ProxOracle:
    """A convex regularizer ``phi`` with a closed-form proximity operator."""

    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, z, lam: float) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class ZeroProx(ProxOracle):
    kind = "zero"

    def value(self, x) -> float:
        return 0.0

    def prox(self, z, lam: float) -> np.ndarray:
        if lam <= 0:
            raise ValueError(f"lam must be positive, got {lam}")
        return _as_vector(z).copy()


class L1Prox(ProxOracle):
    """``phi(x) = nu * ||x||_1``."""

    kind = "l1"

    def __init__(self, nu: float):
        if nu < 0:
            raise ValueError(f"nu must be nonnegative, got {nu}")
        self.nu = float(nu)

    def value(self, x) -> float:
        return self.nu * float(np.abs(x).sum())

    def prox(self, z, lam: float) -> np.ndarray:
        if lam <= 0:
            raise ValueError(f"lam must be positive, got {lam}")
        return prox_l1(z, lam * self.nu)

    def params(self) -> dict:
        return {"nu": self.nu}


class ElasticNetProx(ProxOracle):
    """``phi(x) = nu1 * ||x||_1 + nu2 * ||x||^2``."""

    kind = "elastic_net"

    def __init__(self, nu1: float, nu2: float):
        if nu1 < 0 or nu2 < 0:
            raise ValueError("elastic net weights must be nonnegative")
        self.nu1 = float(nu1)
        self.nu2 = float(nu2)

    def value(self, x) -> float:
        x = _as_vector(x)
        return self.nu1 * float(np.abs(x).sum()) + self.nu2 * float(x @ x)

    def prox(self, z, lam: float) -> np.ndarray:
        return prox_elastic_net(z, lam, self.nu1, self.nu2)

    def params(self) -> dict:
        return {"nu1": self.nu1, "nu2": self.nu2}


@dataclass
class CompositeProblem:
    """Oracles for ``psi(x) = f(x) + phi(x)``.

    ``stochastic_grad(x, batch, rng)`` returns an estimate of ``grad f(x)``;
    ``batch=None`` means the full batch and must reproduce ``smooth_grad``
    exactly. ``n_samples`` is the number of summands for finite-sum problems
    (``None`` when the smooth part is not a finite sum).
    """

    dim: int
    smooth_value: Callable[[np.ndarray], float]
    smooth_grad: Callable[[np.ndarray], np.ndarray]
    stochastic_grad: Callable[..., np.ndarray]
    regularizer: ProxOracle = field(default_factory=ZeroProx)
    n_samples: Optional[int] = None
    lower_bound_hint: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def psi(self, x) -> float:
        return float(self.smooth_value(x)) + self.regularizer.value(x)

    def prox(self, z, lam: float) -> np.ndarray:
        return self.regularizer.prox(z, lam)


def moreau_env_grad(z, x, lam: float) -> np.ndarray:
    """Gradient ``(z - x) / lam`` of the Moreau envelope, given ``x = prox(z)``."""
    z = _as_vector(z)
    x = _as_vector(x)
    if z.shape != x.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {x.shape}")
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    return (z - x) / lam


def natural_residual(problem: CompositeProblem, x, lam: float) -> np.ndarray:
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    x = _as_vector(x)
    return x - problem.prox(x - lam * problem.smooth_grad(x), lam)


def normal_map(problem: CompositeProblem, z, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(F_nor(z), prox(z))`` so callers can reuse the prox point."""
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    z = _as_vector(z)
    x = problem.prox(z, lam)
    return problem.smooth_grad(x) + (z - x) / lam, x
