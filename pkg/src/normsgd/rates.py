"""KL-exponent rate maps, empirical log-log slope fitting and a Chung-type recursion simulator.

Rates are exponents ``p`` of bounds ``O(k^{-p})`` (or ``O(gamma_k^{-p})``
in terms of accumulated step size for the ``r``-parameterised maps). At a
branch threshold the second branch is used.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

__all__ = [
    "NoGuaranteeError",
    "LogRate",
    "ChungResult",
    "psi_rate",
    "psi_x_rate",
    "tadic_psi_x_rate",
    "phi_rate",
    "phi_x_rate",
    "gamma1_log_rate",
    "fit_loglog_slope",
    "chung_simulate",
    "rate_surface",
    "rate_surface_csv",
]


class NoGuaranteeError(ValueError):
    """Step-size exponent outside the range covered by the rate results."""


def _check_theta(theta: float) -> None:
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")


def _check_r(r: float) -> None:
    if not r > 0.5:
        raise ValueError(f"r must exceed 1/2, got {r}")


def psi_threshold(r: float) -> float:
    return (1.0 + 2.0 * r) / (4.0 * r)


def psi_rate(r: float, theta: float) -> float:
    """Rate of ``max(|psi - psi*|, ||F_nat||^2)`` in powers of ``gamma_k``."""
    _check_r(r)
    _check_theta(theta)
    if theta < psi_threshold(r):
        return 2.0 * r
    return 1.0 / (2.0 * theta - 1.0)


def psi_x_rate(r: float, theta: float) -> float:
    """Rate of ``||x^k - x*||`` in powers of ``gamma_k``."""
    _check_r(r)
    _check_theta(theta)
    if theta < psi_threshold(r):
        return r - 0.5
    return (1.0 - theta) / (2.0 * theta - 1.0)


def tadic_psi_x_rate(r: float, theta: float) -> float:
    """Earlier SGD iterate rate ``min(r - 1, (1 - theta)/(2 theta - 1))``, for ``r > 1``."""
    if not r > 1.0:
        raise ValueError("defined for r > 1")
    _check_theta(theta)
    if theta <= 0.5:
        return r - 1.0
    return min(r - 1.0, (1.0 - theta) / (2.0 * theta - 1.0))


def _check_gamma(gamma: float) -> None:
    if not gamma > 2.0 / 3.0:
        raise NoGuaranteeError(f"no rate guarantee for gamma={gamma} <= 2/3")
    if gamma >= 1.0:
        raise ValueError("gamma = 1 gives logarithmic rates; use gamma1_log_rate")


def phi_threshold(gamma: float) -> float:
    return gamma / (4.0 * gamma - 2.0)


def phi_rate(gamma: float, theta: float) -> float:
    """Rate in ``k`` of ``max(|psi - psi*|, ||F_nat||^2)`` for ``alpha_k ~ k^-gamma``."""
    _check_gamma(gamma)
    _check_theta(theta)
    if theta < phi_threshold(gamma):
        return 2.0 * gamma - 1.0
    return (1.0 - gamma) / (2.0 * theta - 1.0)


def phi_x_rate(gamma: float, theta: float) -> float:
    """Rate in ``k`` of ``||x^k - x*||`` for ``alpha_k ~ k^-gamma``."""
    _check_gamma(gamma)
    _check_theta(theta)
    if theta < phi_threshold(gamma):
        return 1.5 * gamma - 1.0
    return (1.0 - theta) * (1.0 - gamma) / (2.0 * theta - 1.0)


@dataclass(frozen=True)
class LogRate:
    """Bound ``O(k^k_exponent * log(k)^log_exponent)``."""

    quantity: str
    k_exponent: float
    log_exponent: float

    def __call__(self, k):
        k = np.asarray(k, dtype=np.float64)
        return k**self.k_exponent * np.log(k) ** self.log_exponent


def gamma1_log_rate(quantity: str, eps: float) -> LogRate:
    """Rates for ``alpha_k = alpha/(beta + k)`` when the KL exponent is at most 1/2."""
    if not eps > 0:
        raise ValueError("eps must be strictly positive")
    if quantity in ("psi_gap", "fnat_sq"):
        return LogRate(quantity, -1.0, 1.0 + eps)
    if quantity == "iterate_dist":
        return LogRate(quantity, -0.5, 0.5 + eps)
    raise ValueError(f"unknown quantity {quantity!r}")


def fit_loglog_slope(series, burn_in: int = 0) -> tuple[float, float]:
    """Least-squares slope of ``log(value)`` against ``log(k)`` for ``k >= burn_in``.

    ``series`` is a sequence of ``(k, value)`` pairs (or a 2-column array).
    Returns ``(slope, r_squared)``.
    """
    arr = np.asarray(series, dtype=np.float64).reshape(-1, 2)
    arr = arr[(arr[:, 0] >= burn_in) & (arr[:, 0] > 0)]
    if arr.shape[0] < 10:
        raise ValueError(f"need at least 10 points after burn-in, got {arr.shape[0]}")
    if np.any(arr[:, 1] <= 0) or not np.all(np.isfinite(arr[:, 1])):
        raise ValueError("values must be positive and finite")
    lx, ly = np.log(arr[:, 0]), np.log(arr[:, 1])
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


@dataclass
class ChungResult:
    a: np.ndarray
    ratio: np.ndarray
    bounded: bool


def chung_simulate(
    s: Callable[[float], float],
    t: Callable[[float], float],
    b: Union[Callable[[int], float], Sequence[float]],
    a0: float,
    n_steps: int,
) -> ChungResult:
    """Iterate ``a_{k+1} = (1 - 1/s(b_k)) a_k + 1/t(b_k)`` and trace ``a_k / kappa(b_k)``.

    ``kappa = s/t``. ``bounded`` is a plateau heuristic (the maximum ratio over
    the second half stays within 10x of the ratio at the midpoint), not a proof.
    """
    if a0 < 0:
        raise ValueError("a0 must be nonnegative")
    bk = np.array([b(k) for k in range(n_steps + 1)] if callable(b) else b[: n_steps + 1], dtype=np.float64)
    if bk.size < n_steps + 1:
        raise ValueError("b sequence shorter than n_steps + 1")
    a = np.empty(n_steps + 1)
    a[0] = a0
    sv = np.array([s(v) for v in bk])
    tv = np.array([t(v) for v in bk])
    if np.any(sv[:-1] <= 1.0):
        k = int(np.argmax(sv[:-1] <= 1.0))
        raise ValueError(f"s(b_k) <= 1 at k={k}: precondition violated")
    for k in range(n_steps):
        a[k + 1] = (1.0 - 1.0 / sv[k]) * a[k] + 1.0 / tv[k]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = a / (sv / tv)
    half = n_steps // 2
    tail = ratio[half:]
    bounded = bool(np.all(np.isfinite(tail)) and tail.max() <= 10.0 * ratio[half])
    return ChungResult(a=a, ratio=ratio, bounded=bounded)


def rate_surface(gammas: Iterable[float], thetas: Iterable[float]) -> list[dict]:
    """Predicted exponents on a ``(gamma, theta)`` grid; ``gamma = 1`` uses the log-rate exponents."""
    rows = []
    for g in gammas:
        for th in thetas:
            if g >= 1.0:
                if th > 0.5:
                    phi = phi_x = math.nan
                else:
                    phi, phi_x = 1.0, 0.5
            else:
                phi, phi_x = phi_rate(g, th), phi_x_rate(g, th)
            rows.append({"gamma": g, "theta": th, "phi": phi, "phi_x": phi_x})
    return rows


def rate_surface_csv(gammas: Iterable[float], thetas: Iterable[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gamma", "theta", "phi", "phi_x"])
    for row in rate_surface(gammas, thetas):
        w.writerow([f"{row[c]:.17g}" for c in ("gamma", "theta", "phi", "phi_x")])
    return buf.getvalue()
