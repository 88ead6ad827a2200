"""Merit function, time windows and the approximate-descent audit.

A time window ``T`` partitions the iteration counter into blocks
``[m_k, m_{k+1})`` whose accumulated step sizes ``tau_k`` stay below ``T``.
Over each block the merit function ``H_xi(z) = psi(prox(z)) +
(xi*lam/2)*||F_nor(z)||^2`` should decrease by at least
``(xi*T/5)*||F_nor(z^{m_k})||^2`` up to the aggregated noise ``(5/T)*s_k^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .prox import CompositeProblem, normal_map

__all__ = [
    "WindowPartition",
    "WindowErrors",
    "AuditReport",
    "xi_from_lipschitz",
    "merit",
    "universal_time_window",
    "time_indices",
    "window_errors",
    "descent_audit",
    "lyapunov_sequence",
    "sparsity",
]

DELTA = 0.8


def xi_from_lipschitz(L: float, lam: float) -> float:
    """``1 / (2 + 2*lam^2*L^2)``."""
    if L < 0:
        raise ValueError("L must be nonnegative")
    if lam <= 0:
        raise ValueError("lam must be positive")
    return 1.0 / (2.0 + 2.0 * lam * lam * L * L)


def merit(problem: CompositeProblem, z, xi: float, lam: float) -> float:
    if xi <= 0:
        raise ValueError("xi must be positive")
    F, x = normal_map(problem, z, lam)
    return problem.psi(x) + 0.5 * xi * lam * float(F @ F)


def _bisect_upper(holds: Callable[[float], bool], hi: float, rtol: float = 1e-12) -> float:
    # largest t in (0, hi] with holds(t), assuming holds is monotone (true then false)
    if holds(hi):
        return hi
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def time_window_constraints(L: float, lam: float) -> list[Callable[[float], bool]]:
    """The four admissibility tests of a universal time window, as predicates in ``t``."""
    xi = xi_from_lipschitz(L, lam)
    lam_bar = (L + 2.0 / lam) * math.exp(L * lam + 2.0)
    return [
        lambda t: t <= min(0.8 * lam, 1.0),
        lambda t: 1.0 / (2.0 * t) >= xi * (4.0 * L - 1.0 / lam) + L,
        lambda t: L * lam_bar**2 * t * t + 5.0 * lam_bar**2 * t <= 8.0 * xi / (25.0 * lam),
        lambda t: (5.0 / t + L) * (1.0 + lam_bar * t) ** 2 <= 10.0 / t,
    ]


def universal_time_window(L: float, lam: float, kl_constant: Optional[float] = None) -> float:
    """Largest time window satisfying all four admissibility constraints.

    The first two constraints are explicit upper bounds; the last two have
    increasing left-hand sides and are solved by bisection. Passing
    ``kl_constant`` additionally enforces ``T <= 5*kl_constant`` and
    ``T*(L + 2/lam)*exp(T*(L + 2/lam)) <= sqrt(3/2) - 1``.
    """
    if L <= 0 or lam <= 0:
        raise ValueError("L and lam must be positive")
    xi = xi_from_lipschitz(L, lam)
    bound1 = min(0.8 * lam, 1.0)
    c2 = xi * (4.0 * L - 1.0 / lam) + L
    bound2 = 1.0 / (2.0 * c2) if c2 > 0 else math.inf
    hi = min(bound1, bound2)
    _, _, con3, con4 = time_window_constraints(L, lam)
    T = min(hi, _bisect_upper(con3, hi), _bisect_upper(con4, hi))
    if kl_constant is not None:
        if kl_constant <= 0:
            raise ValueError("kl_constant must be positive")
        rate = L + 2.0 / lam
        T = min(T, 5.0 * kl_constant)
        T = _bisect_upper(lambda t: t * rate * math.exp(t * rate) <= math.sqrt(1.5) - 1.0, T)
    return T


@dataclass
class WindowPartition:
    """Time indices ``m_0 = 0 < m_1 < ...`` and the window lengths ``tau_k``.

    ``burn_in`` is the first window index from which ``delta*T <= tau_k <= T``
    is guaranteed (``None`` if the horizon ends first); ``partial`` flags a
    horizon that ran out before ``n_windows`` windows were built.
    """

    T: float
    indices: list
    tau: list
    burn_in: Optional[int]
    partial: bool = False

    @property
    def n_windows(self) -> int:
        return len(self.indices) - 1


def time_indices(steps, T: float, horizon: Optional[int] = None, n_windows: Optional[int] = None) -> WindowPartition:
    """Partition ``range(horizon)`` into time windows of length ``T``.

    ``steps`` is a schedule (callable ``k -> alpha_k``) or an explicit array
    of step sizes. ``m_{k+1} = max(m_k + 1, sup{n : tau_{m_k, n} <= T})``. A
    window is only emitted once its end is determined within the horizon.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if callable(steps):
        if horizon is None:
            raise ValueError("horizon is required with a schedule")
        alpha = np.asarray(steps(np.arange(horizon)), dtype=np.float64)
    else:
        alpha = np.asarray(steps, dtype=np.float64)
        if horizon is not None:
            alpha = alpha[:horizon]
    n = alpha.size

    indices = [0]
    tau = []
    partial = False
    m = 0
    while n_windows is None or len(tau) < n_windows:
        acc = 0.0
        j = m
        # advance while the next step still fits: tau_{m, j+1} <= T
        while j < n and acc + alpha[j] <= T:
            acc += alpha[j]
            j += 1
        if j >= n:
            # the sup is undetermined, or the forced single step runs past the data
            partial = n_windows is not None
            break
        if j == m:
            acc = alpha[m]
            j = m + 1
        indices.append(j)
        tau.append(acc)
        m = j

    # K' = first index after which every step is <= (1 - delta) T
    small = alpha <= (1.0 - DELTA) * T
    big = np.flatnonzero(~small)
    k_prime = int(big[-1]) + 1 if big.size else 0
    burn_in = None
    for k, mk in enumerate(indices[:-1]):
        if mk >= k_prime:
            burn_in = k
            break
    return WindowPartition(T=T, indices=indices, tau=tau, burn_in=burn_in, partial=partial)


@dataclass
class WindowErrors:
    """Aggregated errors ``s_k``; ``s`` is ``None`` when no errors were recorded."""

    s: Optional[np.ndarray]
    e_source: str = "exact"

    @property
    def available(self) -> bool:
        return self.s is not None


def window_errors(errors, steps, part: WindowPartition) -> WindowErrors:
    """``s_k = max_{m_k < j <= m_{k+1}} ||sum_{i=m_k}^{j-1} alpha_i e^i||``."""
    if errors is None:
        return WindowErrors(s=None, e_source="unavailable")
    E = np.asarray(errors, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    end = part.indices[-1]
    if E.shape[0] < end:
        return WindowErrors(s=None, e_source="unavailable")
    alpha = np.asarray(steps(np.arange(end)) if callable(steps) else steps[:end], dtype=np.float64)
    s = np.empty(part.n_windows)
    for k in range(part.n_windows):
        lo, hi = part.indices[k], part.indices[k + 1]
        partial = np.cumsum(alpha[lo:hi, None] * E[lo:hi], axis=0)
        s[k] = np.linalg.norm(partial, axis=1).max()
    return WindowErrors(s=s)


@dataclass
class AuditReport:
    """Outcome of the approximate-descent check.

    ``margins[k]`` is ``rhs - lhs`` for window ``burn_in + k``; a violation is
    a margin below ``-tol``.
    """

    violations: list
    margins: np.ndarray
    burn_in: int
    checked: int
    skipped: bool = False
    tol: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def violation_fraction(self) -> float:
        return len(self.violations) / self.checked if self.checked else 0.0

    def summary(self) -> dict:
        m = self.margins
        return {
            "checked": self.checked,
            "burn_in": self.burn_in,
            "violations": len(self.violations),
            "violation_fraction": self.violation_fraction,
            "min_margin": float(m.min()) if m.size else None,
            "median_margin": float(np.median(m)) if m.size else None,
            "skipped": self.skipped,
        }


def descent_audit(
    merits: Sequence[float],
    fnor_norms: Sequence[float],
    werr: WindowErrors,
    xi: float,
    T: float,
    burn_in: int,
    rtol: float = 1e-12,
) -> AuditReport:
    """Check ``H(z^{m_{k+1}}) - H(z^{m_k}) <= -(xi*T/5)||F_nor(z^{m_k})||^2 + (5/T)s_k^2``.

    ``merits`` and ``fnor_norms`` are evaluated at ``z^{m_0}, ..., z^{m_K}``
    (``K + 1`` values for ``K`` windows). Only windows ``k >= burn_in`` are
    checked. Rounding slack ``rtol * max(1, |H(z^{m_k})|)`` is tolerated.
    """
    H = np.asarray(merits, dtype=np.float64)
    Fn = np.asarray(fnor_norms, dtype=np.float64)
    if not werr.available:
        return AuditReport([], np.zeros(0), burn_in, 0, skipped=True)
    s = np.asarray(werr.s, dtype=np.float64)
    if H.size != s.size + 1 or Fn.size != s.size + 1:
        raise ValueError(
            f"length mismatch: {H.size} merits, {Fn.size} normal-map norms, {s.size} windows"
        )
    k = np.arange(max(burn_in, 0), s.size)
    lhs = H[k + 1] - H[k]
    rhs = -(xi * T / 5.0) * Fn[k] ** 2 + (5.0 / T) * s[k] ** 2
    margins = rhs - lhs
    slack = rtol * np.maximum(1.0, np.abs(H[k]))
    violations = [int(i) for i in k[margins < -slack]]
    return AuditReport(violations, margins, int(burn_in), int(k.size), tol=rtol)


def lyapunov_sequence(merits, s, T: float) -> np.ndarray:
    """``H(z^{m_k}) + (5/T) * sum_{i >= k} s_i^2`` over the recorded windows."""
    H = np.asarray(merits, dtype=np.float64)[: len(s)]
    tail = np.cumsum((np.asarray(s, dtype=np.float64) ** 2)[::-1])[::-1]
    return H + (5.0 / T) * tail


def sparsity(x, tol: float = 1e-8) -> float:
    """Percentage of entries with ``|x_i| <= tol``."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty vector")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return 100.0 * np.count_nonzero(np.abs(x) <= tol) / x.size
