"""Online random-scaling inference for averaged iterates.

With partial sums ``S_s = sum_{t<=s} Q_t``, average ``Qbar = S_T / T`` and
``m_T^2 = sum_t 1/B_t``, the per-entry random-scaling variance is::

    D_jj = 1/(T m_T^2) * sum_s (S_s,j - s Qbar_j)^2
         = 1/(T m_T^2) * (C_j - 2 Qbar_j Bv_j + Qbar_j^2 sum_s s^2)

with ``C = sum_s S_s^2`` and ``Bv = sum_s s S_s``. The accumulator keeps only
those O(d) sums. Iterates are shifted by the first observation before
accumulating (D is shift invariant), and ``C``/``Bv`` use compensated
summation; both keep the cancellation in the expanded form harmless.

A ``(1 - alpha)`` interval for entry ``j`` is
``Qbar_j +/- kappa_{alpha/2} * (m_T / T) * sqrt(D_jj)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qlearn import BatchSchedule, batch_at

# Upper quantiles of kappa = W(1) / sqrt(int_0^1 (W(r) - r W(1))^2 dr),
# keyed by alpha/2. Checked against oracle.kappa_mc in the test suite.
KAPPA_TABLE: dict[float, float] = {
    0.005: 9.940,
    0.01: 8.613,
    0.025: 6.747,
    0.05: 5.323,
}

FULL_MATRIX_MAX_DIM = 64


class InferenceError(ValueError):
    pass


def kappa_quantile(alpha_half: float) -> float:
    """Tabulated upper ``alpha_half`` quantile of the random-scaling pivot."""
    for key, value in KAPPA_TABLE.items():
        if math.isclose(alpha_half, key, rel_tol=0, abs_tol=1e-12):
            return value
    raise InferenceError(
        f"no tabulated kappa quantile for alpha/2={alpha_half}; supported: {sorted(KAPPA_TABLE)}"
    )


def efficiency_factor(schedule: BatchSchedule, T: int) -> float:
    """``(sum B_t)(sum 1/B_t) / T^2``; 1 for constant batches, larger otherwise."""
    if T < 1:
        raise ValueError("T must be >= 1")
    b = np.array([batch_at(schedule, t) for t in range(1, T + 1)], dtype=float)
    return float(math.fsum(b) * math.fsum(1.0 / b) / T**2)


def _kahan_add(total: np.ndarray, comp: np.ndarray, x: np.ndarray) -> None:
    # one Kahan step, in place
    y = x - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


@dataclass
class EntryInterval:
    index: int
    center: float
    half_width: float
    level: float
    degenerate: bool = False

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width


class RsAccumulator:
    """Running sums for ``Qbar_T``, ``m_T`` and ``diag(D_T)``.

    Works on iterates of any fixed shape (one table or a stack of tables).
    With ``full=True`` the accumulator also keeps ``sum_s S_s S_s^T`` for the
    whole matrix ``D_T``; this needs flat iterates with at most
    ``FULL_MATRIX_MAX_DIM`` entries.
    """

    def __init__(self, full: bool = False) -> None:
        self.full = full
        self.t = 0
        self.sum_s = 0
        self.sum_s2 = 0
        self.inv_batch_sum = 0.0
        self._inv_comp = 0.0
        self.shift: np.ndarray | None = None

    def _init_arrays(self, q: np.ndarray) -> None:
        if self.full and (q.ndim != 1 or q.size > FULL_MATRIX_MAX_DIM):
            raise InferenceError(
                f"full-matrix mode needs a flat iterate with at most {FULL_MATRIX_MAX_DIM} entries"
            )
        self.shift = q.copy()
        z = np.zeros_like(q)
        self.S = z.copy()
        self.A = z.copy()
        self.Bv, self._bv_comp = z.copy(), z.copy()
        self.C, self._c_comp = z.copy(), z.copy()
        if self.full:
            self.C_full = np.zeros((q.size, q.size))

    def update(self, q: np.ndarray, batch: int = 1) -> "RsAccumulator":
        if batch < 1:
            raise InferenceError("batch size must be >= 1")
        q = np.asarray(q, dtype=float)
        if self.shift is None:
            self._init_arrays(q)
        elif q.shape != self.shift.shape:
            raise InferenceError(f"iterate shape changed: {q.shape} vs {self.shift.shape}")
        self.t += 1
        t = self.t
        self.S += q - self.shift
        self.A += self.S
        _kahan_add(self.Bv, self._bv_comp, t * self.S)
        _kahan_add(self.C, self._c_comp, self.S * self.S)
        if self.full:
            self.C_full += np.outer(self.S, self.S)
        self.sum_s += t
        self.sum_s2 += t * t
        y = 1.0 / batch - self._inv_comp
        tot = self.inv_batch_sum + y
        self._inv_comp = (tot - self.inv_batch_sum) - y
        self.inv_batch_sum = tot
        return self

    def observe(self, t: int, q: np.ndarray, batch: int) -> None:
        """Iterate-sink hook."""
        if t != self.t + 1:
            raise InferenceError(f"iterates must arrive in order; expected t={self.t + 1}, got {t}")
        self.update(q, batch)

    # -- finalized quantities -------------------------------------------------

    def _require(self, min_t: int = 1) -> None:
        if self.t < min_t:
            raise InferenceError(f"need at least {min_t} iterates, have {self.t}")

    @property
    def q_bar(self) -> np.ndarray:
        self._require()
        return self.shift + self.S / self.t

    def m_T(self) -> float:
        self._require()
        return math.sqrt(self.inv_batch_sum)

    def dhat_diag(self) -> np.ndarray:
        self._require()
        T = self.t
        mean = self.S / T  # shifted mean
        num = self.C - 2.0 * mean * self.Bv + mean * mean * self.sum_s2
        return np.maximum(num, 0.0) / (T * self.inv_batch_sum)

    def dhat_full(self) -> np.ndarray:
        if not self.full:
            raise InferenceError("accumulator was not created with full=True")
        self._require()
        T = self.t
        mean = self.S / T
        cross = np.outer(mean, self.Bv)
        num = self.C_full - cross - cross.T + self.sum_s2 * np.outer(mean, mean)
        return num / (T * self.inv_batch_sum)

    def scale(self) -> float:
        """``m_T / T``, the factor multiplying ``sqrt(D_jj)`` in the interval."""
        return self.m_T() / self.t


def rs_update(acc: RsAccumulator, q: np.ndarray, batch: int) -> RsAccumulator:
    return acc.update(q, batch)


def rs_m_T(acc: RsAccumulator) -> float:
    return acc.m_T()


def interval_arrays(acc: RsAccumulator, alpha: float):
    """Vectorized interval computation: ``(center, half_width, degenerate)``."""
    acc._require(2)
    kappa = kappa_quantile(alpha / 2.0)
    dhat = acc.dhat_diag()
    half = kappa * acc.scale() * np.sqrt(dhat)
    return acc.q_bar, half, dhat <= 0.0


def rs_confidence_intervals(acc: RsAccumulator, alpha: float) -> list[EntryInterval]:
    center, half, degenerate = interval_arrays(acc, alpha)
    level = 1.0 - alpha
    return [
        EntryInterval(j, float(c), float(h), level, bool(dg))
        for j, (c, h, dg) in enumerate(zip(center.ravel(), half.ravel(), degenerate.ravel()))
    ]


def pivot_stat(acc: RsAccumulator, q_ref: np.ndarray):
    """Per-entry pivot ``T (Qbar_j - ref_j) / (m_T sqrt(D_jj))``.

    Returns ``(kappa_hat, degenerate)``; degenerate entries (``D_jj == 0``)
    hold NaN in ``kappa_hat`` and are flagged in the boolean mask.
    """
    acc._require()
    dhat = acc.dhat_diag()
    degenerate = dhat <= 0.0
    diff = acc.q_bar - np.asarray(q_ref, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = acc.t * diff / (acc.m_T() * np.sqrt(dhat))
    return np.where(degenerate, np.nan, k), degenerate


def wald_stat(acc: RsAccumulator, q_ref: np.ndarray) -> float:
    """Matrix-form statistic ``T^2/m_T^2 (Qbar - ref) D^-1 (Qbar - ref)^T`` (full mode only)."""
    d = acc.dhat_full()
    diff = acc.q_bar - np.asarray(q_ref, dtype=float)
    return float(acc.t**2 / acc.inv_batch_sum * diff @ np.linalg.solve(d, diff))


def covers(center: np.ndarray, half: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.abs(center - target) <= half


def finalize_stream(iterates: Sequence[np.ndarray], batches: BatchSchedule = 1) -> RsAccumulator:
    acc = RsAccumulator()
    for t, q in enumerate(iterates, start=1):
        acc.update(q, batch_at(batches, t))
    return acc
