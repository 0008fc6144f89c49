"""Forecast error metrics and the Diebold-Mariano comparison test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

Z_CRITICAL_5PCT = 1.96


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ValueError("empty series")
    return a, p


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    a, p = _pair(actual, predicted)
    if np.any(a == 0):
        raise ValueError("MAPE is undefined when an actual value is 0")
    return float(np.mean(np.abs(a - p) / a) * 100.0)


def nrmse(actual, predicted) -> float:
    """Root-mean-square error divided by ``max(actual) - min(actual)``."""
    a, p = _pair(actual, predicted)
    span = a.max() - a.min()
    if span == 0:
        raise ValueError("NRMSE is undefined for constant actual values")
    return float(math.sqrt(np.mean((a - p) ** 2)) / span)


@dataclass(frozen=True)
class MetricPair:
    mape: float
    nrmse: float


def metric_pair(actual, predicted) -> MetricPair:
    return MetricPair(mape(actual, predicted), nrmse(actual, predicted))


@dataclass(frozen=True)
class DmResult:
    """Outcome of a DM test; ``statistic`` is None when indeterminate."""

    statistic: float | None
    n: int
    h: int = 1
    power: float = 2
    corrected: bool = True
    critical_value: float = Z_CRITICAL_5PCT
    p_value: float | None = None

    @property
    def indeterminate(self) -> bool:
        return self.statistic is None

    @property
    def significant_5pct(self) -> bool | None:
        if self.statistic is None:
            return None
        return abs(self.statistic) > self.critical_value


def autocovariance(d, lag: int) -> float:
    """Sample autocovariance with the 1/n normalization."""
    d = np.asarray(d, dtype=float)
    n = d.size
    dc = d - d.mean()
    return float(np.dot(dc[lag:], dc[: n - lag]) / n)


def dm_test(errors_a, errors_b, h: int = 1, power: float = 2, corrected: bool = True) -> DmResult:
    """Diebold-Mariano test on the loss differential ``|e_a|^power - |e_b|^power``.

    Negative statistics mean series ``a`` has the smaller loss. With
    ``corrected`` the Harvey-Leybourne-Newbold factor is applied and the
    critical value comes from Student's t with ``n - 1`` degrees of freedom;
    otherwise the normal 1.96 threshold is used.
    """
    ea = np.asarray(errors_a, dtype=float)
    eb = np.asarray(errors_b, dtype=float)
    if ea.shape != eb.shape:
        raise ValueError("error series must have equal length")
    n = ea.size
    if n < 2:
        raise ValueError("DM test needs at least 2 observations")
    if h < 1:
        raise ValueError("horizon h must be >= 1")
    d = np.abs(ea) ** power - np.abs(eb) ** power
    V = autocovariance(d, 0) + 2.0 * sum(autocovariance(d, k) for k in range(1, h))
    crit = float(stats.t.ppf(0.975, n - 1)) if corrected else Z_CRITICAL_5PCT
    if not V > 0:
        return DmResult(None, n, h, power, corrected, crit)
    stat = d.mean() / math.sqrt(V / n)
    if corrected:
        stat *= math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
        p = 2.0 * float(stats.t.sf(abs(stat), n - 1))
    else:
        p = 2.0 * float(stats.norm.sf(abs(stat)))
    return DmResult(float(stat), n, h, power, corrected, crit, p)
