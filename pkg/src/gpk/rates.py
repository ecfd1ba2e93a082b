"""Log-log scaling fits for convergence experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class RateReport:
    """Least-squares power-law fit y ~ C x^slope in log-log coordinates."""

    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    monotone: bool = True
    note: str = ""


def fit_rate(x, y, monotone: bool = True, note: str = "") -> RateReport:
    """Fit the scaling exponent of positive data y against x.

    Raises ConfigurationError with fewer than 3 points and DomainError if any
    y is non-positive.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ConfigurationError("rate fit needs at least 3 points")
    if np.any(y <= 0):
        raise DomainError("rate fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateReport(
        x=x, y=y, slope=float(slope), intercept=float(intercept),
        r_squared=max(0.0, min(1.0, r2)), monotone=monotone, note=note,
    )


def degenerate_report(x, y, note: str) -> RateReport:
    """Report for runs where the fit is undefined (e.g. all errors zero)."""
    return RateReport(
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        slope=float("nan"),
        intercept=float("nan"),
        r_squared=0.0,
        monotone=True,
        note=note,
    )
