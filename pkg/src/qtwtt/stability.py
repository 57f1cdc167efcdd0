"""Standard deviation and time deviation (TDEV) of an offset series."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import AnalysisError, GapError


@dataclass(frozen=True)
class TdevPoint:
    tau_s: float
    tdev_ps: float
    n_samples: int
    ci68_low: float
    ci68_high: float


@dataclass(frozen=True)
class TdevCurve:
    tau0_s: float
    points: tuple

    @property
    def tau(self):
        return np.array([p.tau_s for p in self.points])

    @property
    def tdev(self):
        return np.array([p.tdev_ps for p in self.points])

    def at(self, tau_s: float) -> TdevPoint:
        """Point whose tau is closest (in log) to ``tau_s``."""
        i = int(np.argmin(np.abs(np.log(self.tau / tau_s))))
        return self.points[i]


def _values(series):
    """t0 values as float array; NaN marks an invalid block."""
    if hasattr(series, "blocks"):
        return np.array([b.t0_ps if b.valid else np.nan for b in series.blocks], dtype=np.float64)
    return np.asarray(series, dtype=np.float64)


def sample_sd(series) -> float:
    x = _values(series)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise AnalysisError("need at least 2 valid blocks for a standard deviation")
    return float(np.std(x, ddof=1))


def octave_ladder(n: int) -> list[int]:
    """1, 2, 4, ... up to n // 4."""
    out, m = [], 1
    while m <= max(n // 4, 1):
        out.append(m)
        m *= 2
    return out


def _gap_free(x):
    ok = np.isfinite(x)
    if ok.size and not ok.all():
        last = np.flatnonzero(ok)
        x = x[: last[-1] + 1] if last.size else x[:0]
        if not np.isfinite(x).all():
            raise GapError("invalid blocks inside the series; split the run before computing TDEV")
    return x


def tvar(x, m: int) -> float:
    """Overlapping time variance at averaging factor m.

    TVAR = 1/(6 m^2 (N-3m+1)) * sum_j [ sum_{i=j}^{j+m-1} (x[i+2m] - 2x[i+m] + x[i]) ]^2,
    with the inner sums taken from a cumulative sum.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if m < 1 or n < 3 * m + 1:
        raise AnalysisError(f"series of {n} points too short for m = {m}")
    s = np.concatenate(([0.0], np.cumsum(x - x.mean())))
    j = np.arange(n - 3 * m + 1)
    inner = (s[j + 3 * m] - s[j + 2 * m]) - 2.0 * (s[j + 2 * m] - s[j + m]) + (s[j + m] - s[j])
    return float(np.sum(inner * inner) / (6.0 * m * m * j.size))


def tdev_edf(n: int, m: int) -> float:
    """Equivalent degrees of freedom used for the confidence band.

    Simple count of independent second-difference averages, (N - 3m + 1) / m,
    floored at 1. It is a white-phase-noise approximation; bands are advisory.
    """
    return max((n - 3 * m + 1) / m, 1.0)


def tdev(series, m_list=None, tau0_s: float | None = None) -> TdevCurve:
    if tau0_s is None:
        tau0_s = float(getattr(series, "block_seconds", 1.0))
    x = _gap_free(_values(series))
    n = x.size
    if m_list is None:
        m_list = octave_ladder(n)
    m_list = sorted({int(m) for m in m_list})
    if not m_list or n < 3 * m_list[-1] + 1:
        raise AnalysisError(f"series of {n} points too short for m up to {m_list[-1] if m_list else 0}")
    pts = []
    for m in m_list:
        v = tvar(x, m)
        edf = tdev_edf(n, m)
        lo = np.sqrt(v * edf / chi2.ppf(0.84, edf))
        hi = np.sqrt(v * edf / chi2.ppf(0.16, edf))
        pts.append(TdevPoint(m * tau0_s, float(np.sqrt(v)), n - 3 * m + 1, float(lo), float(hi)))
    return TdevCurve(float(tau0_s), tuple(pts))


def fit_loglog_slope(curve: TdevCurve, tau_min: float, tau_max: float) -> float:
    tau, dev = curve.tau, curve.tdev
    sel = (tau >= tau_min) & (tau <= tau_max) & (dev > 0)
    if sel.sum() < 3:
        raise AnalysisError(f"need >= 3 TDEV points in [{tau_min}, {tau_max}] s, have {int(sel.sum())}")
    slope, _ = np.polyfit(np.log(tau[sel]), np.log(dev[sel]), 1)
    return float(slope)
