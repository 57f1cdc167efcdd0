"""Coincidence correlation of a signal and an idler tag stream.

Delays are always signal minus idler (t_sig - t_idl) in integer ps.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FWHM_PER_SIGMA
from .errors import AcquisitionError, AnalysisError, NoPeakError
from .kernels import diff_histogram

MAX_BINS = 1_000_000
_W_FLOOR = 0.25  # minimum model value in Poisson weights


@dataclass(frozen=True)
class CoincidenceHistogram:
    center_delay_ps: int
    bin_width_ps: int
    counts: np.ndarray
    n_signal: int = 0
    n_idler: int = 0

    @property
    def span_ps(self) -> int:
        return int(self.counts.size * self.bin_width_ps)

    @property
    def lo_ps(self) -> int:
        return int(self.center_delay_ps - self.span_ps // 2)

    def bin_centers(self) -> np.ndarray:
        """Bin centres relative to ``center_delay_ps`` (float ps)."""
        k = np.arange(self.counts.size)
        return (self.lo_ps - self.center_delay_ps) + (k + 0.5) * self.bin_width_ps


@dataclass(frozen=True)
class GaussianFit:
    mu_ps: float
    fwhm_ps: float
    amplitude: float
    baseline: float
    mu_stderr_ps: float
    converged: bool
    chi2_reduced: float
    iterations: int = 0


def _as_tags(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.int64))


def coarse_offset(sig, idl, search_span_ps: int = 100_000, coarse_bin_ps: int = 1000,
                  center_ps: int = 0) -> int:
    """Locate the coincidence peak with 1 ns-scale bins.

    Differences sig - idl are binned over center +- search_span with bins
    centred on multiples of ``coarse_bin_ps`` from ``center_ps``. The peak bin
    must stand 5 sigma above the accidental level (mean of the other bins);
    ties go to the smallest |delay|.
    """
    sig, idl = _as_tags(sig), _as_tags(idl)
    if sig.size == 0 or idl.size == 0:
        raise AcquisitionError("cannot acquire delay: empty tag stream")
    half = int(np.ceil(search_span_ps / coarse_bin_ps))
    nbins = 2 * half + 1
    lo = int(center_ps) - half * coarse_bin_ps - coarse_bin_ps // 2
    counts = diff_histogram(sig, idl, lo, int(coarse_bin_ps), nbins)
    delays = center_ps + (np.arange(nbins) - half) * coarse_bin_ps
    top = counts.max()
    level = (counts.sum() - top) / max(nbins - 1, 1)
    if top < level + 5.0 * np.sqrt(max(level, 1.0)):
        raise NoPeakError(f"no coincidence peak: max {top} vs accidental level {level:.2f}")
    cand = np.flatnonzero(counts == top)
    return int(delays[cand[np.argmin(np.abs(delays[cand]))]])


def fine_histogram(sig, idl, center_delay_ps: int, span_ps: int = 10_000,
                   bin_width_ps: int = 10) -> CoincidenceHistogram:
    """Histogram of sig - idl within center +- span/2 (two-pointer merge walk)."""
    if bin_width_ps < 1 or span_ps < bin_width_ps:
        raise AnalysisError("need bin_width >= 1 ps and span >= bin_width")
    nbins = int(span_ps // bin_width_ps)
    if nbins > MAX_BINS:
        raise AnalysisError(f"{nbins} bins exceeds the {MAX_BINS} limit")
    sig, idl = _as_tags(sig), _as_tags(idl)
    center = int(center_delay_ps)
    lo = center - (nbins * bin_width_ps) // 2
    counts = diff_histogram(sig, idl, lo, int(bin_width_ps), nbins)
    return CoincidenceHistogram(center, int(bin_width_ps), counts, int(sig.size), int(idl.size))


def _half_max_width(y, k, base):
    half = base + 0.5 * (y[k] - base)
    i = k
    while i > 0 and y[i - 1] > half:
        i -= 1
    j = k
    while j < y.size - 1 and y[j + 1] > half:
        j += 1
    return j - i + 1


def _gauss(p, x):
    a, mu, s, b = p
    g = np.exp(-0.5 * ((x - mu) / s) ** 2)
    m = a * g + b
    jac = np.empty((x.size, 4))
    jac[:, 0] = g
    jac[:, 1] = a * g * (x - mu) / s**2
    jac[:, 2] = a * g * (x - mu) ** 2 / s**3
    jac[:, 3] = 1.0
    return m, jac


def _lm(xs, ys, p, bw, max_iter):
    """Damped Gauss-Newton with Poisson weights refreshed from the model."""
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        m, jac = _gauss(p, xs)
        w = 1.0 / np.maximum(m, _W_FLOOR)
        r = ys - m
        cost = float(np.sum(w * r * r))
        jtw = jac.T * w
        a = jtw @ jac
        g = jtw @ r
        improved = False
        while lam <= 1e12:
            q = p + np.linalg.solve(a + lam * np.diag(np.diag(a) + 1e-12), g)
            if q[0] > 0 and q[2] > 0.05 * bw and q[3] >= 0:
                cq = float(np.sum(w * (ys - _gauss(q, xs)[0]) ** 2))
                if cq <= cost:
                    improved = True
                    break
            lam *= 10.0
        if not improved:
            converged = np.max(np.abs(g)) < 1e-6 * max(cost, 1.0) or lam > 1e12
            break
        delta = np.abs(q - p)
        p = q
        lam = max(lam / 10.0, 1e-9)
        if np.all(delta <= 1e-9 * (np.abs(p) + 1e-6 * bw)) or (cost - cq) <= 1e-12 * max(cost, 1e-300):
            converged = True
            break
    return p, converged, it



def fit_gaussian(hist: CoincidenceHistogram, window_fwhm: float = 3.0, force: bool = False,
                 max_iter: int = 100) -> GaussianFit:
    """Fit A exp(-(x-mu)^2 / 2 sigma^2) + b to the histogram peak.

    Levenberg-Marquardt on Poisson-weighted residuals, with weights refreshed
    from the current model each iteration (so the fixed point is the Poisson
    maximum-likelihood fit). Standard errors come from (J^T W J)^-1.
    The provisional width comes from a 3-bin smoothed copy so a single noisy
    bin cannot shrink the window; if the first fit lands well away from its
    window the fit is repeated once on a window built from the fit itself.
    """
    y = hist.counts.astype(np.float64)
    x = hist.bin_centers()
    bw = float(hist.bin_width_ps)
    if y.size < 5:
        raise AnalysisError("histogram too short to fit")
    base0 = float(np.median(y))
    k = int(np.argmax(y))  # lowest index on ties
    if y[k] - base0 < 5.0 and not force:
        raise NoPeakError(f"peak {y[k]:.0f} does not exceed baseline {base0:.1f} by 5 counts")
    smooth = np.convolve(y, np.ones(3) / 3.0, mode="same")
    fwhm0 = max(_half_max_width(smooth, k, base0), 3) * bw
    sel = np.abs(x - x[k]) <= window_fwhm * fwhm0
    if sel.sum() < 6:
        sel = np.abs(x - x[k]) <= 3 * bw
    xs, ys = x[sel], y[sel]
    # moment refinement of the starting point
    excess = np.clip(ys - base0, 0.0, None)
    near = np.abs(xs - x[k]) <= fwhm0
    if excess[near].sum() > 0:
        mu0 = float(np.sum(xs[near] * excess[near]) / excess[near].sum())
    else:
        mu0 = float(x[k])
    p0 = np.array([max(y[k] - base0, 1.0), mu0, fwhm0 / FWHM_PER_SIGMA, max(base0, 1e-3)])
    p, converged, it = _lm(xs, ys, p0, bw, max_iter)
    fw = FWHM_PER_SIGMA * abs(p[2])
    if converged and (abs(p[1] - x[k]) > fw or not fwhm0 / 1.5 <= fw <= 1.5 * fwhm0):
        sel2 = np.abs(x - p[1]) <= window_fwhm * fw
        if sel2.sum() >= 6:
            q, c2, it2 = _lm(x[sel2], y[sel2], p, bw, max_iter)
            if c2:
                xs, ys, p, it = x[sel2], y[sel2], q, it + it2
    m, jac = _gauss(p, xs)
    w = 1.0 / np.maximum(m, _W_FLOOR)
    try:
        cov = np.linalg.inv((jac.T * w) @ jac)
        mu_err = float(np.sqrt(max(cov[1, 1], 0.0)))
    except np.linalg.LinAlgError:
        mu_err = float("nan")
        converged = False
    dof = max(xs.size - 4, 1)
    chi2r = float(np.sum((ys - m) ** 2 / np.maximum(m, _W_FLOOR)) / dof)
    a_fit, mu, s, b = p
    if not (x[0] - bw / 2 <= mu <= x[-1] + bw / 2) or not np.isfinite(mu_err):
        converged = False
    return GaussianFit(mu_ps=float(hist.center_delay_ps + mu), fwhm_ps=float(FWHM_PER_SIGMA * abs(s)),
                       amplitude=float(a_fit), baseline=float(b), mu_stderr_ps=mu_err,
                       converged=bool(converged), chi2_reduced=chi2r, iterations=it)


def coincidence_count(hist: CoincidenceHistogram, fit: GaussianFit):
    """(n_true, n_accidental) inside a window one FWHM wide centred on mu.

    Edge bins contribute in proportion to their overlap with the window.
    A pure Gaussian puts erf(sqrt(ln 2)) = 0.761 of its events there.
    """
    bw = hist.bin_width_ps
    edges_lo = hist.lo_ps + np.arange(hist.counts.size) * bw
    a, b = fit.mu_ps - fit.fwhm_ps / 2, fit.mu_ps + fit.fwhm_ps / 2
    overlap = np.clip(np.minimum(edges_lo + bw, b) - np.maximum(edges_lo, a), 0.0, None) / bw
    raw = float(np.sum(hist.counts * overlap))
    accidental = float(fit.baseline * np.sum(overlap))
    return raw - accidental, accidental


def write_histogram(path, hist: CoincidenceHistogram) -> None:
    lines = [f"# center_delay_ps = {hist.center_delay_ps}",
             f"# bin_width_ps = {hist.bin_width_ps}",
             f"# n_signal = {hist.n_signal}",
             f"# n_idler = {hist.n_idler}",
             "# counts (one bin per line, lowest delay first)"]
    lines += [str(int(c)) for c in hist.counts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_histogram(path) -> CoincidenceHistogram:
    meta, counts = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].split("=", 1)
                meta[k.strip()] = int(v)
        elif line.strip():
            counts.append(int(line))
    return CoincidenceHistogram(meta["center_delay_ps"], meta["bin_width_ps"], np.array(counts, dtype=np.int64),
                                meta.get("n_signal", 0), meta.get("n_idler", 0))
