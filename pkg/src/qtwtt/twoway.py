"""Two-way offset extraction: per-block one-way delays and t0 = (d13 - d24) / 2.

Sign convention: a positive clock offset means site B's clock reads late.
D1 (signal, forward) and D4 (idler, backward) are at site B, so the offset
adds to d13 = t1 - t3 and subtracts from d24 = t2 - t4.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import FWHM_PER_SIGMA, rng_for
from .correlator import coarse_offset, coincidence_count, fine_histogram, fit_gaussian
from .errors import AnalysisError, SimulationError
from .photonics import (base_dcfm_delay_ps, base_link_delay_ps, drift_ps, expected_path_stats,
                        realize_run_state, simulate_event_block)
from .scenario import AnalysisSpec, ScenarioConfig


@dataclass(frozen=True)
class OffsetBlock:
    epoch_s: float
    d13_ps: float
    d24_ps: float
    t0_ps: float
    n13: float
    n24: float
    w13_ps: float
    w24_ps: float
    valid: bool
    note: str = ""

    def __post_init__(self):
        if self.valid and self.t0_ps != (self.d13_ps - self.d24_ps) / 2:
            raise ValueError("t0 must equal (d13 - d24)/2 for a valid block")


def make_block(epoch_s, d13, d24, n13, n24, w13, w24) -> OffsetBlock:
    return OffsetBlock(float(epoch_s), float(d13), float(d24), (float(d13) - float(d24)) / 2,
                       float(n13), float(n24), float(w13), float(w24), True)


def invalid_block(epoch_s, note: str) -> OffsetBlock:
    nan = float("nan")
    return OffsetBlock(float(epoch_s), nan, nan, nan, 0.0, 0.0, nan, nan, False, note)


@dataclass(frozen=True)
class OffsetSeries:
    block_seconds: float
    blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        ep = np.array([b.epoch_s for b in self.blocks])
        if ep.size > 1:
            step = np.diff(ep)
            if np.any(step <= 0) or not np.allclose(step / self.block_seconds, np.round(step / self.block_seconds)):
                raise ValueError("block epochs must increase in steps of block_seconds")

    def __len__(self):
        return len(self.blocks)

    def column(self, name: str, valid_only: bool = True) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.blocks if b.valid or not valid_only], dtype=np.float64)

    @property
    def valid(self) -> np.ndarray:
        return np.array([b.valid for b in self.blocks], dtype=bool)

    @property
    def t0(self) -> np.ndarray:
        return self.column("t0_ps")

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def require_valid(self, minimum: int = 2) -> None:
        if self.n_valid < minimum:
            raise AnalysisError(f"only {self.n_valid} valid blocks (need >= {minimum})")


def theoretical_sd(w1_fwhm_ps, n1, w2_fwhm_ps, n2) -> float:
    """Closed-form SD of t0 from the two peak widths and event counts."""
    if n1 < 1 or n2 < 1 or w1_fwhm_ps <= 0 or w2_fwhm_ps <= 0:
        raise ValueError("need n >= 1 and widths > 0")
    s1 = w1_fwhm_ps / FWHM_PER_SIGMA
    s2 = w2_fwhm_ps / FWHM_PER_SIGMA
    return math.sqrt(s1 * s1 / n1 + s2 * s2 / n2) / math.sqrt(2.0)


def nominal_delays_ps(cfg: ScenarioConfig) -> tuple[int, int]:
    """A-priori (d13, d24) from the cable and module lengths, used as acquisition centres."""
    d = int(round(base_link_delay_ps(cfg.link) - base_dcfm_delay_ps(cfg.dcfm)))
    return d, d


def expected_t0_ps(cfg: ScenarioConfig) -> float:
    """Mean t0 the simulator should produce: injected offset plus the Sagnac bias."""
    return cfg.clock_offset_ps + 0.5 * cfg.link.sagnac_coeff_ps_per_km * cfg.link.length_km


def one_way(sig, idl, prior_ps: int, spec: AnalysisSpec):
    """Coarse acquisition, fine histogram and fit for one path.

    Returns (mu_ps, n_true, fwhm_ps, fit) or raises AnalysisError.
    """
    center = coarse_offset(sig, idl, spec.acquisition_span_ps, spec.coarse_bin_ps, prior_ps)
    hist = fine_histogram(sig, idl, center, spec.span_ps, spec.bin_width_ps)
    fit = fit_gaussian(hist, spec.fit_window_fwhm)
    if not fit.converged:
        raise AnalysisError("fit did not converge")
    n_true, _ = coincidence_count(hist, fit)
    return fit.mu_ps, n_true, fit.fwhm_ps, fit


def analyze_block(epoch_s, d1, d2, d3, d4, priors, spec: AnalysisSpec) -> OffsetBlock:
    try:
        mu13, n13, w13, _ = one_way(d1, d3, priors[0], spec)
        mu24, n24, w24, _ = one_way(d2, d4, priors[1], spec)
    except AnalysisError as exc:
        return invalid_block(epoch_s, f"{type(exc).__name__}: {exc}")
    return make_block(epoch_s, mu13, mu24, n13, n24, w13, w24)


def block_offsets(d1, d2, d3, d4, cfg: ScenarioConfig, n_blocks: int | None = None) -> OffsetSeries:
    """Cut four run-long TagStreams into abutting blocks and analyse each.

    Signal streams are cut at k*T; idler streams at k*T minus the nominal
    delay so that both halves of a pair land in the same block.
    """
    T_ps = cfg.block_ps
    priors = nominal_delays_ps(cfg)
    streams = [np.asarray(s, dtype=np.int64) for s in (d1, d2, d3, d4)]
    if n_blocks is None:
        last = max((int(s[-1]) for s in streams if s.size), default=0)
        n_blocks = max(last // T_ps, 1)
    blocks = []
    for k in range(n_blocks):
        cuts = []
        for s, shift in zip(streams, (0, 0, priors[0], priors[1])):
            a, b = np.searchsorted(s, [k * T_ps - shift, (k + 1) * T_ps - shift])
            cuts.append(s[a:b])
        blocks.append(analyze_block(k * cfg.block_seconds, *cuts, priors, cfg.analysis))
    series = OffsetSeries(cfg.block_seconds, blocks)
    series.require_valid()
    return series


# ----------------------------------------------------------------- block mode

def block_mode_series(cfg: ScenarioConfig, n_blocks: int | None = None, seed: int | None = None,
                      state=None) -> OffsetSeries:
    """Statistical surrogate: draw each block's one-way centroids directly.

    Counts are Poisson around the closed-form means (scaled by the block's
    fading level); each centroid is Normal around the true delay with
    variance ``centroid_variance_factor * (w/2.3548)^2 / n``. The true delay
    carries every modelled slow term, including the symmetric drift, which
    cancels in t0.
    """
    if seed is not None:
        cfg = cfg.replace(master_seed=int(seed))
    n_blocks = cfg.blocks if n_blocks is None else int(n_blocks)
    if state is None:
        state = realize_run_state(cfg, n_blocks)
    stats = expected_path_stats(cfg)
    s13, s24 = stats["13"], stats["24"]
    link = cfg.link
    factor = math.sqrt(cfg.analysis.centroid_variance_factor)
    T = cfg.block_seconds
    prof = link.polarization_fading
    fade_ref = prof.mean_efficiency if prof.kind != "none" else 1.0
    d13_static, d24_static = nominal_delays_ps(cfg)
    # mean chromatic offset of the band centres (identical in both directions)
    lam = cfg.source.lambda_center_nm - link.lambda_ref_nm
    chrom = link.dispersion_ps_per_nm_km * (link.length_km + cfg.dcfm_equiv_length_km) * lam
    sagnac = 0.5 * link.sagnac_coeff_ps_per_km * link.length_km

    rng = rng_for(cfg.master_seed, "block-mode")
    epochs = np.arange(n_blocks) * T
    tm = epochs + 0.5 * T
    f1 = state.fading_d1.block_means(T, n_blocks) / fade_ref if state.fading_d1 is not None else 1.0
    f2 = state.fading_d2.block_means(T, n_blocks) / fade_ref if state.fading_d2 is not None else 1.0
    n1 = rng.poisson(s13.n_true * f1 * np.ones(n_blocks))
    n2 = rng.poisson(s24.n_true * f2 * np.ones(n_blocks))
    e1, e2 = rng.standard_normal((2, n_blocks))
    sym = drift_ps(link.drift, tm) + chrom
    nonrec = np.full(n_blocks, sagnac)
    ls = state.link
    if ls.drift_rw is not None:
        sym = sym + ls.drift_rw(tm)
    if ls.pmd is not None:
        nonrec = nonrec + ls.pmd(tm)
    if ls.mismatch_nm is not None:
        nonrec = nonrec + 0.5 * link.dispersion_ps_per_nm_km * link.length_km * ls.mismatch_nm(tm)
    ok = (n1 >= 2) & (n2 >= 2)
    sd1 = factor * (s13.fwhm_ps / FWHM_PER_SIGMA) / np.sqrt(np.maximum(n1, 1))
    sd2 = factor * (s24.fwhm_ps / FWHM_PER_SIGMA) / np.sqrt(np.maximum(n2, 1))
    d13 = d13_static + sym + nonrec + cfg.clock_offset_ps + e1 * sd1
    d24 = d24_static + sym - nonrec - cfg.clock_offset_ps + e2 * sd2
    blocks = [make_block(epochs[k], d13[k], d24[k], n1[k], n2[k], s13.fwhm_ps, s24.fwhm_ps) if ok[k]
              else invalid_block(epochs[k], "too few coincidences") for k in range(n_blocks)]
    return OffsetSeries(T, blocks)


# ----------------------------------------------------------------- event mode

def _event_blocks(cfg, indices, state, dump=None):
    priors = nominal_delays_ps(cfg)
    out = []
    for k in indices:
        tags = simulate_event_block(cfg, k, state)
        if dump is not None:
            dump(k, tags)
        out.append(analyze_block(k * cfg.block_seconds, tags["D1"], tags["D2"], tags["D3"], tags["D4"],
                                 priors, cfg.analysis))
    return out


def expected_event_count(cfg: ScenarioConfig, n_blocks: int) -> float:
    st = expected_path_stats(cfg)
    per_s = sum(p.signal_out_cps + p.idler_out_cps for p in st.values())
    return per_s * cfg.block_seconds * n_blocks


def run_event_mode(cfg: ScenarioConfig, n_blocks: int | None = None, workers: int = 1,
                   dump=None, stride: int = 1) -> OffsetSeries:
    """Full photon-level simulation and analysis of n_blocks blocks.

    Blocks abut by default; ``stride`` > 1 simulates every stride-th block of
    a longer run, which samples slow processes over a long span cheaply.
    Blocks are independent given the run state, so they can be spread over
    worker processes; results are identical for any worker count.
    """
    n_blocks = cfg.blocks if n_blocks is None else int(n_blocks)
    stride = int(stride)
    if stride < 1:
        raise SimulationError("stride must be >= 1")
    total = expected_event_count(cfg, n_blocks)
    if total > cfg.max_events:
        raise SimulationError(f"event mode would generate ~{total:.3g} tags (> max_events {cfg.max_events:.3g});"
                              " use block mode or raise --max-events")
    state = realize_run_state(cfg, (n_blocks - 1) * stride + 1)
    idx = [k * stride for k in range(n_blocks)]
    workers = max(1, min(int(workers), os.cpu_count() or 1, n_blocks))
    if workers == 1 or dump is not None:
        blocks = _event_blocks(cfg, idx, state, dump)
    else:
        chunks = [idx[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_event_blocks, [cfg] * workers, chunks, [state] * workers))
        by_k = {}
        for chunk, res in zip(chunks, parts):
            by_k.update(zip(chunk, res))
        blocks = [by_k[k] for k in idx]
    return OffsetSeries(cfg.block_seconds, blocks)
