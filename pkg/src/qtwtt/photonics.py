"""Event-level Monte Carlo of the photon-pair two-way link.

Times inside a block are float64 picoseconds relative to the block epoch;
slow link processes (drift, PMD, fading) are indexed by absolute seconds.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import erf

from .core import C_KM_PER_S, FWHM_PER_SIGMA, PS_PER_S, Trace, rng_for
from .errors import SimulationError
from .kernels import bounded_walk, merge_dead_time
from .scenario import (DcfmSpec, DetectorSpec, FadingProfile, FiberLinkSpec, NoiseSpec,
                       ScenarioConfig, SourceSpec)

C_NM_THZ = 299_792.458  # speed of light in nm * THz
FWHM_MASS = float(erf(np.sqrt(np.log(2.0))))  # Gaussian mass inside a FWHM-wide window, 0.7610


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class PairBatch:
    """Photon pairs as parallel arrays (one row per pair)."""

    t_emit_s: np.ndarray
    lambda_signal_nm: np.ndarray
    lambda_idler_nm: np.ndarray
    intrinsic_skew_ps: np.ndarray

    def __len__(self):
        return self.t_emit_s.size

    def take(self, idx) -> "PairBatch":
        return PairBatch(*(getattr(self, f.name)[idx] for f in dataclasses.fields(self)))


@dataclass(frozen=True)
class PhotonBatch:
    """Single photons: block-local time in ps, wavelength, and the path they took."""

    t_ps: np.ndarray
    lambda_nm: np.ndarray
    path: str = ""

    def __len__(self):
        return self.t_ps.size

    def take(self, idx) -> "PhotonBatch":
        return PhotonBatch(self.t_ps[idx], self.lambda_nm[idx], self.path)


def _nm_fwhm_to_thz_sigma(fwhm_nm, center_nm):
    return C_NM_THZ * fwhm_nm / center_nm**2 / FWHM_PER_SIGMA


def generate_pairs(source: SourceSpec, duration_s: float, seed) -> PairBatch:
    """Poisson pair emissions with frequency-anticorrelated wavelengths.

    Pump and signal detunings are Gaussian in optical frequency; the idler
    takes the remainder so that nu_s + nu_i = nu_pump holds exactly per pair.
    """
    if duration_s < 0:
        raise SimulationError("duration must be >= 0")
    rng = _rng(seed)
    n = rng.poisson(source.pair_rate_hz * duration_s)
    t = np.sort(rng.uniform(0.0, duration_s, n))
    nu_c = C_NM_THZ / source.lambda_center_nm
    sd_s = _nm_fwhm_to_thz_sigma(source.signal_fwhm_nm, source.lambda_center_nm)
    sd_p = _nm_fwhm_to_thz_sigma(source.pump_equiv_fwhm_nm, source.lambda_center_nm)
    # keep both wavelengths inside centre +- 5 FWHM
    lim = 4.9 * sd_s * FWHM_PER_SIGMA
    d_sig = np.clip(rng.normal(0.0, sd_s, n), -lim, lim) if sd_s > 0 else np.zeros(n)
    d_pump = np.clip(rng.normal(0.0, sd_p, n), -0.05 * lim, 0.05 * lim) if sd_p > 0 else np.zeros(n)
    skew = rng.normal(0.0, source.correlation_jitter_ps, n) if source.correlation_jitter_ps > 0 else np.zeros(n)
    nu_s = nu_c + d_sig
    nu_i = nu_c + d_pump - d_sig
    return PairBatch(t, C_NM_THZ / nu_s, C_NM_THZ / nu_i, skew)


def split_50_50(pairs, seed):
    """Assign each pair (signal and idler together) to branch 1 or 2."""
    to_first = _rng(seed).random(len(pairs)) < 0.5
    return pairs.take(to_first), pairs.take(~to_first)


def apply_loss(events, loss_db: float, seed):
    if loss_db < 0:
        raise SimulationError("loss must be >= 0 dB")
    if loss_db == 0:
        return events
    keep = _rng(seed).random(len(events)) < 10.0 ** (-loss_db / 10.0)
    return events.take(keep)


def photons_of(pairs: PairBatch, which: str) -> PhotonBatch:
    """Split pairs into emitted photons; the intrinsic skew is shared +-1/2."""
    t = pairs.t_emit_s * PS_PER_S
    if which == "signal":
        return PhotonBatch(t + 0.5 * pairs.intrinsic_skew_ps, pairs.lambda_signal_nm, "signal")
    if which == "idler":
        return PhotonBatch(t - 0.5 * pairs.intrinsic_skew_ps, pairs.lambda_idler_nm, "idler")
    raise ValueError(which)


# ------------------------------------------------------------- link processes

@dataclass(frozen=True)
class LinkState:
    """Realised slow processes of one run (absolute-time traces)."""

    drift_rw: Trace | None = None
    pmd: Trace | None = None
    mismatch_nm: Trace | None = None


def drift_ps(profile, t_s):
    """Symmetric (direction-independent) delay drift at absolute time t."""
    t_s = np.asarray(t_s, dtype=np.float64)
    if profile.kind == "none":
        return np.zeros_like(t_s)
    return 0.5 * profile.peak_to_peak_ps * np.sin(2 * np.pi * t_s / profile.period_s + profile.phase_rad)


def ou_trace(sd, tau_c, duration_s, dt_s, rng) -> Trace:
    """Stationary Ornstein-Uhlenbeck path, exact AR(1) discretisation."""
    n = int(np.ceil(duration_s / dt_s)) + 2
    a = math.exp(-dt_s / tau_c)
    e = rng.normal(0.0, sd * math.sqrt(1 - a * a), n)
    e[0] = rng.normal(0.0, sd)
    return Trace(0.0, dt_s, lfilter([1.0], [1.0, -a], e))


def random_walk_trace(step_sd_per_sqrt_s, duration_s, dt_s, rng) -> Trace:
    n = int(np.ceil(duration_s / dt_s)) + 2
    steps = rng.normal(0.0, step_sd_per_sqrt_s * math.sqrt(dt_s), n)
    steps[0] = 0.0
    return Trace(0.0, dt_s, np.cumsum(steps))


def realize_link_state(cfg: ScenarioConfig, duration_s: float, dt_s: float = 1.0) -> LinkState:
    link, seed = cfg.link, cfg.master_seed
    rw = pmd = mm = None
    if link.drift.kind == "sinusoid_plus_randomwalk" and link.drift.randomwalk_ps_per_sqrt_s > 0:
        rw = random_walk_trace(link.drift.randomwalk_ps_per_sqrt_s, duration_s, dt_s, rng_for(seed, "drift-rw"))
    sd_pmd = link.pmd_coeff_ps_per_sqrt_km * math.sqrt(link.length_km)
    if sd_pmd > 0:
        pmd = ou_trace(sd_pmd, link.pmd_correlation_time_s, duration_s, max(dt_s, 10.0), rng_for(seed, "pmd"))
    if cfg.source.mismatch_walk_pm_per_sqrt_s > 0:
        mm = random_walk_trace(cfg.source.mismatch_walk_pm_per_sqrt_s * 1e-3, duration_s, max(dt_s, 10.0),
                               rng_for(seed, "mismatch"))
    return LinkState(rw, pmd, mm)


def realize_fading(profile: FadingProfile, duration_s: float, seed) -> Trace | None:
    """Bounded random walk of the polarisation-dependent efficiency factor."""
    if profile.kind == "none":
        return None
    rng = _rng(seed)
    n = int(np.ceil(duration_s / profile.step_s)) + 2
    a = profile.step_s / profile.correlation_time_s
    spread = (profile.max_efficiency - profile.min_efficiency) / 4.0
    kick = spread * math.sqrt(2.0 * a)
    vals = bounded_walk(profile.mean_efficiency, profile.mean_efficiency, profile.min_efficiency,
                        profile.max_efficiency, a, kick, rng.normal(size=n))
    return Trace(0.0, profile.step_s, vals)


def base_link_delay_ps(link: FiberLinkSpec) -> float:
    return link.length_km * link.group_index / C_KM_PER_S * PS_PER_S


def base_dcfm_delay_ps(dcfm: DcfmSpec) -> float:
    return dcfm.length_km * dcfm.group_index / C_KM_PER_S * PS_PER_S


def _sign(direction):
    if direction == "forward":
        return 1.0
    if direction == "backward":
        return -1.0
    raise ValueError(f"direction must be forward|backward, got {direction!r}")


def propagate_link(events: PhotonBatch, link: FiberLinkSpec, direction: str, epoch_s: float = 0.0,
                   state: LinkState | None = None) -> PhotonBatch:
    """Signal photons through the fibre link in one direction.

    delay = group delay + symmetric drift + D*L*(lambda - lambda_ref)
            +- PMD excursion +- Sagnac half-asymmetry   (+ forward, - backward)
    """
    sign = _sign(direction)
    t_abs = epoch_s + events.t_ps / PS_PER_S
    delay = (base_link_delay_ps(link)
             + drift_ps(link.drift, t_abs)
             + link.dispersion_ps_per_nm_km * link.length_km * (events.lambda_nm - link.lambda_ref_nm)
             + sign * 0.5 * link.sagnac_coeff_ps_per_km * link.length_km)
    if state is not None:
        if state.drift_rw is not None:
            delay = delay + state.drift_rw(t_abs)
        if state.pmd is not None:
            delay = delay + sign * state.pmd(t_abs)
        if state.mismatch_nm is not None:
            # forward/backward centre-wavelength mismatch, half per direction
            delay = delay + sign * 0.5 * link.dispersion_ps_per_nm_km * link.length_km * state.mismatch_nm(t_abs)
    return PhotonBatch(events.t_ps + delay, events.lambda_nm, f"signal-link-{direction}")


def propagate_dcfm(events: PhotonBatch, dcfm: DcfmSpec, link: FiberLinkSpec,
                   direction: str = "forward") -> PhotonBatch:
    """Idler photons through the dispersion-compensating module (reciprocal)."""
    _sign(direction)
    equiv = dcfm.equiv_length_km
    if equiv is None:
        equiv = link.length_km - link.uncompensated_length_km
    delay = base_dcfm_delay_ps(dcfm) - link.dispersion_ps_per_nm_km * equiv * (events.lambda_nm - link.lambda_ref_nm)
    return PhotonBatch(events.t_ps + delay, events.lambda_nm, f"idler-dcfm-{direction}")


# ------------------------------------------------------------- noise spectrum

def _peak_height(amplitude, fwhm, window=0.5):
    # density height whose window-integral centred on the peak equals amplitude
    s = fwhm / FWHM_PER_SIGMA
    mass = erf(window / 2 / (s * np.sqrt(2.0)))
    return amplitude / (s * np.sqrt(2 * np.pi) * mass)


def _edfa_attenuation(noise: NoiseSpec) -> float:
    if not noise.edfa_on:
        return 0.0
    extra = noise.edfa_distance_km - noise.edfa_ref_distance_km
    return 10.0 ** (-noise.fiber_loss_db_per_km * extra / 10.0)


def noise_counts(noise: NoiseSpec, lo_nm, hi_nm):
    """Expected noise count rate (cps) collected in the band [lo, hi] nm."""
    lo_nm = np.asarray(lo_nm, dtype=np.float64)
    hi_nm = np.asarray(hi_nm, dtype=np.float64)
    att = _edfa_attenuation(noise)
    floor_half_nm = noise.base_floor_cps_per_half_nm + att * max(
        noise.white_floor_cps_per_half_nm - noise.base_floor_cps_per_half_nm, 0.0)
    a = np.clip(lo_nm, noise.band_min_nm, noise.band_max_nm)
    b = np.clip(hi_nm, noise.band_min_nm, noise.band_max_nm)
    total = floor_half_nm / 0.5 * np.maximum(b - a, 0.0)
    for p in noise.peaks:
        center, fwhm, amp = p[:3]
        frac = p[3] if len(p) > 3 else 0.0
        amp_eff = amp * ((1.0 - frac) + frac * att)
        s = fwhm / FWHM_PER_SIGMA
        h = _peak_height(amp_eff, fwhm)
        cdf = lambda x: 0.5 * (1 + erf((x - center) / (s * np.sqrt(2.0))))
        total = total + h * s * np.sqrt(2 * np.pi) * np.maximum(cdf(b) - cdf(a), 0.0)
    return total


def noise_survey(noise: NoiseSpec, sweep_centers_nm, window_fwhm_nm: float = 0.5,
                 integration_s: float = 1.0, seed=0):
    """Scan a rectangular window across the noise spectrum.

    Returns (center_nm, cps) rows; cps is a Poisson realisation over
    ``integration_s`` divided back to a rate.
    """
    if window_fwhm_nm <= 0:
        raise SimulationError("survey window must be > 0 nm")
    centers = np.asarray(sweep_centers_nm, dtype=np.float64)
    expected = noise_counts(noise, centers - window_fwhm_nm / 2, centers + window_fwhm_nm / 2)
    counts = _rng(seed).poisson(expected * integration_s)
    return [(float(c), float(n) / integration_s) for c, n in zip(centers, counts)]


# ------------------------------------------------------------------ detection

def in_band(det: DetectorSpec, lambda_nm) -> np.ndarray:
    lam = np.asarray(lambda_nm)
    if det.filter_fwhm_nm <= 0:
        return np.ones(lam.shape, dtype=bool)
    return np.abs(lam - det.filter_center_nm) <= det.filter_fwhm_nm / 2


def source_in_band_fraction(det: DetectorSpec, source: SourceSpec) -> float:
    if det.filter_fwhm_nm <= 0:
        return 1.0
    s = source.signal_fwhm_nm / FWHM_PER_SIGMA
    if s == 0:
        return float(in_band(det, source.lambda_center_nm))
    lo = det.filter_center_nm - det.filter_fwhm_nm / 2
    hi = det.filter_center_nm + det.filter_fwhm_nm / 2
    z = lambda x: (x - source.lambda_center_nm) / (s * np.sqrt(2.0))
    return float(0.5 * (erf(z(hi)) - erf(z(lo))))


def detector_noise_cps(det: DetectorSpec, noise: NoiseSpec | None) -> float:
    if noise is None or not noise.enabled:
        return 0.0
    if det.filter_fwhm_nm <= 0:
        return float(noise_counts(noise, noise.band_min_nm, noise.band_max_nm))
    return float(noise_counts(noise, det.filter_center_nm - det.filter_fwhm_nm / 2,
                              det.filter_center_nm + det.filter_fwhm_nm / 2))


def _background(rng, start_ps, duration_ps, cell_t0, cell_dt, rates_ps):
    """Sorted Poisson arrivals on [start, start + duration) with a piecewise-constant rate.

    Drawn at the peak rate and thinned cell by cell.
    """
    rmax = float(rates_ps.max()) if rates_ps.size else 0.0
    if rmax <= 0.0 or duration_ps <= 0.0:
        return np.empty(0)
    t = np.sort(rng.uniform(start_ps, start_ps + duration_ps, rng.poisson(rmax * duration_ps)))
    if rates_ps.size > 1 or rates_ps[0] < rmax:
        k = np.clip(((t - cell_t0) // cell_dt).astype(np.int64), 0, rates_ps.size - 1)
        t = t[rng.random(t.size) * rmax < rates_ps[k]]
    return np.ascontiguousarray(t)


def detect(events: PhotonBatch, det: DetectorSpec, noise: NoiseSpec | None = None,
           fading: Trace | None = None, duration_s: float = 1.0, seed=0, *,
           t_start_ps: float = 0.0, epoch_s: float = 0.0, epoch_ps: int = 0,
           uncorrelated_cps: float = 0.0, clock_shift_ps: float = 0.0,
           return_source: bool = False):
    """Turn arriving photons into one detector's TagStream.

    Photons survive with probability efficiency * fading(t) * in-band(lambda)
    and pick up Gaussian jitter; those landing outside [t_start, t_start +
    duration) are dropped. Dark counts, in-band link noise and the
    uncorrelated photon flux (``det.background_cps + uncorrelated_cps``, which
    also sees efficiency and fading) are merged as a Poisson background over
    [t_start, t_start + duration). A non-paralyzable dead time is applied on
    the 1 ps grid. ``clock_shift_ps`` is the local clock's reading error.
    """
    rng = _rng(seed)
    # the background gets its own stream so it does not depend on the photons
    bg_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
    duration_ps = duration_s * PS_PER_S
    t = events.t_ps
    p = np.full(t.size, det.efficiency) * in_band(det, events.lambda_nm)
    if fading is not None:
        p = p * fading(epoch_s + t / PS_PER_S)
    keep = rng.random(t.size) < p
    idx = np.flatnonzero(keep)
    t = t[idx]

    flux = (det.background_cps + uncorrelated_cps) * det.efficiency
    const = det.dark_cps + detector_noise_cps(det, noise)
    if fading is not None and flux > 0:
        cell_t0_s, cell_vals = fading.cell_values(epoch_s + t_start_ps / PS_PER_S, duration_s)
        cell_t0 = (cell_t0_s - epoch_s) * PS_PER_S
        cell_dt = fading.dt_s * PS_PER_S
        rates = const + flux * cell_vals
    else:
        cell_t0, cell_dt = t_start_ps, max(duration_ps, 1.0)
        rates = np.array([const + flux * (fading.mean_over(epoch_s, duration_s) if fading else 1.0)])

    mean_rate = idx.size / max(duration_s, 1e-300) + float(np.mean(rates))
    jitter = det.jitter_rms_ps + det.jitter_rate_slope_ps_per_mcps * mean_rate / 1e6
    if jitter > 0:
        t = t + rng.normal(0.0, jitter, t.size)
    # clip to the window only after the per-photon draws, so a common shift
    # of the arrivals never re-pairs photons with random numbers
    inside = (t >= t_start_ps) & (t < t_start_ps + duration_ps)
    t, idx = t[inside] + clock_shift_ps, idx[inside]
    order = np.argsort(t, kind="stable")
    t = np.ascontiguousarray(t[order])
    idx = idx[order]

    bg = _background(bg_rng, t_start_ps, duration_ps, cell_t0, cell_dt, rates / PS_PER_S) + clock_shift_ps
    tags, src = merge_dead_time(t, bg, float(det.dead_time_ps))
    tags = tags + np.int64(epoch_ps)
    if return_source:
        return tags, np.where(src >= 0, idx[np.maximum(src, 0)], -1)
    return tags


# ------------------------------------------------------- closed-form rates

@dataclass(frozen=True)
class PathStats:
    """Expected behaviour of one one-way path (signal detector, idler detector)."""

    fwhm_ps: float
    n_true: float  # per block, counted in a FWHM-wide window
    coincidence_cps: float  # whole peak
    signal_in_cps: float
    idler_in_cps: float
    signal_out_cps: float
    idler_out_cps: float


def dead_time_output(rate_in, dead_time_ps):
    """Non-paralyzable dead time: r / (1 + r tau)."""
    return rate_in / (1.0 + rate_in * dead_time_ps / PS_PER_S)


def fading_mean(profile: FadingProfile) -> float:
    return 1.0 if profile.kind == "none" else profile.mean_efficiency


def coincidence_fwhm_ps(cfg: ScenarioConfig, sig: DetectorSpec, idl: DetectorSpec,
                        sig_rate_cps: float = 0.0, idl_rate_cps: float = 0.0) -> float:
    """FWHM^2 = detectors^2 + (D L_unc signal_fwhm)^2 + (D L_equiv pump_fwhm)^2 (+ intrinsic skew)."""
    d = cfg.link.dispersion_ps_per_nm_km
    l_eq = cfg.dcfm_equiv_length_km
    l_unc = cfg.link.length_km - l_eq
    j1 = sig.jitter_rms_ps + sig.jitter_rate_slope_ps_per_mcps * sig_rate_cps / 1e6
    j2 = idl.jitter_rms_ps + idl.jitter_rate_slope_ps_per_mcps * idl_rate_cps / 1e6
    det2 = FWHM_PER_SIGMA**2 * (j1**2 + j2**2 + cfg.source.correlation_jitter_ps**2)
    return math.sqrt(det2 + (d * l_unc * cfg.source.signal_fwhm_nm) ** 2
                     + (d * l_eq * cfg.source.pump_equiv_fwhm_nm) ** 2)


def expected_path_stats(cfg: ScenarioConfig) -> dict:
    """Closed-form widths, coincidence counts and singles for paths 13 and 24."""
    src, det = cfg.source, cfg.detectors
    branch = 0.5 * src.pair_rate_hz
    p_s = 10.0 ** (-cfg.link.loss_db / 10.0)
    p_i = 10.0 ** (-cfg.dcfm.loss_db / 10.0)
    fade = fading_mean(cfg.link.polarization_fading)
    out = {}
    for key, s_name, i_name in (("13", "D1", "D3"), ("24", "D2", "D4")):
        ds, di = det[s_name], det[i_name]
        inb_s = source_in_band_fraction(ds, src)
        inb_i = source_in_band_fraction(di, src)
        r_s = ds.dark_cps + detector_noise_cps(ds, cfg.noise) + (branch * p_s * inb_s + ds.background_cps) * ds.efficiency * fade
        r_i = di.dark_cps + (branch * p_i * inb_i + di.background_cps) * di.efficiency
        live_s = 1.0 / (1.0 + r_s * ds.dead_time_ps / PS_PER_S)
        live_i = 1.0 / (1.0 + r_i * di.dead_time_ps / PS_PER_S)
        c = branch * p_s * p_i * inb_s * inb_i * ds.efficiency * di.efficiency * fade * live_s * live_i
        out[key] = PathStats(fwhm_ps=coincidence_fwhm_ps(cfg, ds, di, r_s, r_i),
                             n_true=c * cfg.block_seconds * FWHM_MASS, coincidence_cps=c,
                             signal_in_cps=r_s, idler_in_cps=r_i,
                             signal_out_cps=r_s * live_s, idler_out_cps=r_i * live_i)
    return out


# ------------------------------------------------------ event-mode blocks

@dataclass(frozen=True)
class RunState:
    """Slow processes realised once per run and shared by every block."""

    link: LinkState
    fading_d1: Trace | None
    fading_d2: Trace | None


def realize_run_state(cfg: ScenarioConfig, n_blocks: int) -> RunState:
    duration = n_blocks * cfg.block_seconds + 10.0
    prof = cfg.link.polarization_fading
    return RunState(realize_link_state(cfg, duration),
                    realize_fading(prof, duration, rng_for(cfg.master_seed, "fading:D1")),
                    realize_fading(prof, duration, rng_for(cfg.master_seed, "fading:D2")))


def simulate_event_block(cfg: ScenarioConfig, k: int, state: RunState, prethin: bool = True) -> dict:
    """Tag streams of the four detectors for block k (absolute ps).

    With ``prethin`` only pairs whose signal and idler both survive their
    losses are tracked photon by photon; pairs that lose one partner feed
    the other detector as an equivalent Poisson flux. Independent Bernoulli
    thinning of a Poisson process makes this exact in distribution, and
    ``prethin=False`` runs the literal chain for comparison.
    """
    seed = cfg.master_seed
    T = cfg.block_seconds
    epoch_s = k * T
    epoch_ps = k * cfg.block_ps
    link, dcfm, det = cfg.link, cfg.dcfm, cfg.detectors
    p_s = 10.0 ** (-link.loss_db / 10.0)
    p_i = 10.0 ** (-dcfm.loss_db / 10.0)
    branch = 0.5 * cfg.source.pair_rate_hz

    if prethin:
        src = dataclasses.replace(cfg.source, pair_rate_hz=cfg.source.pair_rate_hz * p_s * p_i)
        pairs = generate_pairs(src, T, rng_for(seed, "pairs", k))
    else:
        pairs = generate_pairs(cfg.source, T, rng_for(seed, "pairs", k))
    b1, b2 = split_50_50(pairs, rng_for(seed, "split", k))

    streams = {}
    base_l, base_d = base_link_delay_ps(link), base_dcfm_delay_ps(dcfm)
    legs = (
        # detector, branch, photon, direction, at site B (reads the offset clock)
        ("D1", b1, "signal", "forward", True),
        ("D3", b1, "idler", "forward", False),
        ("D2", b2, "signal", "backward", False),
        ("D4", b2, "idler", "backward", True),
    )
    for name, br, which, direction, site_b in legs:
        ph = photons_of(br, which)
        if which == "signal":
            if not prethin:
                ph = apply_loss(ph, link.loss_db, rng_for(seed, f"loss:{name}", k))
            ph = propagate_link(ph, link, direction, epoch_s, state.link)
            start = base_l
            fading = state.fading_d1 if name == "D1" else state.fading_d2
            extra = branch * p_s * (1.0 - p_i) * source_in_band_fraction(det[name], cfg.source) if prethin else 0.0
            noise = cfg.noise
        else:
            if not prethin:
                ph = apply_loss(ph, dcfm.loss_db, rng_for(seed, f"loss:{name}", k))
            ph = propagate_dcfm(ph, dcfm, link, direction)
            start = base_d
            fading = None
            extra = branch * p_i * (1.0 - p_s) * source_in_band_fraction(det[name], cfg.source) if prethin else 0.0
            noise = None
        shift = cfg.clock_offset_ps if site_b else 0.0
        streams[name] = detect(ph, det[name], noise, fading, T, rng_for(seed, f"detect:{name}", k),
                               t_start_ps=start, epoch_s=epoch_s, epoch_ps=epoch_ps,
                               uncorrelated_cps=extra, clock_shift_ps=shift)
    return streams
