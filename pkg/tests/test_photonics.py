import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from qtwtt.core import FWHM_PER_SIGMA, PS_PER_S, quantize_ps
from qtwtt.errors import SimulationError
from qtwtt.photonics import (C_NM_THZ, FWHM_MASS, PhotonBatch, apply_loss, base_dcfm_delay_ps,
                             base_link_delay_ps, coincidence_fwhm_ps, dead_time_output, detect,
                             expected_path_stats, generate_pairs, noise_counts, noise_survey, ou_trace,
                             photons_of, propagate_dcfm, propagate_link, realize_fading, realize_run_state,
                             simulate_event_block, split_50_50)
from qtwtt.scenario import (DcfmSpec, DetectorSpec, DriftProfile, FadingProfile, FiberLinkSpec, NoiseSpec,
                            ScenarioConfig, SourceSpec)

IDEAL = DetectorSpec(efficiency=1.0, jitter_rms_ps=0.0, dark_cps=0.0, dead_time_ps=0.0, filter_fwhm_nm=0.0)


def binom_ok(k, n, p, z=4.0):
    return abs(k - n * p) <= z * np.sqrt(n * p * (1 - p))


# ---------------------------------------------------------------- pairs

def test_pair_count_is_poisson():
    pairs = generate_pairs(SourceSpec(pair_rate_hz=100.0), 10.0, 1)
    assert abs(len(pairs) - 1000) <= 4 * np.sqrt(1000)
    assert np.all(np.diff(pairs.t_emit_s) >= 0)
    assert pairs.t_emit_s.min() >= 0 and pairs.t_emit_s.max() < 10.0


def test_signal_spectrum_fwhm():
    pairs = generate_pairs(SourceSpec(pair_rate_hz=1e5), 1.0, 2)
    fwhm = FWHM_PER_SIGMA * np.std(pairs.lambda_signal_nm)
    assert fwhm == pytest.approx(1.84, rel=0.03)


def test_zero_pump_width_gives_exact_anticorrelation():
    src = SourceSpec(pair_rate_hz=1e4, pump_equiv_fwhm_nm=0.0)
    p = generate_pairs(src, 1.0, 3)
    nu_c = C_NM_THZ / src.lambda_center_nm
    det_s = C_NM_THZ / p.lambda_signal_nm - nu_c
    det_i = C_NM_THZ / p.lambda_idler_nm - nu_c
    assert np.max(np.abs(det_s + det_i)) < 1e-9 * nu_c


def test_frequency_sum_spread_equals_pump_width():
    src = SourceSpec(pair_rate_hz=1e5, pump_equiv_fwhm_nm=0.05)
    p = generate_pairs(src, 1.0, 4)
    inv_sum = 1.0 / p.lambda_signal_nm + 1.0 / p.lambda_idler_nm  # = 1 / lambda_pump_eff
    nu_pump = C_NM_THZ * inv_sum
    expected_sd = C_NM_THZ * 0.05 / src.lambda_center_nm**2 / FWHM_PER_SIGMA
    assert np.std(nu_pump) == pytest.approx(expected_sd, rel=0.03)
    # the signal detuning itself carries no pump information
    assert abs(np.corrcoef(nu_pump, p.lambda_signal_nm)[0, 1]) < 0.02


def test_wavelengths_stay_in_support():
    src = SourceSpec(pair_rate_hz=2e5)
    p = generate_pairs(src, 1.0, 5)
    for lam in (p.lambda_signal_nm, p.lambda_idler_nm):
        assert np.all(np.abs(lam - src.lambda_center_nm) <= 5 * src.signal_fwhm_nm)


def test_negative_duration_rejected():
    with pytest.raises(SimulationError):
        generate_pairs(SourceSpec(), -1.0, 0)


def test_intrinsic_skew():
    p = generate_pairs(SourceSpec(pair_rate_hz=5e4, correlation_jitter_ps=20.0), 1.0, 6)
    assert np.std(p.intrinsic_skew_ps) == pytest.approx(20.0, rel=0.03)
    s, i = photons_of(p, "signal"), photons_of(p, "idler")
    assert np.allclose(s.t_ps - i.t_ps, p.intrinsic_skew_ps, rtol=0, atol=1e-3)


# ---------------------------------------------------------------- split / loss

def test_split_binomial_partition_and_determinism():
    p = generate_pairs(SourceSpec(pair_rate_hz=1e6), 1.0, 7)
    a, b = split_50_50(p, 11)
    assert binom_ok(len(a), len(p), 0.5)
    assert len(a) + len(b) == len(p)
    assert np.array_equal(np.sort(np.concatenate([a.t_emit_s, b.t_emit_s])), p.t_emit_s)
    a2, _ = split_50_50(p, 11)
    assert np.array_equal(a.t_emit_s, a2.t_emit_s)
    # signal and idler travel together
    idx = np.searchsorted(p.t_emit_s, a.t_emit_s)
    assert np.array_equal(p.lambda_idler_nm[idx], a.lambda_idler_nm)


def _batch(n):
    return PhotonBatch(np.arange(n, dtype=float), np.full(n, 1561.0))


def test_loss_zero_db_keeps_everything():
    b = _batch(1000)
    assert len(apply_loss(b, 0.0, 1)) == 1000


def test_loss_ten_db_binomial():
    out = apply_loss(_batch(1_000_000), 10.0, 2)
    assert binom_ok(len(out), 1_000_000, 0.1)


def test_loss_38_db_probability():
    assert 10 ** (-38 / 10) == pytest.approx(1.585e-4, rel=1e-3)
    out = apply_loss(_batch(2_000_000), 38.0, 3)
    assert binom_ok(len(out), 2_000_000, 10 ** -3.8)


def test_loss_negative_rejected():
    with pytest.raises(SimulationError):
        apply_loss(_batch(3), -1.0, 0)


def test_loss_composition_chi_square():
    n, trials = 200, 400
    rng = np.random.default_rng(9)
    two = [len(apply_loss(apply_loss(_batch(n), 2.0, rng), 3.0, rng)) for _ in range(trials)]
    one = [len(apply_loss(_batch(n), 5.0, rng)) for _ in range(trials)]
    bins = np.arange(min(two + one), max(two + one) + 2, 3)
    table = np.array([np.histogram(two, bins)[0], np.histogram(one, bins)[0]])
    table = table[:, table.sum(axis=0) > 0]
    _, pval, _, _ = stats.chi2_contingency(table)
    assert pval > 1e-3


# ---------------------------------------------------------------- propagation

def test_zero_length_link_is_identity():
    link = FiberLinkSpec(length_km=0.0, uncompensated_length_km=0.0)
    b = PhotonBatch(np.array([1.0, 5.0, 9.0]), np.array([1559.0, 1561.0, 1563.0]))
    assert np.array_equal(propagate_link(b, link, "forward").t_ps, b.t_ps)


def test_reference_wavelength_gives_base_delay_only():
    link = FiberLinkSpec(sagnac_coeff_ps_per_km=0.0)
    b = PhotonBatch(np.array([0.0]), np.array([link.lambda_ref_nm]))
    out = propagate_link(b, link, "forward")
    assert out.t_ps[0] == pytest.approx(103 * 1.468 / 299792.458 * 1e12)
    assert out.t_ps[0] == pytest.approx(base_link_delay_ps(link))


def test_chromatic_term():
    link = FiberLinkSpec(sagnac_coeff_ps_per_km=0.0)
    b = PhotonBatch(np.array([0.0, 0.0]), np.array([link.lambda_ref_nm, link.lambda_ref_nm + 1.0]))
    out = propagate_link(b, link, "forward")
    assert out.t_ps[1] - out.t_ps[0] == pytest.approx(1751.0)


def test_sagnac_asymmetry():
    link = FiberLinkSpec()
    b = PhotonBatch(np.array([0.0]), np.array([1561.0]))
    fwd = propagate_link(b, link, "forward").t_ps[0]
    bwd = propagate_link(b, link, "backward").t_ps[0]
    assert fwd - bwd == pytest.approx(5.15)


def test_arrival_not_before_emission():
    p = generate_pairs(SourceSpec(pair_rate_hz=1e4), 1.0, 1)
    s = photons_of(p, "signal")
    assert np.all(propagate_link(s, FiberLinkSpec(), "forward").t_ps >= s.t_ps)
    i = photons_of(p, "idler")
    assert np.all(propagate_dcfm(i, DcfmSpec(), FiberLinkSpec()).t_ps >= i.t_ps)


def test_bad_direction():
    with pytest.raises(ValueError):
        propagate_link(_batch(2), FiberLinkSpec(), "sideways")


def test_dcfm_reference_wavelength():
    link = FiberLinkSpec()
    b = PhotonBatch(np.array([0.0]), np.array([link.lambda_ref_nm]))
    out = propagate_dcfm(b, DcfmSpec(), link)
    assert out.t_ps[0] == pytest.approx(base_dcfm_delay_ps(DcfmSpec()))


def test_perfect_dispersion_cancellation():
    link = FiberLinkSpec(uncompensated_length_km=0.0, sagnac_coeff_ps_per_km=0.0)
    dl = np.linspace(-3, 3, 13)
    t = np.zeros(dl.size)
    s = propagate_link(PhotonBatch(t, link.lambda_ref_nm + dl), link, "forward")
    i = propagate_dcfm(PhotonBatch(t, link.lambda_ref_nm - dl), DcfmSpec(equiv_length_km=103.0), link)
    diff = s.t_ps - i.t_ps
    assert np.ptp(diff) < 1e-6


@given(amp=st.floats(0, 5e4), period=st.floats(100, 1e5), phase=st.floats(0, 6.3),
       seed=st.integers(0, 2**32 - 1))
def test_symmetric_drift_cancels_per_pair(amp, period, phase, seed):
    pairs = generate_pairs(SourceSpec(pair_rate_hz=2000.0), 1.0, seed)
    epoch = 1234.0

    def q(link):
        s, i = photons_of(pairs, "signal"), photons_of(pairs, "idler")
        t1 = propagate_link(s, link, "forward", epoch).t_ps
        t2 = propagate_link(s, link, "backward", epoch).t_ps
        t3 = propagate_dcfm(i, DcfmSpec(), link, "forward").t_ps
        t4 = propagate_dcfm(i, DcfmSpec(), link, "backward").t_ps
        return (t1 - t3) - (t2 - t4)

    flat = FiberLinkSpec()
    drifting = dataclasses.replace(flat, drift=DriftProfile("sinusoid", amp, period, 0.0, phase))
    # 1 fs: float resolution of 1e12 ps timestamps is ~1e-4 ps
    assert np.allclose(q(flat), q(drifting), rtol=0, atol=1e-3)


def test_width_model_matches_event_simulation():
    cfg = ScenarioConfig()  # 103 km, 4.5 km uncompensated
    d1, d3 = cfg.detectors.D1, cfg.detectors.D3
    pairs = generate_pairs(dataclasses.replace(cfg.source, pair_rate_hz=4e4), 1.0, 21)
    s = propagate_link(photons_of(pairs, "signal"), cfg.link, "forward")
    i = propagate_dcfm(photons_of(pairs, "idler"), cfg.dcfm, cfg.link)
    rng = np.random.default_rng(0)
    diff = (s.t_ps + rng.normal(0, d1.jitter_rms_ps, len(s))) - (i.t_ps + rng.normal(0, d3.jitter_rms_ps, len(i)))
    # robust width: interquartile range of a Gaussian is 1.349 sigma
    q75, q25 = np.percentile(diff, [75, 25])
    fwhm_sim = FWHM_PER_SIGMA * (q75 - q25) / 1.349
    assert fwhm_sim == pytest.approx(coincidence_fwhm_ps(cfg, d1, d3), rel=0.10)
    assert coincidence_fwhm_ps(cfg, d1, d3) == pytest.approx(198, rel=0.10)
    assert coincidence_fwhm_ps(cfg, cfg.detectors.D2, cfg.detectors.D4) == pytest.approx(182, rel=0.10)


# ---------------------------------------------------------------- detection

def test_detect_pass_through():
    t = np.sort(np.random.default_rng(1).uniform(0, 1e9, 5000))
    b = PhotonBatch(t, np.full(t.size, 1561.0))
    tags = detect(b, IDEAL, duration_s=1e-3, seed=1)
    assert np.array_equal(tags, quantize_ps(t))


def test_detect_jitter_rms():
    t = np.sort(np.random.default_rng(2).uniform(0, 1e12, 1_000_000))
    det = dataclasses.replace(IDEAL, jitter_rms_ps=34.8)
    tags, src = detect(PhotonBatch(t, np.full(t.size, 1561.0)), det, duration_s=1.0, seed=3,
                       return_source=True)
    err = tags - t[src]
    assert np.sqrt(np.mean(err**2)) == pytest.approx(34.8, rel=0.01)


def test_dark_counts():
    det = dataclasses.replace(IDEAL, dark_cps=60.0)
    tags = detect(PhotonBatch(np.zeros(0), np.zeros(0)), det, duration_s=100.0, seed=4)
    assert abs(tags.size - 6000) <= 4 * np.sqrt(6000)
    assert np.all(np.diff(tags) >= 0) and tags.min() >= 0 and tags.max() < 100 * PS_PER_S


def test_dead_time_saturation():
    det = dataclasses.replace(IDEAL, dark_cps=5e6, dead_time_ps=1.67e6)
    tags = detect(PhotonBatch(np.zeros(0), np.zeros(0)), det, duration_s=0.2, seed=5)
    rate = tags.size / 0.2
    assert rate <= 600e3
    expected = dead_time_output(5e6, 1.67e6)
    assert abs(tags.size - expected * 0.2) <= 4 * np.sqrt(expected * 0.2)
    assert np.min(np.diff(tags)) >= 1.67e6


@given(seed=st.integers(0, 2**32 - 1), rate=st.floats(1e3, 3e6), dead=st.floats(0, 5e6),
       nph=st.integers(0, 3000))
def test_detect_sorted_and_respects_dead_time(seed, rate, dead, nph):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1e10, nph))
    det = DetectorSpec(efficiency=0.7, jitter_rms_ps=40.0, dark_cps=rate, dead_time_ps=dead, filter_fwhm_nm=0.0)
    tags = detect(PhotonBatch(t, np.full(nph, 1561.0)), det, duration_s=0.01, seed=seed)
    d = np.diff(tags)
    assert np.all(d >= 0)
    if dead > 0 and d.size:
        assert d.min() >= dead


def test_filter_blocks_out_of_band_photons():
    det = dataclasses.replace(IDEAL, filter_center_nm=1560.0, filter_fwhm_nm=6.5)
    lam = np.array([1556.0, 1557.0, 1563.0, 1564.0])
    tags = detect(PhotonBatch(np.arange(4.0) * 1e6, lam), det, duration_s=1e-3, seed=0)
    assert tags.size == 2


def test_fading_scales_detection():
    tr = realize_fading(FadingProfile("bounded_walk", 0.5, 0.5, 0.5, 60.0), 20.0, 1)
    t = np.sort(np.random.default_rng(3).uniform(0, 1e13, 200_000))
    tags = detect(PhotonBatch(t, np.full(t.size, 1561.0)), IDEAL, fading=tr, duration_s=10.0, seed=7)
    assert binom_ok(tags.size, t.size, 0.5)


def test_background_flux_follows_fading():
    det = dataclasses.replace(IDEAL, background_cps=1e4)
    tr = realize_fading(FadingProfile("bounded_walk", 0.3, 0.3, 0.3, 60.0), 20.0, 1)
    tags = detect(PhotonBatch(np.zeros(0), np.zeros(0)), det, fading=tr, duration_s=10.0, seed=2)
    assert abs(tags.size - 3e4) <= 4 * np.sqrt(3e4)


# ---------------------------------------------------------------- slow processes

def test_bounded_walk_limits_and_mean():
    prof = FadingProfile("bounded_walk", 0.7, 0.4, 1.0, 60.0)
    tr = realize_fading(prof, 2e5, 3)
    assert tr.values.min() >= 0.4 and tr.values.max() <= 1.0
    assert np.mean(tr.values) == pytest.approx(0.7, abs=0.03)


def test_ou_stationary_sd_and_correlation():
    tr = ou_trace(0.5, 1000.0, 2e6, 10.0, np.random.default_rng(4))
    v = tr.values
    assert np.std(v) == pytest.approx(0.5, rel=0.1)
    lag = 100  # 1000 s
    r = np.corrcoef(v[:-lag], v[lag:])[0, 1]
    assert r == pytest.approx(np.exp(-1), abs=0.08)


# ---------------------------------------------------------------- noise

def test_noise_survey_floors():
    centers = np.arange(1525.0, 1600.01, 0.5)
    far = (centers > 1565) & (centers < 1600)
    for noise, floor in ((NoiseSpec(), 800.0), (NoiseSpec(edfa_on=False), 115.0),
                         (NoiseSpec(white_floor_cps_per_half_nm=295.0), 295.0)):
        rows = noise_survey(noise, centers, 0.5, 10.0, seed=1)
        cps = np.array([r[1] for r in rows])
        assert np.median(cps[far]) == pytest.approx(floor, rel=0.10)


def test_noise_peaks_above_local_floor():
    noise = NoiseSpec()
    for peak in (1530.0, 1544.0, 1551.0):
        at = noise_counts(noise, peak - 0.25, peak + 0.25)
        off = noise_counts(noise, peak + 4.75, peak + 5.25)
        assert at > off
    rows = noise_survey(noise, np.arange(1525.0, 1600.01, 0.5), seed=2)
    assert abs(max(rows, key=lambda r: r[1])[0] - 1530.0) <= 1.0


def test_edfa_contribution_decreases_with_distance():
    base = NoiseSpec(edfa_on=False)
    contrib = []
    for d in (2.0, 4.0, 6.0, 8.0):
        n = NoiseSpec(edfa_distance_km=d)
        contrib.append(float(noise_counts(n, 1529.75, 1530.25) - noise_counts(base, 1529.75, 1530.25)))
    assert all(a > b for a, b in zip(contrib, contrib[1:]))


def test_survey_window_must_be_positive():
    with pytest.raises(SimulationError):
        noise_survey(NoiseSpec(), [1550.0], 0.0)


# ---------------------------------------------------------------- block simulator

def _small_cfg(**kw):
    det = DetectorSpec(efficiency=0.8, jitter_rms_ps=30.0, dark_cps=0.0, dead_time_ps=0.0, filter_fwhm_nm=0.0)
    cfg = ScenarioConfig(
        source=SourceSpec(pair_rate_hz=4e5),
        link=FiberLinkSpec(length_km=10.0, loss_db=3.0, uncompensated_length_km=1.0),
        dcfm=DcfmSpec(length_km=1.0, loss_db=4.0),
        block_seconds=0.5, mode="event",
    )
    from qtwtt.scenario import Detectors
    cfg = cfg.replace(detectors=Detectors(det, det, det, det), **kw)
    return cfg


def _block_counts(cfg, prethin, n_blocks=12):
    state = realize_run_state(cfg, n_blocks)
    singles, coinc = [], []
    from qtwtt.correlator import fine_histogram
    from qtwtt.twoway import nominal_delays_ps
    prior = nominal_delays_ps(cfg)[0]
    for k in range(n_blocks):
        tags = simulate_event_block(cfg, k, state, prethin=prethin)
        singles.append([tags[c].size for c in ("D1", "D2", "D3", "D4")])
        h = fine_histogram(tags["D1"], tags["D3"], prior, 2000, 10)
        coinc.append(h.counts.sum())
    return np.array(singles, float), np.array(coinc, float)


def test_prethinned_chain_matches_literal_chain():
    cfg = _small_cfg()
    s_lit, c_lit = _block_counts(cfg, prethin=False)
    s_pre, c_pre = _block_counts(cfg, prethin=True)
    st_ = expected_path_stats(cfg)["13"]
    exp_single = [st_.signal_in_cps, None, st_.idler_in_cps, None]
    for j in (0, 2):
        mu = exp_single[j] * cfg.block_seconds
        for s in (s_lit, s_pre):
            assert abs(s[:, j].mean() - mu) <= 4 * np.sqrt(mu / len(s))
    mu_c = st_.coincidence_cps * cfg.block_seconds
    for c in (c_lit, c_pre):
        # +-1 ns window holds the whole peak; accidentals are negligible here
        assert abs(c.mean() - mu_c) <= 4 * np.sqrt(mu_c / len(c)) + 0.02 * mu_c
    # same per-block spread too (Poisson)
    assert np.var(s_pre[:, 0], ddof=1) == pytest.approx(np.var(s_lit[:, 0], ddof=1), rel=1.5)


def test_event_block_streams_are_valid_tagstreams():
    from qtwtt.core import validate_tagstream
    cfg = _small_cfg()
    state = realize_run_state(cfg, 2)
    tags = simulate_event_block(cfg, 1, state)
    for c, t in tags.items():
        validate_tagstream(t, c)
        assert t.min() >= cfg.block_ps  # block 1 starts at one block length


def test_expected_stats_fwhm_mass():
    assert FWHM_MASS == pytest.approx(0.761, abs=5e-4)
