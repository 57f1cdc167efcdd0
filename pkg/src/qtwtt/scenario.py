"""Scenario configuration and its flat ``section.key = value`` text format.

Values are JSON literals (numbers, ``true``/``false``, quoted strings, lists);
a bare word is read as a string. Every key must name a field, so typos fail
loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

DEFAULT_PEAKS = (
    # center_nm, fwhm_nm, amplitude (cps per 0.5 nm window at the peak), EDFA-driven fraction
    (1530.0, 8.0, 30000.0, 1.0),
    (1544.0, 1.5, 5000.0, 0.4),
    (1551.0, 1.5, 5000.0, 0.4),
)


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class SourceSpec:
    pair_rate_hz: float = 1.0e6
    lambda_center_nm: float = 1561.0
    signal_fwhm_nm: float = 1.84
    pump_equiv_fwhm_nm: float = 76.5 / (17.0 * 103.0)
    correlation_jitter_ps: float = 0.0
    # wander of the centre-wavelength difference between two independent sources;
    # zero for the shared-source layout
    mismatch_walk_pm_per_sqrt_s: float = 0.0

    def __post_init__(self):
        _check(self.pair_rate_hz >= 0, "source.pair_rate_hz must be >= 0")
        for name in ("signal_fwhm_nm", "pump_equiv_fwhm_nm", "correlation_jitter_ps",
                     "mismatch_walk_pm_per_sqrt_s"):
            _check(getattr(self, name) >= 0, f"source.{name} must be >= 0")
        _check(self.lambda_center_nm > 0, "source.lambda_center_nm must be > 0")


@dataclass(frozen=True)
class DriftProfile:
    kind: str = "none"  # none | sinusoid | sinusoid_plus_randomwalk
    peak_to_peak_ps: float = 12900.0
    period_s: float = 86400.0
    randomwalk_ps_per_sqrt_s: float = 0.0
    phase_rad: float = 0.0

    def __post_init__(self):
        _check(self.kind in ("none", "sinusoid", "sinusoid_plus_randomwalk"),
               f"unknown drift kind {self.kind!r}")
        _check(self.peak_to_peak_ps >= 0, "drift.peak_to_peak_ps must be >= 0")
        _check(self.period_s > 0, "drift.period_s must be > 0")
        _check(self.randomwalk_ps_per_sqrt_s >= 0, "drift.randomwalk_ps_per_sqrt_s must be >= 0")


@dataclass(frozen=True)
class FadingProfile:
    kind: str = "none"  # none | bounded_walk
    mean_efficiency: float = 1.0
    min_efficiency: float = 1.0
    max_efficiency: float = 1.0
    correlation_time_s: float = 60.0
    step_s: float = 1.0

    def __post_init__(self):
        _check(self.kind in ("none", "bounded_walk"), f"unknown fading kind {self.kind!r}")
        _check(0 <= self.min_efficiency <= self.mean_efficiency <= self.max_efficiency <= 1,
               "fading requires 0 <= min <= mean <= max <= 1")
        _check(self.correlation_time_s > 0 and self.step_s > 0, "fading times must be > 0")


@dataclass(frozen=True)
class FiberLinkSpec:
    length_km: float = 103.0
    loss_db: float = 31.0
    dispersion_ps_per_nm_km: float = 17.0
    lambda_ref_nm: float = 1561.0
    uncompensated_length_km: float = 4.5
    group_index: float = 1.468
    drift: DriftProfile = field(default_factory=DriftProfile)
    pmd_coeff_ps_per_sqrt_km: float = 0.05
    pmd_correlation_time_s: float = 8 * 3600.0
    sagnac_coeff_ps_per_km: float = 0.05
    polarization_fading: FadingProfile = field(default_factory=FadingProfile)

    def __post_init__(self):
        _check(self.length_km >= 0, "link.length_km must be >= 0")
        _check(self.loss_db >= 0, "link.loss_db must be >= 0")
        _check(0 <= self.uncompensated_length_km <= self.length_km,
               "link.uncompensated_length_km must lie in [0, length_km]")
        _check(self.pmd_coeff_ps_per_sqrt_km >= 0 and self.sagnac_coeff_ps_per_km >= 0,
               "PMD/Sagnac coefficients must be >= 0")
        _check(self.pmd_correlation_time_s > 0, "link.pmd_correlation_time_s must be > 0")


@dataclass(frozen=True)
class DcfmSpec:
    # dispersion-equivalent fibre length; None -> link.length_km - link.uncompensated_length_km
    equiv_length_km: typing.Optional[float] = None
    length_km: float = 12.0
    group_index: float = 1.468
    loss_db: float = 6.0

    def __post_init__(self):
        _check(self.loss_db >= 0, "dcfm.loss_db must be >= 0")
        _check(self.length_km >= 0, "dcfm.length_km must be >= 0")
        _check(self.equiv_length_km is None or self.equiv_length_km >= 0,
               "dcfm.equiv_length_km must be >= 0")


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 0.8
    jitter_rms_ps: float = 34.8
    dark_cps: float = 60.0
    dead_time_ps: float = 1.67e6
    jitter_rate_slope_ps_per_mcps: float = 0.0
    filter_center_nm: float = 1560.0
    filter_fwhm_nm: float = 6.5  # 0 disables the filter
    # uncorrelated photon flux at the detector input (unheralded source emission etc.)
    background_cps: float = 0.0

    def __post_init__(self):
        _check(0 <= self.efficiency <= 1, "detector efficiency must lie in [0, 1]")
        for name in ("jitter_rms_ps", "dark_cps", "dead_time_ps", "jitter_rate_slope_ps_per_mcps",
                     "filter_fwhm_nm", "background_cps"):
            _check(getattr(self, name) >= 0, f"detector {name} must be >= 0")


@dataclass(frozen=True)
class Detectors:
    D1: DetectorSpec = field(default_factory=lambda: DetectorSpec(jitter_rms_ps=34.8))
    D2: DetectorSpec = field(default_factory=lambda: DetectorSpec(jitter_rms_ps=25.8))
    D3: DetectorSpec = field(default_factory=lambda: DetectorSpec(jitter_rms_ps=34.8, filter_fwhm_nm=0.0))
    D4: DetectorSpec = field(default_factory=lambda: DetectorSpec(jitter_rms_ps=25.8, filter_fwhm_nm=0.0))

    def __getitem__(self, name: str) -> DetectorSpec:
        return getattr(self, name)


@dataclass(frozen=True)
class NoiseSpec:
    enabled: bool = False  # whether the link delivers this noise to D1/D2
    white_floor_cps_per_half_nm: float = 800.0
    base_floor_cps_per_half_nm: float = 115.0
    peaks: tuple = DEFAULT_PEAKS
    edfa_on: bool = True
    edfa_distance_km: float = 0.2
    edfa_ref_distance_km: float = 0.2
    fiber_loss_db_per_km: float = 0.2
    band_min_nm: float = 1520.0
    band_max_nm: float = 1610.0

    def __post_init__(self):
        _check(self.white_floor_cps_per_half_nm >= 0 and self.base_floor_cps_per_half_nm >= 0,
               "noise floors must be >= 0")
        _check(self.edfa_distance_km >= 0, "noise.edfa_distance_km must be >= 0")
        peaks = tuple(tuple(float(v) for v in p) for p in self.peaks)
        for p in peaks:
            _check(len(p) in (3, 4), "noise peaks are (center_nm, fwhm_nm, amplitude_cps[, edfa_fraction])")
            _check(p[1] > 0 and p[2] >= 0, "noise peak widths must be > 0, amplitudes >= 0")
        object.__setattr__(self, "peaks", peaks)


@dataclass(frozen=True)
class AnalysisSpec:
    bin_width_ps: int = 10
    span_ps: int = 10_000
    coarse_bin_ps: int = 1000
    acquisition_span_ps: int = 100_000
    fit_window_fwhm: float = 3.0
    # block mode: variance of each one-way centre estimate in units of (sigma^2 / n)
    centroid_variance_factor: float = 2.0

    def __post_init__(self):
        _check(self.bin_width_ps >= 1 and self.coarse_bin_ps >= 1, "bin widths must be >= 1 ps")
        _check(self.span_ps % self.bin_width_ps == 0, "analysis.span_ps must be a multiple of bin_width_ps")
        _check(self.span_ps // self.bin_width_ps <= 10**6, "fine histogram limited to 1e6 bins")
        _check(self.acquisition_span_ps > 0, "analysis.acquisition_span_ps must be > 0")
        _check(self.centroid_variance_factor >= 0, "analysis.centroid_variance_factor must be >= 0")


@dataclass(frozen=True)
class SurveySpec:
    start_nm: float = 1525.0
    stop_nm: float = 1600.0
    step_nm: float = 0.5
    window_fwhm_nm: float = 0.5
    integration_s: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    source: SourceSpec = field(default_factory=SourceSpec)
    link: FiberLinkSpec = field(default_factory=FiberLinkSpec)
    dcfm: DcfmSpec = field(default_factory=DcfmSpec)
    detectors: Detectors = field(default_factory=Detectors)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    survey: SurveySpec = field(default_factory=SurveySpec)
    clock_offset_ps: float = 0.0
    block_seconds: float = 10.0
    mode: str = "block"  # event | block
    master_seed: int = 1
    blocks: int = 100
    max_events: float = 2.0e9

    def __post_init__(self):
        _check(self.block_seconds > 0, "block_seconds must be > 0")
        _check(self.mode in ("event", "block"), f"mode must be event|block, got {self.mode!r}")
        _check(self.blocks >= 1, "blocks must be >= 1")
        _check(0 <= self.master_seed < 2**64, "master_seed must be an unsigned 64-bit integer")
        if self.dcfm.equiv_length_km is not None:
            unc = self.link.length_km - self.dcfm.equiv_length_km
            _check(abs(unc - self.link.uncompensated_length_km) < 1e-9,
                   "dcfm.equiv_length_km disagrees with link.uncompensated_length_km")

    @property
    def dcfm_equiv_length_km(self) -> float:
        if self.dcfm.equiv_length_km is not None:
            return self.dcfm.equiv_length_km
        return self.link.length_km - self.link.uncompensated_length_km

    @property
    def block_ps(self) -> int:
        return int(round(self.block_seconds * 1e12))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- text format

def _flatten(obj, prefix=""):
    out = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(val):
            out.update(_flatten(val, key + "."))
        else:
            out[key] = val
    return out


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if val is None:
        return "null"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, (tuple, list)):
        return json.dumps([list(v) if isinstance(v, tuple) else v for v in val])
    if isinstance(val, str):
        return json.dumps(val)
    return str(val)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in _flatten(cfg).items())


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(value, tp, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None or value in ("none", "auto"):
            return None
        return _coerce(value, args[0], key)
    try:
        if tp is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "false", "1", "0"):
                return str(value).lower() in ("true", "1")
            raise ValueError(value)
        if tp is int:
            if isinstance(value, bool):
                raise ValueError(value)
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(value) if isinstance(value, int) else int(f)
        if tp is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if tp is str:
            return str(value)
        if tp is tuple:
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            return tuple(tuple(float(x) for x in row) for row in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _merge_into(cfg_flat: dict, updates: dict) -> dict:
    known = set(cfg_flat)
    for k in updates:
        if k not in known:
            raise ConfigError(f"unknown configuration key {k!r}")
    merged = dict(cfg_flat)
    merged.update(updates)
    return merged


def parse_lines(text: str, source: str = "<text>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = _parse_value(val)
    return out


def scenario_from_flat(updates: dict, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Apply flat key/value updates on top of ``base`` (defaults if None)."""
    base = base or ScenarioConfig()
    flat = _merge_into(_flatten(base), updates)
    # nested dataclasses are rebuilt field by field from the merged mapping
    hints = typing.get_type_hints(ScenarioConfig)
    kwargs = {}
    for f in dataclasses.fields(ScenarioConfig):
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _rebuild(tp, flat, f.name + ".")
        else:
            kwargs[f.name] = _coerce(flat[f.name], tp, f.name)
    return ScenarioConfig(**kwargs)


def _rebuild(cls, flat, prefix):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _rebuild(tp, flat, key + ".")
        else:
            kwargs[f.name] = _coerce(flat[key], tp, key)
    return cls(**kwargs)


def load_scenario(path: str | Path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    return scenario_from_flat(parse_lines(text, str(path)), base)


def apply_overrides(cfg: ScenarioConfig, overrides: list[str]) -> ScenarioConfig:
    updates = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        updates[k.strip()] = _parse_value(v)
    return scenario_from_flat(updates, cfg) if updates else cfg
