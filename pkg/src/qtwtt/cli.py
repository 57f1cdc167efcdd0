"""Command line: simulate a scenario, analyse it, and write the output tables.

Exit codes: 0 ok, 2 configuration error, 3 simulation error, 4 analysis error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import budget as budget_mod
from .errors import ConfigError, QtwttError
from .photonics import noise_survey
from .presets import NOISE_PRESETS, get_preset, preset_names
from .report import (write_budget, write_manifest, write_offsets, write_summary, write_survey,
                     write_tdev)
from .scenario import apply_overrides, load_scenario, scenario_from_flat
from .stability import fit_loglog_slope, sample_sd, tdev
from .tagio import TagDumpWriter
from .twoway import OffsetSeries, block_mode_series, expected_t0_ps, run_event_mode, theoretical_sd


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtwtt", description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="urban103",
                   help=f"scenario file or preset ({', '.join(preset_names())})")
    p.add_argument("--mode", choices=("event", "block"))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--blocks", type=int, help="number of blocks")
    g.add_argument("--duration", type=float, help="run length in seconds (rounded up to whole blocks)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", default="qtwtt_out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one scenario key, e.g. link.length_km=50 (repeatable)")
    p.add_argument("--survey", action="store_true", help="run the noise-spectrum survey instead of a time-transfer run")
    p.add_argument("--noise-preset", choices=tuple(NOISE_PRESETS), help="noise spectrum to use for the survey")
    p.add_argument("--max-events", type=float, help="refuse event-mode runs expected to exceed this many tags")
    p.add_argument("--workers", type=int, default=1, help="worker processes for event mode")
    p.add_argument("--budget", help="budget spec file (default: the shipped 103 km budget)")
    p.add_argument("--dump-tags", action="store_true", help="event mode: write tags.bin (+ .hdr sidecar)")
    return p


def resolve_scenario(args):
    expected = {}
    path = Path(args.scenario)
    if path.is_file():
        cfg = load_scenario(path)
        if cfg.name in preset_names():  # e.g. a manifest: keep the preset's reference annotations
            expected = get_preset(cfg.name).expected
    elif args.scenario in preset_names():
        preset = get_preset(args.scenario)
        cfg, expected = preset.scenario, preset.expected
    else:
        raise ConfigError(f"--scenario {args.scenario!r} is neither a file nor a preset")
    cfg = apply_overrides(cfg, args.overrides)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        changes["master_seed"] = args.seed
    if args.blocks is not None:
        changes["blocks"] = args.blocks
    if args.duration is not None:
        if args.duration <= 0:
            raise ConfigError("--duration must be > 0")
        changes["blocks"] = max(1, math.ceil(args.duration / cfg.block_seconds - 1e-9))
    if args.max_events is not None:
        changes["max_events"] = args.max_events
    if changes:
        cfg = scenario_from_flat(changes, cfg)
    return cfg, expected


def run_survey(cfg, args, out: Path) -> int:
    noise = NOISE_PRESETS[args.noise_preset] if args.noise_preset else cfg.noise
    sv = cfg.survey
    centers = np.arange(sv.start_nm, sv.stop_nm + sv.step_nm / 2, sv.step_nm)
    rows = noise_survey(noise, centers, sv.window_fwhm_nm, sv.integration_s, cfg.master_seed)
    write_survey(out / "survey.csv", rows, f"noise spectrum: {args.noise_preset or 'scenario noise settings'}")
    cps = np.array([r[1] for r in rows])
    print(f"survey: {len(rows)} windows, median {np.median(cps):.0f} cps, max {cps.max():.0f} cps "
          f"at {rows[int(np.argmax(cps))][0]:.1f} nm -> {out / 'survey.csv'}")
    return 0


def _longest_valid_run(series):
    ok = series.valid
    best, start, best_span = 0, None, (0, 0)
    for i, v in enumerate(list(ok) + [False]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start > best:
                best, best_span = i - start, (start, i)
            start = None
    return best_span


def summarize(cfg, series, curve, bud, expected):
    w13, w24 = np.nanmean(series.column("w13_ps")), np.nanmean(series.column("w24_ps"))
    n13, n24 = np.mean(series.column("n13")), np.mean(series.column("n24"))
    d13 = series.column("d13_ps")
    measured = {
        "w13_ps": w13, "w24_ps": w24, "n13": n13, "n24": n24,
        "theoretical_sd_ps": theoretical_sd(w13, n13, w24, n24) if min(n13, n24) >= 1 else float("nan"),
        "measured_sd_ps": sample_sd(series),
        "d13_peak_to_peak_ps": float(d13.max() - d13.min()),
        "calibration_sd_ps": bud["calibration"].value_ps if any(t.name == "calibration" for t in bud.terms) else float("nan"),
    }
    if curve is not None:
        measured["tdev_10s_ps"] = curve.at(10.0 if cfg.block_seconds <= 10 else cfg.block_seconds).tdev_ps
        long = [p.tdev_ps for p in curve.points if p.tau_s >= 1e4]
        if long:
            measured["tdev_min_ps"] = min(long)
    rows = []
    for key, val in measured.items():
        e = expected.get(key)
        rows.append((key, val, e.value if e else None, e.source if e else ""))
    rows.append(("mean_t0_ps", float(np.mean(series.t0)), expected_t0_ps(cfg), "model: injected offset + Sagnac bias"))
    rows.append(("valid_blocks", series.n_valid, None, ""))
    rows.append(("invalid_blocks", len(series) - series.n_valid, None, ""))
    ref = "calibration_sd_ps" in expected  # the shipped budget describes the urban link
    rows.append(("combined_uncertainty_ps", bud.combined_ps, 13.9 if ref else None,
                 "Table 2 combined" if ref else ""))
    if curve is not None:
        try:
            rows.append(("tdev_slope_10_400s", fit_loglog_slope(curve, 10.0, 400.0), -0.5, "white phase noise"))
        except QtwttError:
            pass
    return rows


def run(cfg, args, expected, out: Path) -> int:
    if cfg.mode == "block":
        series = block_mode_series(cfg)
    else:
        dump = TagDumpWriter(out / "tags.bin") if args.dump_tags else None
        series = run_event_mode(cfg, workers=args.workers, dump=dump)
        if dump is not None:
            dump.close()
    series.require_valid()
    write_offsets(out / "offsets.csv", series)

    a, b = _longest_valid_run(series)
    curve, note = None, ""
    if b - a >= 4:
        sub = OffsetSeries(series.block_seconds, series.blocks[a:b])
        curve = tdev(sub)
        if (a, b) != (0, len(series)):
            note = f"computed on blocks {a}..{b - 1}, the longest stretch without invalid blocks"
    else:
        note = "too few contiguous valid blocks for TDEV"
    write_tdev(out / "tdev.csv", curve, note)

    bud = budget_mod.load_budget(args.budget, series)
    notes = [budget_mod.thermal_length_note(),
             "wavelength type-B SD derived from thermal sensitivity and controller precision (bound read as 3 sigma)"]
    write_budget(out / "budget.txt", out / "budget.kv", bud, notes)
    write_manifest(out / "manifest.txt", cfg)
    rows = summarize(cfg, series, curve, bud, expected)
    write_summary(out / "summary.csv", rows)
    for q, m, e, _ in rows:
        ref = f"  (reference {e:g})" if e is not None else ""
        print(f"{q:>26s}: {m:.4g}{ref}")
    print(f"outputs written to {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, expected = resolve_scenario(args)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from None
        if args.survey:
            return run_survey(cfg, args, out)
        return run(cfg, args, expected, out)
    except QtwttError as exc:
        print(f"qtwtt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
