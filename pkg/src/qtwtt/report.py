"""Plain-text output tables. Every table opens with comment lines naming units."""
from __future__ import annotations

import math
import platform
from pathlib import Path

import numpy as np

from .scenario import dump_scenario


def _f(v, digits=4):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    v = float(v)
    if not math.isfinite(v):
        return "nan"
    return f"{v:.{digits}f}"


def write_offsets(path, series) -> None:
    lines = ["# two-way offsets, one row per block",
             "# units: epoch_s [s]; d13_ps, d24_ps, t0_ps, w13_ps, w24_ps [ps]; n13, n24 [events]; valid [1/0]",
             "epoch_s,d13_ps,d24_ps,t0_ps,n13,n24,w13_ps,w24_ps,valid"]
    for b in series.blocks:
        lines.append(",".join([_f(b.epoch_s, 3), _f(b.d13_ps), _f(b.d24_ps), _f(b.t0_ps), _f(b.n13, 2),
                               _f(b.n24, 2), _f(b.w13_ps, 3), _f(b.w24_ps, 3), _f(b.valid)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_offsets(path):
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    head = rows[0].split(",")
    data = np.array([[float(x) for x in r.split(",")] for r in rows[1:]]).reshape(-1, len(head))
    return {h: data[:, i] for i, h in enumerate(head)}


def write_tdev(path, curve, note: str = "") -> None:
    lines = ["# time deviation of t0",
             "# units: tau_s [s]; tdev_ps, ci68_low_ps, ci68_high_ps [ps]; n_samples [terms]",
             "# ci68: chi-square band with edf = (N - 3m + 1) / m (advisory)"]
    if note:
        lines.append(f"# {note}")
    lines.append("tau_s,tdev_ps,ci68_low_ps,ci68_high_ps,n_samples")
    if curve is not None:
        for p in curve.points:
            lines.append(f"{_f(p.tau_s, 3)},{_f(p.tdev_ps, 6)},{_f(p.ci68_low, 6)},{_f(p.ci68_high, 6)},{p.n_samples}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_budget(txt_path, kv_path, budget, notes=()) -> None:
    lines = ["# standard uncertainty budget of t0 (terms combined in quadrature)",
             "# units: value_ps [ps]",
             "name,value_ps,type,label,formula_note"]
    for t in budget.terms:
        lines.append(f"{t.name},{_f(t.value_ps)},{t.utype},\"{t.label}\",\"{t.formula_note}\"")
    lines.append(f"combined,{_f(budget.combined_ps)},,\"Combined standard uncertainty\",\"sqrt(sum of squares)\"")
    lines += [f"# note: {n}" for n in notes]
    Path(txt_path).write_text("\n".join(lines) + "\n")
    kv = ["# budget key/value mirror; units ps"]
    for t in budget.terms:
        kv.append(f"budget.{t.name}.value_ps = {t.value_ps!r}")
        kv.append(f"budget.{t.name}.type = \"{t.utype}\"")
    kv.append(f"budget.combined_ps = {budget.combined_ps!r}")
    Path(kv_path).write_text("\n".join(kv) + "\n")


def write_survey(path, rows, note: str = "") -> None:
    lines = ["# noise survey: rectangular window scanned across the band",
             "# units: center_nm [nm]; cps [counts per second]"]
    if note:
        lines.append(f"# {note}")
    lines.append("center_nm,cps")
    lines += [f"{c:.3f},{v:.1f}" for c, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"qtwtt": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(path, cfg, extra: dict | None = None) -> None:
    """Loadable scenario file (full config dump) preceded by provenance comments."""
    lines = ["# run manifest: feed back with --scenario <this file> to reproduce the run"]
    lines += [f"# version.{k} = {v}" for k, v in versions().items()]
    for k, v in (extra or {}).items():
        lines.append(f"# run.{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n" + dump_scenario(cfg))


def write_summary(path, rows) -> None:
    """rows: (quantity, measured, expected or None, provenance)."""
    lines = ["# run summary against reference values",
             "# units: *_ps [ps], *_s [s], n* [events per block]; blank expected = no reference",
             "quantity,measured,expected,source"]
    for q, m, e, src in rows:
        lines.append(f"{q},{_f(m)},{_f(e) if e is not None else ''},\"{src}\"")
    Path(path).write_text("\n".join(lines) + "\n")
