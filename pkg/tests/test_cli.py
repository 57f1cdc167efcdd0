import re
import subprocess
import sys

import numpy as np
import pytest

from qtwtt.cli import main
from qtwtt.presets import get_preset
from qtwtt.report import read_offsets
from qtwtt.scenario import scenario_from_flat
from qtwtt.tagio import read_tags_binary
from qtwtt.twoway import block_offsets

TABLES = ("offsets.csv", "tdev.csv", "budget.txt", "summary.csv")


def run_cli(*args):
    return main([str(a) for a in args])


def summary(path):
    out = {}
    for line in (path / "summary.csv").read_text().splitlines():
        if line.startswith("#") or line.startswith("quantity"):
            continue
        q, m, *_ = line.split(",")
        out[q] = float(m)
    return out


def test_no_fiber_block_mode_sd(tmp_path):
    assert run_cli("--scenario", "no_fiber", "--mode", "block", "--blocks", 1000, "--out", tmp_path) == 0
    off = read_offsets(tmp_path / "offsets.csv")
    t0 = off["t0_ps"][off["valid"] == 1]
    assert t0.size == 1000
    assert np.std(t0, ddof=1) == pytest.approx(1.5, rel=0.20)
    for name in TABLES + ("budget.kv", "manifest.txt"):
        assert (tmp_path / name).is_file()


def test_same_seed_gives_identical_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run_cli("--scenario", "urban103", "--blocks", 300, "--seed", 42, "--out", d) == 0
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    c = tmp_path / "c"
    run_cli("--scenario", "urban103", "--blocks", 300, "--seed", 43, "--out", c)
    assert (a / "offsets.csv").read_bytes() != (c / "offsets.csv").read_bytes()


def test_manifest_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("--scenario", "coiled103", "--blocks", 200, "--seed", 7,
                   "--set", "link.pmd_coeff_ps_per_sqrt_km=0.1", "--out", a) == 0
    assert run_cli("--scenario", a / "manifest.txt", "--out", b) == 0
    for f in TABLES + ("budget.kv", "manifest.txt"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_every_table_names_its_units(tmp_path):
    assert run_cli("--scenario", "no_fiber", "--blocks", 64, "--out", tmp_path) == 0
    assert run_cli("--survey", "--scenario", "urban103", "--out", tmp_path) == 0
    units = {"offsets.csv": ("[ps]", "[s]"), "tdev.csv": ("[ps]", "[s]"), "budget.txt": ("[ps]",),
             "summary.csv": ("[ps]", "[s]"), "survey.csv": ("[nm]", "[counts per second]"),
             "budget.kv": ("ps",)}
    for name, needed in units.items():
        head = [ln for ln in (tmp_path / name).read_text().splitlines() if ln.startswith("#")]
        assert any("units" in ln for ln in head), name
        joined = " ".join(head)
        for token in needed:
            assert token in joined, (name, token)
    header = [ln for ln in (tmp_path / "offsets.csv").read_text().splitlines() if not ln.startswith("#")][0]
    assert header == "epoch_s,d13_ps,d24_ps,t0_ps,n13,n24,w13_ps,w24_ps,valid"
    assert [ln for ln in (tmp_path / "tdev.csv").read_text().splitlines()
            if not ln.startswith("#")][0] == "tau_s,tdev_ps,ci68_low_ps,ci68_high_ps,n_samples"


def test_duration_rounds_up_to_whole_blocks(tmp_path):
    assert run_cli("--scenario", "no_fiber", "--duration", 25, "--out", tmp_path) == 0
    assert read_offsets(tmp_path / "offsets.csv")["epoch_s"].tolist() == [0.0, 10.0, 20.0]


@pytest.mark.parametrize("args, code", [
    (("--scenario", "nowhere_such_preset"), 2),
    (("--scenario", "no_fiber", "--set", "link.colour=blue"), 2),
    (("--scenario", "no_fiber", "--set", "link.length_km"), 2),
    (("--scenario", "no_fiber", "--duration", "-4"), 2),
    (("--scenario", "urban103", "--mode", "event", "--blocks", "10", "--max-events", "1000"), 3),
    (("--scenario", "no_fiber", "--blocks", "20", "--set", "source.pair_rate_hz=1"), 4),
])
def test_exit_codes(tmp_path, capsys, args, code):
    assert run_cli(*args, "--out", tmp_path) == code
    assert "qtwtt:" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qtwtt", "--scenario", "no_fiber", "--blocks", "16",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "outputs written" in r.stdout


@pytest.mark.parametrize("preset, floor", [("all_edfa", 800.0), ("edfa_off", 115.0), ("single_edfa", 295.0)])
def test_survey_floors(tmp_path, preset, floor):
    assert run_cli("--survey", "--noise-preset", preset, "--out", tmp_path) == 0
    rows = [ln.split(",") for ln in (tmp_path / "survey.csv").read_text().splitlines()
            if ln and not ln.startswith("#") and not ln.startswith("center")]
    c = np.array([float(r[0]) for r in rows])
    cps = np.array([float(r[1]) for r in rows])
    assert c[0] == 1525.0 and c[-1] == 1600.0 and np.allclose(np.diff(c), 0.5)
    away = (c > 1565) & (c < 1600)
    assert np.median(cps[away]) == pytest.approx(floor, rel=0.10)
    if preset != "edfa_off":
        assert abs(c[np.argmax(cps)] - 1530.0) <= 1.0


def test_tag_dump_round_trip(tmp_path):
    flat = {"block_seconds": 1.0}
    assert run_cli("--scenario", "no_fiber", "--mode", "event", "--blocks", 3, "--dump-tags",
                   *sum((["--set", f"{k}={v}"] for k, v in flat.items()), []), "--out", tmp_path) == 0
    tags = read_tags_binary(tmp_path / "tags.bin")
    hdr = (tmp_path / "tags.bin.hdr").read_text()
    assert re.search(r"records\s*=\s*\d+", hdr)
    for t in tags.values():
        assert t.size and np.all(np.diff(t) >= 0)
    cfg = scenario_from_flat(flat, get_preset("no_fiber").scenario)
    series = block_offsets(tags["D1"], tags["D2"], tags["D3"], tags["D4"], cfg, 3)
    written = read_offsets(tmp_path / "offsets.csv")["t0_ps"]
    assert np.allclose([b.t0_ps for b in series.blocks], written, atol=1e-4)


@pytest.mark.slow
def test_urban_event_mode_counts(tmp_path):
    assert run_cli("--scenario", "urban103", "--mode", "event", "--blocks", 100, "--out", tmp_path) == 0
    off = read_offsets(tmp_path / "offsets.csv")
    n13 = off["n13"][off["valid"] == 1]
    print(f"urban event mode: mean n13 {n13.mean():.1f} over {n13.size} valid blocks")
    assert n13.mean() == pytest.approx(436, rel=0.25)
