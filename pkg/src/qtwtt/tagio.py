"""Tag-stream dumps: packed binary records with a text sidecar, or plain text."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import CHANNELS, validate_tagstream

RECORD = np.dtype([("channel", "u1"), ("t_ps", "<u8")])  # 9 bytes, no padding


def _merged(streams: dict):
    chans = [c for c in CHANNELS if c in streams]
    t = np.concatenate([np.asarray(streams[c], dtype=np.int64) for c in chans]) if chans else np.zeros(0, np.int64)
    ch = np.concatenate([np.full(len(streams[c]), CHANNELS.index(c) + 1, np.uint8) for c in chans]) if chans else np.zeros(0, np.uint8)
    order = np.lexsort((ch, t))
    return ch[order], t[order]


def write_tags_binary(path, streams: dict) -> None:
    """Write all channels merged in time order; channel byte is 1..4 for D1..D4."""
    for c, s in streams.items():
        validate_tagstream(np.asarray(s), c)
    ch, t = _merged(streams)
    rec = np.empty(t.size, RECORD)
    rec["channel"] = ch
    rec["t_ps"] = t.astype(np.uint64)
    path = Path(path)
    path.write_bytes(rec.tobytes())
    counts = {c: len(streams[c]) for c in CHANNELS if c in streams}
    hdr = ["format = tag records, 9 bytes each: channel (uint8) then time (uint64 little-endian)",
           "time_unit = ps",
           "channels = " + ", ".join(f"{CHANNELS.index(c) + 1}:{c}" for c in counts),
           f"records = {t.size}"]
    hdr += [f"count.{c} = {n}" for c, n in counts.items()]
    Path(str(path) + ".hdr").write_text("\n".join(hdr) + "\n")


def read_tags_binary(path) -> dict:
    rec = np.frombuffer(Path(path).read_bytes(), dtype=RECORD)
    return {c: rec["t_ps"][rec["channel"] == i + 1].astype(np.int64) for i, c in enumerate(CHANNELS)}


def write_tags_text(path, streams: dict) -> None:
    ch, t = _merged(streams)
    with open(path, "w") as fh:
        fh.write("# one tag per line; t_ps in picoseconds\nchannel,t_ps\n")
        for c, v in zip(ch, t):
            fh.write(f"{CHANNELS[c - 1]},{v}\n")


def read_tags_text(path) -> dict:
    out = {c: [] for c in CHANNELS}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("channel"):
            continue
        c, v = line.split(",")
        out[c].append(int(v))
    return {c: np.array(v, dtype=np.int64) for c, v in out.items()}


class TagDumpWriter:
    """Append block after block to one binary dump; call ``close`` to write the sidecar."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.write_bytes(b"")
        self.counts = {c: 0 for c in CHANNELS}

    def __call__(self, block_index: int, streams: dict) -> None:
        ch, t = _merged(streams)
        rec = np.empty(t.size, RECORD)
        rec["channel"] = ch
        rec["t_ps"] = t.astype(np.uint64)
        with open(self.path, "ab") as fh:
            fh.write(rec.tobytes())
        for c in streams:
            self.counts[c] += len(streams[c])

    def close(self) -> None:
        total = sum(self.counts.values())
        hdr = ["format = tag records, 9 bytes each: channel (uint8) then time (uint64 little-endian)",
               "time_unit = ps",
               "channels = " + ", ".join(f"{i + 1}:{c}" for i, c in enumerate(CHANNELS)),
               f"records = {total}"]
        hdr += [f"count.{c} = {n}" for c, n in self.counts.items()]
        Path(str(self.path) + ".hdr").write_text("\n".join(hdr) + "\n")
