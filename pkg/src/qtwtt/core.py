"""Units, the picosecond time grid, and the seed-derivation contract.

All tag times are int64 picoseconds from a private scenario epoch. Internal
propagation arithmetic runs in float64 picoseconds *relative to a block
epoch*, which keeps sub-femtosecond precision for blocks up to ~1000 s.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import TimeRangeError

PS_PER_S = 10**12
FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # 2.3548...
C_KM_PER_S = 299_792.458

CHANNELS = ("D1", "D2", "D3", "D4")
_MAX_PS = 2**63 - 1


def quantize(t_s: float) -> int:
    """Seconds -> integer picoseconds, rounding half away from zero."""
    if not np.isfinite(t_s) or t_s < 0:
        raise TimeRangeError(f"time {t_s!r} s is outside the tag range")
    ps = (Decimal(repr(float(t_s))) * PS_PER_S).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    if ps > _MAX_PS:
        raise TimeRangeError(f"time {t_s!r} s overflows 64-bit picoseconds")
    return int(ps)


def quantize_ps(t_ps: np.ndarray) -> np.ndarray:
    """Vectorised rounding of float picoseconds onto the integer grid."""
    t_ps = np.asarray(t_ps, dtype=np.float64)
    return (np.sign(t_ps) * np.floor(np.abs(t_ps) + 0.5)).astype(np.int64)


def derive_seed(master: int, label: str, index: int) -> int:
    """Child seed for one random stream.

    blake2b (8-byte digest) over ``"<master>|<label>|<index>"``, read as a
    little-endian unsigned integer. Depends only on its arguments, so any
    block can be simulated in any order on any worker.
    """
    msg = f"{int(master) & 0xFFFFFFFFFFFFFFFF}|{label}|{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def rng_for(master: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, label, index)))


def is_sorted(tags: np.ndarray) -> bool:
    tags = np.asarray(tags)
    return bool(tags.size < 2 or np.all(tags[1:] >= tags[:-1]))


def validate_tagstream(tags: np.ndarray, channel: str | None = None) -> np.ndarray:
    """Assert the TagStream contract: int64, non-negative, non-decreasing."""
    tags = np.asarray(tags)
    where = f" on {channel}" if channel else ""
    if tags.dtype != np.int64:
        raise TypeError(f"tag stream{where} must be int64 ps, got {tags.dtype}")
    if tags.size and tags[0] < 0:
        raise TimeRangeError(f"negative tag time{where}")
    if not is_sorted(tags):
        raise ValueError(f"tag stream{where} is not time-ordered")
    return tags


@dataclass(frozen=True)
class Trace:
    """A slowly varying quantity sampled on a uniform grid (seconds)."""

    t0_s: float
    dt_s: float
    values: np.ndarray

    def __call__(self, t_s):
        return np.interp(t_s, self.t0_s + self.dt_s * np.arange(self.values.size), self.values)

    def cell_values(self, t_start_s: float, duration_s: float) -> tuple[float, np.ndarray]:
        """Values covering [t_start, t_start + duration), one per grid cell."""
        i0 = int(np.floor((t_start_s - self.t0_s) / self.dt_s))
        n = int(np.ceil(duration_s / self.dt_s)) + 1
        idx = np.clip(np.arange(i0, i0 + n), 0, self.values.size - 1)
        return self.t0_s + i0 * self.dt_s, self.values[idx]

    def mean_over(self, t_start_s: float, duration_s: float) -> float:
        tt = np.linspace(t_start_s, t_start_s + duration_s, 64)
        return float(np.mean(self(tt)))

    def block_means(self, block_s: float, n_blocks: int, samples: int = 64) -> np.ndarray:
        """mean_over for consecutive blocks [k*block_s, (k+1)*block_s)."""
        frac = np.linspace(0.0, 1.0, samples)
        tt = (np.arange(n_blocks)[:, None] + frac[None, :]) * block_s
        return self(tt.ravel()).reshape(n_blocks, samples).mean(axis=1)
