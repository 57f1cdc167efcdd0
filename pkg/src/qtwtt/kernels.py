"""Compiled inner loops (numba). Everything here works on plain arrays."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def diff_histogram(sig, idl, lo, bw, nbins):
    """Count sig[i] - idl[j] into bins [lo + k*bw, lo + (k+1)*bw).

    Merge-walk over two sorted int64 streams: a trailing pointer into ``idl``
    only ever moves forward, so cost is O(len(sig) + len(idl) + matches).
    """
    counts = np.zeros(nbins, np.int64)
    hi = lo + nbins * bw
    j0 = 0
    nidl = idl.shape[0]
    for i in range(sig.shape[0]):
        s = sig[i]
        # need s - idl[j] < hi  <=>  idl[j] > s - hi
        while j0 < nidl and idl[j0] <= s - hi:
            j0 += 1
        j = j0
        while j < nidl:
            d = s - idl[j]
            if d < lo:
                break
            counts[(d - lo) // bw] += 1
            j += 1
    return counts


@njit(cache=True)
def _round_half_away(x):
    if x >= 0.0:
        return np.int64(np.floor(x + 0.5))
    return -np.int64(np.floor(-x + 0.5))


@njit(cache=True)
def merge_dead_time(photons, background, dead):
    """Merge two sorted float-ps streams onto the 1 ps grid with dead time.

    Non-paralyzable: an arrival less than ``dead`` ps after the last recorded
    tag is lost. Photons win ties against background arrivals.
    Returns (tags int64, source): source is the photon index or -1.
    """
    nph = photons.shape[0]
    nbg = background.shape[0]
    out = np.empty(nph + nbg, np.int64)
    src = np.empty(nph + nbg, np.int64)
    n = 0
    ip = 0
    ib = 0
    have_last = False
    last = np.int64(0)
    while ip < nph or ib < nbg:
        if ib >= nbg or (ip < nph and photons[ip] <= background[ib]):
            t = photons[ip]
            who = ip
            ip += 1
        else:
            t = background[ib]
            who = -1
            ib += 1
        r = _round_half_away(t)
        if have_last and r - last < dead:
            continue
        out[n] = r
        src[n] = who
        n += 1
        last = r
        have_last = True
    return out[:n], src[:n]


@njit(cache=True)
def bounded_walk(x0, mean, lo, hi, a, kick, noise):
    """Mean-reverting walk reflected into [lo, hi]; one step per noise sample."""
    n = noise.shape[0]
    out = np.empty(n)
    x = x0
    for i in range(n):
        if i > 0:
            x = x + a * (mean - x) + kick * noise[i]
            for _ in range(8):
                if x > hi:
                    x = 2.0 * hi - x
                elif x < lo:
                    x = 2.0 * lo - x
                else:
                    break
            x = min(max(x, lo), hi)
        out[i] = x
    return out
