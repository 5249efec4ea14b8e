"""Compiled heat-bath sweeps.

Spins live on a padded int8 grid ``(replicas, rows + 2, cols + 2)``; the
padding carries the boundary spin (0 for free boundary).  All replicas are
driven by the same uniforms, which is the monotone (grand) coupling of
heat-bath dynamics.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def heat_bath_sweeps(spins, frozen, ptab, u, record, thin, rec_pts, rec_out, fld_pts, fld_out, r0):
    """Run ``u.shape[0]`` checkerboard sweeps; optionally record every ``thin`` sweeps.

    ``ptab[s + 4]`` is the probability of a plus spin given neighbour sum ``s``.
    ``rec_pts``/``fld_pts`` are ``(P, 2)`` arrays of padded ``(row, col)``
    coordinates whose spins / neighbour sums are written to ``rec_out`` /
    ``fld_out`` with shape ``(replicas, samples, P)`` starting at sample
    ``r0``.  Returns the next free sample index.
    """
    nrep, hp, wp = spins.shape
    r = r0
    for t in range(u.shape[0]):
        for color in range(2):
            for y in range(1, hp - 1):
                start = 1 + ((y + 1 + color) & 1)
                for x in range(start, wp - 1, 2):
                    if frozen[y, x]:
                        continue
                    uu = u[t, y - 1, x - 1]
                    for c in range(nrep):
                        s = spins[c, y - 1, x] + spins[c, y + 1, x] + spins[c, y, x - 1] + spins[c, y, x + 1]
                        spins[c, y, x] = 1 if uu < ptab[s + 4] else -1
        if record and (t + 1) % thin == 0:
            for c in range(nrep):
                for q in range(rec_pts.shape[0]):
                    rec_out[c, r, q] = spins[c, rec_pts[q, 0], rec_pts[q, 1]]
                for q in range(fld_pts.shape[0]):
                    y = fld_pts[q, 0]
                    x = fld_pts[q, 1]
                    fld_out[c, r, q] = spins[c, y - 1, x] + spins[c, y + 1, x] + spins[c, y, x - 1] + spins[c, y, x + 1]
            r += 1
    return r


def plus_probability_table(beta: float, h: float) -> np.ndarray:
    s = np.arange(-4, 5, dtype=float)
    return 1.0 / (1.0 + np.exp(-2.0 * (beta * s + h)))
