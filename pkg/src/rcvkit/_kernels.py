"""Hot inner loops: co-occurrence counting over masked patches.

Each kernel has a numba ``@njit`` build and a pure-numpy build. The numpy
path is selected when the environment variable ``RCVKIT_NO_NUMBA`` is set
(any non-empty value) or when numba is unavailable. Both paths return
bit-identical integer count matrices; ``benchmarks/bench_kernels.py``
compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = not os.environ.get("RCVKIT_NO_NUMBA")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _glcm_counts_numpy(image, mask, dy, dx, levels):
    h, w = image.shape
    counts = np.zeros((levels, levels), dtype=np.int64)
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    if y0 >= y1 or x0 >= x1:
        return counts
    a = image[y0:y1, x0:x1]
    b = image[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    valid = mask[y0:y1, x0:x1] & mask[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
    np.add.at(counts, (a[valid], b[valid]), 1)
    return counts


if USE_NUMBA:

    @njit(cache=True)
    def _glcm_counts_numba(image, mask, dy, dx, levels):
        h, w = image.shape
        counts = np.zeros((levels, levels), dtype=np.int64)
        for y in range(h):
            y2 = y + dy
            if y2 < 0 or y2 >= h:
                continue
            for x in range(w):
                x2 = x + dx
                if x2 < 0 or x2 >= w:
                    continue
                if mask[y, x] and mask[y2, x2]:
                    counts[image[y, x], image[y2, x2]] += 1
        return counts


def glcm_counts(image, mask, dy, dx, levels):
    """Count co-occurring level pairs (p, p+offset) with both pixels masked."""
    image = np.ascontiguousarray(image, dtype=np.int64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if USE_NUMBA:
        return _glcm_counts_numba(image, mask, dy, dx, levels)
    return _glcm_counts_numpy(image, mask, dy, dx, levels)
