"""Per-patch concept measures from instance-segmented grayscale patches.

Six measures per patch: mean nucleus area, eccentricity, Euler number, and
three co-occurrence texture statistics (angular second moment, contrast,
correlation) computed inside each nucleus and averaged over instances.

Conventions (they change results and are therefore pinned here):
  * Euler number uses 8-connectivity for foreground, 4-connectivity for
    background holes.
  * Texture pairs require BOTH pixels inside the same instance.
  * Gray levels are rescaled linearly to ``levels`` bins over the patch's
    own min..max range before counting.
  * Per-patch values are unweighted means over instances; border-touching
    instances are included unless ``exclude_border`` is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._kernels import glcm_counts

DEFAULT_LEVELS = 8
DEFAULT_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
CONCEPT_NAMES = ("area", "eccentricity", "euler", "asm", "contrast", "correlation")

_STRUCT8 = np.ones((3, 3), dtype=bool)


class EmptyMaskError(ValueError):
    """No foreground pixels where at least one is required."""


class EmptyGlcmError(ValueError):
    """No valid co-occurring pixel pair inside the mask."""


@dataclass
class Glcm:
    levels: int
    offset: tuple[int, int]
    counts: np.ndarray
    probabilities: np.ndarray


@dataclass
class HaralickFeatures:
    asm: float
    contrast: float
    correlation: float | None  # None when the marginal variance vanishes


def region_area(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("empty mask")
    return float(n)


def region_eccentricity(mask) -> float:
    """Eccentricity of the ellipse with the same second moments as the region.

    sqrt(1 - l2/l1) for eigenvalues l1 >= l2 of the coordinate covariance.
    Degenerate cases: a single pixel gives 0, exactly collinear pixels give 1.
    """
    mask = np.asarray(mask, dtype=bool)
    coords = np.argwhere(mask)
    if coords.shape[0] == 0:
        raise EmptyMaskError("empty mask")
    if coords.shape[0] == 1:
        return 0.0
    cov = np.cov(coords.astype(np.float64).T, bias=True)
    l2, l1 = np.sort(np.linalg.eigvalsh(cov))
    if l1 <= 0.0:
        return 0.0
    return float(math.sqrt(max(0.0, 1.0 - max(l2, 0.0) / l1)))


def region_euler(mask) -> int:
    """Connected components minus holes (8-connected fg, 4-connected bg)."""
    mask = np.asarray(mask, dtype=bool)
    _, n_components = ndimage.label(mask, structure=_STRUCT8)
    padded = np.pad(mask, 1, constant_values=False)
    _, n_background = ndimage.label(~padded)  # default structure is 4-connected
    return int(n_components - (n_background - 1))


def quantize_gray(image, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Rescale a grayscale patch linearly to integer levels 0..levels-1."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    if hi == lo:
        return np.zeros(image.shape, dtype=np.int64)
    q = np.floor((image - lo) / (hi - lo) * levels).astype(np.int64)
    return np.minimum(q, levels - 1)


def glcm(image, mask, levels: int = DEFAULT_LEVELS, offset: tuple[int, int] = (0, 1),
         symmetric: bool = True) -> Glcm:
    """Co-occurrence matrix of level pairs at ``offset`` with both pixels masked."""
    image = np.asarray(image, dtype=np.int64)
    if image.min() < 0 or image.max() >= levels:
        raise ValueError(f"image values must lie in [0, {levels})")
    dy, dx = offset
    if dy == 0 and dx == 0:
        raise ValueError("offset must be nonzero")
    counts = glcm_counts(image, np.asarray(mask, dtype=bool), dy, dx, levels)
    if symmetric:
        counts = counts + counts.T
    total = counts.sum()
    if total == 0:
        raise EmptyGlcmError(f"no valid pixel pair inside mask at offset {offset}")
    return Glcm(levels, (dy, dx), counts, counts / total)


def haralick(g: Glcm) -> HaralickFeatures:
    """Angular second moment, contrast, correlation of a normalized GLCM."""
    p = g.probabilities
    idx = np.arange(g.levels, dtype=np.float64)
    asm = float(np.sum(p * p))
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    contrast = float(np.sum((ii - jj) ** 2 * p))
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mx, my = float(px @ idx), float(py @ idx)
    sx = math.sqrt(max(0.0, float(px @ idx**2) - mx * mx))
    sy = math.sqrt(max(0.0, float(py @ idx**2) - my * my))
    if sx * sy == 0.0:
        return HaralickFeatures(asm, contrast, None)
    corr = (float(np.sum(ii * jj * p)) - mx * my) / (sx * sy)
    return HaralickFeatures(asm, contrast, min(1.0, max(-1.0, corr)))


def _instance_features(image_q, inst_mask, levels, offsets):
    """Features of one nucleus; texture entries may be None when undefined."""
    feats = {
        "area": region_area(inst_mask),
        "eccentricity": region_eccentricity(inst_mask),
        "euler": float(region_euler(inst_mask)),
    }
    asms, contrasts, corrs = [], [], []
    for off in offsets:
        try:
            h = haralick(glcm(image_q, inst_mask, levels=levels, offset=off))
        except EmptyGlcmError:
            continue
        asms.append(h.asm)
        contrasts.append(h.contrast)
        if h.correlation is not None:
            corrs.append(h.correlation)
    feats["asm"] = float(np.mean(asms)) if asms else None
    feats["contrast"] = float(np.mean(contrasts)) if contrasts else None
    feats["correlation"] = float(np.mean(corrs)) if corrs else None
    return feats


def patch_concept_measures(image, mask, levels: int = DEFAULT_LEVELS,
                           offsets=DEFAULT_OFFSETS,
                           exclude_border: bool = False) -> dict[str, float]:
    """Mean of per-instance features over all nuclei in the patch.

    Instances whose value is undefined for a concept (single-pixel texture,
    constant-level correlation) are excluded from that concept's mean only.
    """
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=np.int64)
    labels = [int(k) for k in np.unique(mask) if k > 0]
    if exclude_border:
        border = np.zeros(mask.shape, dtype=bool)
        border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
        touching = set(np.unique(mask[border])) - {0}
        labels = [k for k in labels if k not in touching]
    if not labels:
        raise EmptyMaskError("no nucleus instances in mask")
    image_q = quantize_gray(image, levels)
    per_instance = [_instance_features(image_q, mask == k, levels, offsets)
                    for k in labels]
    out = {}
    for name in CONCEPT_NAMES:
        vals = [f[name] for f in per_instance if f[name] is not None]
        if not vals:
            raise ValueError(f"concept {name!r} undefined for every instance")
        out[name] = float(np.mean(vals))
    return out
