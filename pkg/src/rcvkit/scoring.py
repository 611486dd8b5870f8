"""Directional sensitivities and their aggregation into relevance scores.

The per-input sensitivity is the directional derivative of the model output
along the unit-normalized concept direction; normalizing makes the score
invariant to the regression's scale. Aggregates: the positive-fraction
("TCAV-style") score, and the bidirectional relevance
``br = R^2 * mean/std`` whose sign encodes the direction of influence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rcvfit import Rcv, unit_direction
from .tensorio import AlignmentError, ConceptMeasures

CV_CAP = 1e6  # stands in for mean/std when the sensitivities have no spread


@dataclass
class GradientSet:
    """N x D matrix of model-output gradients w.r.t. one layer's activations."""

    grads: np.ndarray
    sample_ids: list[str]
    layer_id: str

    def __post_init__(self):
        self.grads = np.atleast_2d(np.asarray(self.grads, dtype=np.float64))
        if self.grads.shape[0] != len(self.sample_ids):
            raise AlignmentError("gradient rows and sample_ids length mismatch")


@dataclass
class SensitivitySet:
    values: np.ndarray
    concept_name: str
    layer_id: str
    sample_ids: list[str]


@dataclass
class ConceptScores:
    tcav: float | None
    br_raw: float
    br_normalized: float | None
    mean: float
    std: float
    r_squared: float
    n: int
    degenerate_std: bool = False


def sensitivity(grads: GradientSet, rcv: Rcv) -> SensitivitySet:
    """Dot product of each gradient row with the unit concept direction."""
    if grads.layer_id != rcv.layer_id:
        raise ValueError(
            f"layer mismatch: gradients are {grads.layer_id!r}, "
            f"concept vector is {rcv.layer_id!r}")
    u = unit_direction(rcv)
    if grads.grads.shape[1] != u.size:
        raise ValueError("gradient dimensionality does not match concept vector")
    return SensitivitySet(grads.grads @ u, rcv.concept_name, rcv.layer_id,
                          list(grads.sample_ids))


def tcav_score(s: SensitivitySet) -> float:
    """Fraction of strictly positive sensitivities (zeros count as non-positive)."""
    n = s.values.size
    if n == 0:
        raise ValueError("empty sensitivity set")
    return float(np.count_nonzero(s.values > 0)) / n


def br_score(s: SensitivitySet, r_squared: float) -> ConceptScores:
    """Bidirectional relevance R^2 * mean/std with the N-1 std denominator.

    Zero spread is capped: br = sign(mean) * R^2 * CV_CAP (0 when the mean
    is also 0), flagged as degenerate.
    """
    n = s.values.size
    if n < 2:
        raise ValueError("need at least 2 sensitivities")
    mean = float(s.values.mean())
    std = float(s.values.std(ddof=1))
    degenerate = std == 0.0
    if degenerate:
        br = math.copysign(r_squared * CV_CAP, mean) if mean != 0.0 else 0.0
    else:
        br = r_squared * mean / std
    return ConceptScores(tcav=None, br_raw=br, br_normalized=None, mean=mean,
                         std=std, r_squared=r_squared, n=n,
                         degenerate_std=degenerate)


def normalize_br(br_raw: dict[str, float]) -> dict[str, float]:
    """Divide by the maximum absolute value over the concept set of one run."""
    if not br_raw:
        raise ValueError("empty concept set")
    peak = max(abs(v) for v in br_raw.values())
    if peak == 0.0:
        return dict(br_raw)
    return {name: v / peak for name, v in br_raw.items()}


def pearson(c: ConceptMeasures | np.ndarray, f) -> tuple[float, float]:
    """Product-moment correlation with a two-sided t-distribution p-value."""
    x = c.values if isinstance(c, ConceptMeasures) else np.asarray(c, dtype=np.float64)
    y = np.asarray(f, dtype=np.float64)
    if x.size != y.size:
        raise AlignmentError("vectors must have equal length")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise ValueError("constant input vector")
    rho = float(xc @ yc) / denom
    rho = min(1.0, max(-1.0, rho))
    from .stats import student_t_two_sided_p

    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, student_t_two_sided_p(t, n - 2)
