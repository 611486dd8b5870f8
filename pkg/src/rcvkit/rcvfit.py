"""Least-squares concept directions in activation space.

The fit lives in the K << D regime (hundreds of samples, thousands of
activation dimensions): the minimal-norm solution is obtained from a thin
SVD of the centered K x D matrix (via ``lstsq``); the D x D normal matrix is
never formed. Singular values below ``rcond`` times the largest are treated
as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import AlignmentError, ConceptMeasures, read_tensor, write_tensor

RCOND = 1e-10


class DegenerateRcvError(ValueError):
    """Zero-direction concept vector where a direction is required."""


@dataclass
class ActivationSet:
    """K x D matrix of flattened layer activations, row order = sample_ids."""

    phi: np.ndarray
    sample_ids: list[str]
    layer_id: str

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=np.float64))
        if self.phi.shape[0] != len(self.sample_ids):
            raise AlignmentError("activation rows and sample_ids length mismatch")


@dataclass
class Rcv:
    """Fitted concept direction with intercept and in-sample fit quality."""

    v: np.ndarray
    intercept: float
    r_squared: float
    layer_id: str
    concept_name: str
    k_samples: int
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)

    def predict(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi, dtype=np.float64) @ self.v + self.intercept


def _check_alignment(acts: ActivationSet, c: ConceptMeasures) -> None:
    if list(acts.sample_ids) != list(c.sample_ids):
        raise AlignmentError(
            f"activation samples do not match measure samples for "
            f"concept {c.concept_name!r}"
        )


def fit_rcv(acts: ActivationSet, c: ConceptMeasures, intercept: bool = True,
            standardize: bool = False, rcond: float = RCOND) -> Rcv:
    """Minimal-norm least-squares fit of concept values on activations.

    Columns (and the target) are centered when ``intercept`` is on; the
    intercept is recovered from the means. ``standardize`` additionally
    scales columns to unit variance before the fit and folds the scaling
    back into the returned direction, so prediction is always
    ``v . phi + b`` in raw activation space. A constant target yields a
    degenerate zero-direction fit with R^2 defined as 0.
    """
    _check_alignment(acts, c)
    phi = acts.phi
    y = c.values
    k, d = phi.shape
    if k < 2:
        raise ValueError(f"need at least 2 samples to fit, got {k}")

    y_mean = float(y.mean())
    if np.ptp(y) == 0.0:
        return Rcv(np.zeros(d), y_mean if intercept else 0.0, 0.0,
                   acts.layer_id, c.concept_name, k, degenerate=True,
                   diagnostics={"reason": "constant target"})

    col_mean = phi.mean(axis=0) if intercept else np.zeros(d)
    x = phi - col_mean
    scale = np.ones(d)
    if standardize:
        std = x.std(axis=0, ddof=0)
        scale = np.where(std > 0, std, 1.0)
        x = x / scale
    yc = y - y_mean if intercept else y

    v_scaled, _, rank, sv = np.linalg.lstsq(x, yc, rcond=rcond)
    v = v_scaled / scale
    b = y_mean - float(col_mean @ v) if intercept else 0.0

    resid = y - (phi @ v + b)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y_mean) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot
    return Rcv(v, b, r2, acts.layer_id, c.concept_name, k,
               diagnostics={"rank": int(rank),
                            "max_singular_value": float(sv[0]) if len(sv) else 0.0})


def r_squared_on(rcv: Rcv, acts: ActivationSet, c: ConceptMeasures) -> float:
    """1 - SS_res/SS_tot of the fit's predictions; negative on bad held-out fits."""
    _check_alignment(acts, c)
    y = c.values
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("constant target: R^2 undefined")
    resid = y - rcv.predict(acts.phi)
    return 1.0 - float(resid @ resid) / ss_tot


def unit_direction(rcv: Rcv) -> np.ndarray:
    norm = float(np.linalg.norm(rcv.v))
    if norm == 0.0:
        raise DegenerateRcvError(
            f"zero concept vector for {rcv.concept_name!r} at {rcv.layer_id!r}")
    return rcv.v / norm


def save_rcv(rcv: Rcv, stem) -> None:
    """Persist as ``<stem>.npy`` (direction) plus ``<stem>.json`` sidecar."""
    stem = Path(stem)
    write_tensor(rcv.v, stem.with_suffix(".npy"))
    meta = {
        "intercept": rcv.intercept,
        "r_squared": rcv.r_squared,
        "layer_id": rcv.layer_id,
        "concept_name": rcv.concept_name,
        "k_samples": rcv.k_samples,
        "degenerate": rcv.degenerate,
        "diagnostics": rcv.diagnostics,
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_rcv(stem) -> Rcv:
    stem = Path(stem)
    v = read_tensor(stem.with_suffix(".npy"))
    meta = json.loads(stem.with_suffix(".json").read_text())
    return Rcv(v, meta["intercept"], meta["r_squared"], meta["layer_id"],
               meta["concept_name"], meta["k_samples"],
               degenerate=meta.get("degenerate", False),
               diagnostics=meta.get("diagnostics", {}))
