"""Repetition protocol and significance testing of the relevance scores.

Score lists from repeated refits are tested with a two-tailed one-sample
t-test against null means 0.5 (positive-fraction score) and 0 (bidirectional
relevance), with a Bonferroni-corrected threshold alpha/m. The Student-t
tail probability is evaluated through our own regularized incomplete beta
(continued fraction, ~1e-14 relative accuracy) so results do not depend on
an external statistics package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rcvfit import ActivationSet, fit_rcv
from .scoring import GradientSet, br_score, sensitivity, tcav_score
from .tensorio import ConceptMeasures

_MAXITER = 500
_EPS = 1e-15


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's algorithm)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-300:
        d = 1e-300
    d = 1.0 / d
    h = d
    for m in range(1, _MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError("a, b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def one_sample_ttest(xs, null_mean: float) -> tuple[float, float]:
    """Two-tailed one-sample t-test; returns (t statistic, p-value).

    Zero-variance convention: a sample identical to the null mean gives
    (0, 1); a zero-variance sample elsewhere gives (signed inf, 0).
    """
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.size
    if n < 2:
        raise ValueError("need at least 2 observations")
    mean = float(xs.mean())
    std = float(xs.std(ddof=1))
    if std == 0.0:
        if mean == null_mean:
            return 0.0, 1.0
        return math.copysign(math.inf, mean - null_mean), 0.0
    t = (mean - null_mean) / (std / math.sqrt(n))
    return t, student_t_two_sided_p(t, n - 1)


@dataclass
class RepetitionConfig:
    n_repetitions: int = 30
    resample_fraction: float = 0.8
    seed: int = 0
    alpha: float = 0.01
    n_comparisons: int | None = None  # defaults to the number of concepts

    def __post_init__(self):
        if self.n_repetitions < 2:
            raise ValueError("n_repetitions must be >= 2")
        if not (0.0 < self.resample_fraction <= 1.0):
            raise ValueError("resample_fraction must be in (0, 1]")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if self.n_comparisons is not None and self.n_comparisons < 1:
            raise ValueError("n_comparisons must be >= 1")


@dataclass
class SignificanceResult:
    concept_name: str
    score_kind: str  # "tcav" | "br"
    t_statistic: float
    p_value: float
    corrected_threshold: float
    reject_null: bool
    scores: list[float] = field(default_factory=list)


def run_repetitions(acts: ActivationSet, concepts: dict[str, ConceptMeasures],
                    grads: GradientSet, cfg: RepetitionConfig,
                    intercept: bool = True,
                    standardize: bool = False) -> dict[str, list[tuple[float, float]]]:
    """Refit each concept direction on seeded subsamples; rescore a fixed test set.

    Repetition r draws a subset of round(fraction * K) concept samples from
    a child seed of (seed, r), refits the direction, and records the
    positive-fraction and raw bidirectional scores on the unchanged gradient
    set. Deterministic given the config.
    """
    k = acts.phi.shape[0]
    n_sub = int(round(cfg.resample_fraction * k))
    if n_sub < 2:
        raise ValueError(f"subset of {n_sub} samples is too small to fit")
    out: dict[str, list[tuple[float, float]]] = {name: [] for name in concepts}
    for r in range(cfg.n_repetitions):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
        idx = np.sort(rng.choice(k, size=n_sub, replace=False))
        sub_ids = [acts.sample_ids[i] for i in idx]
        sub_acts = ActivationSet(acts.phi[idx], sub_ids, acts.layer_id)
        for name, c in concepts.items():
            sub_c = ConceptMeasures(name, sub_ids, c.values[idx])
            rcv = fit_rcv(sub_acts, sub_c, intercept=intercept,
                          standardize=standardize)
            s = sensitivity(grads, rcv)
            scores = br_score(s, rcv.r_squared)
            out[name].append((tcav_score(s), scores.br_raw))
    return out


def run_rerun_repetitions(provider, cfg: RepetitionConfig,
                          intercept: bool = True,
                          standardize: bool = False) -> dict[str, list[tuple[float, float]]]:
    """Repetitions backed by independent reruns of the upstream pipeline.

    ``provider(rep_index)`` returns a fresh (activations, concept measures,
    gradients) triple for repetition r; typically it retrains the model and
    redraws the concept and test sets from seeds derived off ``cfg.seed``.
    Each rerun's scores are then fully independent, which is what the
    significance test assumes of its sample.
    """
    out: dict[str, list[tuple[float, float]]] = {}
    for r in range(cfg.n_repetitions):
        acts, concepts, grads = provider(r)
        for name, c in concepts.items():
            rcv = fit_rcv(acts, c, intercept=intercept, standardize=standardize)
            s = sensitivity(grads, rcv)
            scores = br_score(s, rcv.r_squared)
            out.setdefault(name, []).append((tcav_score(s), scores.br_raw))
    return out


def evaluate_significance(rep_scores: dict[str, list[tuple[float, float]]],
                          cfg: RepetitionConfig) -> list[SignificanceResult]:
    """Test per-concept score lists: positive-fraction vs 0.5, Br vs 0."""
    m = cfg.n_comparisons if cfg.n_comparisons is not None else len(rep_scores)
    threshold = cfg.alpha / m
    results = []
    for kind, column, null_mean in (("tcav", 0, 0.5), ("br", 1, 0.0)):
        for name, pairs in rep_scores.items():
            if not pairs:
                raise ValueError(f"no repetition scores for concept {name!r}")
            xs = [p[column] for p in pairs]
            t, p = one_sample_ttest(xs, null_mean)
            results.append(SignificanceResult(
                concept_name=name, score_kind=kind, t_statistic=t, p_value=p,
                corrected_threshold=threshold, reject_null=p <= threshold,
                scores=list(xs)))
    return results


def significance_csv(results: list[SignificanceResult], path) -> None:
    """p-value grid: one row per score kind, one column per concept."""
    import csv

    concepts = []
    for r in results:
        if r.concept_name not in concepts:
            concepts.append(r.concept_name)
    by_key = {(r.score_kind, r.concept_name): r for r in results}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score_kind"] + concepts)
        for kind in ("tcav", "br"):
            row = [kind]
            for c in concepts:
                r = by_key.get((kind, c))
                row.append(repr(r.p_value) if r else "")
            writer.writerow(row)
