"""Sensitivities, positive-fraction and bidirectional relevance scores."""

import numpy as np
import pytest

from rcvkit.rcvfit import ActivationSet, Rcv, fit_rcv
from rcvkit.scoring import (CV_CAP, GradientSet, SensitivitySet, br_score,
                            normalize_br, pearson, sensitivity, tcav_score)
from rcvkit.tensorio import ConceptMeasures


def sens(values):
    values = np.asarray(values, dtype=np.float64)
    ids = [f"s{i}" for i in range(values.size)]
    return SensitivitySet(values, "c", "h1", ids)


def test_br_hand_example():
    # mean 1.5, std (ddof=1) 1.0, times R^2 0.8 gives exactly 1.2
    scores = br_score(sens([1.0, 1.0, 1.0, 3.0]), 0.8)
    # 0.8 * 1.5 rounds up by one ulp in binary float, any operand order
    assert scores.br_raw == pytest.approx(1.2, abs=1e-15)
    assert scores.mean == 1.5
    assert scores.std == 1.0
    assert not scores.degenerate_std


def test_br_symmetric_sensitivities_are_zero():
    for xs in ([1.0, -1.0], [2.0, 0.0, -2.0], [0.5, -0.5, 1.5, -1.5]):
        assert abs(br_score(sens(xs), 0.9).br_raw) < 1e-12


def test_br_zero_spread_capped():
    scores = br_score(sens([2.0, 2.0, 2.0]), 0.5)
    assert scores.degenerate_std
    assert scores.br_raw == 0.5 * CV_CAP
    scores = br_score(sens([-2.0, -2.0]), 0.5)
    assert scores.br_raw == -0.5 * CV_CAP
    assert br_score(sens([0.0, 0.0]), 0.5).br_raw == 0.0


def test_tcav_strict_positive_fraction():
    assert tcav_score(sens([1.0, -1.0, 0.0, 2.0])) == 0.5
    assert tcav_score(sens([0.0, 0.0])) == 0.0
    assert tcav_score(sens([3.0, 1e-9])) == 1.0


def test_normalize_attains_unit_peak():
    out = normalize_br({"a": 0.3, "b": -0.6, "c": 0.15})
    assert out["b"] == -1.0
    assert out["a"] == 0.5
    assert all(-1.0 <= v <= 1.0 for v in out.values())
    assert normalize_br({"solo": -0.2}) == {"solo": -1.0}


def test_normalize_all_zero_unchanged():
    assert normalize_br({"a": 0.0, "b": 0.0}) == {"a": 0.0, "b": 0.0}
    with pytest.raises(ValueError):
        normalize_br({})


def test_sensitivity_is_unit_direction_dot():
    rcv = Rcv(np.array([3.0, 4.0]), 0.0, 1.0, "h1", "c", 5)
    grads = GradientSet(np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 4.0]]),
                        ["a", "b", "c"], "h1")
    s = sensitivity(grads, rcv)
    np.testing.assert_allclose(s.values, [0.6, 0.8, 5.0], atol=1e-12)


def test_sensitivity_layer_mismatch_rejected():
    rcv = Rcv(np.array([1.0, 0.0]), 0.0, 1.0, "h2", "c", 5)
    grads = GradientSet(np.eye(2), ["a", "b"], "h1")
    with pytest.raises(ValueError):
        sensitivity(grads, rcv)


def test_scores_invariant_to_positive_affine_measure_transform():
    rng = np.random.default_rng(9)
    phi = rng.standard_normal((50, 12))
    y = rng.standard_normal(50)
    ids = [f"s{i}" for i in range(50)]
    acts = ActivationSet(phi, ids, "h1")
    grads = GradientSet(rng.standard_normal((30, 12)),
                        [f"t{i}" for i in range(30)], "h1")

    def run(target):
        rcv = fit_rcv(acts, ConceptMeasures("c", ids, target))
        s = sensitivity(grads, rcv)
        return rcv.r_squared, tcav_score(s), br_score(s, rcv.r_squared).br_raw

    r2, tc, br = run(y)
    r2b, tcb, brb = run(3.7 * y + 11.0)
    assert r2b == pytest.approx(r2, abs=1e-10)
    assert tcb == tc
    assert brb == pytest.approx(br, abs=1e-10)
    # negative scaling flips the direction, hence the score's sign
    r2n, tcn, brn = run(-2.0 * y + 1.0)
    assert r2n == pytest.approx(r2, abs=1e-10)
    assert tcn == pytest.approx(1.0 - tc, abs=1e-12)
    assert brn == pytest.approx(-br, abs=1e-10)


def test_sensitivity_continuity_in_gradients():
    rcv = Rcv(np.array([1.0, 2.0, -1.0]), 0.0, 1.0, "h1", "c", 5)
    rng = np.random.default_rng(2)
    g = rng.standard_normal((10, 3))
    eps = 1e-7
    s1 = sensitivity(GradientSet(g, [f"s{i}" for i in range(10)], "h1"), rcv)
    s2 = sensitivity(GradientSet(g + eps, [f"s{i}" for i in range(10)], "h1"), rcv)
    assert np.max(np.abs(s1.values - s2.values)) <= 3 * eps


def test_pearson_hand_example():
    rho, p = pearson(np.array([1.0, 3.0, 2.0, 4.0]),
                     np.array([1.0, 2.0, 3.0, 4.0]))
    assert rho == pytest.approx(0.8, abs=1e-12)
    assert 0.0 < p < 1.0


def test_pearson_perfect_and_constant():
    x = np.array([1.0, 2.0, 3.0])
    rho, p = pearson(x, 2 * x + 1)
    assert rho == 1.0 and p == 0.0
    rho, p = pearson(x, -x)
    assert rho == -1.0 and p == 0.0
    with pytest.raises(ValueError):
        pearson(x, np.ones(3))
