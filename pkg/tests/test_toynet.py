"""Reference classifier: exact gradients, training behavior, synthetic data."""

import numpy as np
import pytest

from rcvkit.tensorio import read_manifest, read_tensor
from rcvkit.toynet import (SyntheticSpec, accuracy, concept_value, forward,
                           forward_batch, grad_batch, grad_wrt_layer, init_net,
                           load_net, make_synthetic, save_dumps, save_net,
                           train)


def test_forward_matches_manual_computation():
    net = init_net((3, 2), seed=0)
    x = np.array([0.5, -1.0, 2.0])
    h1 = np.maximum(x @ net.weights[0] + net.biases[0], 0.0)
    z = h1 @ net.weights[1] + net.biases[1]
    want = 1.0 / (1.0 + np.exp(-z[0]))
    f, acts = forward(net, x)
    assert f == pytest.approx(want, abs=1e-12)
    np.testing.assert_allclose(acts["h1"], h1, atol=1e-12)


def test_gradients_match_finite_differences():
    # acceptance criterion: >= 100 random (net, input, layer) triples
    rng = np.random.default_rng(77)
    checked = 0
    eps = 1e-6
    while checked < 120:
        sizes = tuple(int(rng.integers(3, 10)) for _ in range(int(rng.integers(2, 5))))
        net = init_net(sizes, seed=int(rng.integers(1 << 30)))
        x = rng.standard_normal(sizes[0])
        layer = net.layer_ids[int(rng.integers(net.n_hidden))]
        _, acts = forward(net, x)
        h = acts[layer]
        if np.any(np.abs(h) < 10 * eps):  # rectifier kink: gradient undefined
            continue
        g = grad_wrt_layer(net, x, layer)
        li = net.layer_index(layer)

        def f_of_h(hv):
            hh = hv
            for w, b in zip(net.weights[li + 1:-1], net.biases[li + 1:-1]):
                hh = np.maximum(hh @ w + b, 0.0)
            z = hh @ net.weights[-1] + net.biases[-1]
            return 1.0 / (1.0 + np.exp(-z[0]))

        fd = np.empty_like(h)
        for i in range(h.size):
            hp, hm = h.copy(), h.copy()
            hp[i] += eps
            hm[i] -= eps
            fd[i] = (f_of_h(hp) - f_of_h(hm)) / (2 * eps)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(g - fd) / denom <= 1e-5
        checked += 1


def test_grad_batch_consistent_with_single():
    net = init_net((6, 5, 4), seed=3)
    rng = np.random.default_rng(4)
    xs = rng.standard_normal((7, 6))
    batch = grad_batch(net, xs)
    for i in range(7):
        single = grad_batch(net, xs[i])
        for lid in net.layer_ids:
            np.testing.assert_allclose(batch[lid][i], single[lid][0], atol=1e-12)


def test_init_is_deterministic():
    a, b = init_net(seed=5), init_net(seed=5)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    c = init_net(seed=6)
    assert any(not np.array_equal(wa, wc)
               for wa, wc in zip(a.weights, c.weights))


def test_train_zero_lr_is_noop():
    spec = SyntheticSpec()
    data = make_synthetic(spec, 0, 50)
    net = init_net(seed=1)
    before = [w.copy() for w in net.weights]
    train(net, data, epochs=5, lr=0.0, momentum=0.0)
    for w0, w1 in zip(before, net.weights):
        np.testing.assert_array_equal(w0, w1)


def test_train_reduces_loss_and_learns():
    spec = SyntheticSpec()
    data = make_synthetic(spec, 2, 800)
    net = init_net(seed=2)
    losses = train(net, data, epochs=150, lr=0.2)
    assert losses[-1] < losses[0] * 0.7
    assert accuracy(net, data) > 0.8


def test_make_synthetic_properties():
    spec = SyntheticSpec()
    data = make_synthetic(spec, 9, 500)
    assert data.inputs.shape == (500, spec.n_features)
    assert set(data.labels.tolist()) <= {0.0, 1.0}
    assert len(data.sample_ids) == len(set(data.sample_ids)) == 500
    again = make_synthetic(spec, 9, 500)
    np.testing.assert_array_equal(data.inputs, again.inputs)
    np.testing.assert_array_equal(data.labels, again.labels)
    causal = data.concept_values[spec.causal_concept]
    # the causal measure separates the classes; the distractor does not
    gap = causal[data.labels == 1].mean() - causal[data.labels == 0].mean()
    assert gap > 0.05
    other = data.concept_values["distractor_block"]
    split = abs(other[data.labels == 1].mean() - other[data.labels == 0].mean())
    assert split < 0.05


def test_concept_value_kinds():
    spec = SyntheticSpec()
    x = np.arange(64.0)[None, :]
    assert concept_value(spec, "causal_block", x)[0] == pytest.approx(
        abs(x[0, 0:16].mean()))
    block = x[0, 32:48]
    want = (block[::2] * block[1::2]).mean()
    assert concept_value(spec, "distractor_block", x)[0] == pytest.approx(want)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(causal_concept="missing")
    with pytest.raises(ValueError):
        SyntheticSpec(concepts={"a": ("mean", 0, 8), "b": ("mean", 8, 128)})


def test_save_dumps_roundtrip(tmp_path):
    net = init_net((8, 5, 4), seed=0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 8))
    ids = [f"p{i}" for i in range(6)]
    save_dumps(net, x, ids, tmp_path, "dump")
    assert read_manifest(tmp_path / "dump_manifest.txt") == ids
    f, acts = forward_batch(net, x)
    grads = grad_batch(net, x)
    for lid in net.layer_ids:
        np.testing.assert_array_equal(
            read_tensor(tmp_path / f"dump_acts_{lid}.npy"), acts[lid])
        np.testing.assert_array_equal(
            read_tensor(tmp_path / f"dump_grads_{lid}.npy"), grads[lid])
    np.testing.assert_array_equal(
        read_tensor(tmp_path / "dump_predictions.npy"), f)


def test_save_load_net_roundtrip(tmp_path):
    net = init_net((8, 5, 4), seed=12)
    save_net(net, tmp_path / "net")
    out = load_net(tmp_path / "net")
    assert out.layer_ids == net.layer_ids
    x = np.random.default_rng(1).standard_normal((3, 8))
    np.testing.assert_array_equal(forward_batch(out, x)[0],
                                  forward_batch(net, x)[0])
