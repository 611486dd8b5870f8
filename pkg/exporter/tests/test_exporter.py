"""Exporter dumps against closed-form gradients of a small reference model."""

from collections import OrderedDict

import numpy as np
import pytest
import torch
from torch import nn

from rcv_exporter.cli import main as cli_main
from rcv_exporter.export import (ExportError, ExportSpec, export_dumps,
                                 load_model, resolve_layers)

D, H = 6, 4


def reference_model(seed=0):
    torch.manual_seed(seed)
    return nn.Sequential(OrderedDict([
        ("l1", nn.Linear(D, H)),
        ("t1", nn.Tanh()),
        ("l2", nn.Linear(H, 1)),
        ("out", nn.Sigmoid()),
    ]))


def closed_form(model, x):
    """Float64 reference: activations and gradients of both capture points."""
    w1 = model.l1.weight.detach().numpy().astype(np.float64)
    b1 = model.l1.bias.detach().numpy().astype(np.float64)
    w2 = model.l2.weight.detach().numpy().astype(np.float64)[0]
    b2 = float(model.l2.bias.detach().numpy()[0])
    z1 = x @ w1.T + b1
    a1 = np.tanh(z1)
    f = 1.0 / (1.0 + np.exp(-(a1 @ w2 + b2)))
    dfda1 = (f * (1 - f))[:, None] * w2[None, :]
    dfdz1 = dfda1 * (1.0 - a1 ** 2)
    return {"l1": (z1, dfdz1), "t1": (a1, dfda1)}, f


def export_setup(tmp_path, n=20, seed=0, dtype="f8"):
    model = reference_model(seed)
    torch.save(model, tmp_path / "model.pt")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, D))
    np.save(tmp_path / "inputs.npy", x.astype(np.float32))
    ids = [f"p{i}" for i in range(n)]
    (tmp_path / "manifest.txt").write_text("".join(i + "\n" for i in ids))
    spec = ExportSpec(tmp_path / "model.pt", ["l1", "t1"],
                      tmp_path / "manifest.txt", tmp_path / "inputs.npy",
                      tmp_path / "dumps", dtype=dtype)
    return model, x.astype(np.float32).astype(np.float64), ids, spec


def test_dumps_match_closed_form(tmp_path):
    model, x, ids, spec = export_setup(tmp_path)
    paths = export_dumps(spec)
    want, f = closed_form(model, x)
    for layer in ("l1", "t1"):
        acts = np.load(paths[f"acts:{layer}"])
        grads = np.load(paths[f"grads:{layer}"])
        a_ref, g_ref = want[layer]
        np.testing.assert_allclose(acts, a_ref, atol=1e-5)
        np.testing.assert_allclose(grads, g_ref, atol=1e-5)
    np.testing.assert_allclose(np.load(paths["predictions"]), f, atol=1e-5)


def test_same_input_twice_identical_rows(tmp_path):
    _, _, _, spec = export_setup(tmp_path, n=8)
    a = np.load(export_dumps(spec)["grads:t1"])
    b = np.load(export_dumps(spec)["grads:t1"])
    np.testing.assert_array_equal(a, b)


def test_row_counts_follow_manifest(tmp_path):
    _, _, ids, spec = export_setup(tmp_path, n=5)
    spec.batch_size = 2  # forces multi-batch assembly
    paths = export_dumps(spec)
    assert np.load(paths["acts:l1"]).shape == (5, H)
    assert np.load(paths["grads:t1"]).shape == (5, H)
    assert paths["manifest"].read_text().split() == ids


def test_npy_v1_format_on_disk(tmp_path):
    _, _, _, spec = export_setup(tmp_path, n=4, dtype="f4")
    paths = export_dumps(spec)
    raw = paths["acts:l1"].read_bytes()
    assert raw[:6] == b"\x93NUMPY"
    assert (raw[6], raw[7]) == (1, 0)
    assert b"'<f4'" in raw[:128]


def test_unknown_layer_rejected(tmp_path):
    _, _, _, spec = export_setup(tmp_path, n=4)
    spec.layers = ["l1", "bogus"]
    with pytest.raises(ExportError, match="bogus"):
        export_dumps(spec)


def test_non_scalar_output_rejected(tmp_path):
    torch.manual_seed(0)
    model = nn.Sequential(OrderedDict([("l1", nn.Linear(D, 3))]))
    torch.save(model, tmp_path / "model.pt")
    np.save(tmp_path / "inputs.npy", np.zeros((3, D), dtype=np.float32))
    (tmp_path / "manifest.txt").write_text("a\nb\nc\n")
    spec = ExportSpec(tmp_path / "model.pt", ["l1"],
                      tmp_path / "manifest.txt", tmp_path / "inputs.npy",
                      tmp_path / "dumps")
    with pytest.raises(ExportError, match="scalar"):
        export_dumps(spec)


def test_manifest_input_mismatch_rejected(tmp_path):
    _, _, _, spec = export_setup(tmp_path, n=4)
    (tmp_path / "manifest.txt").write_text("a\nb\n")
    with pytest.raises(ExportError, match="manifest"):
        export_dumps(spec)


def test_torchscript_models_load(tmp_path):
    model = reference_model()
    torch.jit.script(model).save(str(tmp_path / "scripted.pt"))
    loaded = load_model(tmp_path / "scripted.pt")
    assert resolve_layers(loaded, ["l1", "t1"])


def test_cli_end_to_end(tmp_path):
    _, _, _, spec = export_setup(tmp_path, n=6)
    rc = cli_main(["--model", str(spec.model_path),
                   "--layers", "l1", "t1",
                   "--manifest", str(spec.manifest_path),
                   "--inputs", str(spec.inputs_path),
                   "--out", str(tmp_path / "cli_dumps"),
                   "--dtype", "f8"])
    assert rc == 0
    assert (tmp_path / "cli_dumps" / "export_acts_t1.npy").exists()
    rc = cli_main(["--model", str(spec.model_path), "--layers", "nope",
                   "--manifest", str(spec.manifest_path),
                   "--inputs", str(spec.inputs_path),
                   "--out", str(tmp_path / "x")])
    assert rc == 1
