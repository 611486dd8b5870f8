"""Capture per-layer activations and output gradients of a trained model.

Forward hooks record the named layers' output tensors during inference;
gradients of the scalar class-probability output with respect to those
captured tensors come from one autograd call per batch. Rows are flattened
in row-major order and written as NPY v1.0 files aligned with the input
manifest, so any consumer of that format can analyze a real network's
activation space without importing this package or torch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch


class ExportError(RuntimeError):
    pass


@dataclass
class ExportSpec:
    model_path: Path
    layers: list[str]
    manifest_path: Path
    inputs_path: Path
    out_dir: Path
    batch_size: int = 64
    dtype: str = "f4"  # on-disk element width for the dump files
    prefix: str = "export"

    def __post_init__(self):
        if not self.layers:
            raise ExportError("need at least one layer name")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if self.dtype not in ("f4", "f8"):
            raise ExportError(f"unsupported on-disk dtype {self.dtype!r}")


def load_model(path) -> torch.nn.Module:
    """TorchScript archive or a pickled ``nn.Module``."""
    path = Path(path)
    try:
        model = torch.jit.load(path, map_location="cpu")
    except Exception:
        try:
            model = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise ExportError(f"{path}: cannot load model") from exc
    if not isinstance(model, torch.nn.Module):
        raise ExportError(f"{path}: loaded object is not a torch module")
    model.eval()
    return model


def resolve_layers(model: torch.nn.Module, names: list[str]) -> dict[str, torch.nn.Module]:
    by_name = dict(model.named_modules())
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ExportError(f"unknown layers {missing}; available: "
                          f"{sorted(n for n in by_name if n)}")
    return {n: by_name[n] for n in names}


def read_manifest(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(set(ids)) != len(ids):
        raise ExportError(f"{path}: duplicate sample ids in manifest")
    if not ids:
        raise ExportError(f"{path}: empty manifest")
    return ids


def write_npy(arr: np.ndarray, path, dtype: str) -> None:
    """NPY v1.0, little-endian, C order."""
    np.save(path, np.ascontiguousarray(arr, dtype=np.dtype("<" + dtype)))


def _batch_capture(model, modules: dict[str, torch.nn.Module],
                   x: torch.Tensor):
    captured: dict[str, torch.Tensor] = {}
    handles = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if not isinstance(output, torch.Tensor):
                raise ExportError(f"layer {name!r} output is not a tensor")
            captured[name] = output
        return hook

    for name, module in modules.items():
        handles.append(module.register_forward_hook(make_hook(name)))
    try:
        out = model(x)
    finally:
        for h in handles:
            h.remove()
    missing = [n for n in modules if n not in captured]
    if missing:
        raise ExportError(f"layers {missing} did not fire during forward")
    f = out.squeeze()
    if f.dim() == 0:
        f = f.reshape(1)
    if f.dim() != 1 or f.shape[0] != x.shape[0]:
        raise ExportError(
            f"model output shape {tuple(out.shape)} is not one scalar per input")
    grads = torch.autograd.grad(f.sum(), list(captured.values()))
    n = x.shape[0]
    acts = {name: t.detach().reshape(n, -1).numpy() for name, t in captured.items()}
    gmap = {name: g.reshape(n, -1).numpy()
            for name, g in zip(captured.keys(), grads)}
    return f.detach().numpy(), acts, gmap


def export_dumps(spec: ExportSpec) -> dict[str, Path]:
    model = load_model(spec.model_path)
    modules = resolve_layers(model, spec.layers)
    ids = read_manifest(spec.manifest_path)
    inputs = np.load(spec.inputs_path)
    if inputs.ndim < 2:
        raise ExportError("inputs must have one row per sample")
    if inputs.shape[0] != len(ids):
        raise ExportError(
            f"inputs have {inputs.shape[0]} rows, manifest lists {len(ids)}")

    preds = []
    acts: dict[str, list[np.ndarray]] = {n: [] for n in spec.layers}
    grads: dict[str, list[np.ndarray]] = {n: [] for n in spec.layers}
    widths: dict[str, int] = {}
    for start in range(0, len(ids), spec.batch_size):
        x = torch.as_tensor(inputs[start:start + spec.batch_size],
                            dtype=torch.float32)
        f, batch_acts, batch_grads = _batch_capture(model, modules, x)
        preds.append(f)
        for name in spec.layers:
            width = batch_acts[name].shape[1]
            if widths.setdefault(name, width) != width:
                raise ExportError(
                    f"layer {name!r} width drifted from {widths[name]} to {width}")
            acts[name].append(batch_acts[name])
            grads[name].append(batch_grads[name])

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for name in spec.layers:
        safe = name.replace(".", "_")
        a_path = out_dir / f"{spec.prefix}_acts_{safe}.npy"
        g_path = out_dir / f"{spec.prefix}_grads_{safe}.npy"
        write_npy(np.concatenate(acts[name]), a_path, spec.dtype)
        write_npy(np.concatenate(grads[name]), g_path, spec.dtype)
        paths[f"acts:{name}"] = a_path
        paths[f"grads:{name}"] = g_path
    p_path = out_dir / f"{spec.prefix}_predictions.npy"
    write_npy(np.concatenate(preds), p_path, spec.dtype)
    paths["predictions"] = p_path
    m_path = out_dir / f"{spec.prefix}_manifest.txt"
    m_path.write_text("".join(sid + "\n" for sid in ids), encoding="utf-8")
    paths["manifest"] = m_path
    return paths
