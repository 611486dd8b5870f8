"""Small differentiable classifier with exact layer gradients, plus a
synthetic data generator with a known causal concept.

The network is a fully connected stack: rectified hidden layers and a
single logistic output. Forward passes capture every hidden layer's
post-nonlinearity activations; gradients of the output probability with
respect to those activations are exact reverse-mode, so the downstream
pipeline can be validated without a deep learning framework. Dumps are
written in the shared tensor formats and are indistinguishable from
real-model exports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import write_manifest, write_tensor

DEFAULT_LAYER_SIZES = (64, 32, 32, 32)


class TrainingDivergedError(RuntimeError):
    pass


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ToyNet:
    weights: list[np.ndarray]  # hidden maps followed by the 1-unit output map
    biases: list[np.ndarray]
    layer_ids: list[str]       # one id per hidden layer
    rng_seed: int

    @property
    def n_hidden(self) -> int:
        return len(self.layer_ids)

    def layer_index(self, layer_id: str) -> int:
        try:
            return self.layer_ids.index(layer_id)
        except ValueError:
            raise KeyError(f"unknown layer {layer_id!r}") from None


def init_net(layer_sizes=DEFAULT_LAYER_SIZES, seed: int = 0) -> ToyNet:
    """He-scaled random init; ``layer_sizes`` lists input then hidden widths."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = list(layer_sizes) + [1]
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                  size=(fan_in, dims[i + 1])))
        biases.append(np.zeros(dims[i + 1]))
    layer_ids = [f"h{i+1}" for i in range(len(layer_sizes) - 1)]
    return ToyNet(weights, biases, layer_ids, seed)


def forward_batch(net: ToyNet, x: np.ndarray):
    """Probabilities and per-layer post-rectifier activations for a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.weights[0].shape[0]:
        raise ValueError(
            f"input dimension {x.shape[1]} != {net.weights[0].shape[0]}")
    h = x
    acts = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    z = h @ net.weights[-1] + net.biases[-1]
    f = _sigmoid(z[:, 0])
    return f, dict(zip(net.layer_ids, acts))


def forward(net: ToyNet, x: np.ndarray):
    f, acts = forward_batch(net, x)
    return float(f[0]), {lid: a[0] for lid, a in acts.items()}


def grad_batch(net: ToyNet, x: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the output probability w.r.t. each hidden layer."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    f, acts = forward_batch(net, x)
    grads: dict[str, np.ndarray] = {}
    # d f / d h_last, then walk back through W^T with the rectifier mask.
    g = (f * (1.0 - f))[:, None] * net.weights[-1][:, 0][None, :]
    grads[net.layer_ids[-1]] = g
    for i in range(net.n_hidden - 1, 0, -1):
        mask = acts[net.layer_ids[i]] > 0.0
        g = (g * mask) @ net.weights[i].T
        grads[net.layer_ids[i - 1]] = g
    return grads


def grad_wrt_layer(net: ToyNet, x: np.ndarray, layer_id: str) -> np.ndarray:
    net.layer_index(layer_id)
    g = grad_batch(net, x)[layer_id]
    return g[0] if np.asarray(x).ndim == 1 else g


@dataclass
class SyntheticSpec:
    """Concepts are deterministic functions of input blocks; exactly one is
    causal and drives the label through a logistic link."""

    n_features: int = 64
    concepts: dict[str, tuple[str, int, int]] = field(default_factory=lambda: {
        "causal_block": ("abs_mean", 0, 16),
        "distractor_block": ("product_mean", 32, 48),
    })
    causal_concept: str = "causal_block"
    causal_slope: float = 30.0
    causal_intercept: float = -6.0

    def __post_init__(self):
        if len(self.concepts) < 2:
            raise ValueError("need at least 2 concepts")
        if self.causal_concept not in self.concepts:
            raise ValueError(f"causal concept {self.causal_concept!r} undefined")
        for name, (kind, lo, hi) in self.concepts.items():
            if kind not in ("mean", "abs_mean", "product_mean"):
                raise ValueError(f"unknown concept kind {kind!r} for {name!r}")
            if not (0 <= lo < hi <= self.n_features):
                raise ValueError(f"bad block [{lo},{hi}) for {name!r}")


@dataclass
class SyntheticDataset:
    inputs: np.ndarray
    labels: np.ndarray
    concept_values: dict[str, np.ndarray]
    causal_spec: SyntheticSpec
    sample_ids: list[str]


def concept_value(spec: SyntheticSpec, name: str, x: np.ndarray) -> np.ndarray:
    kind, lo, hi = spec.concepts[name]
    block = np.atleast_2d(x)[:, lo:hi]
    if kind == "mean":
        return block.mean(axis=1)
    if kind == "abs_mean":
        # nonlinear in the input, so linear decodability must be learned
        return np.abs(block.mean(axis=1))
    # product of adjacent pairs: a function of the input that no linear
    # readout of the features can track, mimicking an unstable concept
    return (block[:, ::2] * block[:, 1::2]).mean(axis=1)


def make_synthetic(spec: SyntheticSpec, seed: int, n_samples: int,
                   id_prefix: str = "s") -> SyntheticDataset:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    x = rng.standard_normal((n_samples, spec.n_features))
    values = {name: concept_value(spec, name, x) for name in spec.concepts}
    logits = spec.causal_slope * values[spec.causal_concept] + spec.causal_intercept
    labels = (rng.random(n_samples) < _sigmoid(logits)).astype(np.float64)
    ids = [f"{id_prefix}{i:05d}" for i in range(n_samples)]
    return SyntheticDataset(x, labels, values, spec, ids)


def train(net: ToyNet, data: SyntheticDataset, epochs: int = 300,
          lr: float = 0.05, momentum: float = 0.9,
          nesterov: bool = True, weight_decay: float = 0.0) -> list[float]:
    """Full-batch gradient descent with Nesterov momentum on cross-entropy.

    Updates ``net`` in place and returns the per-epoch loss history.
    """
    x, y = data.inputs, data.labels
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty dataset")
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    losses = []
    for epoch in range(epochs):
        if nesterov and momentum > 0.0:
            look_w = [w + momentum * v for w, v in zip(net.weights, vel_w)]
            look_b = [b + momentum * v for b, v in zip(net.biases, vel_b)]
        else:
            look_w, look_b = net.weights, net.biases
        # forward at the lookahead point, keeping pre-rectifier masks
        h = x
        hiddens = [x]
        for w, b in zip(look_w[:-1], look_b[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            hiddens.append(h)
        z = (h @ look_w[-1] + look_b[-1])[:, 0]
        f = _sigmoid(z)
        eps = 1e-12
        loss = float(-np.mean(y * np.log(f + eps) + (1 - y) * np.log(1 - f + eps)))
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss diverged at epoch {epoch}")
        losses.append(loss)
        delta = ((f - y) / m)[:, None]
        grads_w = [None] * len(net.weights)
        grads_b = [None] * len(net.biases)
        g = delta
        for i in range(len(net.weights) - 1, -1, -1):
            grads_w[i] = hiddens[i].T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ look_w[i].T) * (hiddens[i] > 0.0)
        for i in range(len(net.weights)):
            if weight_decay:
                grads_w[i] = grads_w[i] + weight_decay * look_w[i]
            vel_w[i] = momentum * vel_w[i] - lr * grads_w[i]
            vel_b[i] = momentum * vel_b[i] - lr * grads_b[i]
            net.weights[i] += vel_w[i]
            net.biases[i] += vel_b[i]
    return losses


def accuracy(net: ToyNet, data: SyntheticDataset) -> float:
    f, _ = forward_batch(net, data.inputs)
    return float(np.mean((f > 0.5) == (data.labels > 0.5)))


def save_dumps(net: ToyNet, x: np.ndarray, sample_ids: list[str],
               out_dir, prefix: str) -> dict[str, dict[str, Path]]:
    """Write per-layer activation and gradient tensors plus the manifest.

    Files: ``<prefix>_acts_<layer>.npy``, ``<prefix>_grads_<layer>.npy``,
    ``<prefix>_manifest.txt``, ``<prefix>_predictions.npy``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    f, acts = forward_batch(net, x)
    grads = grad_batch(net, x)
    paths: dict[str, dict[str, Path]] = {}
    for lid in net.layer_ids:
        a_path = out_dir / f"{prefix}_acts_{lid}.npy"
        g_path = out_dir / f"{prefix}_grads_{lid}.npy"
        write_tensor(acts[lid], a_path)
        write_tensor(grads[lid], g_path)
        paths[lid] = {"acts": a_path, "grads": g_path}
    write_tensor(f, out_dir / f"{prefix}_predictions.npy")
    write_manifest(sample_ids, out_dir / f"{prefix}_manifest.txt")
    return paths


def save_net(net: ToyNet, stem) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        write_tensor(w, f"{stem}_w{i}.npy")
        write_tensor(b, f"{stem}_b{i}.npy")
    meta = {"n_maps": len(net.weights), "layer_ids": net.layer_ids,
            "rng_seed": net.rng_seed}
    Path(f"{stem}.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_net(stem) -> ToyNet:
    from .tensorio import read_tensor

    meta = json.loads(Path(f"{stem}.json").read_text())
    weights, biases = [], []
    for i in range(meta["n_maps"]):
        weights.append(read_tensor(f"{stem}_w{i}.npy"))
        biases.append(read_tensor(f"{stem}_b{i}.npy"))
    return ToyNet(weights, biases, meta["layer_ids"], meta["rng_seed"])
