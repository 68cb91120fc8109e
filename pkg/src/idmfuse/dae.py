"""Patch handling and a small fully connected denoising autoencoder in numpy.

The network has sigmoid hidden layers and a linear output layer.  Training
minimizes the per-patch half squared error ``0.5 * |f(corrupt(x)) - t|^2``
averaged over each minibatch, with plain SGD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import InvariantError
from .raster import as_raster, grid_offsets

ACTIVATION = "sigmoid-hidden/linear-output"
MODEL_HEADER = "dae.json"
MODEL_PAYLOAD = "dae.f64"


@dataclass
class PatchSet:
    patch_size: int
    stride: int
    width: int
    height: int
    patches: np.ndarray  # (N, patch_size**2), row-major pixels

    @property
    def row_offsets(self) -> list[int]:
        return grid_offsets(self.height, self.patch_size, self.stride)

    @property
    def col_offsets(self) -> list[int]:
        return grid_offsets(self.width, self.patch_size, self.stride)

    def __len__(self):
        return self.patches.shape[0]

    def with_patches(self, patches) -> "PatchSet":
        return PatchSet(self.patch_size, self.stride, self.width, self.height, np.asarray(patches))


def extract_patches(img, patch_size: int, stride: int) -> PatchSet:
    """Overlapping square patches, row-major over their top-left corners."""
    img = as_raster(img)
    h, w = img.shape
    if patch_size < 1 or patch_size > min(h, w):
        raise InvariantError(f"patch size {patch_size} does not fit image {img.shape}")
    rows = grid_offsets(h, patch_size, stride)
    cols = grid_offsets(w, patch_size, stride)
    view = sliding_window_view(img, (patch_size, patch_size))
    patches = view[np.ix_(rows, cols)].reshape(len(rows) * len(cols), patch_size * patch_size)
    return PatchSet(patch_size, stride, w, h, np.ascontiguousarray(patches))


def tile_patches(p: PatchSet) -> np.ndarray:
    """Reassemble an image; every pixel is the mean of the patch values covering it."""
    rows, cols = p.row_offsets, p.col_offsets
    s = p.patch_size
    patches = np.asarray(p.patches, dtype=np.float64)
    if patches.shape != (len(rows) * len(cols), s * s):
        raise InvariantError(
            f"patch matrix {patches.shape} inconsistent with geometry "
            f"({len(rows) * len(cols)}, {s * s})"
        )
    acc = np.zeros((p.height, p.width))
    count = np.zeros((p.height, p.width))
    blocks = patches.reshape(len(rows), len(cols), s, s)
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            acc[r:r + s, c:c + s] += blocks[a, b]
            count[r:r + s, c:c + s] += 1.0
    return acc / count


def corrupt(patch, noise_prob: float, rng) -> np.ndarray:
    """Masking noise: each element is zeroed independently with ``noise_prob``."""
    if not 0.0 <= noise_prob < 1.0:
        raise InvariantError(f"noise_prob must lie in [0, 1), got {noise_prob}")
    x = np.array(patch, dtype=np.float64)
    if noise_prob == 0.0:
        return x
    rng = np.random.default_rng(rng)
    x[rng.random(x.shape) < noise_prob] = 0.0
    return x


@dataclass
class DaeModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (layer_dims[l], layer_dims[l+1])
    biases: list[np.ndarray]
    activation: str = ACTIVATION

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or len(self.weights) != len(self.layer_dims) - 1 \
                or len(self.biases) != len(self.weights):
            raise InvariantError("layer_dims, weights and biases do not chain")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[l], self.layer_dims[l + 1])
            if np.shape(W) != want or np.shape(b) != (want[1],):
                raise InvariantError(f"layer {l}: W {np.shape(W)}, b {np.shape(b)}, expected {want}")

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "DaeModel":
        return DaeModel(list(self.layer_dims), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.activation)


def init_model(layer_dims, rng) -> DaeModel:
    """Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DaeModel(list(layer_dims), weights, biases)


def _activations(m: DaeModel, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(m.weights) - 1
    for l, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = acts[-1] @ W + b
        acts.append(z if l == last else expit(z))
    return acts


def _as_batch(x, dim: int, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise InvariantError(f"{name} has shape {x.shape}, expected (..., {dim})")
    return x2, single


def forward(m: DaeModel, x) -> np.ndarray:
    """Network output for one vector or a ``(N, d_in)`` batch."""
    x2, single = _as_batch(x, m.d_in, "input")
    y = _activations(m, x2)[-1]
    return y[0] if single else y


def half_sq_error(m: DaeModel, x, target) -> float:
    """Mean over patches of ``0.5 * |f(x) - t|^2``."""
    x2, _ = _as_batch(x, m.d_in, "input")
    t2, _ = _as_batch(target, m.d_out, "target")
    r = forward(m, x2) - t2
    return float(0.5 * np.sum(r * r) / x2.shape[0])


def backprop_gradients(m: DaeModel, x, target):
    """Gradients of :func:`half_sq_error` with respect to every weight and bias.

    Returns ``(grad_weights, grad_biases)`` as lists aligned with the model.
    """
    x2, _ = _as_batch(x, m.d_in, "input")
    t2, _ = _as_batch(target, m.d_out, "target")
    if x2.shape[0] != t2.shape[0]:
        raise InvariantError(f"{x2.shape[0]} inputs for {t2.shape[0]} targets")
    acts = _activations(m, x2)
    return _gradients_from(m, acts, (acts[-1] - t2) / x2.shape[0])


@dataclass
class TrainConfig:
    noise_prob: float = 0.0
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_prob < 1.0:
            raise InvariantError(f"noise_prob must lie in [0, 1), got {self.noise_prob}")
        if not self.learning_rate > 0:
            raise InvariantError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvariantError(f"epochs must be an integer >= 1, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvariantError(f"batch_size must be an integer >= 1, got {self.batch_size}")


@dataclass
class TrainResult:
    model: DaeModel
    loss_history: list[float] = field(default_factory=list)


def _patch_matrix(p) -> np.ndarray:
    return np.asarray(p.patches if isinstance(p, PatchSet) else p, dtype=np.float64)


def train(inputs, targets, cfg: TrainConfig, hidden=(32,)) -> TrainResult:
    """Minibatch SGD on (corrupted input, clean target) patch pairs.

    ``inputs`` and ``targets`` are PatchSets or ``(N, d)`` arrays.  The loss
    history holds each epoch's mean training loss.
    """
    X = _patch_matrix(inputs)
    T = _patch_matrix(targets)
    if X.ndim != 2 or X.shape != T.shape:
        raise InvariantError(f"input patches {X.shape} and targets {T.shape} differ")
    n, d = X.shape
    rng = np.random.default_rng(cfg.seed)
    model = init_model([d, *hidden, d], rng)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = corrupt(X[idx], cfg.noise_prob, rng)
            tb = T[idx]
            acts = _activations(model, xb)
            r = acts[-1] - tb
            total += 0.5 * float(np.sum(r * r))
            gW, gb = _gradients_from(model, acts, r / len(idx))
            for l in range(len(model.weights)):
                model.weights[l] -= cfg.learning_rate * gW[l]
                model.biases[l] -= cfg.learning_rate * gb[l]
        history.append(total / n)
    return TrainResult(model, history)


def _gradients_from(m: DaeModel, acts, delta):
    gW = [None] * len(m.weights)
    gb = [None] * len(m.weights)
    for l in range(len(m.weights) - 1, -1, -1):
        gW[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            h = acts[l]
            delta = (delta @ m.weights[l].T) * h * (1.0 - h)
    return gW, gb


def infer_band(m: DaeModel, band_up, patch_size: int, stride: int) -> np.ndarray:
    """Run the network over overlapping patches of ``band_up`` and tile the result."""
    if m.d_in != patch_size * patch_size or m.d_out != m.d_in:
        raise InvariantError(f"model dims {m.layer_dims} do not match patch size {patch_size}")
    ps = extract_patches(band_up, patch_size, stride)
    return tile_patches(ps.with_patches(forward(m, ps.patches)))


def save_model(m: DaeModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"layer_dims": m.layer_dims, "activation": m.activation,
              "payload": MODEL_PAYLOAD, "dtype": "<f8",
              "order": "per layer: weights (fan_in x fan_out, row-major) then biases"}
    with open(directory / MODEL_HEADER, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
    flat = np.concatenate([a.reshape(-1) for W, b in zip(m.weights, m.biases) for a in (W, b)])
    flat.astype("<f8").tofile(directory / MODEL_PAYLOAD)


def load_model(directory) -> DaeModel:
    directory = Path(directory)
    with open(directory / MODEL_HEADER, encoding="utf-8") as fh:
        header = json.load(fh)
    dims = header["layer_dims"]
    flat = np.fromfile(directory / MODEL_PAYLOAD, dtype="<f8").astype(np.float64)
    need = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if flat.size != need:
        raise InvariantError(f"model payload holds {flat.size} values, header implies {need}")
    weights, biases, pos = [], [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b))
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    return DaeModel(dims, weights, biases, header.get("activation", ACTIVATION))
