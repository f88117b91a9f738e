"""Small fully connected rate regressor, trained with hand-written backprop.

Architecture: 12 -> 32 -> 32 -> 16 -> 8 -> 1; ReLU on the four hidden layers,
affine output. Features are standardised with constants stored in the model;
the target is standardised during training and mapped back on output.

Model files ("RRNN", little-endian)::

    magic b"RRNN" | version u16 | reserved u16 | n_dims u32 | dims u32[n_dims]
    per layer l: W_l f64[dims[l+1] * dims[l]] (row-major, out x in),
                 b_l f64[dims[l+1]]
    feature_mean f64[dims[0]] | feature_scale f64[dims[0]]
    target_mean f64 | target_scale f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidModelError, TrainingError
from .spectral import BAND_BPM, N_FEATURES

LAYER_DIMS = (N_FEATURES, 32, 32, 16, 8, 1)
MAGIC = b"RRNN"
VERSION = 1


@dataclass
class RegressorModel:
    layer_dims: tuple
    weights: list
    biases: list
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        dims = self.layer_dims
        if len(dims) < 2 or dims[-1] != 1:
            raise InvalidModelError(f"bad layer dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidModelError("one weight matrix and bias vector per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if np.shape(w) != (dims[i + 1], dims[i]) or np.shape(b) != (dims[i + 1],):
                raise InvalidModelError(
                    f"layer {i}: weight {np.shape(w)} / bias {np.shape(b)} do not chain {dims}"
                )
        self.feature_mean = np.asarray(self.feature_mean, dtype=float)
        self.feature_scale = np.asarray(self.feature_scale, dtype=float)
        if self.feature_mean.shape != (dims[0],) or self.feature_scale.shape != (dims[0],):
            raise InvalidModelError("normalisation constants do not match input width")
        if np.any(self.feature_scale == 0) or self.target_scale == 0:
            raise InvalidModelError("normalisation scale must be nonzero")

    @classmethod
    def initialise(cls, rng, layer_dims=LAYER_DIMS, feature_mean=None, feature_scale=None,
                   target_mean=0.0, target_scale=1.0):
        """He-initialised weights, zero biases."""
        weights, biases = [], []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            weights.append(rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in))
            biases.append(np.zeros(n_out))
        d0 = layer_dims[0]
        return cls(
            tuple(layer_dims),
            weights,
            biases,
            np.zeros(d0) if feature_mean is None else feature_mean,
            np.ones(d0) if feature_scale is None else feature_scale,
            target_mean,
            target_scale,
        )


def _forward(weights, biases, x):
    """Batch forward pass on normalised inputs; returns output and cache."""
    acts = [x]
    pre = []
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return a[:, 0], (acts, pre)


def loss_and_grad(weights, biases, x, y):
    """Mean squared error and its gradients w.r.t. every weight and bias."""
    out, (acts, pre) = _forward(weights, biases, x)
    n = x.shape[0]
    err = out - y
    loss = float(np.mean(err**2))
    delta = (2.0 / n) * err[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * (pre[i - 1] > 0)
    return loss, gw, gb


def _normalise(model, features):
    return (np.asarray(features, dtype=float) - model.feature_mean) / model.feature_scale


def regressor_forward(model: RegressorModel, features) -> float:
    """Predicted rate in bpm, clamped to the detection band."""
    f = np.asarray(features, dtype=float)
    if f.shape != (model.layer_dims[0],):
        raise InvalidModelError(
            f"feature vector of shape {f.shape} does not match input width {model.layer_dims[0]}"
        )
    out, _ = _forward(model.weights, model.biases, _normalise(model, f)[None, :])
    rate = model.target_mean + model.target_scale * float(out[0])
    return float(np.clip(rate, *BAND_BPM))


def regressor_predict(model: RegressorModel, features) -> np.ndarray:
    f = np.atleast_2d(np.asarray(features, dtype=float))
    out, _ = _forward(model.weights, model.biases, _normalise(model, f))
    return np.clip(model.target_mean + model.target_scale * out, *BAND_BPM)


@dataclass
class TrainingResult:
    model: RegressorModel
    losses: list


def regressor_train(dataset, lr=1e-3, epochs=300, seed=0, batch_size=32,
                    layer_dims=LAYER_DIMS) -> TrainingResult:
    """Fit by minibatch gradient descent with Adam moments.

    ``dataset`` is a sequence of ``(features, true_rate)`` pairs. Minibatch
    order comes from ``seed``, so training is deterministic. ``losses`` holds
    the full-dataset MSE (in standardised target units) after every epoch.
    """
    if len(dataset) < 1:
        raise TrainingError("empty dataset")
    if not (np.isfinite(lr) and lr > 0 and epochs >= 0 and batch_size >= 1):
        raise TrainingError("hyperparameters must be finite and positive")
    x = np.array([np.asarray(f, dtype=float) for f, _ in dataset])
    y = np.array([float(t) for _, t in dataset])
    if x.shape[1] != layer_dims[0]:
        raise InvalidModelError(f"features have width {x.shape[1]}, expected {layer_dims[0]}")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    t_mean = float(y.mean())
    t_scale = float(y.std()) or 1.0

    rng = np.random.default_rng(seed)
    model = RegressorModel.initialise(rng, layer_dims, mean, scale, t_mean, t_scale)
    xn = (x - mean) / scale
    yn = (y - t_mean) / t_scale

    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    n_layers = len(model.weights)
    for _ in range(epochs):
        order = rng.permutation(len(yn))
        for start in range(0, len(yn), batch_size):
            batch = order[start:start + batch_size]
            _, gw, gb = loss_and_grad(model.weights, model.biases, xn[batch], yn[batch])
            step += 1
            for j, g in enumerate(gw + gb):
                m[j] = beta1 * m[j] + (1 - beta1) * g
                v[j] = beta2 * v[j] + (1 - beta2) * g * g
                mhat = m[j] / (1 - beta1**step)
                vhat = v[j] / (1 - beta2**step)
                params[j] -= lr * mhat / (np.sqrt(vhat) + eps)
        loss, _, _ = loss_and_grad(model.weights, model.biases, xn, yn)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged after {len(losses)} epochs")
        losses.append(loss)
    model.weights = params[:n_layers]
    model.biases = params[n_layers:]
    return TrainingResult(model, losses)


_HEAD = struct.Struct("<4sHHI")


def encode_model(model: RegressorModel) -> bytes:
    dims = model.layer_dims
    parts = [_HEAD.pack(MAGIC, VERSION, 0, len(dims)), struct.pack(f"<{len(dims)}I", *dims)]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.feature_mean, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(model.feature_scale, dtype="<f8").tobytes())
    parts.append(struct.pack("<2d", model.target_mean, model.target_scale))
    return b"".join(parts)


def decode_model(data: bytes) -> RegressorModel:
    if len(data) < _HEAD.size:
        raise FormatError("truncated model header", offset=len(data))
    magic, version, _, n_dims = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    off = _HEAD.size
    if len(data) < off + 4 * n_dims:
        raise FormatError("truncated layer dims", offset=len(data))
    dims = struct.unpack_from(f"<{n_dims}I", data, off)
    off += 4 * n_dims

    def take(count):
        nonlocal off
        end = off + 8 * count
        if len(data) < end:
            raise FormatError("truncated model body", offset=len(data))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
        off = end
        return arr

    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        weights.append(take(n_out * n_in).reshape(n_out, n_in))
        biases.append(take(n_out))
    mean = take(dims[0])
    scale = take(dims[0])
    t_mean, t_scale = take(2)
    if off != len(data):
        raise FormatError("trailing bytes after model", offset=off)
    return RegressorModel(dims, weights, biases, mean, scale, float(t_mean), float(t_scale))


def save_model(model: RegressorModel, path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path) -> RegressorModel:
    return decode_model(Path(path).read_bytes())
