"""From-scratch convolutional network: forward, backprop, SGD training.

Tensors are plain float64 numpy arrays, channel-first.  The network is a
stack of valid (unpadded) convolutions with ReLU, a flatten, and a dense
head whose final layer has one unit per class (three).  Gradients are
exact analytic derivatives of the mean cross-entropy, verifiable against
finite differences.  Training is plain stochastic gradient descent with a
seeded shuffle per epoch, single-threaded and fully deterministic.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

N_CLASSES = 3

# (kernel_h, kernel_w, n_filters) per conv layer
DEFAULT_CONV_LAYERS = ((5, 3, 60), (5, 2, 50), (5, 2, 40))
DEFAULT_DENSE_LAYERS = (128, 64, N_CLASSES)
COMPACT_CONV_LAYERS = ((5, 3, 8), (5, 2, 8))
COMPACT_DENSE_LAYERS = (32, 16, N_CLASSES)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    conv_layers: tuple[tuple[int, int, int], ...] = DEFAULT_CONV_LAYERS
    dense_layers: tuple[int, ...] = DEFAULT_DENSE_LAYERS

    def validate(self) -> None:
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ValueError(f"bad input shape {self.input_shape}")
        if not self.dense_layers or self.dense_layers[-1] != N_CLASSES:
            raise ValueError(f"dense head must end in {N_CLASSES} output units")
        self.feature_shapes()  # raises if spatial dims collapse

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """Shape after each conv layer; valid convolution shrinks H and W."""
        c, h, w = self.input_shape
        shapes = []
        for kh, kw, nf in self.conv_layers:
            h, w = h - kh + 1, w - kw + 1
            if h < 1 or w < 1:
                raise ValueError(
                    f"kernel {kh}x{kw} collapses spatial dims to {h}x{w}"
                )
            c = nf
            shapes.append((c, h, w))
        return shapes

    @property
    def flat_features(self) -> int:
        shapes = self.feature_shapes()
        c, h, w = shapes[-1] if shapes else self.input_shape
        return c * h * w


def adapted_spec(
    input_shape: tuple[int, int, int],
    conv_layers: tuple[tuple[int, int, int], ...] = DEFAULT_CONV_LAYERS,
    dense_layers: tuple[int, ...] = DEFAULT_DENSE_LAYERS,
) -> NetworkSpec:
    """Build a spec for ``input_shape``, clamping kernels that would not fit.

    Compact NNMF feature maps (e.g. 8 rows) cannot host three 5-row
    kernels, so each kernel dimension is clamped to the current feature
    size, keeping the layer count and filter counts intact.
    """
    c, h, w = input_shape
    clamped = []
    for kh, kw, nf in conv_layers:
        kh, kw = min(kh, h), min(kw, w)
        clamped.append((kh, kw, nf))
        h, w = h - kh + 1, w - kw + 1
    spec = NetworkSpec(tuple(input_shape), tuple(clamped), tuple(dense_layers))
    spec.validate()
    return spec


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0001
    epochs: int = 150
    batch_size: int = 16
    seed: int = 0
    train_fraction: float = 0.8

    def validate(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class Model:
    spec: NetworkSpec
    conv_params: list[tuple[np.ndarray, np.ndarray]]
    dense_params: list[tuple[np.ndarray, np.ndarray]]
    loss_history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


@dataclass
class Gradients:
    conv: list[tuple[np.ndarray, np.ndarray]]
    dense: list[tuple[np.ndarray, np.ndarray]]


def init_network(spec: NetworkSpec, seed: int = 0) -> Model:
    """He-scaled random initialization, zero biases, deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    conv_params = []
    in_c = spec.input_shape[0]
    for kh, kw, nf in spec.conv_layers:
        fan_in = in_c * kh * kw
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(nf, in_c, kh, kw))
        conv_params.append((W, np.zeros(nf)))
        in_c = nf
    dense_params = []
    fan_in = spec.flat_features
    for width in spec.dense_layers:
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(width, fan_in))
        dense_params.append((W, np.zeros(width)))
        fan_in = width
    return Model(spec=spec, conv_params=conv_params, dense_params=dense_params)


def _conv_forward(x, W, b):
    """Valid convolution via im2col; returns output and the column matrix."""
    n = x.shape[0]
    oc, c, kh, kw = W.shape
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    hp, wp = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * hp * wp, c * kh * kw)
    out = cols @ W.reshape(oc, -1).T + b
    return out.reshape(n, hp, wp, oc).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, W):
    n, oc, hp, wp = dout.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(n * hp * wp, oc)
    dW = (dmat.T @ cols).reshape(W.shape)
    db = dmat.sum(axis=0)
    c, kh, kw = W.shape[1:]
    dcols = (dmat @ W.reshape(oc, -1)).reshape(n, hp, wp, c, kh, kw)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + hp, j : j + wp] += dcols[:, :, :, :, i, j]
    return dx, dW, db


def _forward_batch(model: Model, X: np.ndarray, keep_cache: bool = False):
    if X.shape[1:] != model.spec.input_shape:
        raise ValueError(
            f"input shape {X.shape[1:]} does not match model input {model.spec.input_shape}"
        )
    a = np.asarray(X, dtype=np.float64)
    conv_cache = []
    for W, b in model.conv_params:
        z, cols = _conv_forward(a, W, b)
        if keep_cache:
            conv_cache.append((a.shape, cols, z))
        a = np.maximum(z, 0.0)
    flat_shape = a.shape
    a = a.reshape(a.shape[0], -1)
    dense_cache = []
    last = len(model.dense_params) - 1
    for li, (W, b) in enumerate(model.dense_params):
        z = a @ W.T + b
        if keep_cache:
            dense_cache.append((a, z))
        a = np.maximum(z, 0.0) if li < last else z
    logits = a
    cache = (conv_cache, dense_cache, flat_shape) if keep_cache else None
    return logits, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass for one input; returns (logits, class probabilities)."""
    logits, _ = _forward_batch(model, np.asarray(x, dtype=np.float64)[np.newaxis])
    logits = logits[0]
    return logits, _softmax(logits)


def _as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept either (X, y) arrays or a list of (tensor, label) pairs."""
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        X, y = batch
    else:
        pairs = list(batch)
        if not pairs:
            raise ValueError("batch must be non-empty")
        X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in pairs])
        y = np.array([label for _, label in pairs])
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("batch must be non-empty")
    if not np.all((y >= 1) & (y <= N_CLASSES)):
        raise ValueError("labels must lie in {1, 2, 3}")
    return np.asarray(X, dtype=np.float64), y


def _loss_and_grads(model: Model, X: np.ndarray, y: np.ndarray) -> tuple[float, Gradients]:
    n = len(X)
    logits, cache = _forward_batch(model, X, keep_cache=True)
    conv_cache, dense_cache, flat_shape = cache
    idx = y - 1
    # cross-entropy via logsumexp, stable at saturation
    lse = np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1)) + logits.max(axis=1)
    loss = float(np.mean(lse - logits[np.arange(n), idx]))

    d = _softmax(logits)
    d[np.arange(n), idx] -= 1.0
    d /= n

    dense_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.dense_params)
    for li in reversed(range(len(model.dense_params))):
        W, _ = model.dense_params[li]
        a_in, _ = dense_cache[li]
        dense_grads[li] = (d.T @ a_in, d.sum(axis=0))
        d = d @ W
        if li > 0:
            _, z_prev = dense_cache[li - 1]
            d = d * (z_prev > 0)

    d = d.reshape(flat_shape)
    conv_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.conv_params)
    for ci in reversed(range(len(model.conv_params))):
        W, _ = model.conv_params[ci]
        x_shape, cols, z = conv_cache[ci]
        d = d * (z > 0)
        d, dW, db = _conv_backward(d, cols, x_shape, W)
        conv_grads[ci] = (dW, db)
    return loss, Gradients(conv=conv_grads, dense=dense_grads)


def grad(model: Model, batch) -> Gradients:
    """Exact gradient of the mean cross-entropy over the batch."""
    X, y = _as_arrays(batch)
    _, grads = _loss_and_grads(model, X, y)
    return grads


def train(model: Model, dataset, cfg: TrainConfig) -> Model:
    """Plain SGD with a seeded per-epoch shuffle; returns a trained copy.

    The input model is left untouched.  Raises :class:`NumericError` if the
    loss ever goes non-finite.
    """
    cfg.validate()
    X, y = _as_arrays(dataset)
    present = set(np.unique(y))
    missing = {1, 2, 3} - present
    if missing:
        raise ValueError(f"dataset lacks examples for class(es) {sorted(missing)}")

    out = Model(
        spec=model.spec,
        conv_params=copy.deepcopy(model.conv_params),
        dense_params=copy.deepcopy(model.dense_params),
        loss_history=list(model.loss_history),
        meta=dict(model.meta),
    )
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, grads = _loss_and_grads(out, X[sel], y[sel])
            if not np.isfinite(loss):
                raise NumericError("training loss became non-finite")
            total += loss * len(sel)
            for (W, b), (dW, db) in zip(out.conv_params, grads.conv):
                W -= cfg.learning_rate * dW
                b -= cfg.learning_rate * db
            for (W, b), (dW, db) in zip(out.dense_params, grads.dense):
                W -= cfg.learning_rate * dW
                b -= cfg.learning_rate * db
        out.loss_history.append(total / n)
    return out


def predict(model: Model, x: np.ndarray) -> int:
    """Predicted class in {1, 2, 3}; ties break toward the lower class."""
    _, probs = forward(model, x)
    return int(np.argmax(probs)) + 1


def predict_batch(model: Model, X: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Argmax predictions for many inputs, chunked to bound im2col memory."""
    out = np.empty(len(X), dtype=int)
    for start in range(0, len(X), chunk):
        logits, _ = _forward_batch(model, X[start : start + chunk])
        out[start : start + chunk] = np.argmax(logits, axis=1) + 1
    return out


MAGIC = b"FKM1"


def save_model(model: Model, path) -> None:
    """Versioned flat binary: magic, length-prefixed JSON header, f64 arrays."""
    header = {
        "version": 1,
        "input_shape": list(model.spec.input_shape),
        "conv_layers": [list(layer) for layer in model.spec.conv_layers],
        "dense_layers": list(model.spec.dense_layers),
        "loss_history": model.loss_history,
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for W, b in [*model.conv_params, *model.dense_params]:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not a model file (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"unsupported model version {header.get('version')}")
    spec = NetworkSpec(
        input_shape=tuple(header["input_shape"]),
        conv_layers=tuple(tuple(l) for l in header["conv_layers"]),
        dense_layers=tuple(header["dense_layers"]),
    )
    spec.validate()
    offset = 8 + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    conv_params = []
    in_c = spec.input_shape[0]
    for kh, kw, nf in spec.conv_layers:
        conv_params.append((take((nf, in_c, kh, kw)), take((nf,))))
        in_c = nf
    dense_params = []
    fan_in = spec.flat_features
    for width in spec.dense_layers:
        dense_params.append((take((width, fan_in)), take((width,))))
        fan_in = width
    if offset != len(data):
        raise ValueError("model file length mismatch")
    return Model(
        spec=spec,
        conv_params=conv_params,
        dense_params=dense_params,
        loss_history=list(header.get("loss_history", [])),
        meta=dict(header.get("meta", {})),
    )
