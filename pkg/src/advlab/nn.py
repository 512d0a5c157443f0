"""
Minimal neural-network engine.

Dense and 1-D convolutional layers with hand-written backpropagation. Every
model exposes gradients with respect to its parameters *and* its input, which
is what the attacks need. Inputs are always 2-D ``(batch, features)``; a model
whose first layer is a convolution treats each row as a one-channel signal.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError, StateError, TrainingDivergedError

LAYER_KINDS = ("conv1d", "relu", "maxpool1d", "flatten", "dense", "softmax")
PROB_FLOOR = 1e-12

MODEL_MAGIC = b"SETTI-MODEL"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    pool: int | None = None
    fan_in: int | None = None
    fan_out: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def __str__(self):
        sizes = ", ".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "kind")
        return f"{self.kind}({sizes})"


def conv1d(in_channels, out_channels, kernel=3):
    return LayerSpec("conv1d", in_channels=in_channels, out_channels=out_channels, kernel=kernel)


def relu():
    return LayerSpec("relu")


def maxpool1d(pool=2):
    return LayerSpec("maxpool1d", pool=pool)


def flatten():
    return LayerSpec("flatten")


def dense(fan_in, fan_out):
    return LayerSpec("dense", fan_in=fan_in, fan_out=fan_out)


def softmax():
    return LayerSpec("softmax")


def cnn_spec(feature_count, class_count=2, channels=(16, 32, 64), kernel=3, pool=2):
    """Three conv/relu/maxpool blocks, then flatten, dense and softmax."""
    layers = []
    width, in_ch = feature_count, 1
    for out_ch in channels:
        layers += [conv1d(in_ch, out_ch, kernel), relu(), maxpool1d(pool)]
        in_ch = out_ch
        width //= pool
    layers += [flatten(), dense(in_ch * width, class_count), softmax()]
    return layers


def mlp_spec(feature_count, class_count=2, hidden=32):
    return [dense(feature_count, hidden), relu(), dense(hidden, class_count), softmax()]


def _layer_label(i, spec):
    return f"layer {i} {spec}"


def infer_shapes(spec, input_width):
    """Per-sample output shape of every layer; raises on any mismatch."""
    shape = (input_width,)
    shapes = []
    for i, layer in enumerate(spec):
        prev = _layer_label(i - 1, spec[i - 1]) if i else f"input (width {input_width})"
        here = _layer_label(i, layer)

        def mismatch(expected):
            return ConfigurationError(
                f"{prev} produces shape {shape} but {here} expects {expected}")

        if layer.kind == "conv1d":
            if not layer.kernel or layer.kernel < 1 or layer.kernel % 2 == 0:
                raise ConfigurationError(f"{here}: kernel must be a positive odd integer")
            if len(shape) == 1:
                if layer.in_channels != 1:
                    raise mismatch("a 1-channel signal")
                shape = (1, shape[0])
            if shape[0] != layer.in_channels:
                raise mismatch(f"{layer.in_channels} channels")
            shape = (layer.out_channels, shape[1])
        elif layer.kind == "maxpool1d":
            if len(shape) != 2:
                raise mismatch("a (channels, length) signal")
            if not layer.pool or shape[1] // layer.pool < 1:
                raise mismatch(f"length >= pool width {layer.pool}")
            shape = (shape[0], shape[1] // layer.pool)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            if len(shape) != 1 or shape[0] != layer.fan_in:
                raise mismatch(f"a flat vector of width {layer.fan_in}")
            shape = (layer.fan_out,)
        elif layer.kind == "softmax":
            if len(shape) != 1:
                raise mismatch("a flat vector")
        shapes.append(shape)
    return shapes


def _default_input_width(spec):
    first = spec[0]
    if first.kind == "dense":
        return first.fan_in
    raise ConfigurationError(f"input_width is required when the first layer is {first.kind}")


class ModelParams:
    """A sequential model: layer specs plus one (weight, bias) pair per parametric layer.

    Param-less layers hold ``None`` in ``weights`` and ``biases``.
    """

    def __init__(self, layers, weights, biases, seed, input_width):
        self.layers = list(layers)
        self.weights = list(weights)
        self.biases = list(biases)
        self.seed = int(seed)
        self.input_width = int(input_width)
        self.shapes = infer_shapes(self.layers, self.input_width)

    @property
    def output_width(self):
        return self.shapes[-1][0] if self.shapes else self.input_width

    @property
    def class_count(self):
        return self.output_width

    @property
    def ends_in_softmax(self):
        return bool(self.layers) and self.layers[-1].kind == "softmax"

    def copy(self):
        copy = lambda arrs: [None if a is None else a.copy() for a in arrs]
        return ModelParams(self.layers, copy(self.weights), copy(self.biases), self.seed,
                           self.input_width)

    def parameter_count(self):
        return sum(a.size for a in self.weights + self.biases if a is not None)

    # -- forward ---------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ShapeError(f"expected input of width {self.input_width}, got shape {x.shape}")
        return x

    def forward_cached(self, x, stop=None):
        """Run layers ``[0, stop)``; return the output and the per-layer caches."""
        if not self.layers:
            raise StateError("model has no layers")
        x = self._check_input(x)
        stop = len(self.layers) if stop is None else stop
        caches = []
        for i in range(stop):
            x, cache = _FORWARD[self.layers[i].kind](self, i, x)
            caches.append(cache)
        return x, caches

    def forward(self, x):
        return self.forward_cached(x)[0]

    def logits(self, x):
        """Output of the layer feeding the final softmax (pre-softmax representation)."""
        stop = len(self.layers) - 1 if self.ends_in_softmax else None
        return self.forward_cached(x, stop)[0]

    def predict(self, x):
        return np.argmax(self.forward(x), axis=1)

    # -- backward --------------------------------------------------------

    def backprop(self, caches, grad_out, input_shape=None):
        """Push ``grad_out`` back through the cached layers.

        Returns ``(param_grads, input_grad)`` where ``param_grads[i]`` is a
        ``(dW, db)`` pair or ``None``.
        """
        param_grads = [None] * len(self.layers)
        g = grad_out
        for i in reversed(range(len(caches))):
            g, pg = _BACKWARD[self.layers[i].kind](self, i, caches[i], g)
            param_grads[i] = pg
        if input_shape is not None:
            g = g.reshape(input_shape)
        return param_grads, g

    def gradients(self, x, labels):
        """Mean cross-entropy loss and its exact gradients."""
        if not self.ends_in_softmax:
            raise ConfigurationError("cross-entropy gradients need a softmax output layer")
        x = self._check_input(x)
        labels = np.asarray(labels)
        if labels.shape != (x.shape[0],):
            raise DataError(f"got {labels.shape} labels for {x.shape[0]} samples")
        c = self.class_count
        if labels.size and (labels.min() < 0 or labels.max() >= c or
                            not np.issubdtype(labels.dtype, np.integer)):
            raise DataError(f"labels must be integers in [0, {c})")
        logits, caches = self.forward_cached(x, len(self.layers) - 1)
        probs = _softmax(logits)
        n = x.shape[0]
        picked = probs[np.arange(n), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
        d_logits = probs.copy()
        d_logits[np.arange(n), labels] -= 1.0
        d_logits /= n
        param_grads, input_grad = self.backprop(caches, d_logits, x.shape)
        return GradientBundle(param_grads, input_grad, loss)

    def loss(self, x, labels):
        probs = self.forward(x)
        labels = np.asarray(labels)
        picked = probs[np.arange(len(labels)), labels]
        return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))

    def apply_gradients(self, param_grads, learning_rate):
        """In-place SGD step."""
        for i, pg in enumerate(param_grads):
            if pg is None:
                continue
            self.weights[i] -= learning_rate * pg[0]
            self.biases[i] -= learning_rate * pg[1]

    # -- serialization ---------------------------------------------------

    def to_bytes(self):
        arrays, index = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is None:
                continue
            for name, a in (("weight", w), ("bias", b)):
                index.append({"layer": i, "name": name, "shape": list(a.shape)})
                arrays.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
        header = json.dumps({
            "seed": self.seed,
            "input_width": self.input_width,
            "layers": [l.to_dict() for l in self.layers],
            "arrays": index,
        }, sort_keys=True).encode("utf-8")
        return (MODEL_MAGIC + struct.pack("<II", MODEL_FORMAT_VERSION, len(header)) + header
                + b"".join(arrays))

    @classmethod
    def from_bytes(cls, blob):
        if not blob.startswith(MODEL_MAGIC):
            raise DataError("not a model file (bad magic string)")
        pos = len(MODEL_MAGIC)
        version, hlen = struct.unpack_from("<II", blob, pos)
        if version != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format version {version}")
        pos += 8
        header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        layers = [LayerSpec(**d) for d in header["layers"]]
        weights = [None] * len(layers)
        biases = [None] * len(layers)
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"]))
            a = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            target = weights if entry["name"] == "weight" else biases
            target[entry["layer"]] = a.reshape(entry["shape"])
        if pos != len(blob):
            raise DataError("model file has trailing or missing bytes")
        return cls(layers, weights, biases, header["seed"], header["input_width"])

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class GradientBundle:
    param_grads: list
    input_grads: np.ndarray
    loss: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.3
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


# -- layer kernels -------------------------------------------------------


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_signal(x):
    return x[:, None, :] if x.ndim == 2 else x


def _conv_fwd(model, i, x):
    x = _as_signal(x)
    w, b = model.weights[i], model.biases[i]
    n, c, length = x.shape
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (n, c, L, k)
    cols = win.transpose(0, 2, 1, 3).reshape(n, length, c * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.transpose(0, 2, 1), (cols, x.shape)


def _conv_bwd(model, i, cache, g):
    cols, xshape = cache
    w = model.weights[i]
    n, c, length = xshape
    k = w.shape[2]
    pad = k // 2
    gt = g.transpose(0, 2, 1)  # (n, L, out)
    dw = np.einsum("nlo,nlc->oc", gt, cols).reshape(w.shape)
    db = gt.sum(axis=(0, 1))
    dcols = (gt @ w.reshape(w.shape[0], -1)).reshape(n, length, c, k)
    dxp = np.zeros((n, c, length + 2 * pad))
    for j in range(k):
        dxp[:, :, j:j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dxp[:, :, pad:pad + length], (dw, db)


def _relu_fwd(model, i, x):
    mask = x > 0
    return x * mask, mask


def _relu_bwd(model, i, mask, g):
    return g * mask, None


def _pool_fwd(model, i, x):
    p = model.layers[i].pool
    n, c, length = x.shape
    lo = length // p
    xr = x[:, :, :lo * p].reshape(n, c, lo, p)
    idx = np.argmax(xr, axis=3)[..., None]
    return np.take_along_axis(xr, idx, axis=3)[..., 0], (idx, x.shape)


def _pool_bwd(model, i, cache, g):
    idx, (n, c, length) = cache
    p = model.layers[i].pool
    lo = length // p
    dxr = np.zeros((n, c, lo, p))
    np.put_along_axis(dxr, idx, g[..., None], axis=3)
    dx = np.zeros((n, c, length))
    dx[:, :, :lo * p] = dxr.reshape(n, c, lo * p)
    return dx, None


def _flatten_fwd(model, i, x):
    return x.reshape(x.shape[0], -1), x.shape


def _flatten_bwd(model, i, shape, g):
    return g.reshape(shape), None


def _dense_fwd(model, i, x):
    return x @ model.weights[i] + model.biases[i], x


def _dense_bwd(model, i, x, g):
    return g @ model.weights[i].T, (x.T @ g, g.sum(axis=0))


def _softmax_fwd(model, i, x):
    p = _softmax(x)
    return p, p


def _softmax_bwd(model, i, p, g):
    return p * (g - np.sum(g * p, axis=1, keepdims=True)), None


_FORWARD = {
    "conv1d": _conv_fwd, "relu": _relu_fwd, "maxpool1d": _pool_fwd,
    "flatten": _flatten_fwd, "dense": _dense_fwd, "softmax": _softmax_fwd,
}
_BACKWARD = {
    "conv1d": _conv_bwd, "relu": _relu_bwd, "maxpool1d": _pool_bwd,
    "flatten": _flatten_bwd, "dense": _dense_bwd, "softmax": _softmax_bwd,
}


# -- public functional surface --------------------------------------------


def build_network(spec, seed, input_width=None):
    """Initialise any composable layer stack; weights ~ U[-s, s], s = 1/sqrt(fan_in)."""
    spec = list(spec)
    if not spec:
        raise ConfigurationError("a model needs at least one layer")
    if input_width is None:
        input_width = _default_input_width(spec)
    infer_shapes(spec, input_width)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer in spec:
        if layer.kind == "dense":
            s = 1.0 / np.sqrt(layer.fan_in)
            weights.append(rng.uniform(-s, s, size=(layer.fan_in, layer.fan_out)))
            biases.append(rng.uniform(-s, s, size=layer.fan_out))
        elif layer.kind == "conv1d":
            s = 1.0 / np.sqrt(layer.in_channels * layer.kernel)
            weights.append(rng.uniform(-s, s, size=(layer.out_channels, layer.in_channels,
                                                    layer.kernel)))
            biases.append(rng.uniform(-s, s, size=layer.out_channels))
        else:
            weights.append(None)
            biases.append(None)
    return ModelParams(spec, weights, biases, seed, input_width)


def build_classifier(spec, seed, input_width=None):
    spec = list(spec)
    if not spec or spec[-1].kind != "softmax":
        raise ConfigurationError("a classifier must end in a softmax layer")
    model = build_network(spec, seed, input_width)
    if model.class_count < 2:
        raise ConfigurationError("a classifier needs at least 2 classes")
    return model


def forward(model, batch):
    return model.forward(batch)


def backward(model, batch, labels):
    return model.gradients(batch, labels)


def train(model, train_set, config):
    """Plain minibatch SGD on mean cross-entropy.

    ``train_set`` is anything exposing ``features`` and ``labels`` arrays.
    Returns a new model and the per-epoch mean training loss.
    """
    x = np.asarray(train_set.features, dtype=np.float64)
    y = np.asarray(train_set.labels)
    n = len(y)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if config.batch_size > n:
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = model.gradients(x[idx], y[idx])
            if not np.isfinite(grads.loss):
                raise TrainingDivergedError(epoch, grads.loss)
            model.apply_gradients(grads.param_grads, config.learning_rate)
            total += grads.loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(epoch_loss)
    return model, history


class Adam:
    """Adam optimiser over one or more models' parameters (used by the GAN)."""

    def __init__(self, learning_rate=1e-3, beta1=0.5, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._state = {}

    def step(self, model, param_grads):
        for i, pg in enumerate(param_grads):
            if pg is None:
                continue
            for slot, (params, grad) in enumerate(((model.weights, pg[0]), (model.biases, pg[1]))):
                key = (id(model), i, slot)
                m, v, t = self._state.get(key, (np.zeros_like(grad), np.zeros_like(grad), 0))
                t += 1
                m = self.beta1 * m + (1 - self.beta1) * grad
                v = self.beta2 * v + (1 - self.beta2) * grad * grad
                self._state[key] = (m, v, t)
                m_hat = m / (1 - self.beta1 ** t)
                v_hat = v / (1 - self.beta2 ** t)
                params[i] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
