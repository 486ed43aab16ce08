"""Minimal dense feed-forward kernel: forward/backward, softmax cross-entropy,
plain SGD, and a byte-exact checkpoint format.

Everything runs in float64. forward/backward accept a single vector or a
batch (rows = samples); batch gradients are summed over rows, so a caller
wanting a mean scales the upstream gradient by 1/n.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericError

ACTIVATIONS = ("relu", "identity", "sigmoid")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"DBFG"
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise InvalidArgumentError("layer needs 2-D weights and 1-D bias")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise InvalidArgumentError("bias length must match weight rows")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise InvalidArgumentError("layer parameters must be finite")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class ModelParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgumentError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidArgumentError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "ModelParams":
        return ModelParams(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.08
    epochs: int = 25
    batch_size: int = 64
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.weight_init_scale <= 0:
            raise InvalidArgumentError("weight_init_scale must be > 0")


def init_params(
    dims: tuple[int, ...],
    activations: tuple[str, ...],
    seed: int,
    weight_init_scale: float = 1.0,
    symmetric_output: bool = False,
) -> ModelParams:
    """Seeded uniform init in [-a, a], a = weight_init_scale / sqrt(fan_in).

    With symmetric_output the final layer's rows (and biases) are identical,
    so the net starts with no class preference and training on swapped labels
    mirrors exactly.
    """
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise InvalidArgumentError("need len(dims) >= 2 and one activation per layer")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    last = len(dims) - 2
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        a = weight_init_scale / np.sqrt(fan_in)
        if symmetric_output and k == last:
            row = rng.uniform(-a, a, size=(1, fan_in))
            w = np.repeat(row, fan_out, axis=0)
            b = np.repeat(rng.uniform(-a, a, size=1), fan_out)
        else:
            w = rng.uniform(-a, a, size=(fan_out, fan_in))
            b = rng.uniform(-a, a, size=fan_out)
        layers.append(Layer(w, b, activations[k]))
    return ModelParams(layers)


def mlp_arch(input_dim: int, hidden: tuple[int, ...], n_out: int) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Classifier architecture: relu hidden layers, identity logits."""
    dims = (input_dim, *hidden, n_out)
    acts = ("relu",) * len(hidden) + ("identity",)
    return dims, acts


def _apply_act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    return 1.0 / (1.0 + np.exp(-z))


def _act_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(z)
    return a * (1.0 - a)


def forward(params: ModelParams, x: np.ndarray):
    """Run the net; returns (output, cache) where cache suffices for backward.

    x may be a vector (input_dim,) or a batch (n, input_dim). The output of
    the final layer has that layer's activation applied (identity for
    classifiers, so classifier outputs are logits).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise InvalidArgumentError(
            f"input dim {x.shape[-1]} != model input dim {params.input_dim}"
        )
    a = x
    pre = []
    post = [a]
    for layer in params.layers:
        z = a @ layer.weights.T + layer.bias
        a = _apply_act(layer.activation, z)
        pre.append(z)
        post.append(a)
    return a, (pre, post)


def backward(params: ModelParams, cache, dout: np.ndarray):
    """Exact reverse-mode gradients.

    dout is the loss gradient w.r.t. the net output (same shape). Returns
    (grads, dinput) where grads is a list of (dW, db) matching params and
    dinput is the gradient w.r.t. the input. Batch rows are summed.
    """
    pre, post = cache
    if len(pre) != len(params.layers):
        raise InvalidArgumentError("cache does not match model depth")
    delta = np.asarray(dout, dtype=np.float64)
    if delta.shape != pre[-1].shape:
        raise InvalidArgumentError("upstream gradient shape mismatch")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        delta = delta * _act_deriv(layer.activation, pre[k], post[k + 1])
        a_in = post[k]
        if delta.ndim == 1:
            dw = np.outer(delta, a_in)
            db = delta.copy()
        else:
            dw = delta.T @ a_in
            db = delta.sum(axis=0)
        grads[k] = (dw, db)
        delta = delta @ layer.weights
    return grads, delta


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target_class: int):
    """Stabilized cross-entropy for one sample.

    Returns (loss, dloss_dlogits) with gradient softmax(logits) - onehot.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidArgumentError("softmax_xent expects a 1-D logit vector")
    if not np.isfinite(z).all():
        raise NumericError("non-finite logits")
    if not 0 <= target_class < z.shape[0]:
        raise InvalidArgumentError("target_class out of range")
    m = z.max()
    shifted = z - m
    logsumexp = np.log(np.exp(shifted).sum())
    loss = float(logsumexp - shifted[target_class])
    grad = softmax(z)
    grad[target_class] -= 1.0
    return loss, grad


def _xent_batch(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over a batch plus gradient already scaled by 1/n."""
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float((logsumexp - shifted[np.arange(n), targets]).mean())
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities; ties at argmax resolve to the lower class index."""
    logits, _ = forward(params, x)
    return softmax(logits)


def train_classifier(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    arch: tuple[tuple[int, ...], tuple[str, ...]],
    symmetric_output: bool = False,
) -> ModelParams:
    """Mini-batch SGD with a seeded shuffle per epoch.

    Deterministic in (X, y order, config.seed). X is (n, d), y integer class
    labels.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError("training set must be a non-empty (n, d) array")
    if y.shape != (X.shape[0],):
        raise InvalidArgumentError("labels must align with rows of X")
    dims, acts = arch
    if dims[0] != X.shape[1]:
        raise InvalidArgumentError("architecture input dim does not match data")
    if y.min() < 0 or y.max() >= dims[-1]:
        raise InvalidArgumentError("class label outside architecture output range")
    params = init_params(dims, acts, config.seed, config.weight_init_scale, symmetric_output)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = X.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            out, cache = forward(params, X[idx])
            _, dlogits = _xent_batch(out, y[idx])
            grads, _ = backward(params, cache, dlogits)
            for layer, (dw, db) in zip(params.layers, grads):
                layer.weights -= config.learning_rate * dw
                layer.bias -= config.learning_rate * db
    return params


# --- checkpoint format -------------------------------------------------
#
# magic "DBFG", version u16, layer count u16, then per layer
# (out u32, in u32, activation u8), then for each layer the weight matrix
# row-major followed by the bias, all little-endian float64.


def params_to_bytes(params: ModelParams) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<HH", CHECKPOINT_VERSION, len(params.layers))]
    for layer in params.layers:
        out.append(struct.pack("<IIB", layer.out_dim, layer.in_dim, _ACT_CODE[layer.activation]))
    for layer in params.layers:
        out.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(out)


def params_from_bytes(data: bytes) -> ModelParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError("bad checkpoint magic")
    version, n_layers = struct.unpack_from("<HH", data, 4)
    if version != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {version}")
    offset = 8
    shapes = []
    for _ in range(n_layers):
        out_dim, in_dim, act = struct.unpack_from("<IIB", data, offset)
        offset += 9
        if act >= len(ACTIVATIONS):
            raise InvalidArgumentError(f"unknown activation code {act}")
        shapes.append((out_dim, in_dim, ACTIVATIONS[act]))
    layers = []
    for out_dim, in_dim, act in shapes:
        w = np.frombuffer(data, dtype="<f8", count=out_dim * in_dim, offset=offset)
        offset += out_dim * in_dim * 8
        b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=offset)
        offset += out_dim * 8
        layers.append(Layer(w.reshape(out_dim, in_dim).copy(), b.copy(), act))
    if offset != len(data):
        raise InvalidArgumentError("trailing bytes in checkpoint")
    return ModelParams(layers)


def save_params(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
