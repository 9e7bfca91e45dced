"""Small fp64 MLPs with hand-written backprop, and synthetic tasks to train them on.

Every dense layer matrix goes into ``ParamTree.matrices``; biases (and the
optional input gain vector) are concatenated into ``ParamTree.base``.
"""

from dataclasses import asdict, dataclass
import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError, DimensionError
from .tree import ParamTree

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("softmax_xent", "mse")
DATASET_KINDS = ("teacher_net", "gaussian_blobs", "char_copy")


@dataclass(frozen=True)
class ModelSpec:
    layer_dims: tuple
    activation: str = "tanh"
    loss: str = "mse"
    seed: int = 0
    input_gain: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ConfigError("layer_dims needs at least two positive entries", key="layer_dims")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}", key="activation")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}", key="loss")


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        return Batch(self.inputs[idx], self.targets[idx])


class MLP:
    def __init__(self, spec):
        self.spec = spec
        dims = spec.layer_dims
        self.shapes = [(dims[k + 1], dims[k]) for k in range(len(dims) - 1)]
        self.bias_sizes = list(dims[1:])
        self.n_base = sum(self.bias_sizes) + (dims[0] if spec.input_gain else 0)

    def __repr__(self):
        return f"MLP({list(self.spec.layer_dims)}, {self.spec.activation}, {self.spec.loss})"

    def init_params(self, seed=None):
        rng = np.random.default_rng(self.spec.seed if seed is None else seed)
        mats = [rng.standard_normal(s) / np.sqrt(s[1]) for s in self.shapes]
        base = np.zeros(self.n_base)
        if self.spec.input_gain:
            base[sum(self.bias_sizes):] = 1.0
        return ParamTree(mats, base)

    def _split(self, params):
        if [M.shape for M in params.matrices] != self.shapes or params.base.size != self.n_base:
            raise DimensionError(f"parameter shapes {params.shapes} do not fit {self!r}")
        out, k = [], 0
        for n in self.bias_sizes:
            out.append(params.base[k:k + n])
            k += n
        gain = params.base[k:] if self.spec.input_gain else None
        return out, gain

    def _act(self, Z):
        return np.tanh(Z) if self.spec.activation == "tanh" else np.maximum(Z, 0.0)

    def _act_grad(self, Z, A):
        return 1.0 - A * A if self.spec.activation == "tanh" else (Z > 0).astype(np.float64)

    def forward(self, params, X):
        """Outputs plus the cache needed for backward (inputs, pre-activations, activations)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.spec.layer_dims[0]:
            raise DimensionError(f"inputs of shape {X.shape} do not fit {self!r}")
        biases, gain = self._split(params)
        A = X * gain if gain is not None else X
        acts, pre = [A], []
        last = len(params.matrices) - 1
        for k, (W, b) in enumerate(zip(params.matrices, biases)):
            Z = A @ W.T + b
            pre.append(Z)
            A = Z if k == last else self._act(Z)
            acts.append(A)
        return A, (X, pre, acts)

    def _loss_from_output(self, out, targets):
        n = out.shape[0]
        if self.spec.loss == "mse":
            targets = np.asarray(targets, dtype=np.float64).reshape(out.shape)
            diff = out - targets
            return float(np.sum(diff * diff) / n), 2.0 * diff / n
        targets = np.asarray(targets)
        if targets.ndim != 1 or targets.shape[0] != n:
            raise DimensionError("class targets must be a 1-D array with one index per example")
        if targets.min() < 0 or targets.max() >= out.shape[1]:
            raise DimensionError("class target out of range")
        z = out - out.max(axis=1, keepdims=True)
        logsum = np.log(np.sum(np.exp(z), axis=1))
        idx = targets.astype(np.int64)
        loss = float(np.mean(logsum - z[np.arange(n), idx]))
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), idx] -= 1.0
        return loss, p / n

    def loss(self, params, batch):
        out, _ = self.forward(params, batch.inputs)
        return self._loss_from_output(out, batch.targets)[0]

    def loss_and_grad(self, params, batch):
        out, (X, pre, acts) = self.forward(params, batch.inputs)
        loss, dA = self._loss_from_output(out, batch.targets)
        biases, gain = self._split(params)
        n_layers = len(params.matrices)
        dWs, dbs = [None] * n_layers, [None] * n_layers
        for k in reversed(range(n_layers)):
            dZ = dA if k == n_layers - 1 else dA * self._act_grad(pre[k], acts[k + 1])
            dWs[k] = dZ.T @ acts[k]
            dbs[k] = dZ.sum(axis=0)
            dA = dZ @ params.matrices[k]
        base = dbs + ([np.sum(dA * X, axis=0)] if gain is not None else [])
        return loss, ParamTree(dWs, np.concatenate(base))

    def preactivation_signs(self, params, X):
        _, (_, pre, _) = self.forward(params, X)
        return [Z > 0 for Z in pre[:-1]]


def forward_loss(model, params, batch):
    return model.loss(params, batch)


def backward(model, params, batch):
    return model.loss_and_grad(params, batch)


def finite_diff_check(model, params, batch, h=1e-5, n_coords=64, seed=0):
    """Max relative error between central differences and analytic gradients.

    Checks a random subset of at least 50 coordinates (all of them if fewer
    exist). For ReLU networks, coordinates whose +-h perturbation flips any
    activation are skipped. The relative error's denominator is floored at 1e-8.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _, grads = model.loss_and_grad(params, batch)
    flat, gflat = params.flat(), grads.flat()
    rng = np.random.default_rng(seed)
    k = min(flat.size, max(n_coords, 50))
    coords = rng.choice(flat.size, size=k, replace=False)
    relu = model.spec.activation == "relu"
    signs = model.preactivation_signs(params, batch.inputs) if relu else None

    worst = 0.0
    for i in coords:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        p_tree, m_tree = params.unflatten(plus), params.unflatten(minus)
        if relu:
            flips = any(
                np.any(a != s) or np.any(b != s)
                for a, b, s in zip(
                    model.preactivation_signs(p_tree, batch.inputs),
                    model.preactivation_signs(m_tree, batch.inputs),
                    signs,
                )
            )
            if flips:
                continue
        numeric = (model.loss(p_tree, batch) - model.loss(m_tree, batch)) / (2.0 * h)
        denom = max(abs(numeric), abs(gflat[i]), 1e-8)
        worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic data.

    ``noise`` means additive Gaussian std on teacher targets and the fraction
    of randomly relabelled examples for the classification kinds.
    ``separation`` is the blob center distance in units of the within-class std.
    For ``char_copy`` the inputs are one-hot strings of ``n_features //
    n_outputs`` characters over an ``n_outputs``-letter alphabet and the label
    is the first character.
    """

    kind: str = "teacher_net"
    size: int = 256
    noise: float = 0.0
    seed: int = 0
    n_features: int = 8
    n_outputs: int = 4
    separation: float = 10.0
    teacher_hidden: int = 16

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"data kind must be one of {DATASET_KINDS}", key="kind")
        if self.size < 1:
            raise ConfigError("dataset size must be >= 1", key="size")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0", key="noise")
        if self.kind == "char_copy" and self.n_features < self.n_outputs:
            raise ConfigError("char_copy needs n_features >= n_outputs", key="n_features")


def _teacher(spec, rng):
    W1 = rng.standard_normal((spec.teacher_hidden, spec.n_features)) / np.sqrt(spec.n_features)
    b1 = 0.1 * rng.standard_normal(spec.teacher_hidden)
    W2 = rng.standard_normal((spec.n_outputs, spec.teacher_hidden)) / np.sqrt(spec.teacher_hidden)
    X = rng.standard_normal((spec.size, spec.n_features))
    Y = np.tanh(X @ W1.T + b1) @ W2.T
    Y += spec.noise * rng.standard_normal(Y.shape)
    return X, Y


def _relabel(labels, n_classes, frac, rng):
    flip = rng.random(labels.size) < frac
    labels[flip] = rng.integers(0, n_classes, size=int(flip.sum()))
    return labels


def _blobs(spec, rng):
    k, d = spec.n_outputs, spec.n_features
    Q, _ = np.linalg.qr(rng.standard_normal((max(d, k), max(d, k))))
    centers = Q[:k, :d]
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.separation / np.sqrt(2.0)
    labels = rng.integers(0, k, size=spec.size)
    X = centers[labels] + rng.standard_normal((spec.size, d))
    return X, _relabel(labels, k, spec.noise, rng)


def _char_copy(spec, rng):
    A = spec.n_outputs
    length = spec.n_features // A
    chars = rng.integers(0, A, size=(spec.size, length))
    X = np.zeros((spec.size, spec.n_features))
    for pos in range(length):
        X[np.arange(spec.size), pos * A + chars[:, pos]] = 1.0
    return X, _relabel(chars[:, 0].copy(), A, spec.noise, rng)


def make_dataset(spec, batch_size=None):
    """Deterministic data for ``spec``, split into batches of ``batch_size`` rows."""
    rng = np.random.default_rng(spec.seed)
    maker = {"teacher_net": _teacher, "gaussian_blobs": _blobs, "char_copy": _char_copy}[spec.kind]
    X, Y = maker(spec, rng)
    full = Batch(X, Y)
    if batch_size is None or batch_size >= spec.size:
        return [full]
    return [full.subset(slice(i, i + batch_size)) for i in range(0, spec.size, batch_size)]


def merge_batches(batches):
    return Batch(np.concatenate([b.inputs for b in batches]),
                 np.concatenate([b.targets for b in batches]))


# ------------------------------------------------------------- binary cache

CACHE_MAGIC = b"NFDSET\x00\x01"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sI32sQQQB")


def dataset_hash(spec):
    return hashlib.sha256(json.dumps(asdict(spec), sort_keys=True).encode()).digest()


def save_dataset(path, spec, batch):
    """Write ``batch`` as header (magic, version, spec hash, shape) + fp64 payload."""
    X = np.ascontiguousarray(batch.inputs, dtype="<f8")
    Y = np.asarray(batch.targets)
    classes = Y.ndim == 1 and np.issubdtype(Y.dtype, np.integer)
    Yf = np.ascontiguousarray(Y.reshape(X.shape[0], -1), dtype="<f8")
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, dataset_hash(spec),
                          X.shape[0], X.shape[1], Yf.shape[1], 0 if classes else 1)
    with open(path, "wb") as f:
        f.write(header)
        f.write(X.tobytes())
        f.write(Yf.tobytes())


def load_dataset(path, spec=None):
    """Read a cache file; with ``spec`` given, refuse files written for another spec."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, digest, n, d_in, d_out, kind = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: not a dataset cache file")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    if spec is not None and digest != dataset_hash(spec):
        raise ValueError(f"{path}: cache was written for a different dataset spec")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * (d_in + d_out):
        raise ValueError(f"{path}: payload size does not match header")
    X = body[: n * d_in].reshape(n, d_in).copy()
    Y = body[n * d_in:].reshape(n, d_out).copy()
    Y = Y[:, 0].astype(np.int64) if kind == 0 else Y
    return Batch(X, Y)
