"""Distance models: the convolutional embedding network, a learned linear
(Mahalanobis) map, and the fixed Euclidean baseline, behind one interface.

Every model maps an input feature vector to an embedding; the perceptual
distance between two signals is the Euclidean norm of their embedding
difference. For the linear model with map W this equals
sqrt((x-y)^T W W^T (x-y)), i.e. a Mahalanobis distance with M = W W^T.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ModelFileError
from .kernels import conv_out_len

MODEL_KINDS = ("perceptnet", "mahalanobis", "euclidean")
EMBED_DIM = 128
DEFAULT_CHANNELS = (32, 32, 64, 64, 128, 128)
# Short inputs (e.g. 8-d synthetic signals) use a reduced-width schedule
# with the same topology: six convs, three pools, one linear map.
REDUCED_CHANNELS = (16, 16, 32, 32, 64, 64)
REDUCED_INPUT_MAX = 16
DEFAULT_KERNEL = 3
DEFAULT_POOL_WINDOW = 2
DEFAULT_POOL_AFTER = (2, 4, 6)

# The exponential triplet losses explode when initial squared distances are
# large, so the final linear map starts small; convolution kernels keep the
# standard He scale.
FINAL_INIT_SCALE = 0.05

_FORMAT = "perceptmetric-model"
_FORMAT_VERSION = 1


def resolve_schedule(input_len, channels=DEFAULT_CHANNELS, kernel_size=DEFAULT_KERNEL,
                     pool_window=DEFAULT_POOL_WINDOW, pool_after=DEFAULT_POOL_AFTER):
    """Plan the conv/pool stack for a given input length.

    Returns (layers, flat_dim). Each conv layer is a dict with c_in, c_out,
    kernel, stride, pad; pools are dicts with window. Where the running
    length is too short to pool, the downsampling moves into the next
    convolution's stride (or is dropped after the last convolution).
    """
    if input_len < 1:
        raise ConfigurationError(f"input length must be >= 1, got {input_len}")
    pad = kernel_size // 2
    layers = []
    L = input_len
    c_in = 1
    pending_stride = 1
    for i, c_out in enumerate(channels, start=1):
        stride = pending_stride
        pending_stride = 1
        if L + 2 * pad < kernel_size:
            raise ConfigurationError(
                f"length {L} too short for kernel {kernel_size} at conv {i}"
            )
        layers.append({"op": "conv", "c_in": c_in, "c_out": c_out,
                       "kernel": kernel_size, "stride": stride, "pad": pad})
        L = conv_out_len(L, kernel_size, stride, pad)
        c_in = c_out
        if i in pool_after:
            if L >= pool_window:
                layers.append({"op": "pool", "window": pool_window})
                L //= pool_window
            elif i < len(channels):
                pending_stride = pool_window
    return layers, c_in * L


class EmbeddingModel:
    """Common interface: embed(), distance(), parameters()."""

    kind = None

    def parameters(self):
        return {}

    def embed_tensor(self, x):
        raise NotImplementedError

    def embed(self, X):
        """Embed an (m, input_dim) batch (or a single vector) without grad."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        out = self.embed_tensor(ad.Tensor(X[None] if single else X)).data
        return out[0] if single else out

    def distance(self, x, y):
        ex, ey = self.embed(np.asarray(x)), self.embed(np.asarray(y))
        return float(np.linalg.norm(ex - ey))

    def _check_input(self, X):
        if X.shape[-1] != self.input_dim:
            raise ConfigurationError(
                f"{self.kind} expects input dimension {self.input_dim}, "
                f"got {X.shape[-1]}"
            )


class EuclideanModel(EmbeddingModel):
    """Identity embedding: plain Euclidean distance on the input features."""

    kind = "euclidean"

    def __init__(self, input_dim):
        self.input_dim = int(input_dim)

    def embed_tensor(self, x):
        self._check_input(x.data)
        return x


class MahalanobisModel(EmbeddingModel):
    """Single linear map W (input_dim x embed_dim); induces M = W W^T."""

    kind = "mahalanobis"

    def __init__(self, input_dim, embed_dim=EMBED_DIM, seed=0, params=None):
        self.input_dim = int(input_dim)
        self.embed_dim = int(embed_dim)
        if params is not None:
            self.W = ad.Tensor(params["W"], requires_grad=True, name="W")
        else:
            rng = np.random.default_rng(seed)
            bound = np.sqrt(6.0 / self.input_dim) * FINAL_INIT_SCALE
            self.W = ad.Tensor(
                rng.uniform(-bound, bound, size=(self.input_dim, self.embed_dim)),
                requires_grad=True, name="W",
            )

    def parameters(self):
        return {"W": self.W}

    def embed_tensor(self, x):
        self._check_input(x.data)
        return ad.linear(x, self.W)

    def induced_matrix(self):
        """M = W W^T, symmetric PSD by construction."""
        return self.W.data @ self.W.data.T


class PerceptNet(EmbeddingModel):
    """Six 1D conv layers (ReLU), three pools, and a bias-free linear head."""

    kind = "perceptnet"

    def __init__(self, input_dim, embed_dim=EMBED_DIM, channels=None,
                 kernel_size=DEFAULT_KERNEL, pool_window=DEFAULT_POOL_WINDOW,
                 pool_after=DEFAULT_POOL_AFTER, seed=0, params=None):
        self.input_dim = int(input_dim)
        self.embed_dim = int(embed_dim)
        if channels is None:
            channels = (REDUCED_CHANNELS if self.input_dim <= REDUCED_INPUT_MAX
                        else DEFAULT_CHANNELS)
        self.channels = tuple(int(c) for c in channels)
        self.kernel_size = int(kernel_size)
        self.pool_window = int(pool_window)
        self.pool_after = tuple(int(i) for i in pool_after)
        self.layers, self.flat_dim = resolve_schedule(
            self.input_dim, self.channels, self.kernel_size,
            self.pool_window, self.pool_after,
        )
        self._params = {}
        if params is not None:
            self._init_from(params)
        else:
            self._init_random(seed)

    def _init_random(self, seed):
        rng = np.random.default_rng(seed)
        conv_idx = 0
        for layer in self.layers:
            if layer["op"] != "conv":
                continue
            conv_idx += 1
            fan_in = layer["c_in"] * layer["kernel"]
            bound = np.sqrt(6.0 / fan_in)
            k = rng.uniform(-bound, bound,
                            size=(layer["c_out"], layer["c_in"], layer["kernel"]))
            self._params[f"conv{conv_idx}.kernels"] = ad.Tensor(
                k, requires_grad=True, name=f"conv{conv_idx}.kernels")
            self._params[f"conv{conv_idx}.bias"] = ad.Tensor(
                np.zeros(layer["c_out"]), requires_grad=True,
                name=f"conv{conv_idx}.bias")
        bound = np.sqrt(6.0 / self.flat_dim) * FINAL_INIT_SCALE
        self._params["linear.W"] = ad.Tensor(
            rng.uniform(-bound, bound, size=(self.flat_dim, self.embed_dim)),
            requires_grad=True, name="linear.W")

    def _init_from(self, params):
        for name, arr in params.items():
            self._params[name] = ad.Tensor(arr, requires_grad=True, name=name)

    def parameters(self):
        return dict(self._params)

    def embed_tensor(self, x):
        self._check_input(x.data)
        single = x.data.ndim == 1
        if single:
            x = ad.reshape(x, (1, x.data.shape[0]))
        B = x.data.shape[0]
        h = ad.reshape(x, (B, 1, self.input_dim))
        conv_idx = 0
        for layer in self.layers:
            if layer["op"] == "conv":
                conv_idx += 1
                h = ad.conv1d(
                    h,
                    self._params[f"conv{conv_idx}.kernels"],
                    self._params[f"conv{conv_idx}.bias"],
                    stride=layer["stride"], pad=layer["pad"],
                )
                h = ad.relu(h)
            else:
                h = ad.maxpool1d(h, layer["window"])
        h = ad.reshape(h, (B, self.flat_dim))
        out = ad.linear(h, self._params["linear.W"])  # linear activation, no bias
        return ad.reshape(out, (self.embed_dim,)) if single else out


def init_model(kind, input_dim, seed=0, **kwargs):
    """Build a model of the given kind with seeded parameters."""
    if input_dim < 1:
        raise ConfigurationError(f"input_dim must be positive, got {input_dim}")
    if kind == "euclidean":
        return EuclideanModel(input_dim)
    if kind == "mahalanobis":
        return MahalanobisModel(input_dim, seed=seed, **kwargs)
    if kind == "perceptnet":
        return PerceptNet(input_dim, seed=seed, **kwargs)
    raise ConfigurationError(f"unknown model kind {kind!r}; expected {MODEL_KINDS}")


def distance(model, x, y):
    return model.distance(x, y)


def distance_matrix(model, X):
    """All-pairs distances for an (m, input_dim) array, in blocks."""
    E = model.embed(np.asarray(X, dtype=np.float64))
    m = E.shape[0]
    D = np.empty((m, m))
    block = max(1, 2**22 // max(1, m * E.shape[1]))
    for s in range(0, m, block):
        e = s + block
        D[s:e] = np.linalg.norm(E[s:e, None, :] - E[None, :, :], axis=2)
    np.fill_diagonal(D, 0.0)
    return D


# -- serialization ---------------------------------------------------------


def _encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d):
    try:
        raw = base64.b64decode(d["data"])
        a = np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFileError(f"corrupted parameter array: {exc}") from None
    return a.astype(np.float64)


def save_model(model, path):
    """Write a versioned JSON container; round-trips parameters bitwise."""
    doc = {
        "format": _FORMAT,
        "format_version": _FORMAT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
    }
    if model.kind == "perceptnet":
        doc["embed_dim"] = model.embed_dim
        doc["schedule"] = {
            "channels": list(model.channels),
            "kernel_size": model.kernel_size,
            "pool_window": model.pool_window,
            "pool_after": list(model.pool_after),
        }
    elif model.kind == "mahalanobis":
        doc["embed_dim"] = model.embed_dim
    doc["params"] = {k: _encode_array(p.data) for k, p in model.parameters().items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from None
    if doc.get("format") != _FORMAT:
        raise ModelFileError(f"{path} is not a {_FORMAT} file")
    if doc.get("format_version") != _FORMAT_VERSION:
        raise ModelFileError(
            f"unsupported model format version {doc.get('format_version')} "
            f"(expected {_FORMAT_VERSION})"
        )
    kind = doc.get("kind")
    input_dim = int(doc["input_dim"])
    params = {k: _decode_array(v) for k, v in doc.get("params", {}).items()}
    if kind == "euclidean":
        return EuclideanModel(input_dim)
    if kind == "mahalanobis":
        W = params.get("W")
        if W is None or W.shape[0] != input_dim:
            raise ModelFileError(
                f"mahalanobis W shape {None if W is None else W.shape} "
                f"inconsistent with input_dim {input_dim}"
            )
        return MahalanobisModel(input_dim, embed_dim=W.shape[1], params=params)
    if kind == "perceptnet":
        sched = doc.get("schedule", {})
        model = PerceptNet(
            input_dim,
            embed_dim=int(doc["embed_dim"]),
            channels=sched.get("channels", DEFAULT_CHANNELS),
            kernel_size=sched.get("kernel_size", DEFAULT_KERNEL),
            pool_window=sched.get("pool_window", DEFAULT_POOL_WINDOW),
            pool_after=sched.get("pool_after", DEFAULT_POOL_AFTER),
            params=params,
        )
        expect = set(model.parameters())
        if set(params) != expect:
            raise ModelFileError(
                f"parameter blocks {sorted(set(params) ^ expect)} inconsistent "
                f"with the declared schedule"
            )
        _validate_perceptnet_shapes(model)
        return model
    raise ModelFileError(f"unknown model kind {kind!r} in {path}")


def _validate_perceptnet_shapes(model):
    conv_idx = 0
    for layer in model.layers:
        if layer["op"] != "conv":
            continue
        conv_idx += 1
        k = model._params[f"conv{conv_idx}.kernels"].data
        want = (layer["c_out"], layer["c_in"], layer["kernel"])
        if k.shape != want:
            raise ModelFileError(
                f"conv{conv_idx} kernel shape {k.shape} != schedule {want}"
            )
    W = model._params["linear.W"].data
    if W.shape != (model.flat_dim, model.embed_dim):
        raise ModelFileError(
            f"linear map shape {W.shape} != ({model.flat_dim}, {model.embed_dim})"
        )
