"""Layered neural net over flat float64 parameter vectors.

Every layer owns one flat vector holding its weights and bias; the model is
just the ordered list of those vectors plus the layer specs. Forward,
loss and gradients are plain deterministic numpy with analytic backprop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DENSE = "dense"
CONV2D = "conv2d"
FLATTEN = "flatten"
LAYER_KINDS = (DENSE, CONV2D, FLATTEN)

ACT_RELU = "relu"
ACT_NONE = "none"
ACTIVATIONS = (ACT_RELU, ACT_NONE)

ARCH_MLP = "mlp"
ARCH_MINI_CNN = "mini_cnn"


class ShapeError(ValueError):
    """Tensor or parameter shapes disagree with the model's declared dims."""


class NumericError(ArithmeticError):
    """A forward or backward pass produced non-finite values."""


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer; `d` is its flat parameter length."""

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    activation: str = ACT_RELU

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.kind == DENSE and (self.in_dim <= 0 or self.out_dim <= 0):
            raise ShapeError("dense layer needs positive in_dim/out_dim")
        if self.kind == CONV2D and (
            self.in_channels <= 0 or self.out_channels <= 0 or self.kernel <= 0
        ):
            raise ShapeError("conv2d layer needs positive channels and kernel")

    @property
    def d(self) -> int:
        if self.kind == DENSE:
            return self.in_dim * self.out_dim + self.out_dim
        if self.kind == CONV2D:
            return self.out_channels * self.in_channels * self.kernel**2 + self.out_channels
        return 0

    @property
    def fans(self) -> tuple[int, int]:
        if self.kind == DENSE:
            return self.in_dim, self.out_dim
        if self.kind == CONV2D:
            k2 = self.kernel**2
            return self.in_channels * k2, self.out_channels * k2
        return 0, 0


@dataclass
class Batch:
    """A classification minibatch: float64 inputs, int labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"batch inputs must be 2-d, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("labels must be one int per input row")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Model:
    """Ordered layer specs plus one flat float64 vector per layer."""

    arch_id: str
    input_shape: tuple[int, ...]
    num_classes: int
    layers: tuple[LayerSpec, ...]
    params: list[np.ndarray]

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = tuple(self.layers)
        if len(self.params) != len(self.layers):
            raise ShapeError(
                f"{len(self.params)} parameter vectors for {len(self.layers)} layers"
            )
        for i, (spec, vec) in enumerate(zip(self.layers, self.params)):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (spec.d,):
                raise ShapeError(
                    f"layer {i}: expected flat vector of length {spec.d}, got {vec.shape}"
                )
            self.params[i] = vec

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_params(self) -> int:
        return int(sum(spec.d for spec in self.layers))

    def layer_dims(self) -> list[int]:
        return [spec.d for spec in self.layers]

    def copy(self) -> "Model":
        return Model(
            arch_id=self.arch_id,
            input_shape=self.input_shape,
            num_classes=self.num_classes,
            layers=self.layers,
            params=[p.copy() for p in self.params],
        )


def make_model(
    arch: str,
    input_dim: int,
    num_classes: int,
    seed: int,
    hidden: tuple[int, int] = (64, 32),
) -> Model:
    """Build and initialize one of the stock architectures.

    mlp: two ReLU hidden dense layers then a linear head.
    mini_cnn: conv(8,3x3)-relu, conv(16,3x3)-relu, flatten, linear head;
    the input must be a square single-channel image (input_dim = side^2).
    """
    if num_classes < 2:
        raise ShapeError("need at least two classes")
    if input_dim < 1:
        raise ShapeError("input_dim must be positive")
    if arch == ARCH_MLP:
        h1, h2 = hidden
        layers = (
            LayerSpec(DENSE, in_dim=input_dim, out_dim=h1, activation=ACT_RELU),
            LayerSpec(DENSE, in_dim=h1, out_dim=h2, activation=ACT_RELU),
            LayerSpec(DENSE, in_dim=h2, out_dim=num_classes, activation=ACT_NONE),
        )
        input_shape: tuple[int, ...] = (input_dim,)
    elif arch == ARCH_MINI_CNN:
        side = math.isqrt(input_dim)
        if side * side != input_dim:
            raise ShapeError(f"mini_cnn input must be square, got input_dim={input_dim}")
        out_side = side - 4  # two valid 3x3 convs
        if out_side < 1:
            raise ShapeError(f"mini_cnn needs at least a 5x5 input, got {side}x{side}")
        layers = (
            LayerSpec(CONV2D, in_channels=1, out_channels=8, kernel=3, activation=ACT_RELU),
            LayerSpec(CONV2D, in_channels=8, out_channels=16, kernel=3, activation=ACT_RELU),
            LayerSpec(FLATTEN, activation=ACT_NONE),
            LayerSpec(
                DENSE,
                in_dim=16 * out_side * out_side,
                out_dim=num_classes,
                activation=ACT_NONE,
            ),
        )
        input_shape = (1, side, side)
    else:
        raise ShapeError(f"unknown arch {arch!r}")
    if any(spec.activation == ACT_NONE for spec in layers[:-1] if spec.kind != FLATTEN):
        raise ShapeError("only the final layer may be linear")
    return Model(
        arch_id=arch,
        input_shape=input_shape,
        num_classes=num_classes,
        layers=layers,
        params=init_params(layers, seed),
    )


def init_params(layers: tuple[LayerSpec, ...], seed: int) -> list[np.ndarray]:
    """Uniform [-a, a] init per layer with a = sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(seed)
    out = []
    for spec in layers:
        if spec.d == 0:
            out.append(np.zeros(0, dtype=np.float64))
            continue
        fan_in, fan_out = spec.fans
        a = math.sqrt(6.0 / (fan_in + fan_out))
        out.append(rng.uniform(-a, a, size=spec.d))
    return out


def _check_finite(arr: np.ndarray, layer: int, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} at layer {layer}")


def _conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x: (B, C, H, W), W: (O, C, k, k) -> (B, O, H-k+1, W-k+1), valid padding
    B, C, H, Wd = x.shape
    O, _, k, _ = W.shape
    Ho, Wo = H - k + 1, Wd - k + 1
    out = np.broadcast_to(b[None, :, None, None], (B, O, Ho, Wo)).copy()
    for u in range(k):
        for v in range(k):
            out += np.einsum(
                "bcij,oc->boij", x[:, :, u : u + Ho, v : v + Wo], W[:, :, u, v]
            )
    return out


def _conv_backward(
    x: np.ndarray, W: np.ndarray, dz: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    B, C, H, Wd = x.shape
    O, _, k, _ = W.shape
    Ho, Wo = dz.shape[2], dz.shape[3]
    dW = np.zeros_like(W)
    dx = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            patch = x[:, :, u : u + Ho, v : v + Wo]
            dW[:, :, u, v] = np.einsum("boij,bcij->oc", dz, patch)
            dx[:, :, u : u + Ho, v : v + Wo] += np.einsum("boij,oc->bcij", dz, W[:, :, u, v])
    db = dz.sum(axis=(0, 2, 3))
    return dW, db, dx


def _split_dense(spec: LayerSpec, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_w = spec.in_dim * spec.out_dim
    return vec[:n_w].reshape(spec.out_dim, spec.in_dim), vec[n_w:]


def _split_conv(spec: LayerSpec, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_w = spec.out_channels * spec.in_channels * spec.kernel**2
    W = vec[:n_w].reshape(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    return W, vec[n_w:]


def _forward(model: Model, X: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the layer chain; returns logits and per-layer caches for backprop."""
    B = X.shape[0]
    if X.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch width {X.shape[1]} does not match model input_dim {model.input_dim}"
        )
    if len(model.input_shape) == 3:
        a = X.reshape(B, *model.input_shape)
    else:
        a = X
    caches = []
    for i, (spec, vec) in enumerate(zip(model.layers, model.params)):
        if spec.kind == DENSE:
            if a.ndim != 2:
                raise ShapeError(f"layer {i}: dense input must be flat (missing flatten?)")
            if a.shape[1] != spec.in_dim:
                raise ShapeError(
                    f"layer {i}: dense expected width {spec.in_dim}, got {a.shape[1]}"
                )
            W, b = _split_dense(spec, vec)
            z = a @ W.T + b
        elif spec.kind == CONV2D:
            if a.ndim != 4 or a.shape[1] != spec.in_channels:
                raise ShapeError(f"layer {i}: conv2d expected (B,{spec.in_channels},H,W) input")
            if a.shape[2] < spec.kernel or a.shape[3] < spec.kernel:
                raise ShapeError(f"layer {i}: spatial input smaller than kernel")
            W, b = _split_conv(spec, vec)
            z = _conv_forward(a, W, b)
        else:  # flatten
            z = a.reshape(B, -1)
        _check_finite(z, i, "activation")
        out = np.maximum(z, 0.0) if spec.activation == ACT_RELU else z
        caches.append((a, z))
        a = out
    if a.ndim != 2:
        raise ShapeError("model output is not flat; final flatten/dense missing")
    return a, caches


def forward(model: Model, batch: Batch) -> np.ndarray:
    """Logits for a batch, shape (B, num_classes)."""
    logits, _ = _forward(model, batch.inputs)
    if logits.shape[1] != model.num_classes:
        raise ShapeError(
            f"model produces {logits.shape[1]} outputs for {model.num_classes} classes"
        )
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss_and_grads(model: Model, batch: Batch) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy loss and its gradient as flat per-layer vectors."""
    if len(batch) == 0:
        raise ShapeError("empty batch")
    if batch.labels.min() < 0 or batch.labels.max() >= model.num_classes:
        raise ShapeError("label out of range")
    logits, caches = _forward(model, batch.inputs)
    B = len(batch)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(B), batch.labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(B), batch.labels] -= 1.0
    dlogits /= B

    grads: list[np.ndarray | None] = [None] * model.num_layers
    da = dlogits
    for i in range(model.num_layers - 1, -1, -1):
        spec = model.layers[i]
        a_prev, z = caches[i]
        if spec.activation == ACT_RELU:
            dz = da * (z > 0.0)
        else:
            dz = da
        if spec.kind == DENSE:
            W, _ = _split_dense(spec, model.params[i])
            dW = dz.T @ a_prev
            db = dz.sum(axis=0)
            grads[i] = np.concatenate([dW.ravel(), db])
            da = dz @ W
        elif spec.kind == CONV2D:
            W, _ = _split_conv(spec, model.params[i])
            dW, db, da = _conv_backward(a_prev, W, dz)
            grads[i] = np.concatenate([dW.ravel(), db])
        else:  # flatten: reshape gradient back to the cached input shape
            grads[i] = np.zeros(0, dtype=np.float64)
            da = dz.reshape(a_prev.shape)
        _check_finite(grads[i], i, "gradient")
    return loss, grads  # type: ignore[return-value]


def sgd_step(model: Model, grads: list[np.ndarray], eta: float) -> Model:
    """One descent step; returns a new model, the input is untouched."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if len(grads) != model.num_layers:
        raise ShapeError("gradient list length mismatch")
    new_params = []
    for i, (p, g) in enumerate(zip(model.params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"layer {i}: gradient shape {g.shape} vs params {p.shape}")
        new_params.append(p - eta * g)
    out = model.copy()
    out.params = new_params
    return out


def layer_view(model: Model, l: int) -> np.ndarray:
    """Copy of layer l's flat parameter vector."""
    if not 0 <= l < model.num_layers:
        raise IndexError(f"layer {l} out of range")
    return model.params[l].copy()


def layer_write(model: Model, l: int, vector: np.ndarray) -> None:
    """Overwrite layer l's parameters (length-checked, stored as a copy)."""
    if not 0 <= l < model.num_layers:
        raise IndexError(f"layer {l} out of range")
    vec = np.asarray(vector, dtype=np.float64)
    if vec.shape != model.params[l].shape:
        raise ShapeError(
            f"layer {l}: vector length {vec.shape} vs expected {model.params[l].shape}"
        )
    model.params[l] = vec.copy()


def flat_params(model: Model) -> np.ndarray:
    if model.num_layers == 0:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(model.params) if model.num_params else np.zeros(0)


# --- checkpoint format: flat little-endian float64 + JSON manifest ---------


def model_manifest(model: Model, seed: int | None = None, **extra) -> dict:
    layers = []
    for spec in model.layers:
        layers.append(
            {
                "kind": spec.kind,
                "d": spec.d,
                "in_dim": spec.in_dim,
                "out_dim": spec.out_dim,
                "in_channels": spec.in_channels,
                "out_channels": spec.out_channels,
                "kernel": spec.kernel,
                "activation": spec.activation,
            }
        )
    man = {
        "arch_id": model.arch_id,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "seed": seed,
        "layers": layers,
    }
    man.update(extra)
    return man


def save_model(model: Model, path: str | Path) -> None:
    """Concatenated little-endian float64 layer vectors, in layer order."""
    blob = b"".join(p.astype("<f8").tobytes() for p in model.params)
    Path(path).write_bytes(blob)


def load_model(path: str | Path, manifest: dict) -> Model:
    """Rebuild a model from a flat binary file and its manifest dict."""
    specs = tuple(
        LayerSpec(
            kind=entry["kind"],
            in_dim=entry.get("in_dim", 0),
            out_dim=entry.get("out_dim", 0),
            in_channels=entry.get("in_channels", 0),
            out_channels=entry.get("out_channels", 0),
            kernel=entry.get("kernel", 0),
            activation=entry["activation"],
        )
        for entry in manifest["layers"]
    )
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8").astype(np.float64)
    total = sum(s.d for s in specs)
    if raw.size != total:
        raise ShapeError(f"checkpoint holds {raw.size} values, manifest declares {total}")
    params, off = [], 0
    for s in specs:
        params.append(raw[off : off + s.d].copy())
        off += s.d
    return Model(
        arch_id=manifest["arch_id"],
        input_shape=tuple(manifest["input_shape"]),
        num_classes=int(manifest["num_classes"]),
        layers=specs,
        params=params,
    )


def save_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
