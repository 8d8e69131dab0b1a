"""Classification networks for 1D ECG-style signals.

Defines layer descriptors, the 13-conv-layer reference network and a small
desk-scale variant, temperature softmax, the hard/soft/mixed training
losses, prediction, and bit-exact model serialization.

The 13-layer architecture here is a faithful-shape stand-in: 13 convolution
layers with ReLU, periodic max pooling, global average pooling, and a dense
output of width 4. Its exact filter counts are configuration, not ground
truth.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

LOSS_FLOOR = 1e-12

MODEL_FORMAT_VERSION = 1


class ModelSpecError(ValueError):
    """Unknown architecture name or invalid model construction."""


class ClampCounter:
    """Counts probability entries clamped to the loss floor."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> None:
        self.count = 0


clamp_counter = ClampCounter()


# -- layer descriptors -------------------------------------------------------


@dataclass(frozen=True)
class Conv1D:
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    width: int


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int


LayerSpec = Union[Conv1D, ReLU, MaxPool, GlobalAvgPool, Flatten, Dense]

_LAYER_KINDS = {
    "Conv1D": Conv1D,
    "ReLU": ReLU,
    "MaxPool": MaxPool,
    "GlobalAvgPool": GlobalAvgPool,
    "Flatten": Flatten,
    "Dense": Dense,
}


@dataclass
class ClassifierModel:
    """A layer stack with its parameters, training temperature, and class count.

    Models are immutable during inference; training mutates `parameters`
    single-writer. `temperature` records the softmax temperature the model
    was trained at. Evaluation defaults to temperature 1 regardless.
    """

    spec_name: str
    input_length: int
    num_classes: int
    seed: int
    layers: tuple[LayerSpec, ...]
    parameters: dict[str, np.ndarray]
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ModelSpecError(f"temperature must be > 0, got {self.temperature}")

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters.values())

    def model_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(
            json.dumps(
                [self.spec_name, self.input_length, self.num_classes, self.seed,
                 self.temperature],
                sort_keys=True,
            ).encode()
        )
        for name in sorted(self.parameters):
            digest.update(name.encode())
            digest.update(self.parameters[name].tobytes())
        return digest.hexdigest()[:12]

    def copy(self) -> "ClassifierModel":
        return replace(
            self, parameters={k: v.copy() for k, v in self.parameters.items()}
        )

    # -- forward passes ----------------------------------------------------

    def logits_graph(self, params: dict[str, Tensor], x: Tensor) -> Tensor:
        """Build the logits tape from an input of shape (B, 1, L)."""
        h = x
        for index, layer in enumerate(self.layers):
            if isinstance(layer, Conv1D):
                h = ad.conv1d(
                    h, params[f"layer{index}.w"], stride=layer.stride,
                    padding=layer.padding,
                )
                bias = ad.reshape(
                    params[f"layer{index}.b"], (1, layer.out_channels, 1)
                )
                h = ad.add(h, bias)
            elif isinstance(layer, ReLU):
                h = ad.relu(h)
            elif isinstance(layer, MaxPool):
                h = ad.maxpool1d(h, layer.width)
            elif isinstance(layer, GlobalAvgPool):
                h = ad.global_avg_pool(h)
            elif isinstance(layer, Flatten):
                batch = h.data.shape[0]
                h = ad.reshape(h, (batch, h.data.size // batch))
            elif isinstance(layer, Dense):
                h = ad.matmul(h, params[f"layer{index}.w"])
                h = ad.add(h, params[f"layer{index}.b"])
            else:
                raise ModelSpecError(f"unknown layer descriptor {layer!r}")
        return h

    def logits(self, signals: np.ndarray) -> np.ndarray:
        """Value-only forward pass over a (B, L) batch of signals."""
        x = _as_input(signals, self.input_length)
        params = {k: Tensor(v, op=f"param:{k}") for k, v in self.parameters.items()}
        return self.logits_graph(params, Tensor(x)).data


def _as_input(signals: np.ndarray, expected_length: int) -> np.ndarray:
    arr = np.asarray(signals, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"expected (B, L) or (L,) signals, got shape {arr.shape}")
    if arr.shape[1] != expected_length:
        raise ShapeError(
            f"signal length {arr.shape[1]} does not match model input length "
            f"{expected_length}"
        )
    return arr[:, None, :]


# -- architectures ------------------------------------------------------------


def _desk_layers(num_classes: int) -> tuple[LayerSpec, ...]:
    return (
        Conv1D(8, 7, padding=3),
        ReLU(),
        MaxPool(2),
        Conv1D(16, 5, padding=2),
        ReLU(),
        MaxPool(2),
        Conv1D(32, 3, padding=1),
        ReLU(),
        MaxPool(2),
        GlobalAvgPool(),
        Dense(num_classes),
    )


def _cnn13_layers(num_classes: int) -> tuple[LayerSpec, ...]:
    channels = (8, 8, 16, 16, 32, 32, 32, 64, 64, 64, 128, 128, 128)
    kernels = (7, 7, 5, 5, 5, 5, 3, 3, 3, 3, 3, 3, 3)
    layers: list[LayerSpec] = []
    for i, (c, k) in enumerate(zip(channels, kernels)):
        layers.append(Conv1D(c, k, padding=(k - 1) // 2))
        layers.append(ReLU())
        if i % 2 == 1:
            layers.append(MaxPool(2))
    layers.append(GlobalAvgPool())
    layers.append(Dense(num_classes))
    return tuple(layers)


def build_model(
    spec_name: str, input_length: int, num_classes: int, seed: int
) -> ClassifierModel:
    """Construct a model with deterministic He-style initialization.

    Known spec names: "cnn13" (13 convolution layers), "desk" (3 convolution
    layers sized for fast CPU training), "linear" (flatten plus one dense
    map, used by closed-form oracles).
    """
    if spec_name == "desk":
        layers = _desk_layers(num_classes)
    elif spec_name == "cnn13":
        layers = _cnn13_layers(num_classes)
    elif spec_name == "linear":
        layers = (Flatten(), Dense(num_classes))
    else:
        raise ModelSpecError(f"unknown model spec {spec_name!r}")
    rng = np.random.default_rng(seed)
    parameters: dict[str, np.ndarray] = {}
    channels = 1
    width = input_length
    for index, layer in enumerate(layers):
        if isinstance(layer, Conv1D):
            fan_in = channels * layer.kernel_size
            parameters[f"layer{index}.w"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in),
                size=(layer.out_channels, channels, layer.kernel_size),
            )
            parameters[f"layer{index}.b"] = np.zeros(layer.out_channels)
            channels = layer.out_channels
            width = (width + 2 * layer.padding - layer.kernel_size) // layer.stride + 1
        elif isinstance(layer, MaxPool):
            width = width // layer.width
        elif isinstance(layer, GlobalAvgPool):
            width = 1
        elif isinstance(layer, Flatten):
            channels, width = channels * width, 1
        elif isinstance(layer, Dense):
            fan_in = channels * width
            parameters[f"layer{index}.w"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(fan_in, layer.out_features)
            )
            parameters[f"layer{index}.b"] = np.zeros(layer.out_features)
            channels, width = layer.out_features, 1
        if width < 1:
            raise ModelSpecError(
                f"input length {input_length} is too short for spec {spec_name!r}"
            )
    return ClassifierModel(
        spec_name=spec_name,
        input_length=input_length,
        num_classes=num_classes,
        seed=seed,
        layers=layers,
        parameters=parameters,
    )


# -- softmax and losses --------------------------------------------------------


def softmax_with_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """exp(z_i / T) / sum_l exp(z_l / T), computed with max subtraction.

    Larger T flattens the probabilities; as T grows the output approaches
    the uniform vector 1/N.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_prob_batch(probs) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (B, N) batch, got shape {arr.shape}")
    return arr


def _label_indices(labels, num_classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim == 2:
        if arr.shape[1] != num_classes:
            raise ShapeError("label width does not match class count")
        return arr.argmax(axis=1)
    return arr.astype(np.intp)


def hard_label_loss(probs, labels) -> float:
    """Mean negative log probability of the correct class over the batch.

    `labels` may be one-hot rows or integer class indices. Zero
    probabilities are clamped to 1e-12; each clamp bumps `clamp_counter`.
    """
    p = _as_prob_batch(probs)
    idx = _label_indices(labels, p.shape[1])
    picked = p[np.arange(p.shape[0]), idx]
    clamp_counter.add((picked < LOSS_FLOOR).sum())
    return float(-np.mean(np.log(np.maximum(picked, LOSS_FLOOR))))


def soft_label_loss(probs, soft_labels) -> float:
    """Mean cross-entropy of predicted probabilities against soft labels.

    Computes -(1/B) sum_X sum_i target_i(X) * log(pred_i(X)), clamping
    predicted entries at 1e-12.
    """
    p = _as_prob_batch(probs)
    t = _as_prob_batch(soft_labels)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    clamp_counter.add(((p < LOSS_FLOOR) & (t > 0)).sum())
    return float(-np.mean((t * np.log(np.maximum(p, LOSS_FLOOR))).sum(axis=1)))


@dataclass(frozen=True)
class MixedLossConfig:
    """Weight c of the adversarial term in the mixed training loss."""

    c: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"mixing weight must be in [0, 1], got {self.c}")


def mixed_loss(adv_loss: float, natural_loss: float, config: MixedLossConfig) -> float:
    """c * adversarial loss + (1 - c) * natural loss."""
    return config.c * adv_loss + (1.0 - config.c) * natural_loss


# -- graph-side loss builders (used by trainers and attacks) -------------------


def hard_label_loss_graph(probs: Tensor, label_indices: np.ndarray) -> Tensor:
    picked = ad.gather_rows(probs, label_indices)
    clamp_counter.add((picked.data < LOSS_FLOOR).sum())
    return -ad.reduce_mean(ad.log(ad.clamp_min(picked, LOSS_FLOOR)))


def soft_label_loss_graph(probs: Tensor, soft_labels: np.ndarray) -> Tensor:
    targets = np.asarray(soft_labels, dtype=np.float64)
    clamp_counter.add(((probs.data < LOSS_FLOOR) & (targets > 0)).sum())
    logp = ad.log(ad.clamp_min(probs, LOSS_FLOOR))
    return -ad.reduce_mean(ad.reduce_sum(ad.mul(logp, Tensor(targets)), axis=1))


# -- prediction -----------------------------------------------------------------


def predict_batch(
    model: ClassifierModel, signals: np.ndarray, eval_temperature: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Class indices and probability rows for a (B, L) batch.

    Argmax ties break to the lowest class index.
    """
    probs = softmax_with_temperature(model.logits(signals), eval_temperature)
    return probs.argmax(axis=1), probs


def predict(
    model: ClassifierModel, signal: np.ndarray, eval_temperature: float = 1.0
) -> tuple[int, np.ndarray]:
    """Predicted class and probability vector for a single signal."""
    classes, probs = predict_batch(model, np.asarray(signal)[None, :], eval_temperature)
    return int(classes[0]), probs[0]


def accuracy(model: ClassifierModel, signals: np.ndarray, labels: np.ndarray) -> float:
    classes, _ = predict_batch(model, signals)
    return float(np.mean(classes == np.asarray(labels)))


# -- serialization ---------------------------------------------------------------


def save_model(model: ClassifierModel, path) -> None:
    """Write a versioned npz archive; round-trips bit-exactly."""
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "spec_name": model.spec_name,
        "input_length": model.input_length,
        "num_classes": model.num_classes,
        "seed": model.seed,
        "temperature": model.temperature,
    }
    arrays = {f"param/{k}": v for k, v in model.parameters.items()}
    buffer = io.BytesIO()
    np.savez(buffer, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)
    with open(path, "wb") as fh:
        fh.write(buffer.getvalue())


def load_model(path) -> ClassifierModel:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode())
        if meta["format_version"] != MODEL_FORMAT_VERSION:
            raise ModelSpecError(
                f"unsupported model format version {meta['format_version']}"
            )
        parameters = {
            key[len("param/"):] : archive[key]
            for key in archive.files
            if key.startswith("param/")
        }
    template = build_model(
        meta["spec_name"], meta["input_length"], meta["num_classes"], meta["seed"]
    )
    expected = {k: v.shape for k, v in template.parameters.items()}
    loaded = {k: v.shape for k, v in parameters.items()}
    if expected != loaded:
        raise ModelSpecError("stored parameters do not match the architecture")
    return ClassifierModel(
        spec_name=meta["spec_name"],
        input_length=meta["input_length"],
        num_classes=meta["num_classes"],
        seed=meta["seed"],
        layers=template.layers,
        parameters=parameters,
        temperature=meta["temperature"],
    )
