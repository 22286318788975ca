"""The five classifier architectures, training and evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .augment import SampleSet
from .dataset import N_CLASSES
from .nn import (
    LSTM,
    Checkpoint,
    Conv2D,
    Conv3D,
    Dense,
    Dropout,
    Flatten,
    MaxPool,
    Network,
    ReLU,
    RmsPropState,
    SoftmaxXent,
    rmsprop_step,
)
from .preprocess import CHANNELS_AS_TIME_2D, SEQUENCE_OF_VECTORS, VOLUME_3D

ARCHS = ("cnn2d1", "cnn2d2", "cnn3d1", "cnn3d2", "lstm1")
ARCH_LABELS = {
    "cnn2d1": "2D-CNN-1L",
    "cnn2d2": "2D-CNN-2L",
    "cnn3d1": "3D-CNN-1L",
    "cnn3d2": "3D-CNN-2L",
    "lstm1": "LSTM",
}
ARCH_LAYOUT = {
    "cnn2d1": CHANNELS_AS_TIME_2D,
    "cnn2d2": CHANNELS_AS_TIME_2D,
    "cnn3d1": VOLUME_3D,
    "cnn3d2": VOLUME_3D,
    "lstm1": SEQUENCE_OF_VECTORS,
}


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, msg: str):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and optimiser hyperparameters for one classifier."""

    arch: str = "lstm1"
    conv_nodes: tuple[int, ...] = (16, 16)
    kernel_space: tuple[int, int] = (3, 2)
    kernel_time: int = 3
    lstm_nodes: int = 32
    dense_nodes: int = 32
    dropout_rates: tuple[float, float] = (0.2, 0.3)
    lstm_recurrent_dropout: float = 0.1
    learning_rate: float = 2e-3
    pool: bool | None = None  # default: pool after the last conv of 2-layer variants
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")

    @property
    def layout(self) -> str:
        return ARCH_LAYOUT[self.arch]

    @property
    def n_conv(self) -> int:
        return 2 if self.arch.endswith("2") else 1

    @property
    def pooled(self) -> bool:
        return self.n_conv == 2 if self.pool is None else bool(self.pool)

    def to_meta(self) -> dict[str, str]:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out[key] = str(value)
        return out

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelSpec":
        kw = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in meta:
                continue
            raw = meta[f.name]
            default = getattr(cls, f.name, None)
            if f.name in ("conv_nodes", "kernel_space"):
                kw[f.name] = tuple(int(v) for v in raw.split(",") if v)
            elif f.name == "dropout_rates":
                kw[f.name] = tuple(float(v) for v in raw.split(","))
            elif f.name == "pool":
                kw[f.name] = None if raw == "None" else raw == "True"
            elif f.name == "arch":
                kw[f.name] = raw
            elif isinstance(default, int):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


def _conv_layers(spec: ModelSpec) -> list:
    nodes = list(spec.conv_nodes)[: spec.n_conv]
    if len(nodes) < spec.n_conv:
        raise ValueError(f"{spec.arch} needs {spec.n_conv} conv node counts, got {spec.conv_nodes}")
    layers = []
    for f in nodes:
        if spec.arch.startswith("cnn3d"):
            layers.append(Conv3D(f, (spec.kernel_time,) + tuple(spec.kernel_space)))
        else:
            layers.append(Conv2D(f, tuple(spec.kernel_space)))
        layers.append(ReLU())
    if spec.pooled:
        layers.append(MaxPool(2, dims=3 if spec.arch.startswith("cnn3d") else 2))
    return layers


def build(spec: ModelSpec, input_shape, seed: int = 0) -> Network:
    """Assemble the network for ``spec``; shape errors surface here."""
    input_shape = tuple(int(d) for d in input_shape)
    rate_layer, rate_dense = spec.dropout_rates
    if spec.layout == SEQUENCE_OF_VECTORS:
        if len(input_shape) != 2:
            raise ValueError(f"lstm1 expects (time, features) input, got {input_shape}")
        layers = [LSTM(spec.lstm_nodes, dropout=rate_layer, recurrent_dropout=spec.lstm_recurrent_dropout)]
    else:
        want = 3 if spec.layout == CHANNELS_AS_TIME_2D else 4
        if len(input_shape) != want:
            raise ValueError(f"{spec.arch} expects rank-{want} samples, got {input_shape}")
        layers = _conv_layers(spec) + [Dropout(rate_layer), Flatten()]
    layers += [
        Dense(spec.dense_nodes),
        ReLU(),
        Dropout(rate_dense),
        Dense(spec.n_classes),
        SoftmaxXent(),
    ]
    return Network(layers, input_shape, seed=seed)


def parameter_count(spec: ModelSpec, input_shape) -> int:
    return build(spec, input_shape).param_count


def sample_shape(spec: ModelSpec, series_length: int, sensor_rows: int, sensor_cols: int, taxels: int) -> tuple[int, ...]:
    """Per-sample input shape for a sensor geometry and series length."""
    if spec.layout == SEQUENCE_OF_VECTORS:
        return (series_length, 3 * taxels)
    if spec.layout == CHANNELS_AS_TIME_2D:
        return (series_length, 3 * sensor_rows, sensor_cols)
    return (1, series_length, 3 * sensor_rows, sensor_cols)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")


def checkpoint_meta(spec: ModelSpec, net: Network) -> dict[str, str]:
    meta = spec.to_meta()
    meta["input_shape"] = ",".join(str(d) for d in net.input_shape)
    return meta


def train(
    net: Network,
    spec: ModelSpec,
    train_set: SampleSet,
    val_set: SampleSet | None,
    epochs: int,
    seed: int,
    batch_size: int = 16,
) -> TrainResult:
    """RMSprop training keeping the weights of the best validation epoch.

    Without a validation set the final epoch's weights are kept. The
    sample order, dropout masks and shift draws all come from ``seed``.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    rng = np.random.default_rng(seed)
    opt = RmsPropState(learning_rate=spec.learning_rate)
    params = net.parameters()
    best_weights = net.get_weights()
    best_acc, best_epoch = -1.0, 0
    history = []
    n = len(train_set)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb = train_set.augmented(idx, rng)
            try:
                loss, _ = net.loss(xb, train_set.y[idx], training=True, rng=rng)
            except FloatingPointError as exc:
                raise TrainingError(epoch, str(exc)) from None
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(epoch, "loss is not finite")
            net.backward(loss)
            try:
                rmsprop_step(opt, params)
            except FloatingPointError as exc:
                raise TrainingError(epoch, str(exc)) from None
            total += value * len(idx)
            count += len(idx)
        train_loss = total / max(count, 1)
        if val_set is not None and len(val_set):
            val_acc = float(np.mean(net.predict(val_set.x) == val_set.y))
        else:
            val_acc = float("nan")
        history.append((epoch, train_loss, val_acc))
        if val_set is None or val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_weights = net.get_weights()
    net.set_weights(best_weights)
    ckpt = Checkpoint.from_network(net, checkpoint_meta(spec, net))
    return TrainResult(ckpt, history, best_epoch, best_acc if history else float("nan"))


def network_from_checkpoint(ckpt: Checkpoint) -> tuple[ModelSpec, Network]:
    spec = ModelSpec.from_meta(ckpt.meta)
    shape = tuple(int(d) for d in ckpt.meta["input_shape"].split(","))
    net = build(spec, shape)
    ckpt.load_into(net)
    return spec, net


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    return float(np.trace(cm) / cm.sum())


def evaluate(model, samples: SampleSet) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows: true class, columns: predicted)."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    net = network_from_checkpoint(model)[1] if isinstance(model, Checkpoint) else model
    pred = net.predict(samples.x)
    cm = confusion_matrix(samples.y, pred, net.n_classes)
    return accuracy_from_confusion(cm), cm


def with_overrides(spec: ModelSpec, **kw) -> ModelSpec:
    return replace(spec, **kw)
