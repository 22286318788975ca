"""Layer objects and a sequential network container.

A layer carries its ``kind``, its weight tensors and a ``hyper`` map of
numeric hyperparameters; together these are what a checkpoint stores.
Shapes passed to :meth:`Layer.build` are per-sample (no batch axis).
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .tensor import Tensor, backward

KINDS = ("Conv2D", "Conv3D", "Dense", "LSTM", "Dropout", "ReLU", "SoftmaxXent", "Flatten", "MaxPool")


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 6.0) -> np.ndarray:
    limit = math.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = ""

    def __init__(self, **hyper):
        self.hyper: dict[str, float] = dict(hyper)
        self.weights: list[Tensor] = []

    def build(self, input_shape: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
        return self.output_shape(input_shape)

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        raise NotImplementedError

    @property
    def param_count(self) -> int:
        return sum(w.size for w in self.weights)

    def __repr__(self) -> str:
        hyper = ", ".join(f"{k}={v}" for k, v in self.hyper.items())
        return f"{self.kind}({hyper})"


class _Conv(Layer):
    nd = 2

    def __init__(self, filters: int, kernel: tuple[int, ...], pad: int = 0):
        if filters < 1:
            raise ValueError(f"{self.kind} needs at least one filter, got {filters}")
        if len(kernel) != self.nd or min(kernel) < 1:
            raise ValueError(f"{self.kind} kernel must be {self.nd} positive extents, got {kernel}")
        names = ("kt", "kh", "kw")[-self.nd :]
        super().__init__(filters=filters, pad=pad, **dict(zip(names, kernel)))
        self.kernel = tuple(kernel)
        self.pad = pad
        self.filters = filters

    def output_shape(self, input_shape):
        if len(input_shape) != self.nd + 1:
            raise ValueError(f"{self.kind} expects (channels, {self.nd} spatial axes), got {input_shape}")
        space = [s + 2 * self.pad for s in input_shape[1:]]
        if any(k > s for k, s in zip(self.kernel, space)):
            raise ValueError(
                f"{self.kind} kernel {self.kernel} larger than input extents {tuple(input_shape[1:])}"
            )
        return (self.filters,) + tuple(s - k + 1 for s, k in zip(space, self.kernel))

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        c_in = input_shape[0]
        fan_in = c_in * math.prod(self.kernel)
        w = fan_in_uniform(rng, (self.filters, c_in) + self.kernel, fan_in)
        self.weights = [Tensor(w, requires_grad=True), Tensor(np.zeros(self.filters), requires_grad=True)]
        return out

    def forward(self, x, training, rng):
        w, b = self.weights
        return F.conv_nd(x, w, b, self.pad)


class Conv2D(_Conv):
    kind = "Conv2D"
    nd = 2


class Conv3D(_Conv):
    kind = "Conv3D"
    nd = 3


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units: int):
        if units < 1:
            raise ValueError(f"Dense needs at least one unit, got {units}")
        super().__init__(units=units)
        self.units = units

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"Dense expects a flat input, got {input_shape}")
        return (self.units,)

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        d = input_shape[0]
        self.weights = [
            Tensor(fan_in_uniform(rng, (d, self.units), d), requires_grad=True),
            Tensor(np.zeros(self.units), requires_grad=True),
        ]
        return out

    def forward(self, x, training, rng):
        w, b = self.weights
        return F.dense(x, w, b)


class LSTM(Layer):
    """Single sequence-to-one LSTM layer with input and recurrent dropout."""

    kind = "LSTM"

    def __init__(self, units: int, dropout: float = 0.0, recurrent_dropout: float = 0.0):
        if units < 1:
            raise ValueError(f"LSTM needs at least one unit, got {units}")
        for r in (dropout, recurrent_dropout):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate must lie in [0, 1), got {r}")
        super().__init__(units=units, dropout=dropout, recurrent_dropout=recurrent_dropout)
        self.units = units
        self.dropout = dropout
        self.recurrent_dropout = recurrent_dropout

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ValueError(f"LSTM expects (time, features), got {input_shape}")
        if input_shape[0] < 1:
            raise ValueError("LSTM needs at least one time step")
        return (self.units,)

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        d, h = input_shape[1], self.units
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate
        self.weights = [
            Tensor(fan_in_uniform(rng, (d, 4 * h), d, gain=1.0), requires_grad=True),
            Tensor(fan_in_uniform(rng, (h, 4 * h), h, gain=1.0), requires_grad=True),
            Tensor(b, requires_grad=True),
        ]
        return out

    def forward(self, x, training, rng):
        w_in, w_rec, b = self.weights
        in_mask = rec_mask = None
        if training and self.dropout > 0:
            in_mask = F.dropout_mask((x.shape[0], x.shape[2]), self.dropout, rng)
        if training and self.recurrent_dropout > 0:
            rec_mask = F.dropout_mask((x.shape[0], self.units), self.recurrent_dropout, rng)
        return F.lstm(x, w_in, w_rec, b, in_mask, rec_mask)


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        super().__init__(rate=rate)
        self.rate = rate

    def forward(self, x, training, rng):
        return F.dropout(x, self.rate, training, rng)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, training, rng):
        return F.relu(x)


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape):
        return (math.prod(input_shape),)

    def forward(self, x, training, rng):
        return F.flatten(x)


class MaxPool(Layer):
    """Non-overlapping max-pool over the last ``dims`` axes (spatial, or time + spatial)."""

    kind = "MaxPool"

    def __init__(self, size: int = 2, dims: int = 2):
        if size < 1 or dims < 1:
            raise ValueError("MaxPool size and dims must be positive")
        super().__init__(size=size, stride=size, dims=dims)
        self.size = size
        self.dims = dims

    def output_shape(self, input_shape):
        if len(input_shape) < self.dims:
            raise ValueError(f"MaxPool over {self.dims} axes cannot take shape {input_shape}")
        split = len(input_shape) - self.dims
        lead, space = input_shape[:split], input_shape[split:]
        out = tuple(s // self.size for s in space)
        if min(out) < 1:
            raise ValueError(f"MaxPool({self.size}) does not fit extents {tuple(space)}")
        return tuple(lead) + out

    def forward(self, x, training, rng):
        return F.max_pool(x, (self.size,) * self.dims)


class SoftmaxXent(Layer):
    """Loss head marker: the preceding layer's outputs are the logits."""

    kind = "SoftmaxXent"


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, Conv3D, Dense, LSTM, Dropout, ReLU, Flatten, MaxPool, SoftmaxXent)}


class Network:
    """Sequential stack ending in a :class:`SoftmaxXent` head."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], seed: int = 0):
        if not layers or layers[-1].kind != "SoftmaxXent":
            raise ValueError("a Network must end with a SoftmaxXent layer")
        self.layers = layers
        self.input_shape = tuple(input_shape)
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        self.shapes = [shape]
        for layer in layers:
            shape = layer.build(shape, rng)
            self.shapes.append(shape)
        self.n_classes = shape[0]
        self._last_loss: Tensor | None = None

    @property
    def output_shape(self):
        return self.shapes[-1]

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for j, w in enumerate(layer.weights):
                out.append((f"{i}.{layer.kind}.{j}", w))
        return out

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input samples have shape {x.shape[1:]}, network expects {self.input_shape}")
        for layer in self.layers[:-1]:
            x = layer.forward(x, training, rng)
        return x

    def loss(self, x, labels, training: bool = False, rng: np.random.Generator | None = None):
        logits = self.forward(x, training, rng)
        loss, probs = F.softmax_cross_entropy(logits, labels)
        self._last_loss = loss
        return loss, probs

    def backward(self, loss: Tensor | None = None) -> None:
        """Zero every parameter gradient, then backpropagate ``loss``."""
        loss = loss if loss is not None else self._last_loss
        if loss is None:
            raise RuntimeError("backward() called before any forward pass")
        for _, w in self.parameters():
            w.zero_grad()
        backward(loss)
        self._last_loss = None

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        chunks = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start : start + batch_size], training=False)
            chunks.append(F.softmax(logits.data))
        return np.concatenate(chunks, axis=0)

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)

    def get_weights(self) -> list[np.ndarray]:
        return [w.data.copy() for _, w in self.parameters()]

    def set_weights(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} weight arrays, got {len(arrays)}")
        for (name, w), a in zip(params, arrays):
            if a.shape != w.shape:
                raise ValueError(f"{name}: stored shape {a.shape} vs network shape {w.shape}")
            w.data = np.array(a, dtype=np.float64)
