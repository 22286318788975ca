"""Text checkpoint format.

::

    TAXELGRASP-CKPT v1
    meta <key>=<value>          (zero or more)
    layer <index> <kind>
    shape <d0> <d1> ...         (one shape line + one value line per weight)
    <v0> <v1> ...

Values are written with 17 significant digits so float64 round-trips
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import KINDS, Network

MAGIC = "TAXELGRASP-CKPT v1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict[str, str] = field(default_factory=dict)
    # (index, kind, weight arrays) per layer
    layers: list[tuple[int, str, list[np.ndarray]]] = field(default_factory=list)

    @classmethod
    def from_network(cls, net: Network, meta: dict[str, str] | None = None) -> "Checkpoint":
        layers = [(i, layer.kind, [w.data.copy() for w in layer.weights]) for i, layer in enumerate(net.layers)]
        return cls(dict(meta or {}), layers)

    def weights(self) -> list[np.ndarray]:
        return [a for _, _, arrays in self.layers for a in arrays]

    def load_into(self, net: Network) -> None:
        if len(self.layers) != len(net.layers):
            raise CheckpointError(f"checkpoint has {len(self.layers)} layers, network has {len(net.layers)}")
        for (i, kind, _), layer in zip(self.layers, net.layers):
            if kind != layer.kind:
                raise CheckpointError(f"layer {i}: checkpoint kind {kind} vs network kind {layer.kind}")
        net.set_weights(self.weights())


def _fmt(v: float) -> str:
    return "%.17g" % v


def dumps(ckpt: Checkpoint) -> str:
    lines = [MAGIC]
    for key in sorted(ckpt.meta):
        value = str(ckpt.meta[key])
        if any(ch.isspace() for ch in key) or "\n" in value:
            raise CheckpointError(f"meta entry {key!r} cannot be serialized")
        lines.append(f"meta {key}={value}")
    for index, kind, arrays in ckpt.layers:
        lines.append(f"layer {index} {kind}")
        for a in arrays:
            lines.append("shape " + " ".join(str(d) for d in a.shape))
            lines.append(" ".join(_fmt(v) for v in a.ravel()))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Checkpoint:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"line 1: expected {MAGIC!r}")
    ckpt = Checkpoint()
    pos = 1
    while pos < len(lines):
        line = lines[pos]
        lineno = pos + 1
        if line.startswith("meta "):
            key, sep, value = line[5:].partition("=")
            if not sep:
                raise CheckpointError(f"line {lineno}: malformed meta entry")
            ckpt.meta[key] = value
            pos += 1
        elif line.startswith("layer "):
            parts = line.split()
            if len(parts) != 3 or parts[2] not in KINDS:
                raise CheckpointError(f"line {lineno}: malformed layer header {line!r}")
            index = int(parts[1])
            if index != len(ckpt.layers):
                raise CheckpointError(f"line {lineno}: layer index {index} out of order")
            ckpt.layers.append((index, parts[2], []))
            pos += 1
        elif line.startswith("shape "):
            if not ckpt.layers:
                raise CheckpointError(f"line {lineno}: shape before any layer")
            try:
                shape = tuple(int(d) for d in line.split()[1:])
            except ValueError:
                raise CheckpointError(f"line {lineno}: malformed shape line") from None
            if pos + 1 >= len(lines):
                raise CheckpointError(f"line {lineno}: missing value line")
            try:
                values = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
            except ValueError:
                raise CheckpointError(f"line {lineno + 1}: non-numeric value") from None
            expected = int(np.prod(shape)) if shape else 1
            if values.size != expected:
                raise CheckpointError(
                    f"line {lineno + 1}: {values.size} values for shape {shape}"
                )
            ckpt.layers[-1][2].append(values.reshape(shape))
            pos += 2
        elif not line.strip():
            pos += 1
        else:
            raise CheckpointError(f"line {lineno}: unrecognized line {line[:40]!r}")
    return ckpt


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_text(dumps(ckpt))


def read_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_text())
