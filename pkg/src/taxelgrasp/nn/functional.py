"""Differentiable ops on :class:`Tensor`.

All ops take a leading batch axis. Convolutions are direct loops over kernel
offsets, each offset contracting the channel axis for the whole batch at
once; no im2col or FFT.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import Tensor, record


def _spatial_slices(offset, extents):
    return tuple(slice(o, o + e) for o, e in zip(offset, extents))


def conv_nd(x: Tensor, w: Tensor, b: Tensor, pad: int = 0) -> Tensor:
    """Valid-mode, stride-1 convolution (cross-correlation) over trailing axes.

    ``x`` is (N, C_in, *S), ``w`` is (C_out, C_in, *K), ``b`` is (C_out,).
    With ``pad`` > 0 every spatial axis is zero-padded by that amount on both
    sides first.
    """
    nd = w.data.ndim - 2
    if x.data.ndim != nd + 2:
        raise ValueError(
            f"conv{nd}d expects input of rank {nd + 2} (batch, channels, ...), "
            f"got input shape {x.shape} for kernel shape {w.shape}"
        )
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"channel mismatch: input shape {x.shape} vs kernel shape {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match kernel shape {w.shape}")
    xd = x.data
    if pad:
        xd = np.pad(xd, [(0, 0), (0, 0)] + [(pad, pad)] * nd)
    space = xd.shape[2:]
    kernel = w.shape[2:]
    if any(k > s for k, s in zip(kernel, space)):
        raise ValueError(
            f"kernel extents {kernel} exceed input extents {space} "
            f"(input shape {x.shape}, kernel shape {w.shape})"
        )
    out_ext = tuple(s - k + 1 for s, k in zip(space, kernel))
    n = xd.shape[0]
    wd = w.data
    # accumulate channels-last, (N, *O, C_out)
    acc = np.zeros((n,) + out_ext + (wd.shape[0],))
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    for off in offsets:
        xs = xd[(slice(None), slice(None)) + _spatial_slices(off, out_ext)]
        acc += np.tensordot(xs, wd[(slice(None), slice(None)) + off], axes=([1], [1]))
    acc += b.data
    out = Tensor(np.moveaxis(acc, -1, 1))

    def _backward(g):
        g_cl = np.moveaxis(g, 1, -1)  # (N, *O, C_out)
        sum_axes = tuple(range(nd + 1))
        db = g_cl.sum(axis=sum_axes)
        dw = np.empty_like(wd)
        dx = np.zeros_like(xd) if x.requires_grad else None
        for off in offsets:
            region = (slice(None), slice(None)) + _spatial_slices(off, out_ext)
            xs = xd[region]
            xs_cl = np.moveaxis(xs, 1, -1)  # (N, *O, C_in)
            dw[(slice(None), slice(None)) + off] = np.tensordot(
                g_cl, xs_cl, axes=(sum_axes, sum_axes)
            )
            if dx is not None:
                contrib = np.tensordot(g_cl, wd[(slice(None), slice(None)) + off], axes=([-1], [0]))
                dx[region] += np.moveaxis(contrib, -1, 1)
        if dx is not None and pad:
            dx = dx[(slice(None), slice(None)) + tuple(slice(pad, -pad) for _ in range(nd))]
        return dx, dw, db

    return record(out, (x, w, b), _backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, pad: int = 0) -> Tensor:
    if w.data.ndim != 4:
        raise ValueError(f"conv2d kernel must be (out_ch, in_ch, kh, kw), got {w.shape}")
    return conv_nd(x, w, b, pad)


def conv3d(x: Tensor, w: Tensor, b: Tensor, pad: int = 0) -> Tensor:
    if w.data.ndim != 5:
        raise ValueError(f"conv3d kernel must be (out_ch, in_ch, kt, kh, kw), got {w.shape}")
    if x.data.ndim == 5 and w.shape[2] > x.shape[2] + 2 * pad:
        raise ValueError(
            f"kernel time extent {w.shape[2]} exceeds input time extent {x.shape[2]}"
        )
    return conv_nd(x, w, b, pad)


def max_pool(x: Tensor, size: tuple[int, ...] = (2, 2)) -> Tensor:
    """Non-overlapping max-pool over the trailing ``len(size)`` axes.

    Trailing remainders that do not fill a window are dropped. Ties route the
    gradient to the first maximum in window order.
    """
    p = len(size)
    lead = x.shape[: x.data.ndim - p]
    space = x.shape[x.data.ndim - p :]
    out_ext = tuple(s // k for s, k in zip(space, size))
    if any(e == 0 for e in out_ext):
        raise ValueError(f"pool size {size} larger than pooled extents {space}")
    crop = x.data[tuple(slice(None) for _ in lead) + tuple(slice(0, e * k) for e, k in zip(out_ext, size))]
    split = crop.reshape(lead + tuple(v for e, k in zip(out_ext, size) for v in (e, k)))
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + 2 * i for i in range(p)) + tuple(nl + 2 * i + 1 for i in range(p))
    windows = split.transpose(perm).reshape(lead + out_ext + (-1,))
    idx = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    def _backward(g):
        gw = np.zeros(windows.shape)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(lead + out_ext + tuple(size))
        inv = np.argsort(perm)
        gs = gw.transpose(inv).reshape(crop.shape)
        dx = np.zeros_like(x.data)
        dx[tuple(slice(None) for _ in lead) + tuple(slice(0, e * k) for e, k in zip(out_ext, size))] = gs
        return (dx,)

    return record(out, (x,), _backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense: input shape {x.shape} does not fit weight shape {w.shape}")
    out = Tensor(x.data @ w.data + b.data)

    def _backward(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return record(out, (x, w, b), _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return record(out, (x,), lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    out = Tensor(x.data.reshape(shape[0], -1))
    return record(out, (x,), lambda g: (g.reshape(shape),))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = dropout_mask(x.shape, rate, rng)
    out = Tensor(x.data * mask)
    return record(out, (x,), lambda g: (g * mask,))


def dropout_forward(x: Tensor, rate: float, training: bool, rng_seed: int) -> Tensor:
    return dropout(x, rate, training, np.random.default_rng(rng_seed))


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm(
    x: Tensor,
    w_in: Tensor,
    w_rec: Tensor,
    b: Tensor,
    in_mask: np.ndarray | None = None,
    rec_mask: np.ndarray | None = None,
) -> Tensor:
    """Sequence-to-one LSTM returning the final hidden state.

    ``x`` is (N, T, D); ``w_in`` is (D, 4H); ``w_rec`` is (H, 4H); ``b`` is
    (4H,). Gate blocks are ordered input, forget, output, candidate. Initial
    hidden and cell states are zero. ``in_mask`` (N, D) and ``rec_mask``
    (N, H) are per-sequence dropout masks applied at every step.
    """
    if x.data.ndim != 3:
        raise ValueError(f"lstm expects (batch, time, features), got {x.shape}")
    n, steps, d = x.shape
    if steps == 0:
        raise ValueError("lstm needs a non-empty sequence")
    if w_in.shape[0] != d:
        raise ValueError(f"lstm: input shape {x.shape} does not fit weight shape {w_in.shape}")
    h_dim = w_rec.shape[0]
    xm = x.data if in_mask is None else x.data * in_mask[:, None, :]
    zx = xm @ w_in.data + b.data  # (N, T, 4H)
    wr = w_rec.data
    h = np.zeros((n, h_dim))
    c = np.zeros((n, h_dim))
    hs, cs, gates = [], [c], []
    for t in range(steps):
        hm = h if rec_mask is None else h * rec_mask
        hs.append(hm)
        z = zx[:, t] + hm @ wr
        ifo = _sigmoid(z[:, : 3 * h_dim])
        g = np.tanh(z[:, 3 * h_dim :])
        i, f, o = ifo[:, :h_dim], ifo[:, h_dim : 2 * h_dim], ifo[:, 2 * h_dim :]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cs.append(c)
        gates.append((i, f, o, g, tc))
    out = Tensor(h)

    def _backward(gh):
        dzs = np.empty((n, steps, 4 * h_dim))
        dwr = np.zeros_like(wr)
        dh = gh
        dc = np.zeros((n, h_dim))
        for t in range(steps - 1, -1, -1):
            i, f, o, g, tc = gates[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = dzs[:, t]
            dz[:, :h_dim] = dc * g * i * (1.0 - i)
            dz[:, h_dim : 2 * h_dim] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * h_dim : 3 * h_dim] = dh * tc * o * (1.0 - o)
            dz[:, 3 * h_dim :] = dc * i * (1.0 - g * g)
            dc = dc * f
            dwr += hs[t].T @ dz
            dh = dz @ wr.T
            if rec_mask is not None:
                dh = dh * rec_mask
        flat = dzs.reshape(n * steps, -1)
        dw_in = xm.reshape(n * steps, d).T @ flat
        db = flat.sum(axis=0)
        dx = None
        if x.requires_grad:
            dx = dzs @ w_in.data.T
            if in_mask is not None:
                dx = dx * in_mask[:, None, :]
        return dx, dw_in, dwr, db

    return record(out, (x, w_in, w_rec, b), _backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns the scalar loss tensor and the (N, K) probability array.
    """
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("softmax_cross_entropy received non-finite logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = z.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_norm[:, None]
    probs = np.exp(log_p)
    rows = np.arange(n)
    loss = Tensor(-log_p[rows, labels].mean())

    def _backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return record(loss, (logits,), _backward), probs


def squared_error(pred: Tensor, target) -> Tensor:
    """0.5 * sum((pred - target)^2)."""
    diff = pred.data - np.asarray(target, dtype=np.float64)
    out = Tensor(0.5 * np.sum(diff * diff))
    return record(out, (pred,), lambda g: (g * diff,))
