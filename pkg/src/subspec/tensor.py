"""Dense (N, C, F, T) tensors and the forward/backward kernels the harness uses.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 with exactly four
axes in batch, channel, frequency, time order.  ``as_tensor4`` is the one
gatekeeper; every public kernel calls it on its inputs.

All reductions go through numpy's fixed pairwise summation over C-contiguous
buffers, so repeated calls on identical inputs are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import BandOutOfRange, FormatError, IndivisibleFrequency, ShapeMismatch

TNS4_MAGIC = b"TNS4"
_HEADER = struct.Struct("<4s4I")


def as_tensor4(x, name: str = "x") -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array with four non-empty axes."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatch(f"{name} must have 4 axes (N, C, F, T), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeMismatch(f"{name} has an empty axis: {arr.shape}")
    return arr


def check_bands(f: int, s: int) -> int:
    """Validate that ``f`` frequency rows split into ``s`` equal bands; return the band width."""
    if s < 1:
        raise IndivisibleFrequency(f"sub-band count must be >= 1, got {s}")
    if f % s:
        raise IndivisibleFrequency(f"frequency size {f} is not divisible by sub-band count {s}")
    return f // s


# -- band helpers --------------------------------------------------------------


def band_slice(x, i: int, s: int) -> np.ndarray:
    """Frequency rows ``[i*f/s, (i+1)*f/s)`` of ``x`` (a copy)."""
    x = as_tensor4(x)
    width = check_bands(x.shape[2], s)
    if not 0 <= i < s:
        raise BandOutOfRange(f"band index {i} outside [0, {s})")
    return x[:, :, i * width:(i + 1) * width, :].copy()


def split_bands(x: np.ndarray, s: int) -> np.ndarray:
    """View ``x`` as (N, C, S, F/S, T)."""
    n, c, f, t = x.shape
    width = check_bands(f, s)
    return x.reshape(n, c, s, width, t)


def moments_per_channel_band(x, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and biased variance per (channel, band), both shaped (C, S).

    Two-pass: the variance is the mean of squared deviations from the
    already-computed mean.
    """
    x = as_tensor4(x)
    xb = split_bands(x, s)
    mean = xb.mean(axis=(0, 3, 4))
    var = np.square(xb - mean[None, :, :, None, None]).mean(axis=(0, 3, 4))
    return mean, var


# -- convolution ---------------------------------------------------------------


@dataclass
class Conv2dParams:
    """Stride-1 cross-correlation with zero padding.

    ``weight`` is (c_out, c_in, k_f, k_t) with odd kernel sizes; ``padding``
    defaults to ``(k_f // 2, k_t // 2)``, which preserves the F and T sizes.
    """

    weight: np.ndarray
    bias: np.ndarray
    padding: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4:
            raise ShapeMismatch(f"conv weight must be (c_out, c_in, k_f, k_t), got {self.weight.shape}")
        c_out, _, kf, kt = self.weight.shape
        if kf % 2 == 0 or kt % 2 == 0:
            raise ShapeMismatch(f"kernel sizes must be odd, got {kf}x{kt}")
        if self.bias.shape != (c_out,):
            raise ShapeMismatch(f"conv bias must have shape ({c_out},), got {self.bias.shape}")
        if self.padding is None:
            self.padding = (kf // 2, kt // 2)
        self.padding = (int(self.padding[0]), int(self.padding[1]))

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def n_params(self) -> int:
        return self.weight.size + self.bias.size


def _windows(xp: np.ndarray, kf: int, kt: int) -> np.ndarray:
    # (n, c, f_out, t_out, kf, kt) strided view, no copy
    return np.lib.stride_tricks.sliding_window_view(xp, (kf, kt), axis=(2, 3))


def _correlate(x: np.ndarray, weight: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    kf, kt = weight.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    out = np.einsum("ncftij,ocij->noft", _windows(xp, kf, kt), weight, optimize=True)
    return np.ascontiguousarray(out)


def conv2d_forward(x, p: Conv2dParams) -> np.ndarray:
    x = as_tensor4(x)
    if x.shape[1] != p.c_in:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, conv expects {p.c_in}")
    y = _correlate(x, p.weight, p.padding)
    y += p.bias[None, :, None, None]
    return y


def conv2d_backward(grad_y, x, p: Conv2dParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(grad_x, grad_weight, grad_bias)`` of :func:`conv2d_forward`."""
    grad_y = as_tensor4(grad_y, "grad_y")
    x = as_tensor4(x)
    if x.shape[1] != p.c_in:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, conv expects {p.c_in}")
    n, _, f, t = x.shape
    kf, kt = p.kernel
    pf, pt = p.padding
    expected = (n, p.c_out, f + 2 * pf - kf + 1, t + 2 * pt - kt + 1)
    if grad_y.shape != expected:
        raise ShapeMismatch(f"grad_y has shape {grad_y.shape}, expected {expected}")

    grad_b = grad_y.sum(axis=(0, 2, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    grad_w = np.einsum("ncftij,noft->ocij", _windows(xp, kf, kt), grad_y, optimize=True)

    # full correlation of grad_y with the flipped kernel gives the padded-input gradient
    flipped = np.ascontiguousarray(p.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    grad_xp = _correlate(grad_y, flipped, (kf - 1, kt - 1))
    grad_x = np.ascontiguousarray(grad_xp[:, :, pf:pf + f, pt:pt + t])
    return grad_x, np.ascontiguousarray(grad_w), grad_b


# -- pointwise / classifier kernels ----------------------------------------------


def relu_forward(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_y, x) -> np.ndarray:
    return np.where(x > 0.0, grad_y, 0.0)


def global_average_pool(x) -> np.ndarray:
    """Mean over F and T: (N, C, F, T) -> (N, C)."""
    x = as_tensor4(x)
    return x.mean(axis=(2, 3))


def global_average_pool_backward(grad_y, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, f, t = shape
    g = np.asarray(grad_y, dtype=np.float64).reshape(n, c, 1, 1) / (f * t)
    return np.ascontiguousarray(np.broadcast_to(g, shape))


@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray

    def n_params(self) -> int:
        return self.weight.size + self.bias.size


def dense_forward(x, weight, bias) -> np.ndarray:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"dense input {x.shape} incompatible with weight {weight.shape}")
    return x @ weight.T + bias


def dense_backward(grad_y, x, weight) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_y = np.asarray(grad_y, dtype=np.float64)
    return grad_y @ weight, grad_y.T @ x, grad_y.sum(axis=0)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch {n}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# -- TNS4 serialization ----------------------------------------------------------


def write_tns4(target: str | Path | BinaryIO, x) -> None:
    """Write a rank-4 array as magic ``TNS4``, four little-endian u32 dims, then f64 data."""
    arr = as_tensor4(x)
    payload = _HEADER.pack(TNS4_MAGIC, *arr.shape) + arr.astype("<f8").tobytes()
    if hasattr(target, "write"):
        target.write(payload)
    else:
        Path(target).write_bytes(payload)


def read_tns4(source: str | Path | BinaryIO) -> np.ndarray:
    raw = source.read() if hasattr(source, "read") else Path(source).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("TNS4 blob shorter than its header")
    magic, *dims = _HEADER.unpack_from(raw)
    if magic != TNS4_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TNS4_MAGIC!r}")
    count = int(np.prod(dims))
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise FormatError(f"TNS4 body has {len(body)} bytes, header implies {8 * count}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(dims)


def to_tns4_shape(a) -> np.ndarray:
    """Pad an array of up to 4 axes with leading singleton axes so it can be stored as TNS4."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim > 4:
        raise ShapeMismatch(f"cannot store a {a.ndim}-axis array as TNS4")
    return a.reshape((1,) * (4 - a.ndim) + a.shape)
