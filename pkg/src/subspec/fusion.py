"""Folding an SSN affine into the convolution that follows it.

For sub-band ``i`` the normalized input ``x_hat`` passes through
``gamma_i * x_hat + beta_i`` (per input channel) and then a convolution
``W, B``.  Both steps are linear, so the pair collapses into one convolution
per sub-band::

    W_i[o, c] = gamma_i[c] * W[o, c]
    B_i[o]    = B[o] + sum_{c, kf, kt} W[o, c, kf, kt] * beta_i[c]

``banded_conv_forward`` applies block ``i`` to the output rows whose kernel
centre lies in band ``i``.  The result equals the unfused pipeline exactly on
rows (and time columns) whose receptive field stays inside one band and away
from the zero-padded border; the rest are reported separately, not hidden.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_layers
from .errors import ManifestParse, ShapeMismatch
from .norm import AffineType, SsnConfig, SsnParams, SsnRunningStats, band_layout
from .norm import _affine, _forward_infer
from .tensor import Conv2dParams, _correlate, as_tensor4, check_bands, conv2d_forward


@dataclass
class FusedBandedConv:
    weights: np.ndarray  # (s, c_out, c_in, k_f, k_t)
    biases: np.ndarray  # (s, c_out)
    padding: tuple[int, int]

    def __post_init__(self):
        if self.weights.ndim != 5 or self.biases.shape != self.weights.shape[:2]:
            raise ShapeMismatch(f"inconsistent fused blocks: {self.weights.shape} vs {self.biases.shape}")
        if self.weights.shape[0] < 1:
            raise ShapeMismatch("fused conv needs at least one band")

    @property
    def s(self) -> int:
        return self.weights.shape[0]

    def block(self, i: int) -> Conv2dParams:
        return Conv2dParams(self.weights[i], self.biases[i], self.padding)


def _repeat_bands(a: np.ndarray, s: int) -> np.ndarray:
    bands = a.shape[1]
    if s % bands:
        raise ShapeMismatch(f"per-band array with {bands} bands cannot be expanded to {s} bands")
    return np.repeat(a, s // bands, axis=1)


def expand_affine(params: SsnParams, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Gamma and beta as (C, s) arrays, replicating a shared affine across bands."""
    return _repeat_bands(params.gamma, s), _repeat_bands(params.beta, s)


def fuse(params: SsnParams, cfg: SsnConfig, conv: Conv2dParams) -> FusedBandedConv:
    """Per-band convolution blocks equivalent to ``affine -> conv``."""
    c = params.gamma.shape[0]
    if conv.c_in != c:
        raise ShapeMismatch(f"conv expects {conv.c_in} input channels, normalization has {c}")
    gamma, beta = expand_affine(params, cfg.s)
    weights = conv.weight[None, :, :, :, :] * gamma.T[:, None, :, None, None]
    kernel_sums = conv.weight.sum(axis=(2, 3))  # (c_out, c_in)
    biases = conv.bias[None, :] + beta.T @ kernel_sums.T
    return FusedBandedConv(weights, biases, conv.padding)


def banded_conv_forward(x_hat, fused: FusedBandedConv) -> np.ndarray:
    """Convolve ``x_hat``, taking each output row from the block of its band."""
    x_hat = as_tensor4(x_hat, "x_hat")
    n, c, f, t = x_hat.shape
    width = check_bands(f, fused.s)
    if c != fused.weights.shape[2]:
        raise ShapeMismatch(f"x_hat has {c} channels, fused conv expects {fused.weights.shape[2]}")
    kf, kt = fused.weights.shape[3:]
    pf, pt = fused.padding
    f_out, t_out = f + 2 * pf - kf + 1, t + 2 * pt - kt + 1
    if f_out != f:
        raise ShapeMismatch("banded convolution requires frequency-preserving padding")
    out = np.empty((n, fused.weights.shape[1], f_out, t_out))
    for i in range(fused.s):
        rows = slice(i * width, (i + 1) * width)
        # full-size convolution per block keeps the arithmetic identical to the unfused path
        y = _correlate(x_hat, fused.weights[i], fused.padding)
        out[:, :, rows, :] = y[:, :, rows, :] + fused.biases[i][None, :, None, None]
    return out


def unfused_forward(x_hat, params: SsnParams, conv: Conv2dParams) -> np.ndarray:
    """Reference path: per-band affine, then the original convolution."""
    return conv2d_forward(_affine(as_tensor4(x_hat, "x_hat"), params), conv)


def interior_mask(shape: tuple[int, int], s: int, kernel: tuple[int, int], padding: tuple[int, int]) -> np.ndarray:
    """(F, T) boolean mask of outputs whose receptive field avoids band boundaries and padding."""
    f, t = shape
    width = check_bands(f, s)
    rf, rt = kernel[0] // 2, kernel[1] // 2
    r = np.arange(f)
    band = r // width
    ok_rows = (band == (r - rf) // width) & (band == (r + rf) // width)
    if padding[0]:
        ok_rows &= (r >= rf) & (r < f - rf)
    col = np.arange(t)
    ok_cols = np.ones(t, dtype=bool)
    if padding[1]:
        ok_cols = (col >= rt) & (col < t - rt)
    return ok_rows[:, None] & ok_cols[None, :]


def _diff_summary(fused_out: np.ndarray, ref_out: np.ndarray, s: int, conv: Conv2dParams) -> dict:
    per_pos = np.abs(fused_out - ref_out).max(axis=(0, 1))
    mask = interior_mask(per_pos.shape, s, conv.kernel, conv.padding)
    return {
        "s": s,
        "kernel": list(conv.kernel),
        "max_abs_diff": float(per_pos.max()),
        "max_abs_diff_interior": float(per_pos[mask].max()) if mask.any() else 0.0,
        "max_abs_diff_boundary": float(per_pos[~mask].max()) if (~mask).any() else 0.0,
        "interior_rows": [int(r) for r in np.flatnonzero(mask.any(axis=1))],
        "boundary_rows": [int(r) for r in np.flatnonzero(~mask.any(axis=1))],
    }


def compare_paths(x_hat, params: SsnParams, cfg: SsnConfig, conv: Conv2dParams) -> dict:
    """Max-abs differences between the fused and unfused paths, interior vs boundary."""
    x_hat = as_tensor4(x_hat, "x_hat")
    fused = banded_conv_forward(x_hat, fuse(params, cfg, conv))
    return _diff_summary(fused, unfused_forward(x_hat, params, conv), cfg.s, conv)


def fold_running_stats(
    params: SsnParams, stats: SsnRunningStats, cfg: SsnConfig
) -> tuple[SsnParams, SsnConfig]:
    """Absorb ``(mean, var, eps)`` into gamma/beta so the layer acts on raw inputs.

    The returned affine is per band (``s`` = the finer of the statistics and
    affine layouts) and satisfies ``affine(x) == inference_forward(x)``.
    """
    s = max(stats.running_mean.shape[1], params.gamma.shape[1])
    gamma, beta = expand_affine(params, s)
    mean, var = _repeat_bands(stats.running_mean, s), _repeat_bands(stats.running_var, s)
    scale = gamma / np.sqrt(var + cfg.eps)
    return SsnParams(scale, beta - scale * mean), replace(cfg, s=s, affine=AffineType.SUB)


# -- checkpoint-level report -------------------------------------------------------


def fusion_report(manifest_path: str | Path, seed: int = 0, fold_stats: bool = False, batch: int = 2) -> dict:
    """Check every (normalization, next conv) pair of a checkpoint.

    The pairs are treated as the linear segment norm-affine -> conv; any
    nonlinearity between them in the trained model is deliberately ignored,
    since the check concerns the parameter merge.  Inputs are random
    normalized activations (or raw activations with ``fold_stats``) drawn
    from ``seed``, with ``F`` taken from the checkpoint's input shape.
    """
    manifest_path = Path(manifest_path)
    manifest, layers = load_layers(manifest_path)
    try:
        pairs = manifest["pairs"]
        f, t = manifest["input_shape"][2], manifest["input_shape"][3]
    except (KeyError, IndexError, TypeError) as exc:
        raise ManifestParse(f"{manifest_path}: missing 'pairs' or 'input_shape'") from exc

    rng = np.random.default_rng(seed)
    results = []
    for norm_name, conv_name in pairs:
        if norm_name not in layers or conv_name not in layers:
            raise ManifestParse(f"pair ({norm_name}, {conv_name}) references an unknown layer")
        layer, conv = layers[norm_name], layers[conv_name]
        stat_bands, _ = band_layout(layer.kind, layer.cfg)
        s = max(stat_bands, layer.affine_bands)
        x = rng.standard_normal((batch, conv.c_in, f, t))
        cfg = replace(layer.cfg, s=s)
        if fold_stats:
            params, cfg = fold_running_stats(layer.params, layer.stats, cfg)
            fused = banded_conv_forward(x, fuse(params, cfg, conv))
            ref = conv2d_forward(
                _forward_infer(x, layer.params, layer.stats, layer.cfg, stat_bands, layer.affine_bands), conv
            )
            entry = _diff_summary(fused, ref, s, conv)
        else:
            entry = compare_paths(x, layer.params, cfg, conv)
        results.append({"norm": norm_name, "conv": conv_name, "kind": layer.kind.value, **entry})
    return {
        "checkpoint": str(manifest_path),
        "seed": seed,
        "fold_stats": fold_stats,
        "pairs": results,
        "max_abs_diff_interior": max((r["max_abs_diff_interior"] for r in results), default=0.0),
        "max_abs_diff": max((r["max_abs_diff"] for r in results), default=0.0),
    }


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2)
