"""Batch Normalization and SubSpectral Normalization on (N, C, F, T) tensors.

SubSpectral Normalization (SSN) cuts the frequency axis into ``s`` equal
sub-bands and computes batch statistics separately for every
(channel, sub-band) pair.  The learnable scale/shift is either shared across
the sub-bands of a channel (``AffineType.ALL``) or separate for each sub-band
(``AffineType.SUB``).  With ``s == 1`` both variants reduce to plain BN.

Every layer variant here is described by two band counts:

* ``stat_bands``: how many sub-bands get their own mean/variance,
* ``affine_bands``: how many sub-bands get their own gamma/beta.

=========  ==========  ============
variant    stat_bands  affine_bands
=========  ==========  ============
BN         1           1
SSN-All    s           1
SSN-Sub    s           s
BN-Sub     1           s
=========  ==========  ============

so a single normalize/affine kernel pair serves all four.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import InvalidConfig, ShapeMismatch
from .tensor import as_tensor4, check_bands, split_bands


class AffineType(str, Enum):
    ALL = "all"
    SUB = "sub"


class NormKind(str, Enum):
    BN = "bn"
    SSN = "ssn"
    BN_SUB = "bnsub"


@dataclass(frozen=True)
class SsnConfig:
    s: int = 1
    affine: AffineType = AffineType.SUB
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "affine", AffineType(self.affine))
        if int(self.s) != self.s or self.s < 1:
            raise InvalidConfig(f"sub-band count must be a positive integer, got {self.s}")
        if not self.eps > 0:
            raise InvalidConfig(f"eps must be positive, got {self.eps}")
        if not 0 < self.momentum <= 1:
            raise InvalidConfig(f"momentum must lie in (0, 1], got {self.momentum}")

    @property
    def affine_bands(self) -> int:
        return self.s if self.affine is AffineType.SUB else 1


def band_layout(kind: NormKind | str, cfg: SsnConfig) -> tuple[int, int]:
    """``(stat_bands, affine_bands)`` for a layer variant."""
    kind = NormKind(kind)
    if kind is NormKind.SSN:
        return cfg.s, cfg.affine_bands
    if kind is NormKind.BN_SUB:
        return 1, cfg.s
    return 1, 1


@dataclass
class SsnParams:
    gamma: np.ndarray  # (C, affine_bands)
    beta: np.ndarray

    @classmethod
    def init(cls, c: int, affine_bands: int) -> "SsnParams":
        return cls(np.ones((c, affine_bands)), np.zeros((c, affine_bands)))

    def n_params(self) -> int:
        return self.gamma.size + self.beta.size


@dataclass
class SsnRunningStats:
    running_mean: np.ndarray  # (C, stat_bands)
    running_var: np.ndarray
    batches_seen: int = 0

    @classmethod
    def init(cls, c: int, stat_bands: int) -> "SsnRunningStats":
        return cls(np.zeros((c, stat_bands)), np.ones((c, stat_bands)), 0)


@dataclass
class SsnCache:
    x_hat: np.ndarray  # pre-affine normalized activations, input shape
    mean: np.ndarray  # (C, stat_bands)
    inv_std: np.ndarray  # (C, stat_bands)
    shape: tuple[int, int, int, int]
    stat_bands: int


# -- kernels ---------------------------------------------------------------------


def _check_layer(x: np.ndarray, params: SsnParams, stats: SsnRunningStats, stat_bands: int, affine_bands: int):
    c, f = x.shape[1], x.shape[2]
    check_bands(f, stat_bands)
    check_bands(f, affine_bands)
    if params.gamma.shape != (c, affine_bands) or params.beta.shape != (c, affine_bands):
        raise ShapeMismatch(
            f"gamma/beta must be ({c}, {affine_bands}), got {params.gamma.shape} and {params.beta.shape}"
        )
    if stats.running_mean.shape != (c, stat_bands) or stats.running_var.shape != (c, stat_bands):
        raise ShapeMismatch(f"running stats must be ({c}, {stat_bands}), got {stats.running_mean.shape}")


def _bcast(a: np.ndarray) -> np.ndarray:
    return a[None, :, :, None, None]


def _normalize(x: np.ndarray, mean: np.ndarray, inv_std: np.ndarray, stat_bands: int) -> np.ndarray:
    xb = split_bands(x, stat_bands)
    return ((xb - _bcast(mean)) * _bcast(inv_std)).reshape(x.shape)


def _affine(x_hat: np.ndarray, params: SsnParams) -> np.ndarray:
    xb = split_bands(x_hat, params.gamma.shape[1])
    return (xb * _bcast(params.gamma) + _bcast(params.beta)).reshape(x_hat.shape)


def _forward_train(x, params, stats, cfg, stat_bands, affine_bands):
    x = as_tensor4(x)
    _check_layer(x, params, stats, stat_bands, affine_bands)
    xb = split_bands(x, stat_bands)
    mean = xb.mean(axis=(0, 3, 4))
    var = np.square(xb - _bcast(mean)).mean(axis=(0, 3, 4))
    inv_std = 1.0 / np.sqrt(var + cfg.eps)
    x_hat = _normalize(x, mean, inv_std, stat_bands)
    y = _affine(x_hat, params)
    m = cfg.momentum
    updated = SsnRunningStats(
        (1.0 - m) * stats.running_mean + m * mean,
        (1.0 - m) * stats.running_var + m * var,
        stats.batches_seen + 1,
    )
    return y, SsnCache(x_hat, mean, inv_std, x.shape, stat_bands), updated


def _forward_infer(x, params, stats, cfg, stat_bands, affine_bands):
    x = as_tensor4(x)
    _check_layer(x, params, stats, stat_bands, affine_bands)
    if stats.batches_seen < 1:
        warnings.warn("inference with running statistics that never saw a training batch", stacklevel=3)
    inv_std = 1.0 / np.sqrt(stats.running_var + cfg.eps)
    return _affine(_normalize(x, stats.running_mean, inv_std, stat_bands), params)


def ssn_forward_train(x, params: SsnParams, stats: SsnRunningStats, cfg: SsnConfig):
    """Training-mode SSN: batch statistics per (channel, sub-band).

    Returns ``(y, cache, updated_stats)``; ``stats`` itself is not mutated.
    """
    return _forward_train(x, params, stats, cfg, cfg.s, cfg.affine_bands)


def ssn_forward_infer(x, params: SsnParams, stats: SsnRunningStats, cfg: SsnConfig) -> np.ndarray:
    """Inference-mode SSN using the running statistics."""
    return _forward_infer(x, params, stats, cfg, cfg.s, cfg.affine_bands)


def ssn_backward(grad_y, cache: SsnCache, params: SsnParams, cfg: SsnConfig | None = None):
    """Exact gradients ``(grad_x, grad_gamma, grad_beta)`` of the training-mode forward.

    The batch mean and variance are differentiated as functions of ``x``.
    Works for every variant: the statistics layout comes from ``cache`` and
    the affine layout from ``params``.  ``cfg`` is accepted for symmetry with
    the forward functions.
    """
    grad_y = as_tensor4(grad_y, "grad_y")
    if grad_y.shape != cache.shape:
        raise ShapeMismatch(f"grad_y has shape {grad_y.shape}, cache expects {cache.shape}")
    affine_bands = params.gamma.shape[1]

    gb = split_bands(grad_y, affine_bands)
    hb = split_bands(cache.x_hat, affine_bands)
    grad_gamma = (gb * hb).sum(axis=(0, 3, 4))
    grad_beta = gb.sum(axis=(0, 3, 4))
    grad_xhat = (gb * _bcast(params.gamma)).reshape(cache.shape)

    k = cache.stat_bands
    n, _, f, t = cache.shape
    count = n * (f // k) * t
    dh = split_bands(grad_xhat, k)
    hs = split_bands(cache.x_hat, k)
    sum_dh = dh.sum(axis=(0, 3, 4))
    sum_dh_h = (dh * hs).sum(axis=(0, 3, 4))
    grad_x = _bcast(cache.inv_std) * (dh - _bcast(sum_dh) / count - hs * _bcast(sum_dh_h) / count)
    return grad_x.reshape(cache.shape), grad_gamma, grad_beta


def bn_sub_forward_train(x, params: SsnParams, stats: SsnRunningStats, cfg: SsnConfig):
    """Whole-channel batch statistics with a per-sub-band affine (``cfg.s`` bands).

    ``cfg.affine`` is ignored: the affine is always per band.
    """
    return _forward_train(x, params, stats, cfg, 1, cfg.s)


def bn_sub_forward_infer(x, params: SsnParams, stats: SsnRunningStats, cfg: SsnConfig) -> np.ndarray:
    return _forward_infer(x, params, stats, cfg, 1, cfg.s)


bn_sub_backward = ssn_backward


def param_count(cfg: SsnConfig, c: int, kind: NormKind | str = NormKind.SSN) -> int:
    """Learnable parameters (gamma and beta) of one layer; running statistics excluded."""
    _, affine_bands = band_layout(kind, cfg)
    return 2 * c * affine_bands


# -- stateful wrapper used by the models -------------------------------------------


class NormLayer:
    """A normalization layer holding its own parameters and running statistics."""

    def __init__(self, kind: NormKind | str, channels: int, cfg: SsnConfig | None = None):
        self.kind = NormKind(kind)
        cfg = cfg or SsnConfig()
        if self.kind is NormKind.BN:
            cfg = replace(cfg, s=1)
        self.cfg = cfg
        self.channels = channels
        self.stat_bands, self.affine_bands = band_layout(self.kind, cfg)
        self.params = SsnParams.init(channels, self.affine_bands)
        self.stats = SsnRunningStats.init(channels, self.stat_bands)
        self._cache: SsnCache | None = None

    def forward(self, x, train: bool = True) -> np.ndarray:
        if train:
            y, self._cache, self.stats = _forward_train(
                x, self.params, self.stats, self.cfg, self.stat_bands, self.affine_bands
            )
            return y
        return _forward_infer(x, self.params, self.stats, self.cfg, self.stat_bands, self.affine_bands)

    def backward(self, grad_y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called before a training-mode forward")
        return ssn_backward(grad_y, self._cache, self.params, self.cfg)

    def n_params(self) -> int:
        return self.params.n_params()

    def __repr__(self):
        return f"NormLayer({self.kind.value}, c={self.channels}, s={self.cfg.s}, affine={self.cfg.affine.value})"
