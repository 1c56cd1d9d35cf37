"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .norm import NormKind, SsnConfig, SsnParams, SsnRunningStats, band_layout, ssn_backward
from .norm import _forward_train


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = f()
        flat_x[i] = orig - h
        f_minus = f()
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||)`` in the 2-norm; 0.0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class GradCheckResult:
    kind: str
    s: int
    affine: str
    shape: tuple
    err_x: float
    err_gamma: float
    err_beta: float

    @property
    def max_error(self) -> float:
        return max(self.err_x, self.err_gamma, self.err_beta)


def check_norm_gradients(
    rng: np.random.Generator,
    kind: NormKind | str,
    cfg: SsnConfig,
    shape: tuple[int, int, int, int],
    h: float = 1e-5,
) -> GradCheckResult:
    """Compare the analytic norm-layer backward against finite differences.

    The scalar loss is ``sum(y * r)`` for a fixed random ``r``, so the
    upstream gradient is ``r``.  Gamma and beta are randomized away from
    their identity initialization.
    """
    kind = NormKind(kind)
    stat_bands, affine_bands = band_layout(kind, cfg)
    n, c, f, t = shape
    x = rng.standard_normal(shape) * rng.uniform(0.5, 3.0) + rng.uniform(-2.0, 2.0)
    params = SsnParams(rng.uniform(0.5, 1.5, (c, affine_bands)), rng.standard_normal((c, affine_bands)))
    stats = SsnRunningStats.init(c, stat_bands)
    r = rng.standard_normal(shape)

    def loss():
        y, _, _ = _forward_train(x, params, stats, cfg, stat_bands, affine_bands)
        return float(np.sum(y * r))

    _, cache, _ = _forward_train(x, params, stats, cfg, stat_bands, affine_bands)
    gx, gg, gb = ssn_backward(r, cache, params, cfg)
    return GradCheckResult(
        kind.value,
        cfg.s,
        cfg.affine.value,
        shape,
        relative_error(gx, numerical_gradient(loss, x, h)),
        relative_error(gg, numerical_gradient(loss, params.gamma, h)),
        relative_error(gb, numerical_gradient(loss, params.beta, h)),
    )


def random_shape(rng: np.random.Generator, s: int, max_n: int = 3, max_c: int = 3, max_t: int = 4) -> tuple:
    """A small random (N, C, F, T) shape whose F is divisible by ``s``."""
    n = int(rng.integers(2, max_n + 1))
    c = int(rng.integers(1, max_c + 1))
    f = s * int(rng.integers(1, 3))
    t = int(rng.integers(2, max_t + 1))
    return n, c, f, t
