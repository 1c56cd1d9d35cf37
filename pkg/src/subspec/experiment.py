"""Small-scale BN vs SSN comparisons on synthetic band-imbalanced audio.

Each synthetic clip is Gaussian noise whose spectrum is shaped band by band
(bands equally spaced on the mel axis) according to its class template, with
a random per-clip, per-band jitter on top.  A static per-band gain, shared by
every clip, then makes some bands far louder than others.  Clips are
featurized as log-Mel spectrograms.

The model is a plain stack of 3x3 conv -> norm -> ReLU blocks followed by
global average pooling and a dense classifier, trained with minibatch SGD.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import DivergedLoss, IndexOutOfRange, InvalidSpec, ShapeMismatch
from .features import AudioClip, FeatureConfig, hz_to_mel, log_mel, profile
from .norm import AffineType, NormKind, NormLayer, SsnConfig
from .tensor import (
    Conv2dParams,
    DenseParams,
    as_tensor4,
    check_bands,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    global_average_pool,
    global_average_pool_backward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)

log = logging.getLogger(__name__)


# -- synthetic data ----------------------------------------------------------------


def _default_templates() -> list[list[float]]:
    # four classes, each boosting one quarter of the mel axis
    return [[4.0 if b == k else 1.0 for b in range(4)] for k in range(4)]


@dataclass
class ExperimentSpec:
    n_classes: int = 4
    templates: list = field(default_factory=_default_templates)  # per class, per band: relative energy
    gains: list = field(default_factory=lambda: [1.0, 0.03, 1.0, 0.03])  # per band amplitude gain
    clip_seconds: float = 0.144
    noise_level: float = 0.5  # std of the per-clip log-energy jitter of each band
    n_train: int = 384
    n_test: int = 384
    seed: int = 0
    feature_profile: str = "synth"

    def validate(self, require_distinct: bool = True) -> None:
        t = np.asarray(self.templates, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != self.n_classes or t.shape[1] < 1:
            raise InvalidSpec(f"templates must be an n_classes x bands matrix, got shape {t.shape}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InvalidSpec("template energies must be finite and non-negative")
        if require_distinct and len({tuple(row) for row in t.tolist()}) != self.n_classes:
            raise InvalidSpec("class templates must be distinct")
        g = np.asarray(self.gains, dtype=np.float64)
        if g.ndim != 1 or g.size < 1 or np.any(g <= 0):
            raise InvalidSpec("gains must be a non-empty list of positive numbers")
        if self.n_classes < 2 or self.n_train < 1 or self.n_test < 1:
            raise InvalidSpec("need n_classes >= 2 and non-empty train/test splits")
        if self.noise_level < 0 or self.clip_seconds <= 0:
            raise InvalidSpec("noise_level must be >= 0 and clip_seconds > 0")

    @property
    def feature_config(self) -> FeatureConfig:
        return profile(self.feature_profile)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {sorted(unknown)}")
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from exc
        spec = cls.from_dict(d)
        spec.validate()
        return spec


@dataclass
class Dataset:
    x_train: np.ndarray  # (N, 1, F, T) log-Mel
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return (1,) + self.x_train.shape[1:]


def band_of_frequency(freqs: np.ndarray, n_bands: int, cfg: FeatureConfig) -> np.ndarray:
    """Index of the equal-mel-width band (between fmin and fmax) holding each frequency."""
    lo, hi = hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax)
    u = (hz_to_mel(np.clip(freqs, cfg.fmin, cfg.fmax)) - lo) / (hi - lo)
    return np.minimum((u * n_bands).astype(np.int64), n_bands - 1)


def synth_clip(spec: ExperimentSpec, label: int, rng: np.random.Generator) -> AudioClip:
    cfg = spec.feature_config
    n = int(round(spec.clip_seconds * cfg.sample_rate))
    templates = np.asarray(spec.templates, dtype=np.float64)
    gains = np.asarray(spec.gains, dtype=np.float64)
    energy = templates[label] * np.exp(spec.noise_level * rng.standard_normal(templates.shape[1]))

    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / cfg.sample_rate)
    amp = np.sqrt(energy[band_of_frequency(freqs, templates.shape[1], cfg)])
    amp *= gains[band_of_frequency(freqs, gains.size, cfg)]
    samples = np.fft.irfft(spectrum * amp, n)
    return AudioClip(samples, cfg.sample_rate, label)


def generate_dataset(spec: ExperimentSpec) -> Dataset:
    """Deterministic train/test log-Mel features for ``spec``.

    Train and test clips come from independent child streams of the seed, so
    the splits never share a clip.
    """
    spec.validate(require_distinct=False)
    cfg = spec.feature_config
    root = np.random.SeedSequence(spec.seed)
    splits = []
    for count, child in zip((spec.n_train, spec.n_test), root.spawn(2)):
        rng = np.random.default_rng(child)
        labels = rng.permutation(np.arange(count) % spec.n_classes)
        feats = [log_mel(synth_clip(spec, int(y), rng), cfg)[0] for y in labels]
        splits.append((np.stack(feats), labels.astype(np.int64)))
    (xtr, ytr), (xte, yte) = splits
    return Dataset(xtr, ytr, xte, yte)


# -- model ----------------------------------------------------------------------------


@dataclass
class ModelSpec:
    norm: NormKind = NormKind.BN
    s: int = 1
    affine: AffineType = AffineType.SUB
    widths: tuple = (8, 24, 32)
    kernel: int = 3
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        self.norm = NormKind(self.norm)
        self.affine = AffineType(self.affine)
        self.widths = tuple(int(w) for w in self.widths)
        if self.norm is NormKind.BN:
            self.s = 1

    @property
    def label(self) -> str:
        if self.norm is NormKind.BN:
            return "BN"
        if self.norm is NormKind.BN_SUB:
            return f"BN-Sub(S={self.s})"
        return f"SSN(S={self.s},{self.affine.value.capitalize()})"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(norm=self.norm.value, affine=self.affine.value, widths=list(self.widths))
        return d


class SmallCNN:
    """conv -> norm -> ReLU blocks, global average pooling, dense classifier."""

    def __init__(self, spec: ModelSpec, input_shape, n_classes: int, rng: np.random.Generator):
        self.spec = spec
        self.input_shape = tuple(int(v) for v in input_shape)
        self.n_classes = n_classes
        f = self.input_shape[2]
        cfg = SsnConfig(spec.s, spec.affine, spec.eps, spec.momentum)
        check_bands(f, spec.s)

        self.convs: list[Conv2dParams] = []
        self.norms: list[NormLayer] = []
        c_in = self.input_shape[1]
        k = spec.kernel
        for width in spec.widths:
            w = rng.standard_normal((width, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))
            self.convs.append(Conv2dParams(w, np.zeros(width)))
            self.norms.append(NormLayer(spec.norm, width, cfg))
            c_in = width
        w = rng.standard_normal((n_classes, c_in)) * np.sqrt(1.0 / c_in)
        self.head = DenseParams(w, np.zeros(n_classes))
        self.input_mean = 0.0
        self.input_std = 1.0
        self._cache = None

    # parameters are exposed as (array, grad-slot) pairs so SGD can update in place
    def parameters(self) -> list[np.ndarray]:
        out = []
        for conv, norm in zip(self.convs, self.norms):
            out += [conv.weight, conv.bias, norm.params.gamma, norm.params.beta]
        return out + [self.head.weight, self.head.bias]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def n_norm_params(self) -> int:
        return sum(n.n_params() for n in self.norms)

    def _standardize(self, x):
        x = as_tensor4(x)
        if x.shape[1:] != self.input_shape[1:]:
            raise ShapeMismatch(f"input {x.shape} does not match model input {self.input_shape}")
        return (x - self.input_mean) / self.input_std

    def forward(self, x, train: bool = False, upto: int | None = None) -> np.ndarray:
        """Logits, or the output of block ``upto`` (after its ReLU) when given."""
        h = self._standardize(x)
        cache = []
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            z = conv2d_forward(h, conv)
            a = norm.forward(z, train=train)
            cache.append((h, a))
            h = relu_forward(a)
            if upto == i:
                return h
        pooled = global_average_pool(h)
        if train:
            self._cache = (cache, h.shape, pooled)
        return dense_forward(pooled, self.head.weight, self.head.bias)

    def backward(self, grad_logits) -> list[np.ndarray]:
        """Gradients in the order of :meth:`parameters`."""
        cache, h_shape, pooled = self._cache
        g_pooled, g_hw, g_hb = dense_backward(grad_logits, pooled, self.head.weight)
        g = global_average_pool_backward(g_pooled, h_shape)
        grads = [g_hw, g_hb]
        for i in reversed(range(len(self.convs))):
            h_in, a = cache[i]
            g = relu_backward(g, a)
            g, g_gamma, g_beta = self.norms[i].backward(g)
            g, g_w, g_b = conv2d_backward(g, h_in, self.convs[i])
            grads = [g_w, g_b, g_gamma, g_beta] + grads
        return grads

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def accuracy(self, x, y) -> float:
        return float(np.mean(self.predict(x) == y))

    # -- checkpoints --

    def layers(self) -> dict:
        out = {}
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out[f"block{i}.conv"] = conv
            out[f"block{i}.norm"] = norm
        out["head"] = self.head
        return out

    def save(self, directory) -> Path:
        pairs = [(f"block{i}.norm", f"block{i + 1}.conv") for i in range(len(self.convs) - 1)]
        extra = {
            "model": self.spec.to_dict(),
            "n_classes": self.n_classes,
            "input_mean": self.input_mean,
            "input_std": self.input_std,
        }
        return checkpoint.save_layers(directory, self.layers(), self.input_shape, pairs, extra)

    @classmethod
    def load(cls, path) -> "SmallCNN":
        manifest, layers = checkpoint.load_layers(path)
        spec = ModelSpec(**manifest["model"])
        model = cls(spec, manifest["input_shape"], manifest["n_classes"], np.random.default_rng(0))
        for i in range(len(spec.widths)):
            model.convs[i] = layers[f"block{i}.conv"]
            model.norms[i] = layers[f"block{i}.norm"]
        model.head = layers["head"]
        model.input_mean = manifest["input_mean"]
        model.input_std = manifest["input_std"]
        return model


# -- training -----------------------------------------------------------------------


@dataclass
class Hyper:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 32
    seed: int = 0


@dataclass
class RunReport:
    model: dict
    seed: int
    n_params: int
    epochs: list = field(default_factory=list)  # {"epoch", "train_loss", "test_accuracy"}
    final_test_accuracy: float = 0.0
    final_train_accuracy: float = 0.0
    wall_time: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)


def train_model(spec: ModelSpec, data: Dataset, hyper: Hyper = Hyper()) -> tuple[SmallCNN, RunReport]:
    """Minibatch SGD on softmax cross-entropy; deterministic given ``hyper.seed``."""
    t0 = time.perf_counter()
    init_seq, shuffle_seq = np.random.SeedSequence(hyper.seed).spawn(2)
    n_classes = int(max(data.y_train.max(), data.y_test.max())) + 1
    model = SmallCNN(spec, data.input_shape, n_classes, np.random.default_rng(init_seq))
    model.input_mean = float(data.x_train.mean())
    model.input_std = float(data.x_train.std()) or 1.0
    shuffle = np.random.default_rng(shuffle_seq)
    params = model.parameters()

    report = RunReport(spec.to_dict(), hyper.seed, model.n_params())
    n = len(data.x_train)
    for epoch in range(hyper.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            logits = model.forward(data.x_train[idx], train=True)
            loss, g = softmax_cross_entropy(logits, data.y_train[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"{spec.label}: non-finite loss at epoch {epoch}")
            for p, grad in zip(params, model.backward(g)):
                p -= hyper.lr * grad
            total += loss * len(idx)
        acc = model.accuracy(data.x_test, data.y_test)
        report.epochs.append({"epoch": epoch, "train_loss": total / n, "test_accuracy": acc})
        log.debug("%s seed=%d epoch=%d loss=%.4f acc=%.3f", spec.label, hyper.seed, epoch, total / n, acc)

    report.final_test_accuracy = model.accuracy(data.x_test, data.y_test)
    report.final_train_accuracy = model.accuracy(data.x_train, data.y_train)
    report.wall_time = time.perf_counter() - t0
    return model, report


# -- ablation sweep --------------------------------------------------------------------


def norm_grid(base: ModelSpec, s_values, affine_types, include_bn=True, include_bn_sub=True) -> list[ModelSpec]:
    """BN, then SSN for every (s, affine), then BN-Sub for every s > 1."""
    def variant(**kw):
        d = base.to_dict()
        d.update(kw)
        return ModelSpec(**d)

    grid = [variant(norm=NormKind.BN, s=1)] if include_bn else []
    for s in s_values:
        for affine in affine_types:
            grid.append(variant(norm=NormKind.SSN, s=int(s), affine=AffineType(affine)))
    if include_bn_sub:
        grid += [variant(norm=NormKind.BN_SUB, s=int(s), affine=AffineType.SUB) for s in s_values if int(s) > 1]
    return grid


def _run_one(args) -> tuple[int, int, float, int]:
    i, spec, data, hyper = args
    _, report = train_model(spec, data, hyper)
    return i, hyper.seed, report.final_test_accuracy, report.n_params


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SUBSPEC_THREADS", "1")))
    except ValueError:
        return 1


def ablation_sweep(
    base: ModelSpec,
    s_values,
    affine_types,
    seeds,
    data: Dataset,
    hyper: Hyper = Hyper(),
    include_bn: bool = True,
    include_bn_sub: bool = True,
    workers: int | None = None,
) -> list[dict]:
    """Mean/std test accuracy for every grid variant over ``seeds`` (paired: same seeds everywhere)."""
    f = data.input_shape[2]
    for s in s_values:
        check_bands(f, int(s))
    grid = norm_grid(base, s_values, affine_types, include_bn, include_bn_sub)
    jobs = [
        (i, spec, data, Hyper(hyper.epochs, hyper.lr, hyper.batch_size, int(seed)))
        for i, spec in enumerate(grid)
        for seed in seeds
    ]
    workers = workers or default_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    rows = []
    for i, spec in enumerate(grid):
        mine = sorted((seed, acc, n_params) for j, seed, acc, n_params in results if j == i)
        accs = np.array([acc for _, acc, _ in mine])
        rows.append({
            "variant": spec.label,
            "norm": spec.norm.value,
            "s": spec.s,
            "affine": spec.affine.value,
            "mean_accuracy": float(accs.mean()),
            "std_accuracy": float(accs.std()),
            "accuracies": accs.tolist(),
            "seeds": [seed for seed, _, _ in mine],
            "n_params": mine[0][2],
        })
    return rows


# -- activation-norm profile --------------------------------------------------------------


@dataclass
class ActivationProfile:
    raw_l1: np.ndarray  # (F,) mean |activation| per frequency bin
    band_mean: np.ndarray  # (F,) raw_l1 averaged over the bin's band
    standardized: np.ndarray  # (F,) raw_l1 standardized across bins
    band_standardized: np.ndarray  # (F,) standardized profile averaged over the bin's band
    s: int

    @property
    def band_values(self) -> np.ndarray:
        """One standardized value per band."""
        return self.band_standardized.reshape(self.s, -1)[:, 0]

    @property
    def band_spread(self) -> float:
        """Std across bands of the band-averaged standardized profile (0: no inter-band deflection)."""
        return float(self.band_values.std())

    @property
    def band_cv(self) -> float:
        """Std across bands of the raw band means, relative to their average."""
        means = self.band_mean.reshape(self.s, -1)[:, 0]
        return float(means.std() / means.mean()) if means.mean() > 0 else 0.0

    def to_csv(self) -> str:
        lines = ["bin,raw_l1,band_mean,standardized,band_standardized"]
        for i in range(self.raw_l1.size):
            lines.append(
                f"{i},{self.raw_l1[i]:.10g},{self.band_mean[i]:.10g},"
                f"{self.standardized[i]:.10g},{self.band_standardized[i]:.10g}"
            )
        return "\n".join(lines) + "\n"


def profile_from_activations(act: np.ndarray, s: int) -> ActivationProfile:
    """Build the profile from block activations shaped (N, C, F, T)."""
    act = as_tensor4(act, "activations")
    f = act.shape[2]
    width = check_bands(f, s)
    raw = np.abs(act).mean(axis=(0, 1, 3))
    band_mean = np.repeat(raw.reshape(s, width).mean(axis=1), width)
    std = raw.std()
    standardized = (raw - raw.mean()) / std if std > 0 else np.zeros_like(raw)
    band_std = np.repeat(standardized.reshape(s, width).mean(axis=1), width)
    return ActivationProfile(raw, band_mean, standardized, band_std, s)


def activation_profile(model: SmallCNN, x, layer_index: int, s_for_averaging: int, batch_size: int = 256):
    """Inference-mode L1 activation profile of block ``layer_index`` over the samples in ``x``."""
    if not 0 <= layer_index < len(model.convs):
        raise IndexOutOfRange(f"layer index {layer_index} outside [0, {len(model.convs)})")
    acts = [model.forward(x[i:i + batch_size], upto=layer_index) for i in range(0, len(x), batch_size)]
    return profile_from_activations(np.concatenate(acts), s_for_averaging)
