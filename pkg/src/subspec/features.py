"""Log-Mel and MFCC features laid out on the F axis of an (N, C, F, T) tensor.

Conventions: periodic Hann window, frames without centering or padding,
HTK mel scale ``2595 * log10(1 + f / 700)`` with peak-one triangular filters,
orthonormal DCT-II for the cepstrum.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy.signal import get_window

from .errors import ClipTooShort, InvalidConfig, WavFormatError


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: float = 30.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 64
    n_mfcc: int = 40  # 0: stop at log-Mel
    fmin: float = 0.0
    fmax: float | None = None  # None: Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2)
        self.validate()

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    def validate(self):
        if self.sample_rate <= 0:
            raise InvalidConfig(f"sample_rate must be positive, got {self.sample_rate}")
        if self.win_length < 1 or self.hop_length < 1:
            raise InvalidConfig("window and hop must each span at least one sample")
        if self.n_fft < self.win_length or self.n_fft & (self.n_fft - 1):
            raise InvalidConfig(f"n_fft={self.n_fft} must be a power of two >= window ({self.win_length} samples)")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise InvalidConfig(f"need 0 <= fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}")
        if self.n_mels < 1 or not 0 <= self.n_mfcc <= self.n_mels:
            raise InvalidConfig(f"need n_mels >= 1 and 0 <= n_mfcc <= n_mels, got {self.n_mels}, {self.n_mfcc}")
        if not self.log_floor > 0:
            raise InvalidConfig("log_floor must be positive")

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            return 0
        return (n_samples - self.win_length) // self.hop_length + 1


PROFILES = {
    # acoustic scenes: 256 mel bins, 2048-sample window / 512 hop at 22.05 kHz
    "asc": FeatureConfig(22050, 2048 / 22.05, 512 / 22.05, 2048, 256, 0),
    # keyword spotting: 40 MFCC from 64 mel bins, 30 ms window / 10 ms hop
    "kws": FeatureConfig(16000, 30.0, 10.0, 512, 64, 40, 20.0),
    # small log-Mel used by the synthetic experiments
    "synth": FeatureConfig(8000, 32.0, 16.0, 256, 16, 0),
}


def profile(name: str, **overrides) -> FeatureConfig:
    try:
        base = PROFILES[name]
    except KeyError:
        raise InvalidConfig(f"unknown feature profile {name!r}; choose from {sorted(PROFILES)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    label: int | None = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.samples.size == 0:
            raise ClipTooShort("audio clip is empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio clip contains non-finite samples")


def _check_rate(clip: AudioClip, cfg: FeatureConfig):
    if clip.sample_rate != cfg.sample_rate:
        raise InvalidConfig(f"clip sample rate {clip.sample_rate} differs from config {cfg.sample_rate}")


def frame_signal(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """(frames, win_length) matrix of un-windowed frames."""
    n = cfg.n_frames(samples.size)
    if n < 1:
        raise ClipTooShort(f"clip of {samples.size} samples is shorter than one window ({cfg.win_length})")
    starts = np.arange(n) * cfg.hop_length
    return samples[starts[:, None] + np.arange(cfg.win_length)[None, :]]


def stft_power(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """``|FFT|^2`` of Hann-windowed frames: (frames, n_fft/2 + 1)."""
    _check_rate(clip, cfg)
    frames = frame_signal(clip.samples, cfg) * get_window("hann", cfg.win_length, fftbins=True)
    spec = sp_fft.rfft(frames, n=cfg.n_fft, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """The ``n_mels + 2`` filter corner frequencies in Hz, equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """(n_mels, n_fft/2 + 1) triangular filters with unit peaks."""
    cfg.validate()
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Log-Mel spectrogram as a (1, 1, n_mels, frames) tensor."""
    mel = mel_filterbank(cfg) @ stft_power(clip, cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))[None, None, :, :]


def mfcc(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """First ``n_mfcc`` orthonormal DCT-II coefficients of the log-Mel rows: (1, 1, n_mfcc, frames)."""
    if cfg.n_mfcc < 1:
        raise InvalidConfig("mfcc requires n_mfcc >= 1")
    lm = log_mel(clip, cfg)[0, 0]
    return sp_fft.dct(lm, type=2, norm="ortho", axis=0)[: cfg.n_mfcc][None, None, :, :]


def extract(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """MFCC when ``cfg.n_mfcc > 0``, otherwise log-Mel."""
    return mfcc(clip, cfg) if cfg.n_mfcc > 0 else log_mel(clip, cfg)


# -- WAV I/O -------------------------------------------------------------------------


def read_wav(path: str | Path, label: int | None = None) -> AudioClip:
    """Read a mono 16-bit PCM WAV file into [-1, 1) floats."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate, label)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())
