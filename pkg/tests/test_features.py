import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subspec.errors import ClipTooShort, InvalidConfig, WavFormatError
from subspec.features import (
    AudioClip,
    FeatureConfig,
    extract,
    frame_signal,
    log_mel,
    mel_filterbank,
    mfcc,
    profile,
    read_wav,
    stft_power,
    write_wav,
)


def dft_power_oracle(frame, n_fft):
    """O(n^2) DFT by definition, zero-padded to n_fft."""
    x = list(frame) + [0.0] * (n_fft - len(frame))
    out = []
    for k in range(n_fft // 2 + 1):
        acc = sum(x[n] * cmath.exp(-2j * math.pi * k * n / n_fft) for n in range(n_fft))
        out.append(abs(acc) ** 2)
    return np.array(out)


def hann_periodic(n):
    return np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)])


def hand_filterbank(n_mels, n_fft, sr, fmin, fmax):
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    hz = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    lo, hi = mel(fmin), mel(fmax)
    corners = [hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        a, b, c = corners[m], corners[m + 1], corners[m + 2]
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            if a < f <= b:
                fb[m, k] = (f - a) / (b - a)
            elif b < f < c:
                fb[m, k] = (c - f) / (c - b)
    return fb


def dct_matrix(n):
    d = np.empty((n, n))
    for k in range(n):
        scale = math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n)
        for i in range(n):
            d[k, i] = scale * math.cos(math.pi * k * (2 * i + 1) / (2 * n))
    return d


class TestConfig:
    def test_profiles(self):
        assert profile("asc").n_mels == 256 and profile("asc").n_mfcc == 0
        kws = profile("kws")
        assert (kws.window_ms, kws.hop_ms, kws.n_mfcc) == (30.0, 10.0, 40)
        assert kws.win_length == 480 and kws.hop_length == 160

    def test_overrides(self):
        assert profile("kws", n_mels=40).n_mels == 40

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_fft": 500},
            {"n_fft": 256},
            {"fmin": 9000.0},
            {"fmax": 9000.0},
            {"n_mfcc": 100},
            {"log_floor": 0.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            FeatureConfig(**kw)

    def test_unknown_profile(self):
        with pytest.raises(InvalidConfig):
            profile("nope")


class TestStft:
    def test_sine_at_bin_center(self):
        cfg = FeatureConfig(16000, 32.0, 16.0, 512, 64, 0)
        k = 37
        t = np.arange(cfg.win_length) / cfg.sample_rate
        clip = AudioClip(0.5 * np.sin(2 * np.pi * k * cfg.sample_rate / cfg.n_fft * t), cfg.sample_rate)
        p = stft_power(clip, cfg)[0]
        assert p.argmax() == k
        # the Hann main lobe spans bins k-1..k+1
        assert p[k - 1:k + 2].sum() / p.sum() > 0.99

    def test_silence(self):
        cfg = profile("kws")
        assert not stft_power(AudioClip(np.zeros(1600), 16000), cfg).any()

    def test_against_dft_oracle(self):
        cfg = FeatureConfig(16000, 4.0, 2.0, 64, 8, 0)
        clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, 16000), 16000)
        got = stft_power(clip, cfg)
        assert got.shape == (cfg.n_frames(16000), 33)
        win = hann_periodic(cfg.win_length)
        for idx in (0, 1, 250, got.shape[0] - 1):
            start = idx * cfg.hop_length
            ref = dft_power_oracle(clip.samples[start:start + cfg.win_length] * win, cfg.n_fft)
            np.testing.assert_allclose(got[idx], ref, rtol=1e-9, atol=1e-9 * ref.max())

    def test_too_short(self):
        with pytest.raises(ClipTooShort):
            stft_power(AudioClip(np.zeros(100), 16000), profile("kws"))

    def test_sample_rate_mismatch(self):
        with pytest.raises(InvalidConfig):
            stft_power(AudioClip(np.zeros(1000), 8000), profile("kws"))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(480, 20000))
    def test_frame_count(self, n):
        cfg = profile("kws")
        assert frame_signal(np.zeros(n), cfg).shape == ((n - 480) // 160 + 1, 480)


class TestFilterbank:
    def test_hand_computed_tiny(self):
        cfg = FeatureConfig(16000, 1.0, 0.5, 16, 4, 0)
        np.testing.assert_allclose(mel_filterbank(cfg), hand_filterbank(4, 16, 16000, 0.0, 8000.0), atol=1e-12)

    @pytest.mark.parametrize("name", ["asc", "kws", "synth"])
    def test_coverage_and_order(self, name):
        cfg = profile(name)
        fb = mel_filterbank(cfg)
        assert fb.shape == (cfg.n_mels, cfg.n_fft // 2 + 1)
        assert (fb >= 0).all()
        freqs = np.arange(fb.shape[1]) * cfg.sample_rate / cfg.n_fft
        inside = (freqs > cfg.fmin) & (freqs < cfg.fmax)
        assert (fb[:, inside].sum(axis=0) > 0).all()
        peaks = freqs[fb.argmax(axis=1)]
        assert (np.diff(peaks) >= 0).all()


class TestLogMel:
    def test_silence(self):
        cfg = profile("kws")
        lm = log_mel(AudioClip(np.zeros(4000), 16000), cfg)
        np.testing.assert_array_equal(lm, np.log(cfg.log_floor))

    def test_shape(self):
        cfg = profile("kws")
        lm = log_mel(AudioClip(np.random.default_rng(1).uniform(-1, 1, 16000), 16000), cfg)
        assert lm.shape == (1, 1, 64, 98)

    def test_scaling_adds_constant(self):
        cfg = profile("kws")
        x = np.random.default_rng(2).uniform(-0.05, 0.05, 8000)
        a = log_mel(AudioClip(x, 16000), cfg)
        b = log_mel(AudioClip(10 * x, 16000), cfg)
        mask = a > np.log(cfg.log_floor)
        np.testing.assert_allclose((b - a)[mask], 2 * np.log(10.0), atol=1e-9)

    def test_low_band_noise(self):
        cfg = profile("kws")
        spec = np.fft.rfft(np.random.default_rng(3).standard_normal(16000))
        spec[spec.size // 2:] = 0
        lm = log_mel(AudioClip(np.fft.irfft(spec, 16000) * 0.01, 16000), cfg)[0, 0]
        assert lm[:32].mean() > lm[32:].mean()

    def test_finite_for_any_input(self):
        cfg = profile("synth")
        x = np.zeros(4000)
        x[100] = 1.0
        assert np.isfinite(log_mel(AudioClip(x, 8000), cfg)).all()


class TestMfcc:
    def test_matches_dct_oracle(self):
        cfg = profile("kws")
        clip = AudioClip(np.random.default_rng(4).uniform(-1, 1, 16000), 16000)
        got = mfcc(clip, cfg)
        assert got.shape == (1, 1, 40, 98)
        ref = dct_matrix(64)[:40] @ log_mel(clip, cfg)[0, 0]
        np.testing.assert_allclose(got[0, 0], ref, atol=1e-9)

    def test_constant_column(self):
        out = mfcc(AudioClip(np.zeros(4000), 16000), profile("kws"))[0, 0]
        assert np.abs(out[0]).min() > 0
        np.testing.assert_allclose(out[1:], 0.0, atol=1e-9)

    def test_round_trip(self):
        cfg = profile("kws", n_mfcc=64)
        clip = AudioClip(np.random.default_rng(5).uniform(-1, 1, 8000), 16000)
        coeffs = mfcc(clip, cfg)[0, 0]
        np.testing.assert_allclose(dct_matrix(64).T @ coeffs, log_mel(clip, cfg)[0, 0], atol=1e-9)

    def test_requires_coefficients(self):
        with pytest.raises(InvalidConfig):
            mfcc(AudioClip(np.zeros(8000), 8000), profile("synth"))

    def test_extract_dispatch(self):
        clip = AudioClip(np.random.default_rng(6).uniform(-1, 1, 4000), 8000)
        assert extract(clip, profile("synth")).shape[2] == profile("synth").n_mels
        clip16 = AudioClip(clip.samples, 16000)
        assert extract(clip16, profile("kws")).shape[2] == 40


class TestWav:
    def test_roundtrip(self, tmp_path):
        x = np.random.default_rng(7).uniform(-0.9, 0.9, 1000)
        write_wav(tmp_path / "a.wav", AudioClip(x, 16000))
        back = read_wav(tmp_path / "a.wav", label=3)
        assert back.sample_rate == 16000 and back.label == 3
        np.testing.assert_allclose(back.samples, x, atol=1 / 32768)

    def test_rejects_stereo(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "s.wav"), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(b"\x00" * 400)
        with pytest.raises(WavFormatError):
            read_wav(tmp_path / "s.wav")

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
        with pytest.raises(WavFormatError):
            read_wav(tmp_path / "g.wav")

    def test_empty_clip(self):
        with pytest.raises(ClipTooShort):
            AudioClip(np.zeros(0), 16000)
