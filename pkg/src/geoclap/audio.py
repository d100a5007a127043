"""Audio ingestion and mel-spectrogram features.

Conventions fixed here (and relied on by the tests): HTK mel scale over
0 Hz..Nyquist, periodic Hann window, centered STFT with reflect padding
of window/2 on each side, power spectrum, log floor 1e-10. Long clips are
handled by a single window: random offset in training, center at eval.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, SampleRateMismatchError, UnsupportedFormatError

AUDIO_FEATURE_DIM = 64
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class WaveformClip:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-d array")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if np.max(np.abs(samples)) > 1.0 + 1e-6:
            raise ValueError("samples exceed [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 64
    sample_rate_hz: int = 48000
    hop_length: int = 480
    fft_window: int = 1024
    max_length_s: int = 10

    def __post_init__(self):
        if self.fft_window < self.hop_length:
            raise ConfigError("fft_window must be >= hop_length")
        if self.n_mels >= self.fft_window // 2:
            raise ConfigError("n_mels must be < fft_window/2")
        if min(self.n_mels, self.sample_rate_hz, self.hop_length, self.max_length_s) <= 0:
            raise ConfigError("all mel parameters must be positive")


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-compressed mel energies, one row per STFT frame."""

    frames: np.ndarray  # T x n_mels
    config: MelConfig

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.config.n_mels:
            raise ValueError(f"expected T x {self.config.n_mels} frames, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite entries")
        object.__setattr__(self, "frames", frames)


def hz_to_mel(f_hz):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def load_wav(path) -> WaveformClip:
    """Read a RIFF/WAVE file (16-bit PCM or 32-bit float, mono or stereo).

    Multi-channel audio is collapsed by channel mean; 16-bit samples are
    scaled by 1/32768.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample dtype {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return WaveformClip(samples, int(rate))


def save_wav(path, clip: WaveformClip) -> None:
    """Write a clip as 16-bit PCM (test fixtures and synthetic media)."""
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sample_rate_hz, pcm)


def crop_or_pad(
    clip: WaveformClip,
    max_length_s: int,
    mode: str = "eval_center",
    rng: np.random.Generator | None = None,
) -> WaveformClip:
    """Fix the clip length to exactly max_length_s seconds.

    Short clips are zero-padded symmetrically; long clips take one window,
    at a seeded random offset in "train_random" mode and dead center in
    "eval_center" mode.
    """
    if mode not in ("train_random", "eval_center"):
        raise ValueError(f"unknown mode {mode!r}")
    target = int(max_length_s * clip.sample_rate_hz)
    n = len(clip)
    if n == target:
        return clip
    if n < target:
        pad = target - n
        left = pad // 2
        out = np.zeros(target)
        out[left:left + n] = clip.samples
        return WaveformClip(out, clip.sample_rate_hz)
    if mode == "train_random":
        if rng is None:
            raise ValueError("train_random mode requires a seeded generator")
        offset = int(rng.integers(0, n - target + 1))
    else:
        offset = (n - target) // 2
    return WaveformClip(clip.samples[offset:offset + target], clip.sample_rate_hz)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular filters with centers equally spaced on the mel scale
    between 0 Hz and Nyquist; shape n_mels x (fft_window/2 + 1)."""
    n_bins = config.fft_window // 2 + 1
    bin_hz = np.arange(n_bins) * config.sample_rate_hz / config.fft_window
    mel_points = np.linspace(0.0, float(hz_to_mel(config.sample_rate_hz / 2)), config.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        lower, center, upper = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_hz - lower) / (center - lower)
        falling = (upper - bin_hz) / (upper - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(bank.max(axis=1) <= 0.0):
        raise ConfigError("n_mels too large for the FFT resolution: empty filter row")
    return bank


def filterbank_centers_hz(config: MelConfig) -> np.ndarray:
    """Center frequency of each mel filter, in Hz."""
    mel_points = np.linspace(0.0, float(hz_to_mel(config.sample_rate_hz / 2)), config.n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def mel_spectrogram(clip: WaveformClip, config: MelConfig) -> MelSpectrogram:
    """Centered STFT -> power spectrum -> mel projection -> log(x + 1e-10).

    Frame count is 1 + floor(L / hop) for an L-sample clip.
    """
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise SampleRateMismatchError(
            f"clip at {clip.sample_rate_hz} Hz, config expects {config.sample_rate_hz} Hz"
        )
    pad = config.fft_window // 2
    x = clip.samples
    if len(x) > 1:
        padded = np.pad(x, pad, mode="reflect")
    else:
        padded = np.pad(x, pad, mode="edge")
    n_frames = 1 + len(x) // config.hop_length
    starts = np.arange(n_frames) * config.hop_length
    idx = starts[:, None] + np.arange(config.fft_window)[None, :]
    frames = padded[idx] * _hann_periodic(config.fft_window)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = power @ mel_filterbank(config).T
    return MelSpectrogram(np.log(mel + LOG_FLOOR), config)


def resample_linear(clip: WaveformClip, target_hz: int) -> WaveformClip:
    """Linear-interpolation resampling; duration preserved within one sample."""
    if target_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_hz == clip.sample_rate_hz:
        return clip
    n_out = max(1, int(round(len(clip) * target_hz / clip.sample_rate_hz)))
    src_positions = np.arange(n_out) * (clip.sample_rate_hz / target_hz)
    samples = np.interp(src_positions, np.arange(len(clip)), clip.samples)
    return WaveformClip(samples, target_hz)


def audio_feature_vector(spec: MelSpectrogram) -> np.ndarray:
    """Per-band time averages standardized over the bands.

    Constant spectrograms (e.g. silence) map to the zero vector.
    """
    means = spec.frames.mean(axis=0)
    sd = float(means.std())
    if sd < 1e-12:
        return np.zeros(spec.config.n_mels)
    return (means - means.mean()) / sd


def featurize_clip(
    clip: WaveformClip,
    config: MelConfig | None = None,
    mode: str = "eval_center",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Waveform -> fixed-length window -> mel -> 64-d feature vector.

    Resamples first when the clip rate differs from the config rate.
    """
    config = config or MelConfig()
    if clip.sample_rate_hz != config.sample_rate_hz:
        clip = resample_linear(clip, config.sample_rate_hz)
    clip = crop_or_pad(clip, config.max_length_s, mode=mode, rng=rng)
    return audio_feature_vector(mel_spectrogram(clip, config))
