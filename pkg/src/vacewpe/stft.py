"""STFT analysis and weighted overlap-add synthesis.

Signals are stored sample-major, ``(N, D)``; spectrograms are
``(T frames, F bins, D channels)``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

LOG_POWER_FLOOR = 1e-10


def _readonly(arr):
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Waveform:
    """Time-domain multi-channel buffer, ``samples`` shaped (N, D)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"waveform must be 1-D or 2-D, got shape {s.shape}")
        object.__setattr__(self, "samples", _readonly(s))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    def channel(self, d: int) -> "Waveform":
        return Waveform(self.samples[:, d], self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    hop: int = 256
    fft_size: Optional[int] = None
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.window_len)
        if self.window_len <= 0 or self.hop <= 0:
            raise ValueError("window_len and hop must be positive")
        if self.window_len % self.hop:
            raise ValueError(f"hop {self.hop} must divide window_len {self.window_len}")
        if self.fft_size < self.window_len:
            raise ValueError("fft_size must be >= window_len")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_len - self.hop

    @property
    def window(self) -> np.ndarray:
        # periodic Hann
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)

    @classmethod
    def from_ms(cls, window_ms=64.0, hop_ms=16.0, sample_rate=16000):
        return cls(int(round(window_ms * sample_rate / 1000)),
                   int(round(hop_ms * sample_rate / 1000)), sample_rate=sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT tensor ``data`` of shape (T, F, D).

    ``num_samples`` remembers the analysed signal length so that
    :func:`istft` can return exactly that many samples.
    """

    data: np.ndarray
    config: StftConfig
    num_samples: Optional[int] = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise ValueError(f"spectrogram must be (T, F, D), got shape {d.shape}")
        if d.shape[1] != self.config.num_bins:
            raise ValueError(f"expected {self.config.num_bins} bins, got {d.shape[1]}")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data) -> "Spectrogram":
        return Spectrogram(data, self.config, self.num_samples)


def num_frames(num_samples: int, cfg: StftConfig) -> int:
    padded = num_samples + 2 * cfg.pad
    return (padded - cfg.window_len) // cfg.hop + 1


def stft(wave: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Analyse ``wave`` with a periodic Hann window after zero-padding both ends."""
    x = wave.samples
    if x.shape[0] < cfg.window_len:
        raise ValueError(f"signal has {x.shape[0]} samples, need at least {cfg.window_len}")
    if not np.isfinite(x).all():
        raise ValueError("signal contains non-finite samples")
    padded = np.pad(x, ((cfg.pad, cfg.pad), (0, 0)))
    T = num_frames(x.shape[0], cfg)
    # (T, D, window_len) strided view, no copy
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.window_len, axis=0)[::cfg.hop][:T]
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=-1)
    return Spectrogram(spec.transpose(0, 2, 1), cfg, x.shape[0])


def istft(spec: Spectrogram, cfg: Optional[StftConfig] = None,
          num_samples: Optional[int] = None) -> Waveform:
    """Weighted overlap-add synthesis normalised by the summed squared window.

    Wherever the analysis windows overlap fully this is the COLA-normalised
    Hann synthesis; at the padded edges the window-sum normalisation keeps
    the reconstruction exact.
    """
    cfg = cfg or spec.config
    if cfg != spec.config:
        raise ValueError("spectrogram was produced with a different StftConfig")
    data = spec.data
    T, F, D = data.shape
    if F != cfg.num_bins:
        raise ValueError(f"expected {cfg.num_bins} bins, got {F}")
    length = num_samples or spec.num_samples or (T - 1) * cfg.hop + cfg.window_len - 2 * cfg.pad
    frames = np.fft.irfft(data.transpose(0, 2, 1), n=cfg.fft_size, axis=-1)[..., :cfg.window_len]
    frames = frames * cfg.window
    total = (T - 1) * cfg.hop + cfg.window_len
    out = np.zeros((total, D))
    wsum = np.zeros(total)
    w2 = cfg.window ** 2
    for t in range(T):
        s = t * cfg.hop
        out[s:s + cfg.window_len] += frames[t].T
        wsum[s:s + cfg.window_len] += w2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz, None]
    out[~nz] = 0.0
    y = out[cfg.pad:cfg.pad + length]
    if y.shape[0] < length:
        y = np.pad(y, ((0, length - y.shape[0]), (0, 0)))
    return Waveform(y, cfg.sample_rate)


def log_power_spectra(spec) -> np.ndarray:
    """Elementwise ``ln(|X|^2 + 1e-10)``."""
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    return np.log(np.abs(data) ** 2 + LOG_POWER_FLOOR)


def spectral_energy_gain(cfg: StftConfig) -> float:
    """Ratio of two-sided STFT energy to time-domain energy for stationary input.

    Equals ``fft_size * sum(window**2) / hop`` (1536 for the default config).
    """
    return cfg.fft_size * float(np.sum(cfg.window ** 2)) / cfg.hop


def two_sided_energy(spec: Spectrogram) -> float:
    """Sum of |X|^2 over frames and the full (mirrored) set of FFT bins."""
    p = np.abs(spec.data) ** 2
    n = spec.config.fft_size
    weights = np.full(p.shape[1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(p * weights[None, :, None]))
