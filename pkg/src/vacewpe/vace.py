"""Virtual acoustic channel expansion around dual-channel WPE.

A virtual second channel is generated from the single observed channel,
the pair is dereverberated jointly, and only the actual channel's output is
returned. Trained expansion networks are outside this package; the
generators below are deterministic stand-ins (a scaled copy, a late-
reverberation oracle, a frame-delayed copy) plus a hook for externally
produced virtual signals.
"""

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import psd as psd_mod
from .stft import Spectrogram, StftConfig, Waveform, istft, stft
from .wpe import WpeConfig, psd_context_avg, wpe_iterative, wpe_with_psd

log = logging.getLogger(__name__)

MAG_FLOOR = 1e-10


@dataclass(frozen=True)
class ScaledCopy:
    gain: float = 1.0


@dataclass(frozen=True)
class LateOracle:
    late_ref: Waveform
    gain: float = 1.0


@dataclass(frozen=True)
class ExternalSignal:
    path: Union[str, Path]
    tolerance: int = 256


@dataclass(frozen=True)
class FrameDelay:
    frames: int = 1
    gain: float = 1.0
    hop: int = 256


VirtualGenerator = Union[ScaledCopy, LateOracle, ExternalSignal, FrameDelay]

PSD_MODES = ("averaged", "simplified")


@dataclass(frozen=True)
class VaceConfig:
    wpe: WpeConfig = field(default_factory=WpeConfig)
    psd_mode: str = "simplified"
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.psd_mode not in PSD_MODES:
            raise ValueError(f"psd_mode must be one of {PSD_MODES}, got {self.psd_mode!r}")


def _check_gain(gain):
    if not (np.isfinite(gain) and gain > 0):
        raise ValueError(f"virtual-channel gain must be finite and > 0, got {gain}")


def generate_virtual(x1: Waveform, gen: VirtualGenerator) -> Waveform:
    """Produce the virtual channel (mono, same length as ``x1``)."""
    x = x1.samples[:, :1]
    if not np.isfinite(x).all():
        raise ValueError("observed signal contains non-finite samples")
    n = x.shape[0]
    if isinstance(gen, ScaledCopy):
        _check_gain(gen.gain)
        v = gen.gain * x
    elif isinstance(gen, LateOracle):
        _check_gain(gen.gain)
        late = gen.late_ref.samples[:, :1]
        if late.shape[0] != n:
            raise ValueError(f"late reference has {late.shape[0]} samples, expected {n}")
        v = gen.gain * late
    elif isinstance(gen, FrameDelay):
        _check_gain(gen.gain)
        shift = gen.frames * gen.hop
        v = np.zeros_like(x)
        if shift >= 0:
            v[shift:] = x[:n - shift] if shift < n else 0.0
        else:
            v[:n + shift] = x[-shift:]
        v = gen.gain * v
    elif isinstance(gen, ExternalSignal):
        from .audio_io import read_wav

        ext = read_wav(gen.path)
        if ext.sample_rate != x1.sample_rate:
            raise ValueError(f"{gen.path}: sample rate {ext.sample_rate} != {x1.sample_rate}")
        v = ext.samples[:, :1]
        # tolerate off-by-up-to-one-hop lengths from external STFT pipelines
        if abs(v.shape[0] - n) > gen.tolerance:
            raise ValueError(f"{gen.path}: length {v.shape[0]} differs from {n} by more than one hop")
        v = v[:n] if v.shape[0] >= n else np.pad(v, ((0, n - v.shape[0]), (0, 0)))
    else:
        raise TypeError(f"unknown generator {gen!r}")
    return Waveform(v, x1.sample_rate)


def psd_channels(mode: str) -> Optional[Sequence[int]]:
    return [0] if mode == "simplified" else None


def initial_psd(X2, cfg: VaceConfig) -> np.ndarray:
    """PSD used in the first WPE pass for the two-channel stack ``X2``."""
    return psd_context_avg(X2, cfg.wpe.context, cfg.wpe.psd_floor, psd_channels(cfg.psd_mode))


def _looks_duplicate(x, v) -> bool:
    a, b = x[:, 0], v[:, 0]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return False
    return abs(np.dot(a, b)) / (na * nb) > 1 - 1e-9


def vace_spectrogram(x1: Waveform, gen: VirtualGenerator, cfg: VaceConfig = VaceConfig()) -> Spectrogram:
    v = generate_virtual(x1, gen)
    if _looks_duplicate(x1.samples, v.samples):
        warnings.warn("virtual channel is proportional to the observation; the correlation "
                      "matrix is rank deficient and relies on diagonal loading", RuntimeWarning)
    pair = Waveform(np.concatenate([x1.samples[:, :1], v.samples], axis=1), x1.sample_rate)
    return stft(pair, cfg.stft)


def vace_wpe(x1: Waveform, gen: VirtualGenerator, cfg: VaceConfig = VaceConfig(),
             psd_estimates=None, return_spectrogram: bool = False):
    """Dual-channel WPE on ``[x1, virtual]``; returns the actual channel only.

    Without ``psd_estimates`` the PSD is refined iteratively from the
    output (both channels when ``psd_mode="averaged"``, the actual channel
    when ``"simplified"``). With estimates (per-channel linear power,
    (T, F) or (T, F, 2)) a single pass is run with the averaged or
    reference-channel combination.
    """
    if x1.num_samples <= (cfg.wpe.delay + cfg.wpe.taps) * cfg.stft.hop:
        raise ValueError("observation too short for the configured delay and filter order")
    X2 = vace_spectrogram(x1, gen, cfg)
    if psd_estimates is None:
        Z, _ = wpe_iterative(X2, cfg.wpe, psd_channels=psd_channels(cfg.psd_mode))
    else:
        source = psd_mod.RefChannel(None, 0) if cfg.psd_mode == "simplified" else psd_mod.ChannelAverage(None)
        lam = psd_mod.provide_psd(source, X2, estimates=psd_estimates, psd_floor=cfg.wpe.psd_floor)
        Z, _ = wpe_with_psd(X2, lam, cfg.wpe)
    actual = Z.with_data(Z.data[:, :, :1])
    if return_spectrogram:
        return actual
    return istft(actual, num_samples=x1.num_samples)


# ---------------------------------------------------------------------------
# training-objective utilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float
    gamma: float


# (dataset, stage) weights used when training the expansion network
LOSS_PRESETS = {
    "clean/pt-self": LossWeights(10.0, 0.3, 20.0),
    "clean/pt-late": LossWeights(10.0, 0.1, 20.0),
    "clean/fine-tune": LossWeights(10.0, 0.1, 20.0),
    "noisy/pt-late": LossWeights(2.0, 0.05, 10.0),
    "noisy/fine-tune": LossWeights(1.0, 0.1, 5.0),
}


def _data(A):
    return A.data if isinstance(A, Spectrogram) else np.asarray(A)


def loss_freq(A, B, alpha: float, beta: float) -> float:
    """``alpha * (MSE(re) + MSE(im)) + beta * MSE(ln|A|, ln|B|)``."""
    a, b = _data(A), _data(B)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ri = np.mean((a.real - b.real) ** 2) + np.mean((a.imag - b.imag) ** 2)
    la = np.log(np.maximum(np.abs(a), MAG_FLOOR))
    lb = np.log(np.maximum(np.abs(b), MAG_FLOOR))
    return float(alpha * ri + beta * np.mean((la - lb) ** 2))


def loss_time(a, b) -> float:
    a = a.samples if isinstance(a, Waveform) else np.asarray(a)
    b = b.samples if isinstance(b, Waveform) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def loss_total(A, B, a, b, alpha: float, beta: float, gamma: float) -> float:
    return loss_freq(A, B, alpha, beta) + gamma * loss_time(a, b)


def loss_from_signals(a: Waveform, b: Waveform, weights: LossWeights,
                      cfg: StftConfig = StftConfig()) -> float:
    """Total loss of two waveforms, computing their STFTs internally."""
    return loss_total(stft(a, cfg), stft(b, cfg), a, b, weights.alpha, weights.beta, weights.gamma)


# epoch thresholds (0-based) and the upper LP order that applies from then on
DEFAULT_LP_SCHEDULE: Tuple[Tuple[int, int], ...] = (
    (0, 6), (15, 9), (25, 12), (35, 15), (44, 18), (52, 21))
LP_ORDER_LOWER = 4


def lp_order_upper(epoch: int, schedule=DEFAULT_LP_SCHEDULE) -> int:
    if not schedule:
        raise ValueError("empty LP-order schedule")
    upper = None
    for threshold, k in sorted(schedule):
        if epoch >= threshold:
            upper = k
    if upper is None:
        raise ValueError(f"schedule does not cover epoch {epoch}")
    return upper


def lp_order_curriculum(epoch: int, rng, schedule=DEFAULT_LP_SCHEDULE,
                        lower: int = LP_ORDER_LOWER) -> int:
    """Draw K uniformly from ``[lower, upper(epoch)]``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    upper = lp_order_upper(epoch, schedule)
    return int(rng.integers(lower, upper + 1))
