"""Intrusive speech-quality measures against a time-aligned reference.

Frames are 25 ms long with a 10 ms shift. Frames whose reference level is
below -60 dBFS are ignored by CD, LLR and FWSegSNR.

PESQ and SRMR are not provided; segSRR is a simulator-only intrusive
substitute that tracks the amount of residual reverberation.
"""

import math
from dataclasses import asdict, dataclass
from typing import Iterable, List

import numpy as np

from . import kernels
from .stft import Waveform

FRAME_MS = 25.0
SHIFT_MS = 10.0
LPC_ORDER = 10
SILENCE_DBFS = -60.0
SNR_CLIP = (-10.0, 35.0)
LLR_KEEP = 0.95
N_MEL_BANDS = 23
FW_EXPONENT = 0.2


@dataclass
class MetricsReport:
    cd: float
    llr: float
    fwsegsnr: float
    segsrr: float

    def as_row(self):
        return [self.cd, self.llr, self.fwsegsnr, self.segsrr]


def _mono(x):
    if isinstance(x, Waveform):
        return x.samples[:, 0], x.sample_rate
    return np.asarray(x, dtype=np.float64).ravel(), None


def _pair(ref, deg, sample_rate):
    r, fs_r = _mono(ref)
    d, fs_d = _mono(deg)
    fs = fs_r or fs_d or sample_rate
    if fs_r and fs_d and fs_r != fs_d:
        raise ValueError("reference and degraded signals have different sample rates")
    if r.shape != d.shape:
        raise ValueError(f"length mismatch: {r.shape[0]} vs {d.shape[0]}")
    return r, d, fs


def frame_signal(x, sample_rate, frame_ms=FRAME_MS, shift_ms=SHIFT_MS):
    n = int(round(frame_ms * sample_rate / 1000))
    hop = int(round(shift_ms * sample_rate / 1000))
    if x.shape[0] < n:
        raise ValueError("signal shorter than one analysis frame")
    return np.lib.stride_tricks.sliding_window_view(x, n)[::hop]


def active_frames(ref_frames, threshold_dbfs=SILENCE_DBFS):
    power = np.mean(ref_frames ** 2, axis=1)
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(power)
    return level > threshold_dbfs


def autocorrelation(frames, order):
    n = frames.shape[1]
    return np.stack([np.einsum("mi,mi->m", frames[:, :n - k], frames[:, k:]) for k in range(order + 1)], axis=1)


def lpc(frames, order=LPC_ORDER, backend=None):
    """Hamming-windowed autocorrelation LPC; returns ``(a, err, r, valid)``."""
    windowed = frames * np.hamming(frames.shape[1])
    r = autocorrelation(windowed, order)
    a, err, valid = kernels.levinson(r, backend=backend)
    # a frame with no variation is treated as degenerate
    valid &= np.ptp(frames, axis=1) > 0
    return a, err, r, valid


def lpc_cepstrum(a, err, n_ceps=LPC_ORDER):
    """Cepstrum of ``sqrt(err) / A(z)``; column 0 holds ``ln sqrt(err)``."""
    M, p1 = a.shape
    c = np.zeros((M, n_ceps + 1))
    with np.errstate(divide="ignore"):
        c[:, 0] = 0.5 * np.log(err)
    for n in range(1, n_ceps + 1):
        acc = -a[:, n] if n < p1 else np.zeros(M)
        for k in range(1, n):
            if n - k < p1:
                acc = acc - (k / n) * c[:, k] * a[:, n - k]
        c[:, n] = acc
    return c


def _toeplitz_quad(a, r):
    """Row-wise ``a Toeplitz(r) a^T``."""
    p1 = a.shape[1]
    idx = np.abs(np.arange(p1)[:, None] - np.arange(p1)[None, :])
    T = r[:, idx]
    return np.einsum("mi,mij,mj->m", a, T, a)


def cepstral_distance_frames(ref, deg, sample_rate=16000, order=LPC_ORDER):
    r, d, fs = _pair(ref, deg, sample_rate)
    fr, fd = frame_signal(r, fs), frame_signal(d, fs)
    a_r, e_r, _, ok_r = lpc(fr, order)
    a_d, e_d, _, ok_d = lpc(fd, order)
    keep = active_frames(fr) & ok_r & ok_d
    c_r = lpc_cepstrum(a_r[keep], e_r[keep], order)
    c_d = lpc_cepstrum(a_d[keep], e_d[keep], order)
    diff = c_r - c_d
    return (10.0 / math.log(10.0)) * np.sqrt(diff[:, 0] ** 2 + 2.0 * np.sum(diff[:, 1:] ** 2, axis=1))


def cepstral_distance(ref, deg, sample_rate=16000, order=LPC_ORDER) -> float:
    """Mean LPC-cepstrum distance in dB over active frames (lower is better)."""
    per_frame = cepstral_distance_frames(ref, deg, sample_rate, order)
    if per_frame.size == 0:
        raise ValueError("no active frames in reference")
    return float(np.mean(per_frame))


def llr_frames(ref, deg, sample_rate=16000, order=LPC_ORDER):
    r, d, fs = _pair(ref, deg, sample_rate)
    fr, fd = frame_signal(r, fs), frame_signal(d, fs)
    a_r, _, R_r, ok_r = lpc(fr, order)
    a_d, _, _, ok_d = lpc(fd, order)
    keep = active_frames(fr) & ok_r & ok_d
    num = _toeplitz_quad(a_d[keep], R_r[keep])
    den = _toeplitz_quad(a_r[keep], R_r[keep])
    return np.log(num / den)


def llr(ref, deg, sample_rate=16000, order=LPC_ORDER, keep=LLR_KEEP) -> float:
    """Log-likelihood ratio, mean of the smallest 95% of frame values."""
    vals = np.sort(llr_frames(ref, deg, sample_rate, order))
    if vals.size == 0:
        raise ValueError("no active frames in reference")
    n = max(int(round(vals.size * keep)), 1)
    return float(np.mean(vals[:n]))


def mel_filterbank(n_bands, n_fft, sample_rate, fmin=0.0, fmax=None):
    """Triangular HTK-mel filters, shape (n_bands, n_fft // 2 + 1)."""
    fmax = fmax or sample_rate / 2.0

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[b] = np.maximum(0.0, np.minimum(up, down))
    return fb


def fwsegsnr_frames(ref, deg, sample_rate=16000, n_bands=N_MEL_BANDS):
    r, d, fs = _pair(ref, deg, sample_rate)
    fr, fd = frame_signal(r, fs), frame_signal(d, fs)
    keep = active_frames(fr)
    fr, fd = fr[keep], fd[keep]
    n_fft = 1 << (fr.shape[1] - 1).bit_length()
    win = np.hanning(fr.shape[1])
    fb = mel_filterbank(n_bands, n_fft, fs)
    ref_band = np.abs(np.fft.rfft(fr * win, n_fft)) @ fb.T
    deg_band = np.abs(np.fft.rfft(fd * win, n_fft)) @ fb.T
    err = (ref_band - deg_band) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = 10.0 * np.log10(ref_band ** 2 / err)
    snr = np.where(err == 0, SNR_CLIP[1], snr)
    snr = np.clip(np.nan_to_num(snr, nan=SNR_CLIP[0]), *SNR_CLIP)
    weight = ref_band ** FW_EXPONENT
    wsum = weight.sum(axis=1)
    ok = wsum > 0
    return np.clip((weight[ok] * snr[ok]).sum(axis=1) / wsum[ok], *SNR_CLIP)


def fwsegsnr(ref, deg, sample_rate=16000, n_bands=N_MEL_BANDS) -> float:
    """Frequency-weighted segmental SNR in dB over mel bands (higher is better)."""
    vals = fwsegsnr_frames(ref, deg, sample_rate, n_bands)
    if vals.size == 0:
        raise ValueError("reference is silent")
    return float(np.mean(vals))


def segsrr_frames(early_ref, deg, sample_rate=16000):
    e, d, fs = _pair(early_ref, deg, sample_rate)
    fe, fd = frame_signal(e, fs), frame_signal(d, fs)
    num = np.sum(fe ** 2, axis=1)
    den = np.sum((fd - fe) ** 2, axis=1)
    keep = num > 0
    num, den = num[keep], den[keep]
    with np.errstate(divide="ignore"):
        val = 10.0 * np.log10(num / den)
    return np.clip(np.where(den == 0, SNR_CLIP[1], val), *SNR_CLIP)


def segsrr(early_ref, deg, sample_rate=16000) -> float:
    """Segmental signal-to-reverberation ratio in dB, clipped to [-10, 35] per segment."""
    vals = segsrr_frames(early_ref, deg, sample_rate)
    if vals.size == 0:
        raise ValueError("early reference is silent")
    return float(np.mean(vals))


def evaluate(ref, deg, sample_rate=16000) -> MetricsReport:
    return MetricsReport(
        cd=cepstral_distance(ref, deg, sample_rate),
        llr=llr(ref, deg, sample_rate),
        fwsegsnr=fwsegsnr(ref, deg, sample_rate),
        segsrr=segsrr(ref, deg, sample_rate),
    )


def corpus_mean(reports: Iterable[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of per-utterance values."""
    reports: List[MetricsReport] = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    rows = np.array([r.as_row() for r in reports])
    return MetricsReport(*map(float, rows.mean(axis=0)))


METRIC_NAMES = tuple(asdict(MetricsReport(0, 0, 0, 0)))
