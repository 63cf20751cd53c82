"""Pluggable PSD sources for single-pass (neural-style) WPE.

A source either derives per-channel power from the observation
(:class:`Iterative`), reads log-power estimates from disk
(:class:`ExternalFile`), or uses in-memory estimates passed to
:func:`provide_psd`. :class:`ChannelAverage` and :class:`RefChannel` reduce
the per-channel powers to a single ``(T, F)`` PSD.

LPS interchange file layout (little-endian)::

    offset  size  field
    0       8     magic  b"VWPELPS\\0"
    8       4     version (uint32, currently 1)
    12      4     T  (uint32)
    16      4     F  (uint32)
    20      4     D  (uint32)
    24      4     sample_rate (uint32)
    28      4     reserved (zero)
    32      ...   float32 log-power values, C order (T, F, D)
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .stft import LOG_POWER_FLOOR, Spectrogram, log_power_spectra
from .wpe import psd_context_avg

MAGIC = b"VWPELPS\0"
VERSION = 1
HEADER = struct.Struct("<8s6I")
assert HEADER.size == 32


@dataclass(frozen=True)
class Iterative:
    context: int = 1


@dataclass(frozen=True)
class ExternalFile:
    path: Union[str, Path]
    per_channel: bool = True


@dataclass(frozen=True)
class ChannelAverage:
    inner: Optional[object] = None


@dataclass(frozen=True)
class RefChannel:
    inner: Optional[object] = None
    channel: int = 0


PsdSource = Union[Iterative, ExternalFile, ChannelAverage, RefChannel]


@dataclass(frozen=True)
class LpsFile:
    lps: np.ndarray
    sample_rate: int


def export_lps(spec: Spectrogram, path) -> Path:
    """Write ``ln(|X|^2 + 1e-10)`` of ``spec`` in the interchange layout."""
    return write_lps(log_power_spectra(spec), spec.config.sample_rate, path)


def write_lps(lps, sample_rate: int, path) -> Path:
    lps = np.asarray(lps, dtype=np.float64)
    if lps.ndim == 2:
        lps = lps[:, :, None]
    if lps.ndim != 3:
        raise ValueError(f"log-power tensor must be (T, F) or (T, F, D), got {lps.shape}")
    if not np.isfinite(lps).all():
        raise ValueError("log-power tensor contains non-finite values")
    T, F, D = lps.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, T, F, D, int(sample_rate), 0))
        fh.write(np.ascontiguousarray(lps, dtype="<f4").tobytes())
    return path


def read_lps(path) -> LpsFile:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: file too short for an LPS header")
    magic, version, T, F, D, fs, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an LPS file (bad magic)")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported LPS version {version}")
    body = raw[HEADER.size:]
    if len(body) != 4 * T * F * D:
        raise ValueError(f"{path}: expected {T * F * D} values, found {len(body) // 4}")
    lps = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(T, F, D)
    return LpsFile(lps, fs)


def _depth(source) -> int:
    if isinstance(source, (ChannelAverage, RefChannel)):
        return 1 + (_depth(source.inner) if source.inner is not None else 0)
    return 1


def _channel_powers(source, X, estimates) -> np.ndarray:
    """Per-channel linear power (T, F, D) supplied by ``source``."""
    if source is None:
        if estimates is None:
            raise ValueError("no inner source and no estimates supplied")
        p = np.asarray(estimates, dtype=np.float64)
        if p.ndim == 2:
            p = p[:, :, None]
        if (p < 0).any():
            raise ValueError("negative linear-power estimates")
    elif isinstance(source, Iterative):
        if X is None:
            raise ValueError("Iterative source needs the observed spectrogram")
        data = X.data if isinstance(X, Spectrogram) else np.asarray(X)
        if data.ndim == 2:
            data = data[:, :, None]
        p = np.stack([psd_context_avg(data[:, :, d:d + 1], source.context, 0.0)
                      for d in range(data.shape[2])], axis=2)
    elif isinstance(source, ExternalFile):
        p = np.exp(read_lps(source.path).lps)
        if not source.per_channel:
            p = p.mean(axis=2, keepdims=True)
    elif isinstance(source, (ChannelAverage, RefChannel)):
        p = _reduce(source, X, estimates)[:, :, None]
    else:
        raise TypeError(f"unknown PSD source {source!r}")
    if X is not None:
        data = X.data if isinstance(X, Spectrogram) else np.asarray(X)
        if p.shape[:2] != data.shape[:2]:
            raise ValueError(f"PSD estimates shaped {p.shape[:2]} do not match spectrogram {data.shape[:2]}")
    return p


def _reduce(source, X, estimates) -> np.ndarray:
    p = _channel_powers(source.inner, X, estimates)
    if isinstance(source, RefChannel):
        if not 0 <= source.channel < p.shape[2]:
            raise ValueError(f"reference channel {source.channel} out of range for D={p.shape[2]}")
        return p[:, :, source.channel]
    return p.mean(axis=2)


def provide_psd(source: PsdSource, X=None, estimates=None,
                psd_floor: float = LOG_POWER_FLOOR) -> np.ndarray:
    """Resolve ``source`` into a floored, non-negative ``(T, F)`` PSD.

    Bare :class:`Iterative` and :class:`ExternalFile` sources average over
    channels.
    """
    if _depth(source) > 2:
        raise ValueError("PSD source nesting deeper than two levels")
    if not isinstance(source, (ChannelAverage, RefChannel)):
        source = ChannelAverage(source)
    lam = _reduce(source, X, estimates)
    if not np.isfinite(lam).all():
        raise ValueError("PSD estimate is not finite")
    return np.maximum(lam, psd_floor)


def parse_psd_option(psd: str, combine: str = "average") -> PsdSource:
    """Build a source from CLI strings ``iterative|file:<path>`` and ``average|ref:<k>``."""
    if psd == "iterative":
        inner = Iterative()
    elif psd.startswith("file:"):
        inner = ExternalFile(psd[len("file:"):])
    else:
        raise ValueError(f"--psd must be 'iterative' or 'file:<path>', got {psd!r}")
    if combine == "average":
        return ChannelAverage(inner)
    if combine.startswith("ref:"):
        return RefChannel(inner, int(combine[len("ref:"):]))
    raise ValueError(f"--psd-combine must be 'average' or 'ref:<k>', got {combine!r}")
