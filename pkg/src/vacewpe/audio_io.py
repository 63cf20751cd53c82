"""WAV reading and writing.

16-bit and 32-bit integer PCM are scaled to [-1, 1); 32-bit float data is
passed through. No resampling is performed.
"""

import logging
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .stft import Waveform

log = logging.getLogger(__name__)

MAX_CHANNELS = 8
ENCODINGS = ("float32", "pcm16")


def read_wav(path) -> Waveform:
    try:
        fs, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise ValueError(f"{path}: cannot parse WAV file ({exc})") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= x.shape[1] <= MAX_CHANNELS:
        raise ValueError(f"{path}: {x.shape[1]} channels, expected 1-{MAX_CHANNELS}")
    return Waveform(x, fs)


def write_wav(wave: Waveform, path, encoding: str = "float32") -> int:
    """Write ``wave`` and return the number of samples hard-clipped to [-1, 1]."""
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")
    x = wave.samples
    if not np.isfinite(x).all():
        raise ValueError("cannot write non-finite samples")
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    x = np.clip(x, -1.0, 1.0)
    if clipped:
        log.warning("%s: hard-clipped %d samples", path, clipped)
    if encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), wave.sample_rate, data)
    return clipped
