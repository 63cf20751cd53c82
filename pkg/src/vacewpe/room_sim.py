"""Image-method room simulation and on-the-fly mixture generation.

Covers RIR synthesis, the early/late split, reverberant convolution, noise
mixing at a target SNR, the fixed-gain dynamic range control, and a seeded
example generator that draws speech, RIR and noise from in-memory pools.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve, lfilter

from . import kernels
from .stft import Waveform

SOUND_SPEED = 343.0

# room size bounds in metres, keyed by size class
ROOM_BOUNDS = {
    "medium": ((10.0, 10.0, 2.0), (30.0, 30.0, 5.0)),
    "large": ((30.0, 30.0, 2.0), (50.0, 50.0, 5.0)),
}
RIR_DURATION = {"medium": 1.0, "large": 2.0}
ABSORPTION_RANGE = (0.2, 0.8)
DISTANCE_RANGE = (1.0, 5.0)


@dataclass(frozen=True)
class RoomSpec:
    dimensions: Tuple[float, float, float]
    absorption: float
    source_pos: Tuple[float, float, float]
    mic_positions: Tuple[Tuple[float, float, float], ...]
    reflection_order: int = 10
    rir_duration: float = 1.0
    sample_rate: int = 16000
    sound_speed: float = SOUND_SPEED
    fractional_delay: bool = False

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions)
        src = tuple(float(v) for v in self.source_pos)
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "source_pos", src)
        object.__setattr__(self, "mic_positions", tuple(tuple(m) for m in mics))
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {dims}")
        if not 0.0 <= self.absorption <= 1.0:
            raise ValueError(f"absorption must lie in [0, 1], got {self.absorption}")
        if mics.shape[1] != 3 or mics.shape[0] < 1:
            raise ValueError("mic_positions must be a non-empty list of 3-D points")
        for p in (src, *self.mic_positions):
            if not all(0.0 < c < L for c, L in zip(p, dims)):
                raise ValueError(f"position {p} is not strictly inside room {dims}")
        if np.min(np.linalg.norm(mics - np.asarray(src), axis=1)) < 1e-6:
            raise ValueError("source coincides with a microphone")
        if self.rir_duration <= 0 or self.sample_rate <= 0:
            raise ValueError("rir_duration and sample_rate must be positive")

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(np.asarray(self.mic_positions) - np.asarray(self.source_pos), axis=1)

    @property
    def volume(self) -> float:
        Lx, Ly, Lz = self.dimensions
        return Lx * Ly * Lz

    @property
    def surface(self) -> float:
        Lx, Ly, Lz = self.dimensions
        return 2.0 * (Lx * Ly + Lx * Lz + Ly * Lz)


@dataclass(frozen=True)
class Rir:
    """Sampled impulse response(s), ``taps`` shaped (L, M)."""

    taps: np.ndarray
    sample_rate: int
    early_ms: float = 50.0
    main_peak_index: np.ndarray = field(default=None)
    room: Optional[RoomSpec] = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim == 1:
            taps = taps[:, None]
        taps = np.array(taps)
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)
        if self.main_peak_index is None:
            object.__setattr__(self, "main_peak_index", np.argmax(np.abs(taps), axis=0))
        else:
            object.__setattr__(self, "main_peak_index",
                               np.atleast_1d(np.asarray(self.main_peak_index, dtype=int)))

    @property
    def early_len(self) -> np.ndarray:
        return self.main_peak_index + int(round(self.early_ms * self.sample_rate / 1000.0))

    @property
    def num_channels(self) -> int:
        return self.taps.shape[1]


def eyring_t60(dimensions, absorption: float, c: float = SOUND_SPEED) -> float:
    Lx, Ly, Lz = dimensions
    V = Lx * Ly * Lz
    S = 2.0 * (Lx * Ly + Lx * Lz + Ly * Lz)
    return 24.0 * math.log(10.0) * V / (-c * S * math.log(1.0 - absorption))


def absorption_for_t60(dimensions, t60: float, c: float = SOUND_SPEED) -> float:
    """Uniform absorption coefficient whose Eyring reverberation time is ``t60``."""
    Lx, Ly, Lz = dimensions
    V = Lx * Ly * Lz
    S = 2.0 * (Lx * Ly + Lx * Lz + Ly * Lz)
    return 1.0 - math.exp(-24.0 * math.log(10.0) * V / (c * S * t60))


def schroeder_t60(taps, sample_rate: int, fit_db=(-5.0, -25.0)) -> float:
    """Reverberation time from a line fit to the Schroeder energy decay curve.

    The fit spans ``fit_db`` (T20 by default) and is extrapolated to 60 dB.
    """
    h = np.asarray(taps, dtype=np.float64).ravel()
    edc = np.cumsum(h[::-1] ** 2)[::-1]
    if edc[0] <= 0:
        raise ValueError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    hi, lo = fit_db
    start = np.argmax(edc_db <= hi)
    below = np.flatnonzero(edc_db <= lo)
    if edc_db[start] > hi or below.size == 0:
        raise ValueError(f"decay curve does not reach {lo} dB")
    stop = below[0]
    t = np.arange(start, stop + 1) / sample_rate
    slope, _ = np.polyfit(t, edc_db[start:stop + 1], 1)
    return -60.0 / slope


def absorption_for_measured_t60(dimensions, source_pos, mic_positions, t60: float,
                                sample_rate: int = 16000, rir_duration: float = 1.0,
                                iterations: int = 20, backend=None) -> float:
    """Bisect the absorption so the simulated RIR's Schroeder T60 hits ``t60``.

    Relies on the measured T60 decreasing monotonically with absorption.
    Uses the first microphone.
    """
    lo, hi = 0.01, 0.99
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        spec = RoomSpec(dimensions, mid, source_pos, mic_positions, reflection_order=-1,
                        rir_duration=rir_duration, sample_rate=sample_rate)
        measured = schroeder_t60(simulate_rir(spec, backend=backend).taps[:, 0], sample_rate)
        if measured > t60:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_distance(volume: float, t60: float) -> float:
    """Distance (m) at which direct and reverberant energy are equal (Sabine estimate)."""
    return 0.057 * math.sqrt(volume / t60)


def tuned_room_spec(seed, t60: float = 0.5, distance: float = 2.0, size: str = "medium",
                    sample_rate: int = 16000, far_field: bool = True) -> RoomSpec:
    """Random room of the given size class with a fixed source-mic distance.

    The absorption is tuned so the simulated (not the Eyring) reverberation
    time equals ``t60``; every image within the RIR duration is kept. With
    ``far_field`` the room volume is restricted so that ``distance`` is at
    least the critical distance.
    """
    rng = np.random.default_rng(seed)
    lo, hi = (np.array(b, dtype=float) for b in ROOM_BOUNDS[size])
    for _ in range(10000):
        dims = rng.uniform(lo, hi)
        if far_field and critical_distance(float(np.prod(dims)), t60) > distance:
            continue
        src = rng.uniform(1.0, dims - 1.0)
        az = rng.uniform(0, 2 * np.pi)
        dz = rng.uniform(-0.3, 0.3)
        horiz = math.sqrt(distance ** 2 - dz ** 2)
        mic = src + np.array([horiz * np.cos(az), horiz * np.sin(az), dz])
        if np.all(mic > 0.5) and np.all(mic < dims - 0.5):
            break
    else:
        raise RuntimeError("could not place a far-field microphone in this size class")
    duration = RIR_DURATION[size]
    absorption = absorption_for_measured_t60(tuple(dims), tuple(src), (tuple(mic),), t60,
                                             sample_rate, duration)
    return RoomSpec(tuple(dims), absorption, tuple(src), (tuple(mic),), reflection_order=-1,
                    rir_duration=duration, sample_rate=sample_rate)


def random_room_spec(seed, size: str = "medium", n_mics: int = 1, mic_spacing: float = 0.2,
                     distance_range=DISTANCE_RANGE, absorption_range=ABSORPTION_RANGE,
                     reflection_order: int = 10, sample_rate: int = 16000,
                     margin: float = 0.5) -> RoomSpec:
    """Draw a room following the medium/large simulation ranges.

    Extra microphones sit on a horizontal line through the first one,
    ``mic_spacing`` metres apart.
    """
    if size not in ROOM_BOUNDS:
        raise ValueError(f"size must be one of {sorted(ROOM_BOUNDS)}, got {size!r}")
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b) for b in ROOM_BOUNDS[size])
    span = (n_mics - 1) * mic_spacing
    for _ in range(1000):
        dims = rng.uniform(lo, hi)
        absorption = rng.uniform(*absorption_range)
        src = rng.uniform(margin, dims - margin)
        dist = rng.uniform(*distance_range)
        az = rng.uniform(0, 2 * np.pi)
        elev = rng.uniform(-0.3, 0.3)
        mic0 = src + dist * np.array([np.cos(az) * np.cos(elev), np.sin(az) * np.cos(elev), np.sin(elev)])
        axis_az = rng.uniform(0, np.pi)
        axis = np.array([np.cos(axis_az), np.sin(axis_az), 0.0])
        mics = mic0 + np.outer(np.arange(n_mics) * mic_spacing - span / 2, axis)
        if np.all(mics > margin) and np.all(mics < dims - margin):
            return RoomSpec(tuple(dims), float(absorption), tuple(src), tuple(map(tuple, mics)),
                            reflection_order=reflection_order, rir_duration=RIR_DURATION[size],
                            sample_rate=sample_rate)
    raise RuntimeError("could not place source and microphones inside the room")


def simulate_rir(spec: Union[RoomSpec, str], seed=0, backend=None) -> Rir:
    """Image-method RIR for every microphone in ``spec``.

    Each wall reflection multiplies the amplitude by ``sqrt(1 - absorption)``
    and each image decays as ``1 / (4 pi r)``. Passing a size class
    (``"medium"`` or ``"large"``) instead of a RoomSpec draws a random room
    from ``seed``.
    """
    if isinstance(spec, str):
        spec = random_room_spec(seed, spec)
    beta = np.full(6, math.sqrt(1.0 - spec.absorption))
    n_taps = int(round(spec.rir_duration * spec.sample_rate))
    taps = kernels.image_source_rir(spec.source_pos, spec.mic_positions, spec.dimensions, beta,
                                    spec.reflection_order, n_taps, spec.sample_rate,
                                    spec.sound_speed, spec.fractional_delay, backend)
    return Rir(taps, spec.sample_rate, room=spec)


def split_rir(rir: Rir, early_ms: float = 50.0) -> Tuple[Rir, Rir]:
    """Split into the part up to ``early_ms`` after the main peak and the remainder."""
    n_early = rir.main_peak_index + int(round(early_ms * rir.sample_rate / 1000.0))
    mask = np.arange(rir.taps.shape[0])[:, None] < n_early[None, :]
    early = np.where(mask, rir.taps, 0.0)
    late = np.where(mask, 0.0, rir.taps)
    kw = dict(early_ms=early_ms, main_peak_index=rir.main_peak_index, room=rir.room)
    return Rir(early, rir.sample_rate, **kw), Rir(late, rir.sample_rate, **kw)


def convolve(speech: Waveform, rir: Rir) -> Waveform:
    """Linear convolution truncated to the speech length; one output channel per mic."""
    if speech.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: {speech.sample_rate} vs {rir.sample_rate}")
    x = speech.samples
    if x.shape[1] != 1 and x.shape[1] != rir.num_channels:
        raise ValueError("speech must be mono or have one channel per RIR channel")
    n = x.shape[0]
    out = fftconvolve(x, rir.taps, axes=0)[:n]
    return Waveform(out, speech.sample_rate)


def fit_noise(noise: Waveform, length: int, rng) -> np.ndarray:
    """Crop (random offset) or tile ``noise`` to ``length`` samples."""
    v = noise.samples
    if v.shape[0] >= length:
        start = int(rng.integers(0, v.shape[0] - length + 1))
        return v[start:start + length]
    reps = -(-length // v.shape[0])
    return np.tile(v, (reps, 1))[:length]


def scaled_noise(signal: Waveform, noise: Waveform, snr_db: float, seed=None) -> np.ndarray:
    """Noise fitted to ``signal``'s length and scaled to the requested SNR.

    SNR is the ratio of total signal energy to total noise energy over the
    whole utterance.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v = fit_noise(noise, signal.num_samples, rng)
    if v.shape[1] == 1 and signal.num_channels > 1:
        v = np.repeat(v, signal.num_channels, axis=1)
    e_noise = np.sum(v ** 2)
    if e_noise <= 0:
        raise ValueError("noise input is silent")
    e_sig = np.sum(signal.samples ** 2)
    return v * math.sqrt(e_sig / (e_noise * 10.0 ** (snr_db / 10.0)))


def mix_noise(clean: Waveform, noise: Waveform, snr_db: float, seed=None) -> Waveform:
    return Waveform(clean.samples + scaled_noise(clean, noise, snr_db, seed), clean.sample_rate)


def measured_snr(signal, noise) -> float:
    s = signal.samples if isinstance(signal, Waveform) else np.asarray(signal)
    v = noise.samples if isinstance(noise, Waveform) else np.asarray(noise)
    return 10.0 * math.log10(np.sum(s ** 2) / np.sum(v ** 2))


def drc_stats(x, n: int = 100) -> Tuple[float, float]:
    """Means of the ``n`` largest and ``n`` smallest (signed) sample values."""
    flat = np.sort(np.asarray(x, dtype=np.float64).ravel())
    return float(np.mean(flat[-n:])), float(np.mean(flat[:n]))


def drc(wave: Waveform, n: int = 100, r: float = 0.25) -> Waveform:
    """Fixed-gain range control: ``x * 2 r / (a_max - a_min)``."""
    x = wave.samples
    if x.size < 2 * n:
        raise ValueError(f"need at least {2 * n} samples, got {x.size}")
    if np.max(np.abs(x)) > 1.0:
        raise ValueError("waveform must be normalised to [-1, 1] before DRC")
    a_max, a_min = drc_stats(x, n)
    if a_max - a_min <= 0:
        raise ValueError("constant signal: DRC gain undefined")
    return Waveform(x * (2.0 * r / (a_max - a_min)), wave.sample_rate)


# ---------------------------------------------------------------------------
# synthetic sources
# ---------------------------------------------------------------------------

_VOWEL_FORMANTS = np.array([
    (730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480),
    (660, 1720, 2410), (570, 840, 2410), (440, 1020, 2240), (640, 1190, 2390),
    (490, 1350, 1690), (400, 1900, 2600),
], dtype=float)


def _resonator(x, freq, bw, fs):
    r = math.exp(-math.pi * bw / fs)
    theta = 2 * math.pi * freq / fs
    a = [1.0, -2 * r * math.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def speech_like(duration: float, sample_rate: int = 16000, seed=0, peak: float = 0.9) -> Waveform:
    """Deterministic speech-shaped test signal.

    Alternates voiced syllables (glottal pulse train through three formant
    resonators) and fricative-like noise bursts, separated by short pauses.
    """
    rng = np.random.default_rng(seed)
    fs = sample_rate
    n_total = int(round(duration * fs))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.02, 0.1) * fs)
    f0_base = rng.uniform(95, 210)
    while pos < n_total:
        seg = int(rng.uniform(0.12, 0.35) * fs)
        seg = min(seg, n_total - pos)
        if seg < int(0.03 * fs):
            break
        if rng.random() < 0.78:
            f0 = f0_base * rng.uniform(0.85, 1.2) * np.linspace(1.0, rng.uniform(0.85, 1.1), seg)
            phase = np.cumsum(f0 / fs)
            pulses = np.diff(np.floor(phase), prepend=0.0)
            excitation = lfilter([1.0], [1.0, -0.95], pulses) + 0.02 * rng.standard_normal(seg)
            formants = _VOWEL_FORMANTS[rng.integers(len(_VOWEL_FORMANTS))] * rng.uniform(0.9, 1.1, 3)
            y = np.zeros(seg)
            for freq, bw, g in zip(formants, (80, 110, 160), (1.0, 0.6, 0.3)):
                y += g * _resonator(excitation, freq, bw, fs)
        else:
            noise = rng.standard_normal(seg)
            y = _resonator(noise, rng.uniform(2500, 6000), rng.uniform(800, 2000), fs)
            y *= 0.4
        ramp = max(int(0.03 * fs), 1)
        env = np.ones(seg)
        ramp = min(ramp, seg // 2)
        if ramp > 0:
            w = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            env[:ramp] = w
            env[seg - ramp:] = w[::-1]
        out[pos:pos + seg] += y * env * rng.uniform(0.4, 1.0)
        gap = rng.uniform(0.3, 0.6) if rng.random() < 0.15 else rng.uniform(0.04, 0.2)
        pos += seg + int(gap * fs)
    m = np.max(np.abs(out))
    if m > 0:
        out *= peak / m
    return Waveform(out, fs)


def noise_like(kind: str, duration: float, sample_rate: int = 16000, seed=0) -> Waveform:
    """White, pink (1/f power) or babble noise with unit RMS."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size, dtype=float)
        f[0] = 1.0
        x = np.fft.irfft(spec / np.sqrt(f), n)
    elif kind == "babble":
        seeds = rng.integers(0, 2**31, size=6)
        x = sum(speech_like(duration, sample_rate, int(s)).samples[:, 0] for s in seeds)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return Waveform(x / np.sqrt(np.mean(x ** 2)), sample_rate)


# ---------------------------------------------------------------------------
# on-the-fly example generator
# ---------------------------------------------------------------------------


@dataclass
class DatagenConfig:
    speech: Sequence[Waveform]
    rirs: Sequence[Rir]
    noises: Optional[Sequence[Waveform]] = None
    snr_range: Tuple[int, int] = (5, 15)
    crop_seconds: Union[None, float, Tuple[float, float]] = None
    noisy_target: bool = False
    peak_norm: Optional[float] = None
    early_ms: float = 50.0


@dataclass(frozen=True)
class MixtureExample:
    observed: Waveform
    early_ref: Waveform
    late_ref: Waveform
    early_clean: Waveform
    noise: Optional[Waveform]
    snr_db: Optional[int]
    seed: int
    speech_index: int
    rir_index: int
    noise_index: Optional[int]


def generate_example(cfg: DatagenConfig, seed: int) -> MixtureExample:
    """Draw one (observed, early reference, late reference) triple.

    ``observed == early_clean + late_ref + noise`` holds sample for sample.
    With ``noisy_target`` the early reference also carries the noise.
    """
    if not cfg.speech or not cfg.rirs:
        raise ValueError("speech and RIR pools must be non-empty")
    if cfg.noises is not None and len(cfg.noises) == 0:
        raise ValueError("noise pool is empty; pass None to disable noise")
    rng = np.random.default_rng(seed)
    si = int(rng.integers(len(cfg.speech)))
    ri = int(rng.integers(len(cfg.rirs)))
    speech, rir = cfg.speech[si], cfg.rirs[ri]
    x = speech.samples[:, :1]
    if cfg.crop_seconds is not None:
        lo, hi = (cfg.crop_seconds, cfg.crop_seconds) if np.isscalar(cfg.crop_seconds) else cfg.crop_seconds
        n_crop = int(round(rng.uniform(lo, hi) * speech.sample_rate))
        if n_crop > x.shape[0]:
            raise ValueError(f"crop of {n_crop} samples exceeds utterance length {x.shape[0]}")
        start = int(rng.integers(0, x.shape[0] - n_crop + 1))
        x = x[start:start + n_crop]
    src = Waveform(x, speech.sample_rate)
    early_rir, late_rir = split_rir(rir, cfg.early_ms)
    early = convolve(src, early_rir).samples
    late = convolve(src, late_rir).samples
    reverberant = early + late

    noise = None
    ni = None
    snr = None
    if cfg.noises is not None:
        ni = int(rng.integers(len(cfg.noises)))
        snr = int(rng.integers(cfg.snr_range[0], cfg.snr_range[1] + 1))
        noise = scaled_noise(Waveform(reverberant, src.sample_rate), cfg.noises[ni], snr, rng)

    gain = 1.0
    if cfg.peak_norm is not None:
        peak = np.max(np.abs(reverberant + (noise if noise is not None else 0.0)))
        if peak > 0:
            gain = cfg.peak_norm / peak
    early, late = early * gain, late * gain
    if noise is not None:
        noise = noise * gain
        observed = early + late + noise
        early_ref = early + noise if cfg.noisy_target else early
    else:
        observed = early + late
        early_ref = early
    fs = src.sample_rate
    return MixtureExample(
        observed=Waveform(observed, fs), early_ref=Waveform(early_ref, fs),
        late_ref=Waveform(late, fs), early_clean=Waveform(early, fs),
        noise=Waveform(noise, fs) if noise is not None else None, snr_db=snr,
        seed=int(seed), speech_index=si, rir_index=ri, noise_index=ni)
