import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vacewpe.stft import (LOG_POWER_FLOOR, Spectrogram, StftConfig, Waveform, istft,
                          log_power_spectra, num_frames, spectral_energy_gain, stft,
                          two_sided_energy)

CFG = StftConfig()


def test_default_config_shape():
    assert (CFG.window_len, CFG.hop, CFG.fft_size, CFG.num_bins, CFG.pad) == (1024, 256, 1024, 513, 768)
    assert StftConfig.from_ms(64, 16, 16000) == CFG


def test_window_is_periodic_hann():
    w = CFG.window
    n = np.arange(1024)
    np.testing.assert_allclose(w, np.sin(np.pi * n / 1024) ** 2, atol=1e-15)
    assert w[0] == 0.0 and w[512] == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1024, 1025, 16000, 16001, 40000])
def test_frame_count(n):
    spec = stft(Waveform(np.zeros(n), 16000))
    assert spec.shape == (num_frames(n, CFG), 513, 1)
    assert num_frames(n, CFG) == (n + 2 * 768 - 1024) // 256 + 1


def test_zero_wave_gives_zero_spectrogram():
    spec = stft(Waveform(np.zeros(16000), 16000))
    assert not spec.data.any()


@pytest.mark.parametrize("k", [5, 64, 300])
def test_bin_centred_sinusoid_peaks_at_its_bin(k):
    n = np.arange(16000)
    x = np.cos(2 * np.pi * k * n / 1024)
    spec = stft(Waveform(x, 16000))
    interior = np.abs(spec.data[3:-3, :, 0])
    assert np.all(np.argmax(interior, axis=1) == k)


def test_round_trip_white_noise(rng):
    x = rng.standard_normal((20000, 2))
    y = istft(stft(Waveform(x, 16000)))
    assert y.samples.shape == x.shape
    assert np.sqrt(np.mean((y.samples - x) ** 2) / np.mean(x ** 2)) <= 1e-12


def test_zero_spectrogram_gives_zero_wave():
    spec = Spectrogram(np.zeros((40, 513, 1)), CFG, 9000)
    y = istft(spec)
    assert y.num_samples == 9000 and not y.samples.any()


def test_single_frame_stays_inside_its_window(rng):
    T, t0 = 30, 12
    data = np.zeros((T, 513, 1), dtype=complex)
    data[t0] = rng.standard_normal((513, 1)) + 1j * rng.standard_normal((513, 1))
    y = istft(Spectrogram(data, CFG, (T - 1) * 256 + 1024 - 2 * 768)).samples[:, 0]
    start = t0 * 256 - CFG.pad
    support = np.zeros(y.size, dtype=bool)
    support[max(start, 0):start + 1024] = True
    assert np.any(y[support] != 0)
    assert not np.any(y[~support])


def test_log_power_spectra_values():
    T, F = 4, 513
    ones = Spectrogram(np.ones((T, F, 1)), CFG)
    np.testing.assert_allclose(log_power_spectra(ones), 0.0, atol=1e-9)
    e = Spectrogram(np.full((T, F, 1), np.e), CFG)
    np.testing.assert_allclose(log_power_spectra(e), 2.0, atol=1e-10)
    zeros = Spectrogram(np.zeros((T, F, 1)), CFG)
    np.testing.assert_array_equal(log_power_spectra(zeros), np.log(LOG_POWER_FLOOR))


def test_energy_gain_matches_parseval(rng):
    assert spectral_energy_gain(CFG) == pytest.approx(1536.0)
    x = rng.standard_normal(256 * 100)
    spec = stft(Waveform(x, 16000))
    assert two_sided_energy(spec) / np.sum(x ** 2) == pytest.approx(1536.0, rel=1e-10)


def test_waveform_is_immutable_copy():
    raw = np.zeros(1000)
    w = Waveform(raw, 16000)
    raw[0] = 1.0
    assert w.samples[0, 0] == 0.0
    with pytest.raises(ValueError):
        w.samples[0, 0] = 2.0
    assert w.channel(0).num_channels == 1


@pytest.mark.parametrize("bad", [np.zeros(500), np.r_[np.zeros(2000), np.nan]])
def test_stft_rejects_short_or_nonfinite(bad):
    with pytest.raises(ValueError):
        stft(Waveform(bad, 16000))


def test_config_validation():
    with pytest.raises(ValueError):
        StftConfig(window_len=1000, hop=300)
    with pytest.raises(ValueError):
        StftConfig(fft_size=512)
    spec = stft(Waveform(np.zeros(4000), 16000))
    with pytest.raises(ValueError):
        istft(spec, StftConfig(window_len=512, hop=128))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1024, 6000), d=st.integers(1, 3), seed=st.integers(0, 2**31 - 1),
       hop=st.sampled_from([128, 256, 512]))
def test_round_trip_property(n, d, seed, hop):
    cfg = StftConfig(1024, hop)
    x = np.random.default_rng(seed).standard_normal((n, d))
    y = istft(stft(Waveform(x, 16000), cfg))
    np.testing.assert_allclose(y.samples, x, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_stft_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(3000), rng.standard_normal(3000)
    lhs = stft(Waveform(a * x + b * y, 16000)).data
    rhs = a * stft(Waveform(x, 16000)).data + b * stft(Waveform(y, 16000)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
