import logging

import numpy as np
import pytest
from scipy.io import wavfile

from vacewpe.audio_io import read_wav, write_wav
from vacewpe.stft import Waveform


def test_float_round_trip_is_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, (1000, 1)).astype(np.float32).astype(np.float64)
    write_wav(Waveform(x, 16000), tmp_path / "a.wav")
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == 16000
    np.testing.assert_array_equal(y.samples, x)


def test_pcm16_round_trip_error(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, (2000, 1))
    write_wav(Waveform(x, 16000), tmp_path / "b.wav", "pcm16")
    assert wavfile.read(tmp_path / "b.wav")[1].dtype == np.int16
    assert np.max(np.abs(read_wav(tmp_path / "b.wav").samples - x)) <= 1 / 32768


def test_channel_order_preserved(tmp_path, rng):
    x = np.stack([np.full(500, 0.25), np.full(500, -0.5), np.linspace(-1, 1, 500)], axis=1)
    write_wav(Waveform(x, 8000), tmp_path / "c.wav")
    y = read_wav(tmp_path / "c.wav")
    assert y.num_channels == 3 and y.sample_rate == 8000
    np.testing.assert_allclose(y.samples, x, atol=1e-7)


def test_int32_scaling(tmp_path):
    wavfile.write(tmp_path / "d.wav", 16000, np.array([2 ** 30, -(2 ** 31)], dtype=np.int32))
    np.testing.assert_array_equal(read_wav(tmp_path / "d.wav").samples[:, 0], [0.5, -1.0])


def test_hard_clip_is_counted(tmp_path, caplog):
    x = np.array([0.5, 1.5, -2.0, 1.0])
    with caplog.at_level(logging.WARNING):
        n = write_wav(Waveform(x, 16000), tmp_path / "e.wav")
    assert n == 2 and "clipped 2" in caplog.text
    np.testing.assert_array_equal(read_wav(tmp_path / "e.wav").samples[:, 0], [0.5, 1.0, -1.0, 1.0])


def test_deterministic_bytes(tmp_path, rng):
    x = Waveform(rng.uniform(-1, 1, (300, 2)), 16000)
    write_wav(x, tmp_path / "f1.wav")
    write_wav(x, tmp_path / "sub" / "f2.wav")
    assert (tmp_path / "f1.wav").read_bytes() == (tmp_path / "sub" / "f2.wav").read_bytes()


def test_unsupported_inputs(tmp_path):
    wavfile.write(tmp_path / "u8.wav", 16000, np.array([0, 128, 255], dtype=np.uint8))
    with pytest.raises(ValueError, match="unsupported"):
        read_wav(tmp_path / "u8.wav")
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00junkdata")
    with pytest.raises(ValueError):
        read_wav(tmp_path / "bad.wav")
    wavfile.write(tmp_path / "many.wav", 16000, np.zeros((10, 9), dtype=np.float32))
    with pytest.raises(ValueError, match="channels"):
        read_wav(tmp_path / "many.wav")


def test_write_errors(tmp_path):
    with pytest.raises(ValueError):
        write_wav(Waveform(np.zeros(10), 16000), tmp_path / "g.wav", "mp3")
    with pytest.raises(ValueError):
        write_wav(Waveform(np.array([0.0, np.nan]), 16000), tmp_path / "h.wav")
