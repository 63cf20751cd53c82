"""Weighted prediction error dereverberation with virtual channel expansion."""

from .audio_io import read_wav, write_wav
from .metrics import MetricsReport, evaluate
from .psd import ChannelAverage, ExternalFile, Iterative, RefChannel, provide_psd
from .room_sim import DatagenConfig, RoomSpec, Rir, generate_example, simulate_rir
from .stft import Spectrogram, StftConfig, Waveform, istft, stft
from .vace import ExternalSignal, FrameDelay, LateOracle, ScaledCopy, VaceConfig, vace_wpe
from .wpe import WpeConfig, wpe_iterative, wpe_with_psd

__version__ = "0.1.0"

__all__ = [
    "ChannelAverage", "DatagenConfig", "ExternalFile", "ExternalSignal", "FrameDelay",
    "Iterative", "LateOracle", "MetricsReport", "RefChannel", "Rir", "RoomSpec", "ScaledCopy",
    "Spectrogram", "StftConfig", "VaceConfig", "Waveform", "WpeConfig", "evaluate",
    "generate_example", "istft", "provide_psd", "read_wav", "simulate_rir", "stft",
    "vace_wpe", "wpe_iterative", "wpe_with_psd", "write_wav",
]
