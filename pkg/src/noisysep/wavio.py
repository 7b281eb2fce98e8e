"""Mono RIFF/WAVE I/O (16-bit PCM or 32-bit float)."""

import warnings

import numpy as np
from scipy.io import wavfile

from .sigcore import Waveform


class WavFormatError(ValueError):
    pass


_INT16_SCALE = 32768.0


def read_wav(path) -> Waveform:
    """Read a mono 16-bit or 32-bit float file into a float64 Waveform.

    Truncated or malformed files raise :class:`WavFormatError`; a partial
    signal is never returned.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rate, data = wavfile.read(path)
    except (ValueError, wavfile.WavFileWarning, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _INT16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if samples.size == 0:
        raise WavFormatError(f"{path}: no samples")
    return Waveform(samples, int(rate))


def write_wav(path, wave, sample_rate=None, encoding: str = "float32") -> None:
    """Write ``wave`` as mono ``float32`` (default) or ``int16`` PCM."""
    if sample_rate is None:
        sample_rate = getattr(wave, "sample_rate", 16000)
    samples = np.asarray(wave, dtype=np.float64)
    if encoding == "float32":
        data = samples.astype(np.float32)
    elif encoding == "int16":
        data = np.clip(np.round(samples * _INT16_SCALE), -32768, 32767).astype(np.int16)
    else:
        raise WavFormatError(f"unsupported encoding {encoding!r}")
    wavfile.write(path, int(sample_rate), data)
