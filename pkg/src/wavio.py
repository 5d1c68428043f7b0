import os
import warnings

import numpy as np
from scipy.io import wavfile

from stft import AudioBuffer, DEFAULT_SAMPLE_RATE


def read_wav(path):
    """Read 16-bit PCM or 32-bit float WAV into an AudioBuffer scaled to [-1, 1)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such WAV file: {path}")
    sample_rate, data = wavfile.read(path)

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")

    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    if samples.shape[0] > 2:
        raise ValueError(f"{path}: expected 1 or 2 channels, got {samples.shape[0]}")
    if sample_rate != DEFAULT_SAMPLE_RATE:
        warnings.warn(
            f"{path}: sample rate {sample_rate} Hz, expected {DEFAULT_SAMPLE_RATE} Hz; no resampling is done"
        )
    return AudioBuffer(samples, sample_rate)


def write_wav(path, audio, sample_format="float32"):
    if sample_format == "float32":
        data = audio.samples.T.astype(np.float32)
    elif sample_format == "pcm16":
        data = np.clip(np.round(audio.samples.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV sample format {sample_format}")
    if data.shape[1] == 1:
        data = data[:, 0]
    try:
        wavfile.write(path, audio.sample_rate, np.ascontiguousarray(data))
    except OSError as e:
        raise OSError(f"failed to write {path}: {e}") from e
