import math
from dataclasses import dataclass, field, replace

import numpy as np


DEFAULT_SAMPLE_RATE = 16000


@dataclass
class AudioBuffer:
    """Multi-channel time-domain audio, samples shaped (channels, length)."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ValueError(f"audio samples must be 1-D or 2-D, got shape {samples.shape}")
        if samples.shape[0] not in (1, 2):
            raise ValueError(f"audio must have 1 or 2 channels, got {samples.shape[0]}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples

    @property
    def channels(self):
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return len(self) / self.sample_rate

    def channel(self, index):
        return AudioBuffer(self.samples[index : index + 1], self.sample_rate)


def hann_window(frame_len):
    """Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / frame_len)."""
    if frame_len < 2:
        raise ValueError(f"frame_len must be >= 2, got {frame_len}")
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)


@dataclass
class StftParams:
    frame_len: int = 400
    hop: int = 160
    fft_size: int = 512
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not (1 <= self.hop <= self.frame_len <= self.fft_size):
            raise ValueError(
                "STFT parameters must satisfy 1 <= hop <= frame_len <= fft_size, got "
                f"hop={self.hop} frame_len={self.frame_len} fft_size={self.fft_size}"
            )
        if self.window is None:
            self.window = hann_window(self.frame_len)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.frame_len,):
            raise ValueError(
                f"window length {self.window.shape} does not match frame_len {self.frame_len}"
            )
        if np.any(self.window < 0):
            raise ValueError("window coefficients must be non-negative")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, length):
        return math.ceil(max(length - self.frame_len, 0) / self.hop) + 1

    def frames_per_second(self, sample_rate=DEFAULT_SAMPLE_RATE):
        return sample_rate / self.hop


@dataclass
class ComplexSpectrogram:
    """Complex STFT values indexed [frame, bin, channel]."""

    values: np.ndarray
    params: StftParams
    original_length: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"spectrogram values must be [frame, bin, channel], got {self.values.shape}")
        if self.values.shape[1] != self.params.n_bins:
            raise ValueError(
                f"spectrogram has {self.values.shape[1]} bins, expected {self.params.n_bins}"
            )

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass
class FeatureTensor:
    """Real network input features indexed [frame, bin, feature-channel]."""

    values: np.ndarray
    kind: str

    @property
    def channels(self):
        return self.values.shape[2]


def pad_audio(audio, n_samples):
    if n_samples <= 0:
        return audio
    padded = np.pad(audio.samples, ((0, 0), (0, n_samples)))
    return AudioBuffer(padded, audio.sample_rate)


def stft(audio, params=None):
    params = params or StftParams()
    if len(audio) == 0:
        raise ValueError("cannot analyse empty audio")

    n_frames = params.n_frames(len(audio))
    padded_len = (n_frames - 1) * params.hop + params.frame_len
    x = np.zeros((audio.channels, padded_len), dtype=np.float64)
    x[:, : len(audio)] = audio.samples

    frames = np.lib.stride_tricks.sliding_window_view(x, params.frame_len, axis=-1)
    frames = frames[:, :: params.hop][:, :n_frames] * params.window
    values = np.fft.rfft(frames, n=params.fft_size, axis=-1)

    return ComplexSpectrogram(
        values=np.ascontiguousarray(values.transpose(1, 2, 0)),
        params=params,
        original_length=len(audio),
        sample_rate=audio.sample_rate,
    )


def synthesis_frames(values, params):
    """Inverse-transform [frame, bin, channel] values and apply the synthesis window."""
    frames = np.fft.irfft(values.transpose(2, 0, 1), n=params.fft_size, axis=-1)
    return frames[..., : params.frame_len] * params.window


def istft(spec):
    params = spec.params
    frames = synthesis_frames(spec.values, params)
    n_frames = spec.n_frames
    total = (n_frames - 1) * params.hop + params.frame_len

    out = np.zeros((spec.channels, total), dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    window_sq = params.window**2
    for t in range(n_frames):
        start = t * params.hop
        out[:, start : start + params.frame_len] += frames[:, t]
        norm[start : start + params.frame_len] += window_sq

    nonzero = norm > 1e-10
    out[:, nonzero] /= norm[nonzero]
    return AudioBuffer(out[:, : spec.original_length], spec.sample_rate)


def power_compress(spec, power):
    """|S|^p e^{i angle S}; zero stays zero and the phase is kept."""
    values = compress_values(spec.values, power)
    return replace(spec, values=values)


def compress_values(values, power):
    if power <= 0 or power > 1:
        raise ValueError(f"compression power must be in (0, 1], got {power}")
    if power == 1.0:
        return values.copy()
    magnitude = np.abs(values)
    scale = np.zeros_like(magnitude)
    nonzero = magnitude > 0
    scale[nonzero] = magnitude[nonzero] ** (power - 1.0)
    return values * scale


def magnitude_features(spec, power):
    if power <= 0 or power > 1:
        raise ValueError(f"compression power must be in (0, 1], got {power}")
    values = np.abs(spec.values) ** power
    return FeatureTensor(values.astype(np.float32), kind="magnitude")


def wrap_phase(angle):
    # np.angle returns [-pi, pi]; map -pi onto pi
    return np.where(angle <= -np.pi, angle + 2.0 * np.pi, angle)


def phase_difference(current, previous):
    """Wrapped phase advance from previous to current; 0 wherever either is 0."""
    product = current * np.conj(previous)
    angle = np.zeros(product.shape, dtype=np.float64)
    nonzero = product != 0
    angle[nonzero] = wrap_phase(np.angle(product[nonzero]))
    return angle


def delta_phase(spec):
    values = np.zeros(spec.values.shape, dtype=np.float64)
    if spec.n_frames > 1:
        values[1:] = phase_difference(spec.values[1:], spec.values[:-1])
    return FeatureTensor(values.astype(np.float32), kind="delta_phase")


def select_channels(spec, input_channels):
    if input_channels > spec.channels:
        raise ValueError(
            f"model expects {input_channels} input channels, audio has {spec.channels}"
        )
    if input_channels == spec.channels:
        return spec
    return replace(spec, values=spec.values[:, :, :input_channels])


def compute_features(spec, power, use_delta_phase, input_channels=None):
    """Compressed magnitudes, optionally followed by delta-phase channels."""
    if input_channels is not None:
        spec = select_channels(spec, input_channels)
    magnitude = magnitude_features(spec, power)
    if not use_delta_phase:
        return magnitude
    phase = delta_phase(spec)
    values = np.concatenate([magnitude.values, phase.values], axis=2)
    return FeatureTensor(values, kind="concatenated")
