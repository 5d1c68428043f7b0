"""Causal frame-by-frame enhancement.

Samples are buffered until a full analysis frame is available; each frame is
pushed through the network (conv ring buffers, LSTM carries) and the mask for
output frame t is applied once feature frame t + look_ahead has been seen.
Synthesis is incremental weighted overlap-add, so an output sample is final as
soon as the last frame overlapping it has been added.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from base_models import ParameterSet
from stft import DEFAULT_SAMPLE_RATE, AudioBuffer, StftParams, phase_difference


@dataclass
class StreamState:
    network: object
    params: ParameterSet
    sample_in_buffer: np.ndarray
    feature_history: list
    recurrent_states: list
    ola_accumulator: np.ndarray
    ola_norm: np.ndarray
    look_ahead_frames: int
    feature_delay: deque = field(default_factory=deque)
    pending_spectra: deque = field(default_factory=deque)
    prev_spectrum: np.ndarray = None
    frames_analyzed: int = 0
    frames_emitted: int = 0
    samples_received: int = 0
    samples_emitted: int = 0
    flushed: bool = False


def init_stream(network, config=None, params=None):
    config = network.config if config is None else config
    if config != network.config:
        raise ValueError("stream config does not match the network config")
    if not config.causal:
        raise ValueError("streaming needs a causal model (unidirectional LSTM, causal conv)")
    params = network.params if params is None else params
    p = network.stft_params
    conv_states, lstm_states = network.init_stream_state()

    k = config.look_ahead_frames
    delay = deque()
    for _ in range(max(-k, 0)):
        delay.append(np.zeros((network.n_bins, config.feature_channels), dtype=network.dtype))

    return StreamState(
        network=network,
        params=params,
        sample_in_buffer=np.zeros((config.input_channels, 0)),
        feature_history=conv_states,
        recurrent_states=lstm_states,
        ola_accumulator=np.zeros(p.frame_len - p.hop),
        ola_norm=np.zeros(p.frame_len - p.hop),
        look_ahead_frames=k,
        feature_delay=delay,
    )


def _as_channels(samples, input_channels):
    samples = getattr(samples, "samples", samples)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] < input_channels:
        raise ValueError(f"model expects {input_channels} channels, got {samples.shape[0]}")
    return samples[:input_channels]


def _frame_features(state, spectrum):
    config = state.network.config
    magnitude = np.abs(spectrum) ** config.compression_power
    if not config.delta_phase:
        return magnitude.astype(np.float32)
    if state.prev_spectrum is None:
        # first frame has no predecessor
        phase = np.zeros(spectrum.shape)
    else:
        phase = phase_difference(spectrum, state.prev_spectrum)
    return np.concatenate([magnitude, phase], axis=1).astype(np.float32)


def _synthesize(state, spectrum, mask):
    p = state.network.stft_params
    overlap = p.frame_len - p.hop
    frame = np.fft.irfft(mask * spectrum, n=p.fft_size)[: p.frame_len] * p.window

    numerator = np.zeros(p.frame_len)
    norm = np.zeros(p.frame_len)
    numerator[:overlap] = state.ola_accumulator
    norm[:overlap] = state.ola_norm
    numerator += frame
    norm += p.window**2

    state.ola_accumulator = numerator[p.hop :]
    state.ola_norm = norm[p.hop :]
    state.frames_emitted += 1
    return _normalize(numerator[: p.hop], norm[: p.hop])


def _normalize(numerator, norm):
    out = numerator.copy()
    nonzero = norm > 1e-10
    out[nonzero] /= norm[nonzero]
    return out


def _analyze_frame(state, frame_samples):
    network, p = state.network, state.network.stft_params
    spectrum = np.fft.rfft(frame_samples * p.window, n=p.fft_size, axis=-1).T
    features = _frame_features(state, spectrum)
    state.prev_spectrum = spectrum
    state.pending_spectra.append(spectrum.sum(axis=1))
    j = state.frames_analyzed
    state.frames_analyzed += 1

    k = state.look_ahead_frames
    if k < 0:
        state.feature_delay.append(features)
        features = state.feature_delay.popleft()
    mask = network.step(features, state.feature_history, state.recurrent_states, state.params)
    if j - max(k, 0) < 0:
        return None
    return _synthesize(state, state.pending_spectra.popleft(), mask)


def _drain(state, last_frame=None):
    p = state.network.stft_params
    outputs = []
    while state.sample_in_buffer.shape[1] >= p.frame_len:
        if last_frame is not None and state.frames_analyzed > last_frame:
            break
        out = _analyze_frame(state, state.sample_in_buffer[:, : p.frame_len])
        state.sample_in_buffer = state.sample_in_buffer[:, p.hop :]
        if out is not None:
            outputs.append(out)
    return outputs


def _collect(state, outputs):
    out = np.concatenate(outputs) if outputs else np.zeros(0)
    state.samples_emitted += len(out)
    return out


def push_samples(state, samples):
    """Buffer a chunk and return every enhanced sample that has become final."""
    if state.flushed:
        raise RuntimeError("cannot push samples into a flushed stream")
    samples = _as_channels(samples, state.network.config.input_channels)
    state.sample_in_buffer = np.concatenate([state.sample_in_buffer, samples], axis=1)
    state.samples_received += samples.shape[1]
    return _collect(state, _drain(state))


def flush(state):
    """Zero-pad to drain look-ahead and synthesis tails; total output equals total input."""
    if state.flushed:
        raise RuntimeError("stream already flushed")
    state.flushed = True
    n = state.samples_received
    if n == 0:
        return np.zeros(0)

    p = state.network.stft_params
    last_frame = p.n_frames(n) - 1 + max(state.look_ahead_frames, 0)
    needed = last_frame * p.hop + p.frame_len
    consumed = state.frames_analyzed * p.hop
    missing = needed - consumed - state.sample_in_buffer.shape[1]
    if missing > 0:
        pad = np.zeros((state.sample_in_buffer.shape[0], missing))
        state.sample_in_buffer = np.concatenate([state.sample_in_buffer, pad], axis=1)
    outputs = _drain(state, last_frame)
    outputs.append(_normalize(state.ola_accumulator, state.ola_norm))

    out = np.concatenate(outputs)[: n - state.samples_emitted]
    state.samples_emitted += len(out)
    return out


def enhance_stream(network, audio, chunk_size=160, params=None):
    state = init_stream(network, params=params)
    outputs = []
    for start in range(0, len(audio), chunk_size):
        outputs.append(push_samples(state, audio.samples[:, start : start + chunk_size]))
    outputs.append(flush(state))
    return AudioBuffer(np.concatenate(outputs), audio.sample_rate)


def latency_breakdown(config, stft_params=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """Output sample n is final once the last analysis frame overlapping it and the
    look-ahead frames after it are consumed, plus one hop for WOLA finalization."""
    if not config.causal:
        raise ValueError("latency is only defined for causal models")
    p = stft_params or StftParams()
    framing = p.frame_len - p.hop
    look_ahead = max(config.look_ahead_frames, 0) * p.hop
    finalization = p.hop
    total = framing + look_ahead + finalization
    to_ms = 1000.0 / sample_rate
    return {
        "framing_samples": framing,
        "look_ahead_samples": look_ahead,
        "finalization_samples": finalization,
        "total_samples": total,
        "total_ms": total * to_ms,
    }


def algorithmic_latency(config, stft_params=None, sample_rate=DEFAULT_SAMPLE_RATE):
    return latency_breakdown(config, stft_params, sample_rate)["total_ms"]
