import dataclasses
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from base_models import (
    Conv2dLayer,
    ConvLayerSpec,
    DenseLayer,
    DenseLayerSpec,
    LSTMLayer,
    ParameterSet,
    RecurrentLayerSpec,
    conv_stack_receptive_field,
)
from stft import (
    ComplexSpectrogram,
    DEFAULT_SAMPLE_RATE,
    StftParams,
    compute_features,
    istft,
    pad_audio,
    select_channels,
    stft,
)


def _conv(filters, t_width, f_width, t_dilation, f_dilation):
    return ConvLayerSpec(filters, t_width, f_width, t_dilation, f_dilation)


CONV_CONFIGS = {
    "small": [
        _conv(32, 1, 7, 1, 1),
        _conv(32, 7, 1, 1, 1),
        _conv(32, 5, 5, 1, 1),
        _conv(32, 5, 5, 2, 1),
        _conv(32, 5, 5, 4, 1),
        _conv(32, 5, 5, 8, 1),
        _conv(32, 5, 5, 16, 1),
        _conv(8, 1, 1, 1, 1),
    ],
    "large": [
        _conv(32, 1, 7, 1, 1),
        _conv(32, 7, 1, 1, 1),
        _conv(32, 5, 5, 1, 1),
        _conv(32, 5, 5, 2, 1),
        _conv(32, 5, 5, 4, 1),
        _conv(32, 5, 5, 8, 1),
        _conv(32, 5, 5, 16, 1),
        _conv(32, 5, 5, 32, 1),
        _conv(32, 5, 5, 1, 1),
        _conv(32, 5, 5, 2, 2),
        _conv(32, 5, 5, 4, 4),
        _conv(32, 5, 5, 8, 8),
        _conv(32, 5, 5, 16, 16),
        _conv(32, 5, 5, 32, 32),
        _conv(8, 1, 1, 1, 1),
    ],
    "none": [],
}

MIN_LOOK_AHEAD_FRAMES, MAX_LOOK_AHEAD_FRAMES = -10, 20

TRUE_STRINGS = {"true", "yes", "1", "on"}
FALSE_STRINGS = {"false", "no", "0", "off"}


@dataclass
class ModelConfig:
    conv_config: str = "small"
    blstm_depth: int = 0
    blstm_width: int = 8
    fc_depth: int = 0
    fc_width: int = 8
    delta_phase: bool = False
    complex_loss_lambda: float = 0.0
    learning_rate: float = 1e-4
    input_channels: int = 1
    causal: bool = False
    look_ahead_frames: int = 0
    compression_power: float = 0.3

    def validate(self):
        """Return every violated constraint (empty when valid)."""
        errors = []
        if self.conv_config not in CONV_CONFIGS:
            errors.append(f"conv_config must be one of {sorted(CONV_CONFIGS)}, got {self.conv_config!r}")
        for key, low, high in [
            ("blstm_depth", 0, 5),
            ("blstm_width", 8, 1024),
            ("fc_depth", 0, 5),
            ("fc_width", 8, 1024),
            ("input_channels", 1, 2),
        ]:
            value = getattr(self, key)
            if not low <= value <= high:
                errors.append(f"{key} must be in [{low}, {high}], got {value}")
        if not 0.0 <= self.complex_loss_lambda <= 1.0:
            errors.append(f"complex_loss_lambda must be in [0, 1], got {self.complex_loss_lambda}")
        if not self.learning_rate > 0:
            errors.append(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.compression_power <= 1.0:
            errors.append(f"compression_power must be in (0, 1], got {self.compression_power}")
        if not MIN_LOOK_AHEAD_FRAMES <= self.look_ahead_frames <= MAX_LOOK_AHEAD_FRAMES:
            errors.append(
                f"look_ahead_frames must be in [{MIN_LOOK_AHEAD_FRAMES}, {MAX_LOOK_AHEAD_FRAMES}], "
                f"got {self.look_ahead_frames}"
            )
        if not self.causal and self.look_ahead_frames != 0:
            errors.append("look_ahead_frames must be 0 for a non-causal model")
        return errors

    def check(self):
        errors = self.validate()
        if errors:
            raise ValueError("invalid model config: " + "; ".join(errors))
        return self

    def as_causal(self, look_ahead_frames=0):
        return dataclasses.replace(self, causal=True, look_ahead_frames=look_ahead_frames)

    @property
    def feature_channels(self):
        return self.input_channels * (2 if self.delta_phase else 1)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**{k: v for k, v in d.items()})

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_kv(self):
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text):
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown model config key {key!r}")
            values[key] = _coerce(key, value, types[key])
        return cls(**values)


def _coerce(key, value, kind):
    if kind in (bool, "bool"):
        if value.lower() in TRUE_STRINGS:
            return True
        if value.lower() in FALSE_STRINGS:
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value


def load_model_config(path):
    """Read a ModelConfig from a quinine YAML run/model file or a flat key = value file."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such config file: {path}")
    if path.endswith((".yaml", ".yml")):
        from funcy import merge
        from quinine import Quinfig, tlist

        from schema import schema

        # list-valued inherit:, as QuinineArgumentParser allows
        conf = Quinfig(config_path=path, schema=merge(schema, {"inherit": tlist}))
        return ModelConfig.from_dict(dict(conf.model)).check()
    with open(path, encoding="utf-8") as fp:
        return ModelConfig.from_kv(fp.read()).check()


def write_model_config(path, config):
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(config.to_kv())


@dataclass
class MaskTensor:
    values: np.ndarray

    @property
    def n_frames(self):
        return self.values.shape[0]


@dataclass
class ForwardTrace:
    network: "EnhancementNetwork"
    params: ParameterSet
    caches: list
    n_input_frames: int
    conv_output_shape: tuple


class EnhancementNetwork:
    """Conv stack -> residual LSTMs -> ReLU dense layers -> sigmoid mask head."""

    def __init__(self, config, stft_params=None, conv_specs=None, dtype=np.float32):
        self.config = config
        self.stft_params = stft_params or StftParams()
        self.dtype = dtype
        self.params = None

        padding = "causal" if config.causal else "centered"
        if conv_specs is None:
            conv_specs = CONV_CONFIGS[config.conv_config]
        self.conv_specs = [spec.with_padding(padding) for spec in conv_specs]

        n_bins = self.stft_params.n_bins
        channels = config.feature_channels
        self.conv_layers = []
        for i, spec in enumerate(self.conv_specs):
            self.conv_layers.append(Conv2dLayer(f"conv{i}", spec, channels))
            channels = spec.filters
        self.flat_dim = n_bins * channels

        dim = self.flat_dim
        self.lstm_layers = []
        for i in range(config.blstm_depth):
            spec = RecurrentLayerSpec(config.blstm_width, bidirectional=not config.causal)
            layer = LSTMLayer(f"lstm{i}", spec, dim)
            self.lstm_layers.append(layer)
            dim = layer.out_dim

        self.dense_layers = []
        for i in range(config.fc_depth):
            self.dense_layers.append(DenseLayer(f"fc{i}", DenseLayerSpec(config.fc_width, "relu"), dim))
            dim = config.fc_width
        self.dense_layers.append(DenseLayer("mask", DenseLayerSpec(n_bins, "sigmoid"), dim))

    @property
    def layers(self):
        return self.conv_layers + self.lstm_layers + self.dense_layers

    @property
    def n_bins(self):
        return self.stft_params.n_bins

    @property
    def look_ahead_frames(self):
        return self.config.look_ahead_frames

    def param_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = ParameterSet(seed=seed)
        for layer in self.layers:
            params.update(layer.init_params(rng, self.dtype))
        return params

    def receptive_field(self):
        if not self.conv_specs:
            return 0, 0
        return conv_stack_receptive_field(self.conv_specs)

    # features

    def analysis_length(self, n_samples):
        """Samples needed to analyse T + max(k, 0) frames of an n_samples clip."""
        p = self.stft_params
        n_frames = p.n_frames(n_samples) + max(self.look_ahead_frames, 0)
        return (n_frames - 1) * p.hop + p.frame_len

    def features(self, audio):
        """Features over the audio plus look-ahead padding (T + max(k, 0) frames)."""
        padding = self.analysis_length(len(audio)) - len(audio)
        spec = stft(pad_audio(audio, padding), self.stft_params)
        return compute_features(
            spec,
            self.config.compression_power,
            self.config.delta_phase,
            self.config.input_channels,
        )

    # offline

    def _shift_input(self, x):
        k = self.look_ahead_frames
        if k >= 0:
            return x
        shifted = np.zeros_like(x)
        if -k < len(x):
            shifted[-k:] = x[: len(x) + k]
        return shifted

    def forward(self, features, params=None):
        params = self.params if params is None else params
        x = getattr(features, "values", features).astype(self.dtype, copy=False)
        if x.ndim != 3 or x.shape[1] != self.n_bins or x.shape[2] != self.config.feature_channels:
            raise ValueError(
                f"expected features [T, {self.n_bins}, {self.config.feature_channels}], got {x.shape}"
            )
        k = max(self.look_ahead_frames, 0)
        if x.shape[0] <= k:
            raise ValueError(f"need more than {k} feature frames for look-ahead {k}, got {x.shape[0]}")

        caches = []
        h = self._shift_input(x)
        for layer in self.conv_layers:
            h, cache = layer.forward(h, params)
            caches.append(cache)
        conv_output_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        for layer in self.lstm_layers:
            h, cache = layer.forward(h, params)
            caches.append(cache)
        for layer in self.dense_layers:
            h, cache = layer.forward(h, params)
            caches.append(cache)

        trace = ForwardTrace(self, params, caches, x.shape[0], conv_output_shape)
        return MaskTensor(h[k:]), trace

    def backward(self, mask_grad, trace):
        if trace is None:
            raise ValueError("backward needs the trace of a recorded forward pass")
        params = trace.params
        k = max(self.look_ahead_frames, 0)
        grad = np.zeros((trace.n_input_frames, self.n_bins), dtype=self.dtype)
        grad[k:] = mask_grad

        grads = ParameterSet(seed=params.seed)
        caches = list(trace.caches)
        for layer in reversed(self.lstm_layers + self.dense_layers):
            grad, layer_grads = layer.backward(grad, params, caches.pop())
            grads.update(layer_grads)
        grad = grad.reshape(trace.conv_output_shape)
        for layer in reversed(self.conv_layers):
            grad, layer_grads = layer.backward(grad, params, caches.pop())
            grads.update(layer_grads)

        shift = self.look_ahead_frames
        if shift < 0:
            unshifted = np.zeros_like(grad)
            if -shift < len(grad):
                unshifted[: len(grad) + shift] = grad[-shift:]
            grad = unshifted
        return grads, grad

    # streaming

    def init_stream_state(self):
        if not self.config.causal:
            raise ValueError("only causal networks can be streamed")
        conv_states = [layer.init_state(self.n_bins, self.dtype) for layer in self.conv_layers]
        lstm_states = [layer.zero_state(self.dtype) for layer in self.lstm_layers]
        return conv_states, lstm_states

    def step(self, feature_frame, conv_states, lstm_states, params=None):
        params = self.params if params is None else params
        h = feature_frame.astype(self.dtype, copy=False)
        for layer, state in zip(self.conv_layers, conv_states):
            h = layer.step(h, params, state)
        h = h.reshape(-1)
        for layer, state in zip(self.lstm_layers, lstm_states):
            h = layer.step(h, params, state)
        for layer in self.dense_layers:
            h = layer.step(h, params)
        return h


def build_model(config, seed=0, stft_params=None, conv_specs=None, dtype=np.float32):
    config.check()
    network = EnhancementNetwork(config, stft_params, conv_specs, dtype)
    params = network.init_params(seed)
    network.params = params
    return network, params


def forward_mask(network, features, params=None):
    mask, _ = network.forward(features, params)
    return mask


def backward(mask_grad, forward_trace):
    if forward_trace is None:
        raise ValueError("backward needs the trace of a recorded forward pass")
    return forward_trace.network.backward(mask_grad, forward_trace)


def apply_mask(mask, noisy):
    """Shared real mask times the channel sum of the noisy STFT."""
    values = getattr(mask, "values", mask)
    if values.shape != noisy.values.shape[:2]:
        raise ValueError(
            f"mask shape {values.shape} does not match spectrogram frames/bins {noisy.values.shape[:2]}"
        )
    enhanced = values * noisy.values.sum(axis=2)
    return ComplexSpectrogram(
        enhanced[:, :, None], noisy.params, noisy.original_length, noisy.sample_rate
    )


def noisy_spectrogram(network, audio):
    return select_channels(stft(audio, network.stft_params), network.config.input_channels)


def enhance_offline(network, noisy, params=None, bypass_mask=False):
    spec = noisy_spectrogram(network, noisy)
    if bypass_mask:
        mask = MaskTensor(np.ones(spec.values.shape[:2], dtype=network.dtype))
    else:
        mask = forward_mask(network, network.features(noisy), params)
    return istft(apply_mask(mask, spec)), mask


def _as_network(model, stft_params=None):
    if isinstance(model, EnhancementNetwork):
        return model
    return EnhancementNetwork(model.check(), stft_params)


def param_breakdown(model, stft_params=None):
    network = _as_network(model, stft_params)
    return {
        layer.name: int(sum(np.prod(shape) for shape in layer.param_shapes().values()))
        for layer in network.layers
    }


def param_count(model, stft_params=None):
    return sum(param_breakdown(model, stft_params).values())


def ops_breakdown(model, stft_params=None):
    if isinstance(model, (list, tuple)):
        layers, n_bins = model, (stft_params or StftParams()).n_bins
    else:
        network = _as_network(model, stft_params)
        layers, n_bins = network.layers, network.n_bins
    ops = {}
    for layer in layers:
        if isinstance(layer, Conv2dLayer):
            ops[layer.name] = layer.macs_per_frame(n_bins)
        else:
            ops[layer.name] = layer.macs_per_frame()
    return ops


def ops_per_audio_second(model, stft_params=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """Multiply-adds per second of audio (per-frame cost times frame rate)."""
    if isinstance(model, EnhancementNetwork):
        stft_params = model.stft_params
    stft_params = stft_params or StftParams()
    per_frame = sum(ops_breakdown(model, stft_params).values())
    return per_frame * stft_params.frames_per_second(sample_rate)


# checkpoints

CHECKPOINT_MAGIC = b"MSKSTRM1"


def save_checkpoint(path, network, params=None):
    params = network.params if params is None else params
    tensors, offset = [], 0
    for name in network.param_shapes():
        tensor = params[name]
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += tensor.size * 4
    manifest = {
        "config": network.config.to_kv(),
        "stft": {
            "frame_len": network.stft_params.frame_len,
            "hop": network.stft_params.hop,
            "fft_size": network.stft_params.fft_size,
        },
        "conv_specs": [dataclasses.asdict(spec) for spec in network.conv_specs],
        "seed": params.seed,
        "tensors": tensors,
    }
    encoded = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<I", len(encoded)))
        fp.write(encoded)
        for entry in tensors:
            fp.write(np.ascontiguousarray(params[entry["name"]], dtype="<f4").tobytes())


def read_checkpoint_manifest(path):
    manifest, _ = _read_checkpoint(path, with_data=False)
    return manifest


def _read_checkpoint(path, with_data=True):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such checkpoint: {path}")
    with open(path, "rb") as fp:
        magic = fp.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        (length,) = struct.unpack("<I", fp.read(4))
        manifest = json.loads(fp.read(length).decode("utf-8"))
        data = fp.read() if with_data else None
    return manifest, data


def load_checkpoint(path, dtype=np.float32):
    manifest, data = _read_checkpoint(path)
    config = ModelConfig.from_kv(manifest["config"]).check()
    stft_params = StftParams(**manifest["stft"])
    conv_specs = [ConvLayerSpec(**spec) for spec in manifest["conv_specs"]]
    network = EnhancementNetwork(config, stft_params, conv_specs, dtype)

    expected = network.param_shapes()
    stored = {entry["name"]: entry for entry in manifest["tensors"]}
    if set(stored) != set(expected):
        raise ValueError(f"{path}: tensor names do not match the model built from its config")
    params = ParameterSet(seed=manifest.get("seed"))
    for name, shape in expected.items():
        entry = stored[name]
        if tuple(entry["shape"]) != tuple(shape):
            raise ValueError(f"{path}: tensor {name} has shape {entry['shape']}, model expects {list(shape)}")
        count = int(np.prod(shape))
        start = entry["offset"]
        if start + 4 * count > len(data):
            raise ValueError(f"{path}: truncated tensor data for {name}")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        params[name] = values.reshape(shape).astype(dtype)
    network.params = params
    return network, params
