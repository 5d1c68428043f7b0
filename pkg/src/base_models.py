from dataclasses import dataclass

import numpy as np
from scipy.special import expit


PADDING_MODES = ["centered", "causal"]
ACTIVATIONS = ["relu", "sigmoid"]


@dataclass(frozen=True)
class ConvLayerSpec:
    filters: int
    t_width: int
    f_width: int
    t_dilation: int = 1
    f_dilation: int = 1
    padding_mode: str = "centered"

    def __post_init__(self):
        for key in ["filters", "t_width", "f_width", "t_dilation", "f_dilation"]:
            if getattr(self, key) < 1:
                raise ValueError(f"conv {key} must be >= 1, got {getattr(self, key)}")
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"unknown padding mode {self.padding_mode}")

    @property
    def t_extent(self):
        return (self.t_width - 1) * self.t_dilation

    @property
    def f_extent(self):
        return (self.f_width - 1) * self.f_dilation

    def time_padding(self):
        """(past, future) zero frames; even centered extents put the extra frame in the past."""
        if self.padding_mode == "causal":
            return self.t_extent, 0
        return self.t_extent - self.t_extent // 2, self.t_extent // 2

    def freq_padding(self):
        return self.f_extent - self.f_extent // 2, self.f_extent // 2

    def with_padding(self, padding_mode):
        return ConvLayerSpec(
            self.filters,
            self.t_width,
            self.f_width,
            self.t_dilation,
            self.f_dilation,
            padding_mode,
        )


@dataclass(frozen=True)
class RecurrentLayerSpec:
    width: int
    bidirectional: bool = True
    residual: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"recurrent width must be >= 1, got {self.width}")

    @property
    def directions(self):
        return 2 if self.bidirectional else 1


@dataclass(frozen=True)
class DenseLayerSpec:
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"dense width must be >= 1, got {self.width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation}")


class ParameterSet(dict):
    """Named parameter tensors plus the seed they were initialised from."""

    def __init__(self, *args, seed=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.seed = seed

    def copy(self):
        return ParameterSet({k: v.copy() for k, v in self.items()}, seed=self.seed)

    def astype(self, dtype):
        return ParameterSet({k: v.astype(dtype) for k, v in self.items()}, seed=self.seed)

    def zeros_like(self):
        return ParameterSet({k: np.zeros_like(v) for k, v in self.items()}, seed=self.seed)

    def shapes(self):
        return {k: v.shape for k, v in self.items()}

    @property
    def size(self):
        return int(sum(v.size for v in self.values()))

    def global_norm(self):
        return float(np.sqrt(sum(np.sum(np.square(v, dtype=np.float64)) for v in self.values())))


def check_finite(name, array):
    if not np.all(np.isfinite(array)):
        raise ValueError(f"non-finite values in {name}")
    return array


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def relu(x):
    return np.maximum(x, 0)


class Conv2dLayer:
    """Dilated 2-D convolution over (time, frequency) with same-size output and ReLU."""

    def __init__(self, name, spec, in_channels):
        self.name = name
        self.spec = spec
        self.in_channels = in_channels

    def param_shapes(self):
        s = self.spec
        return {
            f"{self.name}.weight": (s.t_width, s.f_width, self.in_channels, s.filters),
            f"{self.name}.bias": (s.filters,),
        }

    def init_params(self, rng, dtype):
        s = self.spec
        taps = s.t_width * s.f_width
        shape = self.param_shapes()[f"{self.name}.weight"]
        return {
            f"{self.name}.weight": glorot_uniform(
                rng, shape, taps * self.in_channels, taps * s.filters, dtype
            ),
            f"{self.name}.bias": np.zeros(s.filters, dtype=dtype),
        }

    def output_shape(self, input_shape):
        n_frames, n_bins, _ = input_shape
        return (n_frames, n_bins, self.spec.filters)

    def _check_input(self, x):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ValueError(
                f"layer {self.name}: expected input [T, F, {self.in_channels}], got {x.shape}"
            )

    def forward(self, x, params):
        self._check_input(x)
        s = self.spec
        weight = params[f"{self.name}.weight"]
        n_frames, n_bins, _ = x.shape
        xp = np.pad(x, (s.time_padding(), s.freq_padding(), (0, 0)))

        z = np.zeros((n_frames, n_bins, s.filters), dtype=x.dtype)
        for kt in range(s.t_width):
            t0 = kt * s.t_dilation
            for kf in range(s.f_width):
                f0 = kf * s.f_dilation
                z += xp[t0 : t0 + n_frames, f0 : f0 + n_bins] @ weight[kt, kf]
        z += params[f"{self.name}.bias"]
        return relu(z), {"xp": xp, "active": z > 0, "input_shape": x.shape}

    def backward(self, dy, params, cache):
        s = self.spec
        weight = params[f"{self.name}.weight"]
        xp = cache["xp"]
        n_frames, n_bins, _ = cache["input_shape"]
        dz = dy * cache["active"]
        dz_flat = dz.reshape(-1, s.filters)

        dweight = np.zeros_like(weight)
        dxp = np.zeros_like(xp)
        for kt in range(s.t_width):
            t0 = kt * s.t_dilation
            for kf in range(s.f_width):
                f0 = kf * s.f_dilation
                window = xp[t0 : t0 + n_frames, f0 : f0 + n_bins]
                dweight[kt, kf] = window.reshape(-1, self.in_channels).T @ dz_flat
                dxp[t0 : t0 + n_frames, f0 : f0 + n_bins] += dz @ weight[kt, kf].T

        (t_before, _), (f_before, _) = s.time_padding(), s.freq_padding()
        dx = dxp[t_before : t_before + n_frames, f_before : f_before + n_bins]
        grads = {
            f"{self.name}.weight": dweight,
            f"{self.name}.bias": dz_flat.sum(axis=0),
        }
        return dx, grads

    def init_state(self, n_bins, dtype):
        if self.spec.padding_mode != "causal":
            raise ValueError(f"layer {self.name}: only causal convolutions can be stepped")
        return {
            "buffer": np.zeros((self.spec.t_extent, n_bins, self.in_channels), dtype=dtype),
            "pos": 0,
        }

    def step(self, frame, params, state):
        """Advance one frame using the ring buffer of the last t_extent input frames."""
        s = self.spec
        weight = params[f"{self.name}.weight"]
        buffer, pos, extent = state["buffer"], state["pos"], s.t_extent
        n_bins = frame.shape[0]

        z = np.zeros((n_bins, s.filters), dtype=frame.dtype)
        for kt in range(s.t_width):
            lag = extent - kt * s.t_dilation
            row = frame if lag == 0 else buffer[(pos - lag) % extent]
            row = np.pad(row, (s.freq_padding(), (0, 0)))
            for kf in range(s.f_width):
                f0 = kf * s.f_dilation
                z += row[f0 : f0 + n_bins] @ weight[kt, kf]
        z += params[f"{self.name}.bias"]

        if extent > 0:
            buffer[pos] = frame
            state["pos"] = (pos + 1) % extent
        return relu(z)

    def macs_per_frame(self, n_bins):
        s = self.spec
        return n_bins * self.in_channels * s.filters * s.t_width * s.f_width


class LSTMLayer:
    """Uni- or bidirectional LSTM with an optional residual bypass."""

    def __init__(self, name, spec, in_dim):
        self.name = name
        self.spec = spec
        self.in_dim = in_dim

    @property
    def out_dim(self):
        return self.spec.width * self.spec.directions

    @property
    def direction_names(self):
        return ["fw", "bw"][: self.spec.directions]

    @property
    def has_projection(self):
        return self.spec.residual and self.in_dim != self.out_dim

    def param_shapes(self):
        width = self.spec.width
        shapes = {}
        for d in self.direction_names:
            shapes[f"{self.name}.{d}.w_input"] = (self.in_dim, 4 * width)
            shapes[f"{self.name}.{d}.w_hidden"] = (width, 4 * width)
            shapes[f"{self.name}.{d}.bias"] = (4 * width,)
        if self.has_projection:
            shapes[f"{self.name}.projection"] = (self.in_dim, self.out_dim)
        return shapes

    def init_params(self, rng, dtype):
        width = self.spec.width
        limit = 1.0 / np.sqrt(width)
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".bias"):
                bias = np.zeros(shape, dtype=dtype)
                bias[width : 2 * width] = 1.0  # forget gate
                params[name] = bias
            elif name.endswith(".projection"):
                params[name] = glorot_uniform(rng, shape, shape[0], shape[1], dtype)
            else:
                params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        return params

    def output_shape(self, input_shape):
        return (input_shape[0], self.out_dim)

    def zero_state(self, dtype):
        width = self.spec.width
        return [
            (np.zeros(width, dtype=dtype), np.zeros(width, dtype=dtype))
            for _ in self.direction_names
        ]

    def _check_state(self, state):
        if len(state) != self.spec.directions:
            raise ValueError(
                f"layer {self.name}: expected {self.spec.directions} direction states, got {len(state)}"
            )
        for h, c in state:
            if h.shape != (self.spec.width,) or c.shape != (self.spec.width,):
                raise ValueError(
                    f"layer {self.name}: state shape {h.shape}/{c.shape}, expected ({self.spec.width},)"
                )

    @staticmethod
    def cell(z, c_prev):
        width = c_prev.shape[-1]
        i = expit(z[..., :width])
        f = expit(z[..., width : 2 * width])
        g = np.tanh(z[..., 2 * width : 3 * width])
        o = expit(z[..., 3 * width :])
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        return o * tanh_c, c, (i, f, g, o, tanh_c)

    def _run_direction(self, x, params, prefix, h0, c0, reverse):
        n_frames, width = x.shape[0], self.spec.width
        x_proj = x @ params[f"{prefix}.w_input"] + params[f"{prefix}.bias"]
        w_hidden = params[f"{prefix}.w_hidden"]

        cache = {
            key: np.zeros((n_frames, width), dtype=x.dtype)
            for key in ["h", "h_prev", "c_prev", "i", "f", "g", "o", "tanh_c"]
        }
        h, c = h0, c0
        order = range(n_frames - 1, -1, -1) if reverse else range(n_frames)
        for t in order:
            cache["h_prev"][t], cache["c_prev"][t] = h, c
            h, c, (i, f, g, o, tanh_c) = self.cell(x_proj[t] + h @ w_hidden, c)
            cache["h"][t] = h
            cache["i"][t], cache["f"][t], cache["g"][t] = i, f, g
            cache["o"][t], cache["tanh_c"][t] = o, tanh_c
        return cache, (h, c)

    def _input_check(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"layer {self.name}: expected input [T, {self.in_dim}], got {x.shape}")

    def forward(self, x, params, initial_state=None):
        self._input_check(x)
        if initial_state is None:
            initial_state = self.zero_state(x.dtype)
        self._check_state(initial_state)

        caches, final_state, outputs = [], [], []
        for d, (h0, c0) in zip(self.direction_names, initial_state):
            cache, state = self._run_direction(
                x, params, f"{self.name}.{d}", h0, c0, reverse=(d == "bw")
            )
            caches.append(cache)
            final_state.append(state)
            outputs.append(cache["h"])
        y = np.concatenate(outputs, axis=1)
        if self.has_projection:
            y = y + x @ params[f"{self.name}.projection"]
        elif self.spec.residual:
            y = y + x
        return y, {"x": x, "directions": caches, "final_state": final_state}

    def _backprop_direction(self, dh_seq, cache, x, params, prefix, reverse):
        width = self.spec.width
        w_hidden = params[f"{prefix}.w_hidden"]
        n_frames = dh_seq.shape[0]
        dz_all = np.zeros((n_frames, 4 * width), dtype=dh_seq.dtype)
        dh_next = np.zeros(width, dtype=dh_seq.dtype)
        dc_next = np.zeros(width, dtype=dh_seq.dtype)

        # walk against the direction of processing
        order = range(n_frames) if reverse else range(n_frames - 1, -1, -1)
        for t in order:
            i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
            tanh_c = cache["tanh_c"][t]
            dh = dh_seq[t] + dh_next
            dc = dh * o * (1.0 - tanh_c**2) + dc_next
            dz = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * cache["c_prev"][t] * f * (1.0 - f),
                    dc * i * (1.0 - g**2),
                    dh * tanh_c * o * (1.0 - o),
                ]
            )
            dz_all[t] = dz
            dc_next = dc * f
            dh_next = dz @ w_hidden.T

        grads = {
            f"{prefix}.w_input": x.T @ dz_all,
            f"{prefix}.w_hidden": cache["h_prev"].T @ dz_all,
            f"{prefix}.bias": dz_all.sum(axis=0),
        }
        return dz_all @ params[f"{prefix}.w_input"].T, grads

    def backward(self, dy, params, cache):
        x = cache["x"]
        width = self.spec.width
        grads = {}
        dx = np.zeros_like(x)
        if self.has_projection:
            grads[f"{self.name}.projection"] = x.T @ dy
            dx += dy @ params[f"{self.name}.projection"].T
        elif self.spec.residual:
            dx += dy

        for k, (d, dcache) in enumerate(zip(self.direction_names, cache["directions"])):
            dh_seq = dy[:, k * width : (k + 1) * width]
            ddx, dgrads = self._backprop_direction(
                dh_seq, dcache, x, params, f"{self.name}.{d}", reverse=(d == "bw")
            )
            dx += ddx
            grads.update(dgrads)
        return dx, grads

    def step(self, x_t, params, state):
        """One causal step; state is the single-direction [(h, c)] carry, updated in place."""
        if self.spec.bidirectional:
            raise ValueError(f"layer {self.name}: bidirectional layers cannot be stepped")
        prefix = f"{self.name}.fw"
        h, c = state[0]
        z = x_t @ params[f"{prefix}.w_input"] + params[f"{prefix}.bias"] + h @ params[f"{prefix}.w_hidden"]
        h, c, _ = self.cell(z, c)
        state[0] = (h, c)
        if self.has_projection:
            return h + x_t @ params[f"{self.name}.projection"]
        if self.spec.residual:
            return h + x_t
        return h

    def macs_per_frame(self):
        width = self.spec.width
        macs = self.spec.directions * 4 * (width * (self.in_dim + width) + width)
        if self.has_projection:
            macs += self.in_dim * self.out_dim
        return macs


class DenseLayer:
    def __init__(self, name, spec, in_dim):
        self.name = name
        self.spec = spec
        self.in_dim = in_dim

    def param_shapes(self):
        return {
            f"{self.name}.weight": (self.in_dim, self.spec.width),
            f"{self.name}.bias": (self.spec.width,),
        }

    def init_params(self, rng, dtype):
        return {
            f"{self.name}.weight": glorot_uniform(
                rng, (self.in_dim, self.spec.width), self.in_dim, self.spec.width, dtype
            ),
            f"{self.name}.bias": np.zeros(self.spec.width, dtype=dtype),
        }

    def output_shape(self, input_shape):
        return (input_shape[0], self.spec.width)

    def _activate(self, z):
        if self.spec.activation == "sigmoid":
            return expit(z)
        return relu(z)

    def forward(self, x, params):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"layer {self.name}: expected input [T, {self.in_dim}], got {x.shape}")
        z = x @ params[f"{self.name}.weight"] + params[f"{self.name}.bias"]
        y = self._activate(z)
        return y, {"x": x, "y": y}

    def backward(self, dy, params, cache):
        y = cache["y"]
        if self.spec.activation == "sigmoid":
            dz = dy * y * (1.0 - y)
        else:
            dz = dy * (y > 0)
        grads = {
            f"{self.name}.weight": cache["x"].T @ dz,
            f"{self.name}.bias": dz.sum(axis=0),
        }
        return dz @ params[f"{self.name}.weight"].T, grads

    def step(self, x_t, params):
        return self._activate(x_t @ params[f"{self.name}.weight"] + params[f"{self.name}.bias"])

    def macs_per_frame(self):
        return self.in_dim * self.spec.width + self.spec.width


def conv2d_forward(x, spec, params, name="conv"):
    y, _ = Conv2dLayer(name, spec, x.shape[2]).forward(x, params)
    return y


def lstm_forward(x, spec, params, initial_state=None, name="lstm"):
    y, cache = LSTMLayer(name, spec, x.shape[1]).forward(x, params, initial_state)
    return y, cache["final_state"]


def dense_forward(x, spec, params, name="dense"):
    y, _ = DenseLayer(name, spec, x.shape[1]).forward(x, params)
    return y


def conv_stack_receptive_field(specs):
    """Accumulated (past, future) time receptive field of a conv stack, in frames."""
    if not specs:
        raise ValueError("receptive field of an empty conv stack is undefined")
    past = future = 0
    for spec in specs:
        before, after = spec.time_padding()
        past += before
        future += after
    return past, future
