import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
os.environ.setdefault("WANDB_MODE", "disabled")
os.environ.setdefault("MPLBACKEND", "Agg")

from base_models import ConvLayerSpec  # noqa: E402
from stft import AudioBuffer, StftParams  # noqa: E402


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f with respect to every entry of x (modified in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        plus = f()
        x[idx] = orig - eps
        minus = f()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def rel_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_stft():
    return StftParams(frame_len=16, hop=8, fft_size=16)


@pytest.fixture
def tiny_conv_specs():
    return [ConvLayerSpec(3, 3, 3, 1, 1), ConvLayerSpec(2, 3, 1, 2, 1)]


def random_audio(rng, seconds=0.5, channels=2, sample_rate=16000):
    n = int(seconds * sample_rate)
    return AudioBuffer(0.1 * rng.standard_normal((channels, n)), sample_rate)
