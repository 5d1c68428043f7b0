import numpy as np
import pytest

from samplers import (
    NOISE_PROFILES,
    SNR_BUCKETS,
    TARGET_PEAK,
    get_noise_sampler,
    mix_at_snr,
    synth_noise,
    synth_target,
)
from stft import AudioBuffer


def _spectral_centroid(x, sample_rate=16000):
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sample_rate)
    return np.sum(freqs * power) / np.sum(power)


def test_target_is_deterministic():
    a, b = synth_target(1.0, 11), synth_target(1.0, 11)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, synth_target(1.0, 12).samples)


def test_target_is_broadside_and_normalized():
    target = synth_target(2.0, 3)
    assert target.samples.shape == (2, 32000)
    assert np.array_equal(target.samples[0], target.samples[1])
    assert np.max(np.abs(target.samples)) == pytest.approx(TARGET_PEAK)


def test_target_energy_sits_in_the_speech_band():
    centroids = [_spectral_centroid(synth_target(1.0, seed).samples[0]) for seed in range(50)]
    assert max(centroids) < 4000.0


def test_target_has_pauses():
    x = synth_target(4.0, 8).samples[0]
    window_energy = np.array([np.sum(x[i : i + 400] ** 2) for i in range(0, len(x) - 400, 400)])
    assert window_energy.min() < 1e-2 * window_energy.max()


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        synth_target(0.0, 1)
    with pytest.raises(ValueError):
        synth_noise(-1.0, 1)


@pytest.mark.parametrize("split", sorted(NOISE_PROFILES))
def test_noise_is_partially_correlated(split):
    for seed in range(10):
        noise = synth_noise(2.0, seed, split)
        rho = np.corrcoef(noise.samples[0], noise.samples[1])[0, 1]
        assert 0.2 < rho < 0.9


def test_noise_is_never_silent():
    noise = synth_noise(3.0, 4).samples
    for start in range(0, noise.shape[1], 1600):
        assert np.sum(noise[:, start : start + 1600] ** 2) > 0


def test_noise_is_deterministic_and_split_dependent():
    assert np.array_equal(synth_noise(1.0, 5).samples, synth_noise(1.0, 5).samples)
    assert not np.array_equal(synth_noise(1.0, 5, "train").samples, synth_noise(1.0, 5, "dev").samples)


def test_dev_noise_is_less_correlated_than_train():
    train = get_noise_sampler("train")
    dev = get_noise_sampler("dev")
    assert dev.correlation[1] <= train.correlation[0] + 0.05
    assert dev.max_delay > train.max_delay


def test_unknown_noise_profile():
    with pytest.raises(ValueError):
        get_noise_sampler("test")


@pytest.mark.parametrize("snr", SNR_BUCKETS)
def test_mix_hits_requested_snr(snr):
    target, noise = synth_target(1.5, 21), synth_noise(1.5, 22)
    noisy, clean, _, scaled = mix_at_snr(target, noise, snr, return_components=True)
    measured = 10 * np.log10(np.sum(clean.samples[0] ** 2) / np.sum(scaled.samples[0] ** 2))
    assert abs(measured - snr) < 1e-6
    assert np.allclose(noisy.samples, target.samples + scaled.samples)
    assert clean.channels == 1


def test_mix_rejects_silent_inputs():
    target = synth_target(0.5, 1)
    silent = AudioBuffer(np.zeros_like(target.samples))
    with pytest.raises(ValueError):
        mix_at_snr(silent, synth_noise(0.5, 2), 0.0)
    with pytest.raises(ValueError):
        mix_at_snr(target, silent, 0.0)


def test_mix_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        mix_at_snr(synth_target(0.5, 1), synth_noise(0.6, 2), 0.0)
