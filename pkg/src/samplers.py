import numpy as np

from stft import DEFAULT_SAMPLE_RATE, AudioBuffer


SNR_BUCKETS = (-6.0, -3.0, 0.0, 3.0, 6.0, 9.0)
TARGET_PEAK = 0.5
CONTROL_RATE = 100  # Hz, for pitch and formant trajectories


def _n_samples(duration_s, sample_rate):
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    return int(round(duration_s * sample_rate))


def _control_to_samples(values, n):
    t_control = np.linspace(0.0, 1.0, len(values))
    t = np.linspace(0.0, 1.0, n)
    return np.interp(t, t_control, values)


def _random_walk(rng, n, start, step, low, high):
    walk = start + np.cumsum(rng.normal(0.0, step, n))
    # reflect at the bounds so the walk keeps moving
    span = high - low
    walk = np.abs((walk - low) % (2 * span) - span)
    return high - walk


def _word_gate(rng, n, sample_rate):
    gate = np.zeros(n)
    pos = 0
    while pos < n:
        speech = int(rng.uniform(0.4, 1.2) * sample_rate)
        gate[pos : pos + speech] = 1.0
        pos += speech + int(rng.uniform(0.1, 0.4) * sample_rate)
    ramp = np.hanning(int(0.02 * sample_rate))
    return np.convolve(gate, ramp / ramp.sum(), mode="same")


def synth_target(duration_s, seed, sample_rate=DEFAULT_SAMPLE_RATE):
    """Speech-like source at broadside: the same signal on both channels.

    A harmonic complex on a randomly walking fundamental (80-300 Hz) shaped by
    three drifting formants, amplitude-modulated at a syllabic rate (2-8 Hz)
    and gated into words separated by silences.
    """
    n = _n_samples(duration_s, sample_rate)
    rng = np.random.default_rng(seed)
    n_control = max(int(np.ceil(n / sample_rate * CONTROL_RATE)), 2)

    log_f0 = _random_walk(rng, n_control, np.log(rng.uniform(100, 220)), 0.02, np.log(80), np.log(300))
    f0 = _control_to_samples(np.exp(log_f0), n)
    formants = [
        _control_to_samples(_random_walk(rng, n_control, rng.uniform(low, high), 15.0, low, high), n)
        for low, high in [(300, 800), (900, 2300), (2400, 3000)]
    ]
    bandwidths = (80.0, 120.0, 200.0)

    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    voiced = np.zeros(n)
    for h in range(1, 41):
        freq = h * f0
        envelope = sum(
            np.exp(-0.5 * ((freq - fc) / bw) ** 2) for fc, bw in zip(formants, bandwidths)
        )
        amplitude = (0.05 + envelope) / h
        amplitude[freq >= 0.45 * sample_rate] = 0.0
        voiced += amplitude * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    rate = _control_to_samples(rng.uniform(2.0, 8.0, n_control // 20 + 2), n)
    syllables = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.cumsum(rate) / sample_rate)
    signal = voiced * syllables * _word_gate(rng, n, sample_rate)

    peak = np.max(np.abs(signal))
    if peak > 0:
        signal *= TARGET_PEAK / peak
    return AudioBuffer(np.stack([signal, signal]), sample_rate)


def pink_noise(rng, n):
    white = np.fft.rfft(rng.standard_normal(n))
    freqs = np.arange(len(white), dtype=np.float64)
    freqs[0] = 1.0
    pink = np.fft.irfft(white / np.sqrt(freqs), n=n)
    return pink / (np.std(pink) + 1e-12)


class NoiseSampler:
    """Two-channel noise: pink noise with partial inter-channel correlation,
    a shared slow envelope, and randomly gated tonal interferers placed at a
    random inter-microphone delay."""

    def __init__(self, correlation=(0.45, 0.75), n_tones=(1, 3), tone_level=(0.1, 0.3), max_delay=8):
        self.correlation = correlation
        self.n_tones = n_tones
        self.tone_level = tone_level
        self.max_delay = max_delay

    def sample(self, duration_s, seed, sample_rate=DEFAULT_SAMPLE_RATE):
        n = _n_samples(duration_s, sample_rate)
        rng = np.random.default_rng(seed)

        rho = rng.uniform(*self.correlation)
        shared = pink_noise(rng, n)
        channels = np.stack(
            [np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * pink_noise(rng, n) for _ in range(2)]
        )

        t = np.arange(n) / sample_rate
        envelope = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
        channels *= envelope

        for _ in range(rng.integers(self.n_tones[0], self.n_tones[1] + 1)):
            freq = rng.uniform(200.0, 3000.0)
            level = rng.uniform(*self.tone_level)
            delay = rng.integers(-self.max_delay, self.max_delay + 1)
            gate = _tone_gate(rng, n, sample_rate)
            for ch, shift in enumerate((0, delay)):
                channels[ch] += level * gate * np.sin(2 * np.pi * freq * (t - shift / sample_rate))

        return AudioBuffer(channels / np.max(np.abs(channels)) * 0.5, sample_rate)


def _tone_gate(rng, n, sample_rate):
    gate = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.5) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.2, 1.0) * sample_rate)
        gate[pos : pos + length] = 1.0
        pos += length + int(rng.uniform(0.2, 1.5) * sample_rate)
    return gate


# Dev and eval noise is less correlated and its interferers sit further off
# broadside than in training, so validation sees a spatial mismatch.
NOISE_PROFILES = {
    "train": dict(correlation=(0.55, 0.8), max_delay=4),
    "dev": dict(correlation=(0.35, 0.6), max_delay=12),
    "eval": dict(correlation=(0.35, 0.6), n_tones=(2, 4), max_delay=12),
}


def get_noise_sampler(split, **kwargs):
    if split in NOISE_PROFILES:
        return NoiseSampler(**{**NOISE_PROFILES[split], **kwargs})
    else:
        print("Unknown noise profile")
        raise ValueError(f"split must be one of {sorted(NOISE_PROFILES)}, got {split!r}")


def synth_noise(duration_s, seed, split="train", sample_rate=DEFAULT_SAMPLE_RATE):
    return get_noise_sampler(split).sample(duration_s, seed, sample_rate)


def mix_at_snr(target, noise, snr_db, return_components=False):
    """Scale noise so the channel-0 SNR is exactly snr_db and add it to the target.

    Returns (noisy, clean_ch0), plus (target, scaled_noise) when return_components.
    """
    if target.samples.shape != noise.samples.shape:
        raise ValueError(f"target {target.samples.shape} and noise {noise.samples.shape} differ in shape")
    target_power = np.sum(target.samples[0] ** 2)
    noise_power = np.sum(noise.samples[0] ** 2)
    if target_power == 0:
        raise ValueError("target has zero energy on channel 0")
    if noise_power == 0:
        raise ValueError("noise has zero energy on channel 0")

    scale = np.sqrt(target_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    scaled = AudioBuffer(noise.samples * scale, noise.sample_rate)
    noisy = AudioBuffer(target.samples + scaled.samples, target.sample_rate)
    clean = target.channel(0)
    if return_components:
        return noisy, clean, target, scaled
    return noisy, clean
