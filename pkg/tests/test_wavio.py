import numpy as np
import pytest
from scipy.io import wavfile

from stft import AudioBuffer
from wavio import read_wav, write_wav


def test_float32_round_trip(tmp_path, rng):
    audio = AudioBuffer(0.5 * rng.uniform(-1, 1, (2, 1000)))
    path = str(tmp_path / "x.wav")
    write_wav(path, audio)
    back = read_wav(path)
    assert back.channels == 2 and back.sample_rate == 16000
    assert np.allclose(back.samples, audio.samples, atol=1e-7)


def test_pcm16_is_scaled_to_unit_range(tmp_path):
    path = str(tmp_path / "pcm.wav")
    wavfile.write(path, 16000, np.array([-32768, 0, 16384, 32767], dtype=np.int16))
    audio = read_wav(path)
    assert audio.channels == 1
    assert np.allclose(audio.samples[0], [-1.0, 0.0, 0.5, 32767 / 32768])


def test_pcm16_writer_clips(tmp_path):
    path = str(tmp_path / "clip.wav")
    write_wav(path, AudioBuffer(np.array([2.0, -2.0, 0.25])), sample_format="pcm16")
    _, data = wavfile.read(path)
    assert data.dtype == np.int16
    assert list(data) == [32767, -32768, 8192]


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(str(tmp_path / "nope.wav"))


def test_rejects_unsupported_sample_format(tmp_path):
    path = str(tmp_path / "int32.wav")
    wavfile.write(path, 16000, np.zeros(10, dtype=np.int32))
    with pytest.raises(ValueError):
        read_wav(path)


def test_rejects_more_than_two_channels(tmp_path):
    path = str(tmp_path / "three.wav")
    wavfile.write(path, 16000, np.zeros((10, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        read_wav(path)


def test_other_sample_rates_warn(tmp_path):
    path = str(tmp_path / "8k.wav")
    wavfile.write(path, 8000, np.zeros(10, dtype=np.float32))
    with pytest.warns(UserWarning):
        audio = read_wav(path)
    assert audio.sample_rate == 8000


def test_unknown_writer_format(tmp_path):
    with pytest.raises(ValueError):
        write_wav(str(tmp_path / "x.wav"), AudioBuffer(np.zeros(4)), sample_format="mp3")
