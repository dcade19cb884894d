import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from clinasr.audio import (
    DEFAULT_SCHEDULE,
    AudioError,
    NoiseClip,
    SnrSchedule,
    Waveform,
    fit_length,
    mean_power,
    mix_at_snr,
    read_wav,
    sample_target_snr,
    signal_power_db,
    write_wav,
)


def test_read_silence(tmp_path):
    scipy.io.wavfile.write(tmp_path / "s.wav", 16000, np.zeros(16000, dtype=np.int16))
    w = read_wav(tmp_path / "s.wav")
    assert w.sample_rate_hz == 16000
    assert len(w) == 16000 and not np.any(w.samples)


def test_read_full_scale_square_wave(tmp_path):
    codes = np.tile(np.array([32767, 32767, -32768, -32768], dtype=np.int16), 100)
    scipy.io.wavfile.write(tmp_path / "sq.wav", 8000, codes)
    w = read_wav(tmp_path / "sq.wav")
    assert w.sample_rate_hz == 8000
    assert w.samples.max() == 32767 / 32768
    assert w.samples.min() == -1.0


def test_read_stereo_downmix(tmp_path):
    data = np.column_stack([np.full(100, 0.5), np.full(100, -0.5)]).astype(np.float32)
    scipy.io.wavfile.write(tmp_path / "st.wav", 16000, data)
    assert not np.any(read_wav(tmp_path / "st.wav").samples)


def test_read_float32(tmp_path):
    x = np.linspace(-0.5, 0.5, 50).astype(np.float32)
    scipy.io.wavfile.write(tmp_path / "f.wav", 16000, x)
    assert np.array_equal(read_wav(tmp_path / "f.wav").samples, x.astype(np.float64))


def test_read_errors(tmp_path):
    (tmp_path / "junk.wav").write_bytes(b"not a wave file at all")
    with pytest.raises(AudioError, match="malformed"):
        read_wav(tmp_path / "junk.wav")
    scipy.io.wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(10, dtype=np.int32))
    with pytest.raises(AudioError, match="unsupported"):
        read_wav(tmp_path / "i32.wav")
    scipy.io.wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(AudioError, match="zero-length"):
        read_wav(tmp_path / "empty.wav")
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "missing.wav")


def test_sine_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    w = Waveform(0.25 * np.sin(2 * np.pi * 440 * t))
    write_wav(w, tmp_path / "s.wav")
    back = read_wav(tmp_path / "s.wav")
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32768


def test_zero_and_full_scale_round_trip(tmp_path):
    write_wav(Waveform(np.zeros(10)), tmp_path / "z.wav")
    assert not np.any(read_wav(tmp_path / "z.wav").samples)
    write_wav(Waveform(np.array([1.0, -1.0, 1.5])), tmp_path / "one.wav")
    _, codes = scipy.io.wavfile.read(tmp_path / "one.wav")
    assert codes.tolist() == [32767, -32768, 32767]
    assert read_wav(tmp_path / "one.wav").samples.max() <= 1.0


def test_write_unwritable(tmp_path):
    with pytest.raises(AudioError):
        write_wav(Waveform(np.zeros(4)), tmp_path / "no" / "such" / "dir.wav")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1.0, 1.0)))
def test_wav_round_trip_within_one_lsb(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    write_wav(Waveform(x), path)
    assert np.max(np.abs(read_wav(path).samples - x)) <= 1 / 32768


def test_waveform_validation():
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(AudioError):
        Waveform(np.zeros((2, 2)))
    with pytest.raises(AudioError):
        Waveform(np.zeros(3), 0)
    assert Waveform(np.zeros(8000), 16000).duration_seconds == 0.5
    with pytest.raises(AudioError):
        NoiseClip(Waveform(np.zeros(0)), "empty")


def test_signal_power_examples():
    assert signal_power_db(Waveform(np.ones(100))) == 0.0
    assert signal_power_db(Waveform(np.full(100, 0.1))) == pytest.approx(-20.0, abs=1e-12)
    assert signal_power_db(Waveform(np.zeros(100))) == -120.0
    with pytest.raises(AudioError):
        signal_power_db(Waveform(np.zeros(0)))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 300), elements=st.floats(-1.0, 1.0)).filter(lambda a: np.mean(a * a) > 1e-6),
    st.floats(1e-2, 1e3),
)
def test_power_scaling_law(x, k):
    # both powers stay above the -120 dB sentinel, where the law holds
    w = Waveform(x)
    assert abs(signal_power_db(w.scaled(k)) - (signal_power_db(w) + 20 * np.log10(k))) <= 1e-9


def test_fit_length_loops_and_truncates():
    x = np.array([1.0, 2.0, 3.0])
    assert fit_length(x, 7).tolist() == [1, 2, 3, 1, 2, 3, 1]
    assert fit_length(x, 2).tolist() == [1, 2]


def test_mix_fixed_point_gain_one():
    rng = np.random.default_rng(0)
    clean = rng.normal(size=16000)
    clean *= np.sqrt(0.01 / mean_power(clean))  # -20 dB
    noise = rng.normal(size=16000)
    noise *= np.sqrt(mean_power(clean) / 10**2.4 / mean_power(noise))
    res = mix_at_snr(Waveform(clean), NoiseClip(Waveform(noise)), 24.0)
    assert abs(res.gain - 1.0) <= 1e-6
    assert res.target_snr_db == 24.0


def test_mix_sine_plus_white_noise_power_oracle():
    t = np.arange(32000) / 16000
    clean = 0.1 * np.sin(2 * np.pi * 300 * t)
    noise = np.random.default_rng(1).normal(size=12345)  # shorter: gets looped
    res = mix_at_snr(Waveform(clean), NoiseClip(Waveform(noise)), 24.0)
    added = res.waveform.samples - clean
    assert abs(10 * np.log10(mean_power(clean) / mean_power(added)) - 24.0) <= 0.01
    assert len(res.waveform) == len(clean)


def test_mix_clips_and_counts():
    clean = Waveform(np.full(100, 0.9))
    res = mix_at_snr(clean, NoiseClip(Waveform(np.ones(10))), 0.0)
    assert res.n_clipped == 100
    assert np.max(np.abs(res.waveform.samples)) <= 1.0


def test_mix_errors():
    sine = Waveform(np.sin(np.arange(100.0)))
    with pytest.raises(AudioError, match="sample-rate"):
        mix_at_snr(sine, NoiseClip(Waveform(np.ones(10), 8000), "room"), 20)
    with pytest.raises(AudioError, match="clean"):
        mix_at_snr(Waveform(np.zeros(100)), NoiseClip(Waveform(np.ones(10))), 20)
    with pytest.raises(AudioError, match="noise"):
        mix_at_snr(sine, NoiseClip(Waveform(np.zeros(10)), "quiet"), 20)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(50, 3000),
    st.integers(10, 3000),
    st.floats(-10.0, 60.0),
)
def test_mix_component_ratio_property(seed, n_clean, n_noise, target):
    rng = np.random.default_rng(seed)
    clean = Waveform(0.1 * rng.uniform(-1, 1, n_clean))
    noise = NoiseClip(Waveform(rng.normal(size=n_noise)))
    res = mix_at_snr(clean, noise, target)
    scaled = res.gain * fit_length(noise.waveform.samples, n_clean)
    assert abs(10 * np.log10(mean_power(clean.samples) / mean_power(scaled)) - target) <= 0.01


def test_schedule_validation():
    with pytest.raises(ValueError):
        SnrSchedule(24, 1, 28, 20)
    with pytest.raises(ValueError):
        SnrSchedule(30, 1, 20, 28)
    with pytest.raises(ValueError):
        SnrSchedule(24, 0, 20, 28)


def test_sample_target_snr_determinism_and_bounds():
    assert sample_target_snr(DEFAULT_SCHEDULE, 42) == sample_target_snr(DEFAULT_SCHEDULE, 42)
    assert sample_target_snr(DEFAULT_SCHEDULE, 1) != sample_target_snr(DEFAULT_SCHEDULE, 2)


@given(st.integers(0, 2**63 - 1), st.floats(-5, 5), st.floats(0.01, 10), st.floats(0.1, 3))
def test_sample_target_snr_never_leaves_support(seed, mean, sd, half_width):
    sched = SnrSchedule(mean, sd, mean - half_width, mean + half_width)
    x = sample_target_snr(sched, seed)
    assert sched.low_db <= x <= sched.high_db
