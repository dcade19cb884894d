"""Waveform I/O, power measurement and SNR-targeted mixing."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile

log = logging.getLogger(__name__)

CANONICAL_RATE = 16000
POWER_FLOOR_DB = -120.0
PCM16_SCALE = 32768.0


class AudioError(ValueError):
    """Malformed, unsupported or unusable audio."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono float samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def scaled(self, k: float) -> "Waveform":
        return Waveform(self.samples * k, self.sample_rate_hz)


@dataclass(frozen=True)
class NoiseClip:
    waveform: Waveform
    source_label: str = ""

    def __post_init__(self):
        if len(self.waveform) == 0:
            raise AudioError(f"noise clip {self.source_label!r} is empty")


@dataclass(frozen=True)
class SnrSchedule:
    """Truncated-normal distribution of augmentation SNR targets, in dB."""

    mean_db: float
    sd_db: float
    low_db: float
    high_db: float

    def __post_init__(self):
        if not self.low_db < self.high_db:
            raise ValueError("low_db must be below high_db")
        if not self.low_db <= self.mean_db <= self.high_db:
            raise ValueError("mean_db must lie within [low_db, high_db]")
        if not self.sd_db > 0:
            raise ValueError("sd_db must be positive")


# Operating-room augmentation regime used for the noise-robust fine-tuning stage.
DEFAULT_SCHEDULE = SnrSchedule(mean_db=23.98, sd_db=1.16, low_db=20.0, high_db=28.0)


@dataclass(frozen=True)
class MixResult:
    waveform: Waveform
    gain: float
    target_snr_db: float
    n_clipped: int


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file, downmixing channels by their mean."""
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError or struct errors on bad headers
        raise AudioError(f"{path}: malformed WAV container ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    return Waveform(samples, rate)


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as PCM16, hard-clipping to the representable range."""
    codes = np.clip(np.round(w.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    try:
        scipy.io.wavfile.write(Path(path), w.sample_rate_hz, codes)
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}") from exc


def mean_power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples)))


def signal_power_db(w: Waveform) -> float:
    """Mean power in dBFS; the all-zero signal maps to ``POWER_FLOOR_DB``."""
    if len(w) == 0:
        raise AudioError("power of an empty waveform is undefined")
    p = mean_power(w.samples)
    if p <= 0.0:
        return POWER_FLOOR_DB
    return max(10.0 * np.log10(p), POWER_FLOOR_DB)


def fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Loop ``samples`` end-to-start (no crossfade) or truncate to ``n`` samples."""
    if samples.size >= n:
        return samples[:n]
    reps = -(-n // samples.size)
    return np.tile(samples, reps)[:n]


def mix_at_snr(clean: Waveform, noise: NoiseClip, target_snr_db: float) -> MixResult:
    """Add ``noise`` to ``clean`` scaled so the component power ratio hits the target.

    SNR is measured on full-utterance mean power.  The sum is hard-clipped to
    [-1, 1]; the number of clipped samples is reported, not hidden.
    """
    if clean.sample_rate_hz != noise.waveform.sample_rate_hz:
        raise AudioError(
            f"sample-rate mismatch: clean {clean.sample_rate_hz} Hz, "
            f"noise {noise.source_label!r} {noise.waveform.sample_rate_hz} Hz"
        )
    if signal_power_db(clean) <= POWER_FLOOR_DB:
        raise AudioError("clean signal is silent")
    if signal_power_db(noise.waveform) <= POWER_FLOOR_DB:
        raise AudioError(f"noise clip {noise.source_label!r} is silent")

    n = fit_length(noise.waveform.samples, len(clean))
    p_clean = mean_power(clean.samples)
    p_noise = mean_power(n)
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (target_snr_db / 10.0))))
    mixed = clean.samples + gain * n
    n_clipped = int(np.count_nonzero(np.abs(mixed) > 1.0))
    if n_clipped:
        log.warning("mix clipped %d samples at target %.2f dB", n_clipped, target_snr_db)
    mixed = np.clip(mixed, -1.0, 1.0)
    return MixResult(Waveform(mixed, clean.sample_rate_hz), gain, float(target_snr_db), n_clipped)


def sample_target_snr(schedule: SnrSchedule, seed: int) -> float:
    """One truncated-normal draw from ``schedule``; rejection sampling, seeded."""
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(schedule.mean_db, schedule.sd_db)
        if schedule.low_db <= x <= schedule.high_db:
            return float(x)
