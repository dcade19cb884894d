"""MFCC features, utterance pooling and exact t-SNE for acoustic variability plots."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import dct

from .audio import AudioError, Waveform

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    n_mel_filters: int = 26
    n_coefficients: int = 13
    pre_emphasis: float = 0.97
    low_freq_hz: float = 0.0
    high_freq_hz: Optional[float] = None  # None means Nyquist

    def __post_init__(self):
        if self.n_coefficients > self.n_mel_filters:
            raise ValueError("n_coefficients cannot exceed n_mel_filters")
        if min(self.frame_length_ms, self.frame_shift_ms, self.fft_size, self.n_mel_filters, self.n_coefficients) <= 0:
            raise ValueError("MFCC parameters must be positive")

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        return (
            int(round(self.frame_length_ms * sample_rate / 1000)),
            int(round(self.frame_shift_ms * sample_rate / 1000)),
        )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    """n_mel_filters + 2 frequencies (Hz); filter k spans edges[k]..edges[k+2], peak edges[k+1]."""
    high = cfg.high_freq_hz if cfg.high_freq_hz is not None else sample_rate / 2
    if not 0 <= cfg.low_freq_hz < high <= sample_rate / 2:
        raise ValueError(f"invalid filterbank range {cfg.low_freq_hz}..{high} Hz at {sample_rate} Hz")
    return mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq_hz), hz_to_mel(high), cfg.n_mel_filters + 2))


def mel_filterbank(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters evaluated at the rFFT bin frequencies."""
    edges = mel_band_edges(cfg, sample_rate)
    freqs = np.arange(cfg.fft_size // 2 + 1) * sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(x: np.ndarray, frame_len: int, shift: int) -> np.ndarray:
    n_frames = 1 + (x.size - frame_len) // shift
    idx = np.arange(frame_len)[None, :] + shift * np.arange(n_frames)[:, None]
    return x[idx]


def power_spectrum(w: Waveform, cfg: MfccConfig) -> np.ndarray:
    frame_len, shift = cfg.frame_samples(w.sample_rate_hz)
    if cfg.fft_size < frame_len:
        raise ValueError(f"fft_size {cfg.fft_size} is shorter than the {frame_len}-sample frame")
    if len(w) < frame_len:
        raise AudioError(f"waveform has {len(w)} samples, shorter than one {frame_len}-sample frame")
    x = w.samples
    x = np.append(x[0], x[1:] - cfg.pre_emphasis * x[:-1])
    frames = frame_signal(x, frame_len, shift) * np.hamming(frame_len)
    return np.abs(np.fft.rfft(frames, cfg.fft_size)) ** 2 / cfg.fft_size


def log_mel_energies(w: Waveform, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    fb = mel_filterbank(cfg, w.sample_rate_hz)
    return np.log(np.maximum(power_spectrum(w, cfg) @ fb.T, LOG_FLOOR))


def compute_mfcc(w: Waveform, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """(frames, n_coefficients) MFCC matrix, c0 included, orthonormal DCT-II."""
    return dct(log_mel_energies(w, cfg), type=2, axis=1, norm="ortho")[:, : cfg.n_coefficients]


def utterance_embedding(m: np.ndarray) -> np.ndarray:
    """Per-coefficient mean followed by per-coefficient (population) std."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("feature matrix must have at least one frame")
    return np.concatenate([m.mean(axis=0), m.std(axis=0)])


@dataclass
class Embedding2D:
    points: np.ndarray
    labels: list = field(default_factory=list)
    kl_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels and len(self.labels) != len(self.points):
            raise ValueError("one label per point required")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite t-SNE coordinates")


def _sq_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _row_affinities(d_row: np.ndarray, target_entropy: float, tol=1e-5, max_tries=100):
    """Binary search the Gaussian precision for one point so its entropy matches."""
    beta, lo, hi = 1.0, 0.0, np.inf
    d_row = d_row - d_row.min()
    for _ in range(max_tries):
        p = np.exp(-d_row * beta)
        s = p.sum()
        h = np.log(s) + beta * np.dot(d_row, p) / s
        p /= s
        diff = h - target_entropy
        if abs(diff) < tol:
            break
        if diff > 0:
            lo = beta
            beta = beta * 2 if hi == np.inf else (beta + hi) / 2
        else:
            hi = beta
            beta = (beta + lo) / 2
    return p


def joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    n = x.shape[0]
    d = _sq_distances(x)
    p = np.zeros((n, n))
    target = np.log(perplexity)
    for i in range(n):
        others = np.r_[0:i, i + 1 : n]
        p[i, others] = _row_affinities(d[i, others], target)
    p = (p + p.T) / (2 * n)
    return np.maximum(p, 1e-12)


def _kl(p, q):
    return float(np.sum(p * np.log(p / q)))


def tsne_project(
    embeddings,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    labels=None,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_steps: int = 250,
) -> Embedding2D:
    """Exact O(n^2) t-SNE to two dimensions.

    Gaussian input affinities with per-point bandwidth matched to
    ``perplexity``, Student-t output kernel, gradient descent with momentum
    0.5 then 0.8 and early exaggeration over the first ``exaggeration_steps``.
    The KL divergence (against the un-exaggerated affinities) is recorded at
    every step in ``kl_history``.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("t-SNE needs at least two points")
    if not 0 < perplexity < n:
        raise ValueError(f"perplexity must be in (0, n={n}), got {perplexity}")

    rng = np.random.default_rng(seed)
    p = joint_affinities(x, perplexity)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []

    for it in range(iterations):
        exag = exaggeration if it < exaggeration_steps else 1.0
        momentum = 0.5 if it < exaggeration_steps else 0.8
        num = 1.0 / (1.0 + _sq_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        history.append(_kl(p, q))

        pq = (exag * p - q) * num
        grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y -= y.mean(axis=0)

    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    history.append(_kl(p, np.maximum(num / num.sum(), 1e-12)))
    return Embedding2D(points=y, labels=list(labels) if labels is not None else [], kl_history=history)
