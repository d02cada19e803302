"""Signal conditioning for intracranial recordings.

Bandpass filtering, Savitzky-Golay smoothing, neighbourhood normalisation,
chunking, spectral band power and training-time augmentation. Everything
here is a pure function of its inputs and an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

NORM_EPS = 1e-8
DEFAULT_BANDS = ((10.0, 30.0), (70.0, 100.0))


@dataclass
class EcogRecording:
    """Channels x time samples in microvolts.

    ``channel_meta`` holds one ``(row, col)`` grid coordinate per channel;
    strip contacts use ``(-1, index)``.
    """

    samples: np.ndarray
    sample_rate_hz: float = 1000.0
    channel_meta: list[tuple[int, int]] = field(default_factory=list)
    bad_channels: frozenset[int] = frozenset()

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be channels x time, got shape {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.channel_meta:
            if len(self.channel_meta) != self.n_channels:
                raise ValueError("channel_meta needs one entry per channel")
            if len(set(map(tuple, self.channel_meta))) != len(self.channel_meta):
                raise ValueError("channel grid coordinates must be unique")
        self.bad_channels = frozenset(int(c) for c in self.bad_channels)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray) -> "EcogRecording":
        return EcogRecording(samples, self.sample_rate_hz, list(self.channel_meta), self.bad_channels)


@dataclass
class SpectralFeatures:
    """Band power per channel, laid out ``[band0_ch0, band0_ch1, ..., band1_ch0, ...]``."""

    band_power: np.ndarray
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS

    @property
    def vector(self) -> np.ndarray:
        return self.band_power.reshape(-1)


def _butter_sos(low_hz: float, high_hz: float, fs: float, order: int = 4):
    if not 0 < low_hz < high_hz < fs / 2:
        raise ValueError(
            f"need 0 < low < high < fs/2; got low={low_hz}, high={high_hz}, fs={fs}"
        )
    return sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")


def bandpass(recording: EcogRecording, low_hz: float = 10.0, high_hz: float = 200.0,
             order: int = 4) -> EcogRecording:
    """Zero-phase Butterworth bandpass applied forward and backward along time."""
    sos = _butter_sos(low_hz, high_hz, recording.sample_rate_hz, order)
    out = np.empty_like(recording.samples)
    # row by row keeps peak memory at one channel of filter state
    for ch in range(recording.n_channels):
        out[ch] = sps.sosfiltfilt(sos, recording.samples[ch])
    return recording.with_samples(out)


def bandpass_array(x: np.ndarray, fs: float, low_hz: float = 10.0, high_hz: float = 200.0,
                   order: int = 4) -> np.ndarray:
    sos = _butter_sos(low_hz, high_hz, fs, order)
    return sps.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


def _savgol_projection(n_left: int, n_right: int, poly_order: int) -> np.ndarray:
    """Row vector mapping window samples to the fitted value at offset 0."""
    t = np.arange(-n_left, n_right + 1, dtype=np.float64)
    vander = np.vander(t, poly_order + 1, increasing=True)
    # fitted value at t=0 is the constant coefficient
    return np.linalg.pinv(vander)[0]


def savgol(series, window: int = 21, poly_order: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing.

    Interior points use the centred least-squares polynomial fit; the first
    and last ``window // 2`` points are fitted on the truncated window that
    fits inside the series.
    """
    y = np.asarray(series, dtype=np.float64)
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window <= poly_order:
        raise ValueError(f"window ({window}) must exceed poly_order ({poly_order})")
    if y.ndim != 1 or y.size < window:
        raise ValueError(f"series must be 1-D with at least {window} points, got shape {y.shape}")
    half = window // 2
    n = y.size
    out = np.empty(n)
    coeffs = _savgol_projection(half, half, poly_order)
    out[half:n - half] = np.correlate(y, coeffs, mode="valid")
    for i in range(half):
        left = _savgol_projection(i, half, poly_order)
        out[i] = left @ y[:i + half + 1]
        right = _savgol_projection(half, i, poly_order)
        out[n - 1 - i] = right @ y[n - 1 - i - half:]
    return out


def normalize_window(window: np.ndarray, neighborhood: np.ndarray, fs: float = 1000.0,
                     eps: float = NORM_EPS) -> np.ndarray:
    """Z-score each channel of ``window`` with its neighbourhood's mean and std."""
    window = np.asarray(window, dtype=np.float64)
    neighborhood = np.asarray(neighborhood, dtype=np.float64)
    if neighborhood.shape[-1] < int(round(3 * fs)):
        raise ValueError(
            f"neighbourhood must cover 3 s ({int(round(3 * fs))} samples), got {neighborhood.shape[-1]}"
        )
    if neighborhood.shape[:-1] != window.shape[:-1]:
        raise ValueError("window and neighbourhood must have the same channel count")
    mu = neighborhood.mean(axis=-1, keepdims=True)
    sd = neighborhood.std(axis=-1, keepdims=True)
    return (window - mu) / (sd + eps)


def chunk_window(window: np.ndarray, n_chunks: int = 5) -> np.ndarray:
    """Split ``channels x T`` into ``n_chunks x channels x T/n_chunks``."""
    window = np.asarray(window)
    length = window.shape[-1]
    if length % n_chunks:
        raise ValueError(f"window length {length} is not divisible into {n_chunks} chunks")
    step = length // n_chunks
    return np.stack([window[..., i * step:(i + 1) * step] for i in range(n_chunks)])


def power_spectrum(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided bin frequencies and ``|X_k|^2`` of a rectangular-window DFT."""
    x = np.asarray(x, dtype=np.float64)
    spec = np.fft.rfft(x, axis=-1)
    return np.fft.rfftfreq(x.shape[-1], 1.0 / fs), spec.real ** 2 + spec.imag ** 2


def stft_band_power(x: np.ndarray, fs: float = 1000.0,
                    bands=DEFAULT_BANDS) -> SpectralFeatures:
    """Mean band power over non-overlapping 1-s rectangular windows.

    Power of a window is the sum of ``|X_k|^2`` over DFT bins whose
    frequency lies inside the closed band.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    nwin = int(round(fs))
    if x.shape[-1] < nwin:
        raise ValueError(f"need at least one 1-s window ({nwin} samples), got {x.shape[-1]}")
    bands = tuple((float(lo), float(hi)) for lo, hi in bands)
    for lo, hi in bands:
        if not 0 <= lo < hi <= fs / 2:
            raise ValueError(f"band [{lo}, {hi}] must lie within [0, {fs / 2}] Hz")
    n_windows = x.shape[-1] // nwin
    segs = x[:, :n_windows * nwin].reshape(x.shape[0], n_windows, nwin)
    freqs, power = power_spectrum(segs, fs)
    out = np.empty((len(bands), x.shape[0]))
    for b, (lo, hi) in enumerate(bands):
        mask = (freqs >= lo) & (freqs <= hi)
        out[b] = power[..., mask].sum(axis=-1).mean(axis=-1)
    return SpectralFeatures(out, bands)


def augment(buffer: np.ndarray, margin: int, rng_seed, probability: float = 0.25,
            noise_sd: float = 0.001, max_shift_ms: float = 100.0, fs: float = 1000.0,
            window: int | None = None, n_chunks: int = 5) -> np.ndarray:
    """Re-extract a possibly shifted, noise-perturbed window and chunk it.

    ``buffer`` is ``channels x (window + 2 * margin)``. With ``probability``
    the window start moves by a uniform integer shift in
    ``[-max_shift_ms, max_shift_ms]`` and gaussian noise is added; otherwise
    the centred window is returned unchanged.
    """
    buffer = np.asarray(buffer)
    max_shift = int(round(max_shift_ms * fs / 1000.0))
    if margin < max_shift:
        raise ValueError(f"buffer margin {margin} is smaller than the maximum shift {max_shift}")
    if window is None:
        window = buffer.shape[-1] - 2 * margin
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if rng.random() >= probability:
        return chunk_window(buffer[..., margin:margin + window], n_chunks)
    shift = int(rng.integers(-max_shift, max_shift + 1))
    seg = buffer[..., margin + shift:margin + shift + window].astype(np.float64)
    if noise_sd > 0:
        seg = seg + rng.normal(0.0, noise_sd, size=seg.shape)
    return chunk_window(seg, n_chunks)
