"""Temporal expert features: windowed undecimated wavelet decomposition,
sine-dictionary band magnitudes, Gini sparsity, and the high-frequency
dominance flag."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Cubic B-spline low-pass used as the default smoothing filter for the
# undecimated decomposition; the exact hemodynamic (exponential-spline)
# taps are not fixed here, so the filter is pluggable via TemporalParams.
CUBIC_BSPLINE = (1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16)


@dataclass(frozen=True)
class TemporalParams:
    window_len: int = 256
    n_levels: int = 4
    band: tuple[float, float] = (0.01, 0.1)
    dominance_cutoff: float = 0.073
    tr_seconds: float = 2.0
    smoothing_filter: tuple[float, ...] = CUBIC_BSPLINE
    gini_per_level: bool = False  # average detail-level ginis instead of concatenating

    def __post_init__(self):
        n = self.window_len
        if n < 2 or (n & (n - 1)) != 0 or n < 2**self.n_levels:
            raise ValueError("window_len must be a power of two >= 2**n_levels")
        f_lo, f_hi = self.band
        nyquist = 1.0 / (2.0 * self.tr_seconds)
        if not (0 < f_lo < f_hi <= nyquist):
            raise ValueError(f"band must satisfy 0 < f_lo < f_hi <= Nyquist ({nyquist})")
        if not (f_lo < self.dominance_cutoff < f_hi):
            raise ValueError("dominance_cutoff must lie inside the band")
        if len(self.smoothing_filter) % 2 != 1:
            raise ValueError("smoothing filter must have odd length")


@dataclass
class WaveletDecomposition:
    approximation: np.ndarray  # a_J
    details: list[np.ndarray]  # d_1 .. d_J

    def reconstruct(self) -> np.ndarray:
        return self.approximation + sum(self.details)

    def stacked_details(self) -> np.ndarray:
        return np.concatenate(self.details)


def _symmetric_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric extension: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ..."""
    m = np.mod(idx, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def atrous_decompose(window: np.ndarray, params: TemporalParams) -> WaveletDecomposition:
    """Undecimated decomposition: a_j = a_{j-1} smoothed with the filter
    upsampled by 2^(j-1) (holes), d_j = a_{j-1} - a_j.  The construction is
    additive, so a_J + sum(d_j) reproduces the input exactly."""
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1 or len(x) != params.window_len:
        raise ValueError(f"window must have length {params.window_len}")
    if not np.isfinite(x).all():
        raise ValueError("window contains non-finite values")

    taps = np.asarray(params.smoothing_filter, dtype=np.float64)
    half = len(taps) // 2
    base_offsets = np.arange(-half, half + 1)
    n = len(x)
    positions = np.arange(n)[:, None]

    a = x
    details = []
    for level in range(params.n_levels):
        offsets = base_offsets * (2**level)
        idx = _symmetric_index(positions + offsets, n)
        a_next = (a[idx] * taps).sum(axis=1)
        details.append(a - a_next)
        a = a_next
    return WaveletDecomposition(approximation=a, details=details)


def gini_index(coeffs: np.ndarray) -> float:
    """Hurley-Rickard sparsity index in [0, 1 - 1/N].

    Sort |c| ascending; G = 1 - 2 * sum_k (|c|_(k) / ||c||_1) * ((N - k + 0.5) / N).
    All-zero input is defined as 0 (no concentration).
    """
    c = np.abs(np.asarray(coeffs, dtype=np.float64)).ravel()
    if c.size == 0:
        raise ValueError("gini_index needs at least one coefficient")
    total = c.sum()
    if total == 0:
        return 0.0
    c = np.sort(c)
    n = c.size
    k = np.arange(1, n + 1)
    return float(1.0 - 2.0 * np.sum((c / total) * ((n - k + 0.5) / n)))


def band_bins(params: TemporalParams) -> np.ndarray:
    """DFT bin indices whose frequencies k / (window_len * TR) lie in the band."""
    period = params.window_len * params.tr_seconds
    f_lo, f_hi = params.band
    k_lo = max(1, int(np.ceil(f_lo * period - 1e-9)))
    k_hi = min(params.window_len // 2, int(np.floor(f_hi * period + 1e-9)))
    if k_lo > k_hi:
        raise ValueError("frequency band is empty after discretization")
    return np.arange(k_lo, k_hi + 1)


def sine_band_coefficients(window: np.ndarray, params: TemporalParams) -> np.ndarray:
    """Magnitudes of the discrete sinusoid projections at the in-band bins."""
    x = np.asarray(window, dtype=np.float64)
    if len(x) != params.window_len:
        raise ValueError(f"window must have length {params.window_len}")
    spectrum = np.fft.rfft(x)
    return np.abs(spectrum[band_bins(params)])


def dominant_band_frequency(signal: np.ndarray, params: TemporalParams) -> float:
    """Frequency of the periodogram maximum over the full (mean-removed)
    signal, restricted to the analysis band."""
    x = np.asarray(signal, dtype=np.float64)
    freqs = np.fft.rfftfreq(len(x), d=params.tr_seconds)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    f_lo, f_hi = params.band
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    if not sel.any():
        raise ValueError("no periodogram bins inside the band")
    return float(freqs[sel][np.argmax(power[sel])])


def _windows(signal: np.ndarray, window_len: int) -> np.ndarray:
    """Consecutive windows; a trailing partial window is zero-padded.  Signals
    shorter than one window are zero-padded to a single window."""
    x = np.asarray(signal, dtype=np.float64)
    n_win = max(1, int(np.ceil(len(x) / window_len)))
    padded = np.zeros(n_win * window_len)
    padded[: len(x)] = x
    return padded.reshape(n_win, window_len)


def temporal_features(ic, params: TemporalParams) -> tuple[float, float, bool]:
    """(activelet gini, sine gini, high-frequency dominance flag).

    Ginis are averaged over consecutive windows; the dominance flag compares
    the whole-signal in-band periodogram peak against the cutoff (strict
    inequality), which makes it invariant to amplitude scaling.
    """
    windows = _windows(ic.bold, params.window_len)
    activelet_ginis = []
    sine_ginis = []
    for w in windows:
        dec = atrous_decompose(w, params)
        if params.gini_per_level:
            activelet_ginis.append(float(np.mean([gini_index(d) for d in dec.details])))
        else:
            activelet_ginis.append(gini_index(dec.stacked_details()))
        sine_ginis.append(gini_index(sine_band_coefficients(w, params)))
    hf_dominant = dominant_band_frequency(ic.bold, params) > params.dominance_cutoff
    return float(np.mean(activelet_ginis)), float(np.mean(sine_ginis)), bool(hf_dominant)
