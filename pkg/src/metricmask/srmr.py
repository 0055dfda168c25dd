"""Speech-to-reverberation modulation energy ratio.

Pipeline: an ERB-spaced gammatone filterbank splits the signal into cochlear
channels, each channel's temporal envelope is extracted (analytic-signal
magnitude by default, half-wave rectification plus a 128 Hz low-pass as an
alternative), a bank of second-order resonators splits every envelope into
modulation bands, and windowed band energies are summed across channels and
time. The score is the energy in the low modulation bands (the speech-rate
region, ~4-16 Hz) divided by the energy in the remaining high bands, which
reverberant tails inflate.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sps

from .dsp import Waveform

# Glasberg-Moore ERB scale constants.
_EAR_Q = 9.26449
_MIN_BW = 24.7


class MetricError(RuntimeError):
    """Raised when a quality metric cannot score an input."""


@dataclass(frozen=True)
class SrmrConfig:
    n_cochlear_channels: int = 23
    cochlear_low_hz: float = 125.0
    cochlear_high_fraction: float = 0.4  # of the sample rate
    n_modulation_bands: int = 8
    modulation_low_hz: float = 4.0
    modulation_high_hz: float = 128.0
    modulation_q: float = 2.0
    low_band_count: int = 4
    energy_window_s: float = 0.256
    energy_step_s: float = 0.064
    envelope_method: str = "analytic"  # "analytic" | "rectify"
    min_duration_s: float = 0.5
    silence_rms: float = 1e-5

    def __post_init__(self):
        if self.low_band_count >= self.n_modulation_bands:
            raise ValueError("low_band_count must be below n_modulation_bands")
        if self.modulation_low_hz >= self.modulation_high_hz:
            raise ValueError("modulation band centers must be increasing")
        if self.n_cochlear_channels < 2:
            raise ValueError("need at least two cochlear channels")
        if self.envelope_method not in ("analytic", "rectify"):
            raise ValueError(f"unknown envelope method '{self.envelope_method}'")

    def modulation_centers(self) -> np.ndarray:
        return np.geomspace(
            self.modulation_low_hz, self.modulation_high_hz, self.n_modulation_bands
        )


def erb_space(low_hz: float, high_hz: float, n: int) -> np.ndarray:
    """n center frequencies uniformly spaced on the ERB scale, ascending."""
    frac = np.arange(1, n + 1) / n
    pts = -_EAR_Q * _MIN_BW + np.exp(
        frac * (np.log(low_hz + _EAR_Q * _MIN_BW) - np.log(high_hz + _EAR_Q * _MIN_BW))
    ) * (high_hz + _EAR_Q * _MIN_BW)
    return np.sort(pts)


def gammatone_coefficients(sample_rate: float, center_freqs: np.ndarray):
    """Fourth-order gammatone filters as four cascaded biquad sections.

    Patterson-Holdsworth cochlear filters in the digital form that factors
    the eighth-order transfer function into four second-order stages sharing
    one denominator, which keeps the poles stable for low centers.
    """
    T = 1.0 / sample_rate
    cf = np.asarray(center_freqs, dtype=np.float64)
    erb = (cf / _EAR_Q) + _MIN_BW
    B = 1.019 * 2 * np.pi * erb

    arg = 2 * cf * np.pi * T
    vec = np.exp(2j * arg)

    B1 = -2 * np.cos(arg) / np.exp(B * T)
    B2 = np.exp(-2 * B * T)

    rt_pos = np.sqrt(3 + 2**1.5)
    rt_neg = np.sqrt(3 - 2**1.5)
    common = -T * np.exp(-B * T)
    A11 = common * (np.cos(arg) + rt_pos * np.sin(arg))
    A12 = common * (np.cos(arg) - rt_pos * np.sin(arg))
    A13 = common * (np.cos(arg) + rt_neg * np.sin(arg))
    A14 = common * (np.cos(arg) - rt_neg * np.sin(arg))

    gain_arg = np.exp(1j * arg - B * T)
    k11 = np.cos(arg) + rt_pos * np.sin(arg)
    k12 = np.cos(arg) - rt_pos * np.sin(arg)
    k13 = np.cos(arg) + rt_neg * np.sin(arg)
    k14 = np.cos(arg) - rt_neg * np.sin(arg)
    gain = np.abs(
        (vec - gain_arg * k11)
        * (vec - gain_arg * k12)
        * (vec - gain_arg * k13)
        * (vec - gain_arg * k14)
        * (T * np.exp(B * T) / (-1 / np.exp(B * T) + 1 + vec * (1 - np.exp(B * T)))) ** 4
    )
    return A11, A12, A13, A14, B1, B2, gain, T


@lru_cache(maxsize=8)
def _gammatone_sos(sample_rate: float, centers: tuple) -> np.ndarray:
    A11, A12, A13, A14, B1, B2, gain, T = gammatone_coefficients(
        sample_rate, np.asarray(centers)
    )
    n = len(centers)
    sos = np.zeros((n, 4, 6))
    for c in range(n):
        den = (1.0, B1[c], B2[c])
        sos[c, 0] = (T / gain[c], A11[c] / gain[c], 0.0, *den)
        sos[c, 1] = (T, A12[c], 0.0, *den)
        sos[c, 2] = (T, A13[c], 0.0, *den)
        sos[c, 3] = (T, A14[c], 0.0, *den)
    return sos


def gammatone_filterbank(x: np.ndarray, sample_rate: float, center_freqs: np.ndarray) -> np.ndarray:
    """Filter `x` through the bank; returns [n_channels, n_samples]."""
    sos = _gammatone_sos(sample_rate, tuple(np.asarray(center_freqs).tolist()))
    out = np.empty((len(center_freqs), len(x)))
    for c in range(sos.shape[0]):
        out[c] = sps.sosfilt(sos[c], x)
    return out


def temporal_envelope(channels: np.ndarray, sample_rate: float, method: str) -> np.ndarray:
    if method == "analytic":
        n = channels.shape[1]
        fast = int(sp_fft.next_fast_len(n))
        return np.abs(sps.hilbert(channels, N=fast, axis=1))[:, :n]
    b, a = sps.butter(4, 128.0, fs=sample_rate)
    return sps.lfilter(b, a, np.maximum(channels, 0.0), axis=1)


@lru_cache(maxsize=8)
def _modulation_filters(sample_rate: float, centers: tuple, q: float):
    return [sps.iirpeak(fc, q, fs=sample_rate) for fc in centers]


def modulation_band_energies(wave: Waveform, cfg: SrmrConfig = SrmrConfig()) -> np.ndarray:
    """Total energy per modulation band, summed over channels and windows."""
    x = wave.samples
    sr = wave.sample_rate
    if len(x) < cfg.min_duration_s * sr:
        raise MetricError(
            f"input too short: {len(x) / sr:.3f} s < {cfg.min_duration_s} s"
        )
    rms = float(np.sqrt(np.mean(x**2)))
    if rms < cfg.silence_rms:
        raise MetricError(f"insufficient energy: rms {rms:.2e}")

    centers = erb_space(
        cfg.cochlear_low_hz, cfg.cochlear_high_fraction * sr, cfg.n_cochlear_channels
    )
    channels = gammatone_filterbank(x, sr, centers)
    envelopes = temporal_envelope(channels, sr, cfg.envelope_method)

    # envelopes carry no useful content near the audio rate; decimating to
    # 2 kHz leaves the <=200 Hz modulation region untouched and keeps the
    # modulation filtering cheap
    decim = max(1, int(sr // 2000))
    if decim > 1:
        envelopes = sps.resample_poly(envelopes, 1, decim, axis=1)
        sr = sr / decim

    win = int(round(cfg.energy_window_s * sr))
    step = int(round(cfg.energy_step_s * sr))
    n = envelopes.shape[1]
    if n < win:
        starts = np.array([0])
        win = n
    else:
        starts = np.arange(0, n - win + 1, step)

    filters = _modulation_filters(sr, tuple(cfg.modulation_centers()), cfg.modulation_q)
    energies = np.zeros(cfg.n_modulation_bands)
    for k, (b, a) in enumerate(filters):
        banded = sps.lfilter(b, a, envelopes, axis=1)
        # windowed energy summed over windows, via a cumulative sum per channel
        csum = np.cumsum(banded * banded, axis=1)
        padded = np.concatenate([np.zeros((csum.shape[0], 1)), csum], axis=1)
        energies[k] = float(np.sum(padded[:, starts + win] - padded[:, starts]))
    return energies


def srmr(wave: Waveform, cfg: SrmrConfig = SrmrConfig()) -> float:
    """Low-to-high modulation energy ratio of `wave`.

    Scale-invariant (energies appear in both numerator and denominator) and
    deterministic for a fixed config.
    """
    energies = modulation_band_energies(wave, cfg)
    low = float(np.sum(energies[: cfg.low_band_count]))
    high = float(np.sum(energies[cfg.low_band_count :]))
    if high <= 0.0:
        raise MetricError("insufficient energy in high modulation bands")
    return low / high
