"""Time-frequency analysis and waveform utilities.

Everything in this module is a pure function over `Waveform` and spectrogram
values at a single sample rate (16 kHz by default): STFT analysis/synthesis,
magnitude masking with phase reuse, convolution, band-limited resampling,
SNR mixing, segmental SNR, and mono WAV I/O.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000

# Per-frame SNR clip range (dB) and frame geometry for segmental SNR.
SEGSNR_CLIP = (-10.0, 35.0)
SEGSNR_FRAME_S = 0.032
SEGSNR_HOP_S = 0.016


class DspError(ValueError):
    """Raised for contract violations in the signal-processing layer."""


def _as_samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DspError(f"expected mono 1-D samples, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DspError("samples contain NaN or Inf")
    return arr


@dataclass
class Waveform:
    """Mono audio samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = _as_samples(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis frame geometry.

    The default 512/256 periodic-Hann pair gives 257 frequency bins and
    satisfies constant overlap-add exactly. Frames are taken without any
    padding or centering: frame k covers samples [k*hop, k*hop + fft_size),
    so the first/last half frame of a signal is only partially overlapped
    and round-trip guarantees hold on the fully overlapped interior.
    """

    fft_size: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0:
            raise DspError("fft_size and hop must be positive")
        if self.hop > self.fft_size:
            raise DspError(f"hop {self.hop} must not exceed fft_size {self.fft_size}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        w = sps.get_window(self.window, self.fft_size, fftbins=True)
        return np.asarray(w, dtype=np.float64)

    def cola_deviation(self) -> float:
        """Relative deviation of the overlap-added window from a constant.

        Evaluated on one fully overlapped hop period; 0 means perfect
        constant overlap-add.
        """
        w = self.window_array()
        shifts = self.fft_size // self.hop + 2
        total = np.zeros(self.fft_size + shifts * self.hop)
        for m in range(shifts + 1):
            total[m * self.hop : m * self.hop + self.fft_size] += w
        interior = total[self.fft_size : self.fft_size + self.hop]
        mean = interior.mean()
        if mean <= 0:
            return np.inf
        return float((interior.max() - interior.min()) / mean)


@dataclass
class Spectrogram:
    """Complex STFT values, frames x bins."""

    values: np.ndarray
    config: StftConfig
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[1] != self.config.bins:
            raise DspError(
                f"spectrogram shape {self.values.shape} does not match "
                f"{self.config.bins} bins of its config"
            )
        if not np.all(np.isfinite(self.values)):
            raise DspError("spectrogram contains NaN or Inf")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass
class Mask:
    """Per-bin gains in [floor, 1] applied to a magnitude spectrogram."""

    values: np.ndarray
    floor: float = 0.05

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.floor <= 0:
            raise DspError("mask floor must be positive")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < self.floor - 1e-12 or hi > 1.0 + 1e-12:
            raise DspError(f"mask values [{lo}, {hi}] outside [{self.floor}, 1]")


def stft(wave: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Windowed one-sided FFT frames of `wave`.

    Frame count is floor((len - fft_size)/hop) + 1; no padding is applied.
    """
    x = wave.samples
    if len(x) < cfg.fft_size:
        raise DspError(
            f"input too short: {len(x)} samples < one frame of {cfg.fft_size}"
        )
    w = cfg.window_array()
    frames = sliding_window_view(x, cfg.fft_size)[:: cfg.hop]
    values = np.fft.rfft(frames * w, axis=1)
    return Spectrogram(values=values, config=cfg, sample_rate=wave.sample_rate)


def istft(spec: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis.

    Each inverse-FFT frame is windowed again and the result divided by the
    overlap-added squared window, which reconstructs the input exactly on
    the fully overlapped interior. Raises if the stored config violates
    constant overlap-add.
    """
    cfg = spec.config
    if cfg.cola_deviation() > 1e-6:
        raise DspError(
            f"non-invertible config: window '{cfg.window}' with hop {cfg.hop} "
            f"violates constant overlap-add"
        )
    w = cfg.window_array()
    frames = np.fft.irfft(spec.values, n=cfg.fft_size, axis=1) * w
    n_frames = frames.shape[0]
    length = cfg.fft_size + (n_frames - 1) * cfg.hop
    out = np.zeros(length)
    den = np.zeros(length)
    wsq = w * w
    for i in range(n_frames):
        start = i * cfg.hop
        out[start : start + cfg.fft_size] += frames[i]
        den[start : start + cfg.fft_size] += wsq
    safe = np.maximum(den, 1e-10)
    return Waveform(out / safe, spec.sample_rate)


def apply_mask(mask: Mask, noisy: Spectrogram) -> Spectrogram:
    """Scale the magnitude of `noisy` by `mask`, keeping the noisy phase."""
    if mask.values.shape != noisy.values.shape:
        raise DspError(
            f"mask shape {mask.values.shape} != spectrogram shape {noisy.values.shape}"
        )
    return Spectrogram(
        values=noisy.values * mask.values,
        config=noisy.config,
        sample_rate=noisy.sample_rate,
    )


def convolve(wave: Waveform, rir: Waveform) -> Waveform:
    """Full linear convolution trimmed to the input length.

    The result is rescaled so its peak matches the pre-convolution peak,
    which prevents clipping and keeps levels comparable across impulse
    responses.
    """
    if wave.sample_rate != rir.sample_rate:
        raise DspError(
            f"sample-rate mismatch: {wave.sample_rate} vs {rir.sample_rate}"
        )
    full = sps.fftconvolve(wave.samples, rir.samples)
    out = full[: len(wave)]
    peak_in = float(np.max(np.abs(wave.samples))) if len(wave) else 0.0
    peak_out = float(np.max(np.abs(out))) if len(out) else 0.0
    if peak_in > 0 and peak_out > 0:
        out = out * (peak_in / peak_out)
    return Waveform(out, wave.sample_rate)


def resample(wave: Waveform, ratio: float) -> Waveform:
    """Band-limited time-scaling to round(len * ratio) samples.

    ratio < 1 compresses (shorter signal, e.g. less reverberant an impulse
    response), ratio > 1 dilates. Sample rate metadata is unchanged.
    """
    if not (0.1 <= ratio <= 10.0):
        raise DspError(f"ratio out of range: {ratio} not in [0.1, 10]")
    n_out = int(round(len(wave) * ratio))
    if n_out < 1:
        raise DspError("resample would produce an empty signal")
    out = sps.resample(wave.samples, n_out)
    return Waveform(out, wave.sample_rate)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """clean + g*noise with g chosen so the component SNR equals snr_db.

    Noise shorter than the clean signal is tiled by repetition, longer noise
    is cropped from its start.
    """
    if clean.sample_rate != noise.sample_rate:
        raise DspError(
            f"sample-rate mismatch: {clean.sample_rate} vs {noise.sample_rate}"
        )
    if not np.isfinite(snr_db):
        raise DspError("snr_db must be finite")
    n = len(clean)
    seg = noise.samples
    if len(seg) < n:
        reps = int(np.ceil(n / len(seg)))
        seg = np.tile(seg, reps)
    seg = seg[:n]
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(seg**2))
    if p_clean <= 0 or p_noise <= 0:
        raise DspError("zero-power input")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * seg, clean.sample_rate)


def segmental_snr(ref: Waveform, est: Waveform) -> float:
    """Mean framewise SNR (dB) between a reference and an estimate.

    32 ms frames with 16 ms hop; per-frame SNR is clipped to [-10, 35] dB
    and averaged over frames whose reference energy is within 40 dB of the
    loudest frame. The signal power of a frame is taken as the ref-estimate
    cross power, so uncorrelated or anti-correlated estimates floor out at
    the lower clip.
    """
    if ref.sample_rate != est.sample_rate:
        raise DspError("sample-rate mismatch")
    if len(ref) != len(est):
        raise DspError(f"length mismatch: {len(ref)} vs {len(est)}")
    frame = int(round(SEGSNR_FRAME_S * ref.sample_rate))
    hop = int(round(SEGSNR_HOP_S * ref.sample_rate))
    if len(ref) < frame:
        raise DspError("input too short for one segmental-SNR frame")
    r = sliding_window_view(ref.samples, frame)[::hop]
    e = sliding_window_view(est.samples, frame)[::hop]
    energy = np.sum(r * r, axis=1)
    active = energy > energy.max() * 1e-4
    if not np.any(active):
        raise DspError("no active frames")
    lo, hi = SEGSNR_CLIP
    snrs = []
    for rf, ef, er in zip(r[active], e[active], energy[active]):
        err = float(np.sum((rf - ef) ** 2))
        cross = float(np.sum(rf * ef))
        if err <= er * 1e-30:
            snrs.append(hi)
        elif cross <= 0:
            snrs.append(lo)
        else:
            snrs.append(float(np.clip(10.0 * np.log10(cross / err), lo, hi)))
    return float(np.mean(snrs))


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read a mono RIFF WAV file (16-bit PCM or 32/64-bit float)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise DspError(
            f"multichannel WAV not supported: {path} has {data.shape[1]} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DspError(f"unsupported WAV sample format {data.dtype} in {path}")
    if expected_rate is not None and rate != expected_rate:
        raise DspError(f"{path}: sample rate {rate} != expected {expected_rate}")
    return Waveform(samples, rate)


def write_wav(path, wave: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV file; fmt is one of float32, float64, pcm16."""
    if fmt == "float32":
        data = wave.samples.astype(np.float32)
    elif fmt == "float64":
        data = wave.samples.astype(np.float64)
    elif fmt == "pcm16":
        data = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise DspError(f"unknown WAV format '{fmt}'")
    wavfile.write(path, wave.sample_rate, data)
