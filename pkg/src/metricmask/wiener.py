"""Decision-directed Wiener-filter enhancer.

The no-training comparator: estimate the noise power spectrum from the
leading frames, track the a-priori SNR xi with the decision-directed
recursion

    xi_t = beta * G_{t-1}^2 * gamma_{t-1} + (1 - beta) * max(gamma_t - 1, 0)

and apply the per-bin gain xi / (1 + xi), floored, with the noisy phase
reused at synthesis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DspError, Spectrogram, StftConfig, Waveform, istft, stft


@dataclass(frozen=True)
class WienerConfig:
    noise_frames: int = 6
    smoothing: float = 0.98  # decision-directed beta
    snr_floor_db: float = -25.0  # a-priori SNR floor
    gain_floor: float = 0.1
    stft: StftConfig = StftConfig()

    def __post_init__(self):
        if not 0.0 < self.smoothing < 1.0:
            raise DspError("smoothing must be in (0, 1)")
        if self.gain_floor <= 0 or self.noise_frames < 1:
            raise DspError("floors must be positive")


def decision_directed_gains(power: np.ndarray, noise_psd: np.ndarray,
                            cfg: WienerConfig) -> np.ndarray:
    """Per-bin gain track in [gain_floor, 1] for a power spectrogram."""
    # absolute tiny guard keeps "PSD forced to zero" meaning gain -> 1
    noise_psd = np.maximum(noise_psd, 1e-300)
    xi_floor = 10.0 ** (cfg.snr_floor_db / 10.0)
    beta = cfg.smoothing
    gains = np.empty_like(power)
    gamma_prev = None
    gain_prev = None
    for t in range(power.shape[0]):
        gamma = power[t] / noise_psd
        if gamma_prev is None:
            xi = beta + (1.0 - beta) * np.maximum(gamma - 1.0, 0.0)
        else:
            xi = beta * gain_prev**2 * gamma_prev + (1.0 - beta) * np.maximum(gamma - 1.0, 0.0)
        xi = np.maximum(xi, xi_floor)
        gain = np.clip(xi / (1.0 + xi), cfg.gain_floor, 1.0)
        gains[t] = gain
        gamma_prev, gain_prev = gamma, gain
    return gains


def wiener_enhance(wave: Waveform, cfg: WienerConfig = WienerConfig(),
                   noise_psd: np.ndarray | None = None) -> Waveform:
    """Suppress stationary noise in `wave`.

    The utterance must start with `noise_frames` of noise-dominant signal
    unless an explicit per-bin noise PSD is supplied. Output length equals
    input length (samples past the last full frame pass through).
    """
    spec = stft(wave, cfg.stft)
    power = np.abs(spec.values) ** 2
    if noise_psd is None:
        if spec.frames <= cfg.noise_frames:
            raise DspError(
                f"input too short: {spec.frames} frames <= {cfg.noise_frames} noise frames"
            )
        noise_psd = power[: cfg.noise_frames].mean(axis=0)

    gains = decision_directed_gains(power, np.asarray(noise_psd, dtype=np.float64), cfg)
    enhanced = Spectrogram(spec.values * gains, cfg.stft, wave.sample_rate)
    synth = istft(enhanced).samples
    out = wave.samples.copy()
    n = min(len(out), len(synth))
    out[:n] = synth[:n]
    return Waveform(out, wave.sample_rate)
