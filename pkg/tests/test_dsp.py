import numpy as np
import pytest

from metricmask.dsp import (
    DspError,
    Mask,
    Spectrogram,
    StftConfig,
    Waveform,
    apply_mask,
    convolve,
    istft,
    mix_at_snr,
    read_wav,
    resample,
    segmental_snr,
    stft,
    write_wav,
)

SR = 16000
CFG = StftConfig()


def direct_dft_frame(frame: np.ndarray) -> np.ndarray:
    """O(N^2) oracle for one windowed frame's one-sided DFT."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


def direct_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """O(N*K) direct-sum full convolution oracle."""
    out = np.zeros(len(x) + len(h) - 1)
    for k, hk in enumerate(h):
        out[k : k + len(x)] += hk * x
    return out


class TestStft:
    def test_zero_input_gives_zero_spectrogram(self):
        spec = stft(Waveform(np.zeros(SR)), CFG)
        assert np.all(spec.values == 0)

    def test_frame_count_formula(self):
        for n in (512, 513, 1024, 5000):
            spec = stft(Waveform(np.zeros(n)), CFG)
            assert spec.frames == (n - CFG.fft_size) // CFG.hop + 1

    def test_impulse_at_frame_center_is_flat(self):
        x = np.zeros(CFG.fft_size)
        x[CFG.fft_size // 2] = 1.0
        spec = stft(Waveform(x), CFG)
        mags = np.abs(spec.values[0])
        w_center = CFG.window_array()[CFG.fft_size // 2]
        assert np.max(np.abs(mags - w_center)) < 1e-9

    def test_sine_energy_at_expected_bin_vs_dft_oracle(self):
        t = np.arange(SR) / SR
        x = np.sin(2 * np.pi * 1000 * t)
        spec = stft(Waveform(x), CFG)
        assert np.argmax(np.abs(spec.values[3])) == 32  # 1000/16000*512
        w = CFG.window_array()
        for i in (0, 3, 7):
            frame = x[i * CFG.hop : i * CFG.hop + CFG.fft_size] * w
            oracle = direct_dft_frame(frame)
            assert np.max(np.abs(spec.values[i] - oracle)) < 1e-9

    def test_too_short_raises(self):
        with pytest.raises(DspError, match="input too short"):
            stft(Waveform(np.zeros(CFG.fft_size - 1)), CFG)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        w1, w2 = rng.standard_normal(4096), rng.standard_normal(4096)
        a, b = 0.7, -1.3
        lhs = stft(Waveform(a * w1 + b * w2), CFG).values
        rhs = a * stft(Waveform(w1), CFG).values + b * stft(Waveform(w2), CFG).values
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_frame_level_parseval(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4096)
        spec = stft(Waveform(x), CFG)
        w = CFG.window_array()
        n = CFG.fft_size
        for i in range(spec.frames):
            frame = x[i * CFG.hop : i * CFG.hop + n] * w
            time_energy = np.sum(frame**2)
            v = spec.values[i]
            spectral = (np.abs(v[0]) ** 2 + np.abs(v[-1]) ** 2
                        + 2 * np.sum(np.abs(v[1:-1]) ** 2)) / n
            assert abs(spectral - time_energy) / time_energy < 1e-6


class TestIstft:
    def test_round_trip_white_noise(self):
        rng = np.random.default_rng(2)
        w = Waveform(rng.standard_normal(SR))
        back = istft(stft(w, CFG))
        n = CFG.fft_size
        ref, got = w.samples[n : len(back) - n], back.samples[n : len(back) - n]
        assert np.linalg.norm(ref - got) / np.linalg.norm(ref) < 1e-6

    def test_round_trip_chirp(self):
        t = np.arange(SR) / SR
        w = Waveform(np.sin(2 * np.pi * (200 + 1800 * t) * t) * (0.5 + 0.4 * np.sin(2 * np.pi * 3 * t)))
        back = istft(stft(w, CFG))
        n = CFG.fft_size
        ref, got = w.samples[n : len(back) - n], back.samples[n : len(back) - n]
        assert np.linalg.norm(ref - got) / np.linalg.norm(ref) < 1e-6

    def test_zero_spectrogram_gives_zero_waveform(self):
        spec = Spectrogram(np.zeros((10, CFG.bins)), CFG)
        assert np.all(istft(spec).samples == 0)

    def test_non_cola_config_rejected(self):
        bad = StftConfig(fft_size=512, hop=300)
        spec = Spectrogram(np.zeros((4, bad.bins)), bad)
        with pytest.raises(DspError, match="non-invertible config"):
            istft(spec)


class TestApplyMask:
    def test_all_ones_mask_is_identity(self):
        rng = np.random.default_rng(3)
        spec = stft(Waveform(rng.standard_normal(4096)), CFG)
        out = apply_mask(Mask(np.ones_like(spec.values, dtype=float), 0.05), spec)
        assert np.array_equal(out.values, spec.values)

    def test_floor_mask_scales_magnitude_keeps_phase(self):
        rng = np.random.default_rng(4)
        spec = stft(Waveform(rng.standard_normal(4096)), CFG)
        out = apply_mask(Mask(np.full(spec.values.shape, 0.05), 0.05), spec)
        assert np.allclose(np.abs(out.values), 0.05 * np.abs(spec.values))
        nz = np.abs(spec.values) > 1e-12
        assert np.allclose(np.angle(out.values[nz]), np.angle(spec.values[nz]))

    def test_random_mask_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(5)
        spec = stft(Waveform(rng.standard_normal(2048)), CFG)
        mask = Mask(rng.uniform(0.05, 1.0, spec.values.shape), 0.05)
        out = apply_mask(mask, spec)
        for i in range(spec.frames):
            for j in range(0, CFG.bins, 37):
                expected = abs(spec.values[i, j]) * mask.values[i, j]
                assert abs(abs(out.values[i, j]) - expected) == pytest.approx(0, abs=1e-12)

    def test_shape_mismatch_raises(self):
        spec = stft(Waveform(np.zeros(2048)), CFG)
        with pytest.raises(DspError, match="shape"):
            apply_mask(Mask(np.ones((1, CFG.bins)), 0.05), spec)


class TestConvolve:
    def test_unit_impulse_identity(self):
        rng = np.random.default_rng(6)
        x = Waveform(rng.standard_normal(3000))
        out = convolve(x, Waveform(np.array([1.0])))
        assert np.max(np.abs(out.samples - x.samples)) < 1e-12

    def test_delayed_impulse_shifts(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(3000)
        d = 17
        rir = np.zeros(d + 1)
        rir[d] = 1.0
        out = convolve(Waveform(x), Waveform(rir))
        peak_scale = np.max(np.abs(x)) / np.max(np.abs(x[: 3000 - d]))
        assert np.allclose(out.samples[d:], x[: 3000 - d] * peak_scale, atol=1e-10)
        assert np.allclose(out.samples[:d], 0, atol=1e-12)

    def test_random_rir_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(400)
        h = rng.standard_normal(64) * 0.2
        full = direct_convolve(x, h)
        trimmed = full[:400]
        expected = trimmed * (np.max(np.abs(x)) / np.max(np.abs(trimmed)))
        out = convolve(Waveform(x), Waveform(h))
        assert np.max(np.abs(out.samples - expected)) < 1e-9

    def test_commutative_on_equal_lengths(self):
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal(256), rng.standard_normal(256)
        lhs = convolve(Waveform(a), Waveform(b))
        rhs = convolve(Waveform(b), Waveform(a))
        # same full convolution, same trim length; only the peak reference differs
        assert np.max(np.abs(lhs.samples / np.max(np.abs(lhs.samples))
                             - rhs.samples / np.max(np.abs(rhs.samples)))) < 1e-9

    def test_sample_rate_mismatch(self):
        with pytest.raises(DspError, match="sample-rate mismatch"):
            convolve(Waveform(np.ones(10), 16000), Waveform(np.ones(2), 8000))


class TestResample:
    def test_identity_ratio(self):
        rng = np.random.default_rng(10)
        x = Waveform(rng.standard_normal(1000))
        out = resample(x, 1.0)
        assert np.max(np.abs(out.samples - x.samples)) < 1e-9

    def test_compression_shortens(self):
        out = resample(Waveform(np.random.default_rng(11).standard_normal(1000)), 0.8)
        assert len(out) == 800

    def test_dilation_scales_frequency_down(self):
        t = np.arange(SR) / SR
        x = Waveform(np.sin(2 * np.pi * 1200 * t))
        out = resample(x, 1.2)
        spec = np.abs(np.fft.rfft(out.samples * np.hanning(len(out))))
        peak_hz = np.argmax(spec) * SR / len(out)
        assert abs(peak_hz - 1000.0) < 4.0  # 1200/1.2, within a bin

    def test_ratio_out_of_range(self):
        for ratio in (0.05, 11.0):
            with pytest.raises(DspError, match="ratio out of range"):
                resample(Waveform(np.ones(100)), ratio)


class TestMixAtSnr:
    def test_equal_power_at_zero_db(self):
        rng = np.random.default_rng(12)
        clean = rng.standard_normal(8000)
        noise = rng.standard_normal(8000)
        noise *= np.sqrt(np.mean(clean**2) / np.mean(noise**2))
        out = mix_at_snr(Waveform(clean), Waveform(noise), 0.0)
        assert np.allclose(out.samples, clean + noise, atol=1e-9)

    def test_very_high_snr_is_nearly_clean(self):
        rng = np.random.default_rng(13)
        clean = rng.standard_normal(8000)
        out = mix_at_snr(Waveform(clean), Waveform(rng.standard_normal(8000)), 100.0)
        assert np.linalg.norm(out.samples - clean) / np.linalg.norm(clean) < 1e-5

    def test_component_snr_recovered(self):
        rng = np.random.default_rng(14)
        clean = rng.standard_normal(8000)
        noise = rng.standard_normal(8000)
        out = mix_at_snr(Waveform(clean), Waveform(noise), 5.0)
        residual = out.samples - clean
        measured = 10 * np.log10(np.mean(clean**2) / np.mean(residual**2))
        assert abs(measured - 5.0) < 1e-6

    def test_noise_tiled_when_short(self):
        rng = np.random.default_rng(15)
        clean = rng.standard_normal(1000)
        noise = rng.standard_normal(300)
        out = mix_at_snr(Waveform(clean), Waveform(noise), 0.0)
        residual = out.samples - clean
        # tiling repeats the scaled noise segment verbatim
        assert np.allclose(residual[:300], residual[300:600], atol=1e-12)
        assert len(out) == 1000

    def test_zero_power_raises(self):
        with pytest.raises(DspError, match="zero-power input"):
            mix_at_snr(Waveform(np.zeros(100)), Waveform(np.ones(100)), 0.0)
        with pytest.raises(DspError, match="zero-power input"):
            mix_at_snr(Waveform(np.ones(100)), Waveform(np.zeros(100)), 0.0)


class TestSegmentalSnr:
    def test_identical_hits_upper_clip(self):
        rng = np.random.default_rng(16)
        w = Waveform(rng.standard_normal(8000))
        assert segmental_snr(w, w) == pytest.approx(35.0)

    def test_equal_power_noise_near_zero_db(self):
        rng = np.random.default_rng(17)
        ref = rng.standard_normal(SR)
        est = ref + rng.standard_normal(SR)
        assert abs(segmental_snr(Waveform(ref), Waveform(est))) < 0.5

    def test_anti_correlated_hits_lower_clip(self):
        rng = np.random.default_rng(18)
        ref = rng.standard_normal(8000)
        assert segmental_snr(Waveform(ref), Waveform(-ref)) == pytest.approx(-10.0)

    def test_silence_raises(self):
        with pytest.raises(DspError, match="no active frames"):
            segmental_snr(Waveform(np.zeros(8000)), Waveform(np.zeros(8000)))


class TestWavIo:
    def test_float32_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        w = Waveform(rng.uniform(-0.5, 0.5, 4000))
        path = tmp_path / "x.wav"
        write_wav(path, w, fmt="float32")
        back = read_wav(path)
        assert back.sample_rate == SR
        assert np.max(np.abs(back.samples - w.samples)) < 1e-7

    def test_float64_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        w = Waveform(rng.uniform(-0.5, 0.5, 4000))
        path = tmp_path / "x64.wav"
        write_wav(path, w, fmt="float64")
        assert np.array_equal(read_wav(path).samples, w.samples)

    def test_pcm16_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        w = Waveform(rng.uniform(-0.5, 0.5, 4000))
        path = tmp_path / "p.wav"
        write_wav(path, w, fmt="pcm16")
        assert np.max(np.abs(read_wav(path).samples - w.samples)) < 1.0 / 32768

    def test_multichannel_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "stereo.wav"
        wavfile.write(path, SR, np.zeros((100, 2), dtype=np.float32))
        with pytest.raises(DspError, match="multichannel"):
            read_wav(path)

    def test_expected_rate_enforced(self, tmp_path):
        path = tmp_path / "r.wav"
        write_wav(path, Waveform(np.zeros(100), 8000))
        with pytest.raises(DspError, match="sample rate"):
            read_wav(path, expected_rate=16000)


class TestInvariants:
    def test_waveform_rejects_nan(self):
        with pytest.raises(DspError, match="NaN"):
            Waveform(np.array([0.0, np.nan]))

    def test_mask_range_enforced(self):
        with pytest.raises(DspError, match="outside"):
            Mask(np.array([[0.01]]), floor=0.05)
        with pytest.raises(DspError, match="outside"):
            Mask(np.array([[1.5]]), floor=0.05)

    def test_cola_deviation_default_config(self):
        assert CFG.cola_deviation() < 1e-6

    def test_hop_exceeding_fft_rejected(self):
        with pytest.raises(DspError, match="hop"):
            StftConfig(fft_size=256, hop=512)
