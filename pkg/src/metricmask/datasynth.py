"""Deterministic desk-scale corpus synthesis and manifest handling.

Clean "speech" is synthesized (harmonic source with pitch drift, formant
resonances and a 2-8 Hz syllabic envelope), degraded either by convolving
with time-scaled exponential-decay room responses or by mixing noise at a
target SNR, and described by line-delimited JSON manifests. Real corpora can
be used through the same manifest format.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .dsp import Waveform, convolve, mix_at_snr, resample, write_wav

SPLITS = ("train", "valid", "test")


class SynthError(ValueError):
    """Raised for invalid plans or manifests."""


@dataclass
class ManifestEntry:
    id: str
    input_path: str
    split: str
    clean_path: str | None = None
    degradation: dict | None = None
    group: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        return cls(**json.loads(line))


def save_manifest(entries: list[ManifestEntry], path) -> None:
    text = "".join(e.to_json() + "\n" for e in entries)
    Path(path).write_text(text, encoding="utf-8")


def load_manifest(path) -> list[ManifestEntry]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ManifestEntry.from_json(ln) for ln in lines if ln.strip()]


@dataclass
class SynthPlan:
    """Everything needed to build one corpus deterministically."""

    task: str = "reverb"  # "reverb" | "noise"
    n_clean: int = 48  # train+valid pool size
    n_test: int = 8
    n_groups: int = 12  # speaker-like source groups in the pool
    n_valid_groups: int = 2  # groups held out for validation
    duration_range: tuple[float, float] = (1.6, 2.4)
    sample_rate: int = 16000
    seed: int = 0
    # reverb task
    n_rirs_train: int = 12
    n_rirs_test: int = 4
    t60_range: tuple[float, float] = (0.3, 0.8)
    scale_train: tuple[float, ...] = (1.2, 1.1, 1.0, 0.9, 0.8)
    scale_test: tuple[float, ...] = (1.15, 1.05, 0.95, 0.85, 0.75)
    # noise task
    n_noise_sources: int = 4
    snrs: tuple[float, ...] = (15.0, 10.0, 5.0, 0.0)

    def __post_init__(self):
        if self.task not in ("reverb", "noise"):
            raise SynthError(f"unknown task '{self.task}'")
        if self.n_clean < 1 or self.n_test < 0:
            raise SynthError("need at least one clean utterance")
        if self.n_valid_groups >= self.n_groups:
            raise SynthError(
                f"cannot hold out {self.n_valid_groups} of {self.n_groups} groups"
            )
        if set(self.scale_train) & set(self.scale_test):
            raise SynthError("train and test scale factor sets must be disjoint")


def _group_params(seed: int, group: int) -> dict:
    rng = np.random.default_rng([seed, 7777, group])
    return {
        "f0": rng.uniform(170.0, 280.0),
        "formants": (
            rng.uniform(380.0, 750.0),
            rng.uniform(1050.0, 1900.0),
            rng.uniform(2300.0, 2900.0),
        ),
        "bandwidths": (
            rng.uniform(60.0, 120.0),
            rng.uniform(90.0, 160.0),
            rng.uniform(120.0, 200.0),
        ),
    }


def synth_toy_clean(
    n: int,
    seed: int,
    sample_rate: int = 16000,
    duration_range: tuple[float, float] = (1.6, 2.4),
    n_groups: int | None = None,
    group_offset: int = 0,
) -> list[tuple[Waveform, str]]:
    """Speech-like test signals: (waveform, group id) pairs.

    Each signal is a sawtooth source with drifting pitch, shaped by three
    formant resonators shared within its group, and gated by a deep 2.5-5 Hz
    syllabic envelope, so modulation-energy metrics respond to it the way
    they respond to speech. Deterministic per (seed, index).
    """
    if n < 1:
        raise SynthError("n must be >= 1")
    if n_groups is None:
        n_groups = max(1, n // 4)
    out = []
    for i in range(n):
        g = group_offset + (i % n_groups)
        gp = _group_params(seed, g)
        rng = np.random.default_rng([seed, i])
        dur = rng.uniform(*duration_range)
        t = np.arange(int(dur * sample_rate)) / sample_rate

        f0 = gp["f0"] * (
            1.0
            + 0.06 * np.sin(2 * np.pi * rng.uniform(0.4, 0.9) * t + rng.uniform(0, 2 * np.pi))
            + 0.04 * np.sin(2 * np.pi * rng.uniform(1.3, 2.3) * t + rng.uniform(0, 2 * np.pi))
        )
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        source = sps.sawtooth(phase)

        # parallel formant bank keeps the level balanced across channels
        voiced = np.zeros_like(source)
        for gain, (fc, bw) in zip((1.0, 0.6, 0.4), zip(gp["formants"], gp["bandwidths"])):
            b, a = sps.iirpeak(fc, fc / bw, fs=sample_rate)
            voiced += gain * sps.lfilter(b, a, source)
        voiced = voiced / np.sqrt(np.mean(voiced**2))

        rate = rng.uniform(3.5, 5.5)
        syllable = (0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** rng.uniform(2.0, 3.0)
        word = 1.0 - 0.3 * (0.5 - 0.5 * np.cos(2 * np.pi * rng.uniform(0.4, 0.8) * t + rng.uniform(0, 2 * np.pi)))
        envelope = 0.02 + 0.98 * syllable * word

        # breathy carrier noise puts a speech-like floor in the high
        # modulation bands that survives reverberation
        x = (voiced + 0.12 * rng.standard_normal(len(t))) * envelope
        b, a = sps.butter(2, 60.0, btype="highpass", fs=sample_rate)
        x = sps.lfilter(b, a, x)

        target_rms = rng.uniform(0.07, 0.2)
        x = x * (target_rms / np.sqrt(np.mean(x**2)))
        peak = np.max(np.abs(x))
        if peak > 0.98:
            x = x * (0.98 / peak)
        out.append((Waveform(x, sample_rate), f"g{g:02d}"))
    return out


def synth_toy_rirs(
    n: int,
    seed: int,
    sample_rate: int = 16000,
    t60_range: tuple[float, float] = (0.3, 0.8),
    tag: str = "rir",
) -> list[tuple[Waveform, str]]:
    """Exponential-decay room responses: direct path plus a noise tail.

    T60 is drawn from `t60_range` and the direct-to-reverberant energy ratio
    from [-3, 3] dB, which degrades modulation metrics noticeably without
    burying the signal.
    """
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 31337, i])
        t60 = rng.uniform(*t60_range)
        n_tail = int(1.1 * t60 * sample_rate)
        k = np.arange(1, n_tail + 1)
        decay = np.exp(-6.9078 * k / (t60 * sample_rate))  # -60 dB at t60
        # random-sign ("velvet") tail: deterministic energy profile, no
        # chance amplitude clumps, so time-scaling behaves monotonically
        tail = rng.choice(np.array([-1.0, 1.0]), n_tail) * decay
        drr_db = rng.uniform(-6.0, 0.0)
        tail_energy = np.sum(tail**2)
        tail = tail * np.sqrt(10.0 ** (-drr_db / 10.0) / tail_energy)
        d0 = int(0.002 * sample_rate)
        rir = np.zeros(d0 + 1 + n_tail)
        rir[d0] = 1.0
        rir[d0 + 1 :] = tail
        out.append((Waveform(rir, sample_rate), f"{tag}{i:02d}"))
    return out


def synth_toy_noises(
    n: int, seed: int, sample_rate: int = 16000, duration_s: float = 3.0
) -> list[tuple[Waveform, str]]:
    """Stationary noise sources: white and low-passed variants."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 424242, i])
        x = rng.standard_normal(int(duration_s * sample_rate))
        if i % 2 == 1:
            b, a = sps.butter(2, rng.uniform(800.0, 2500.0), fs=sample_rate)
            x = sps.lfilter(b, a, x)
        x = x * (0.1 / np.sqrt(np.mean(x**2)))
        out.append((Waveform(x, sample_rate), f"noise{i:02d}"))
    return out


def split_by_group(
    entries: list[ManifestEntry], n_holdout_groups: int, seed: int
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Group-disjoint (train, valid) split; held-out groups drawn by seed."""
    groups = sorted({e.group for e in entries if e.group is not None})
    if len(groups) <= n_holdout_groups:
        raise SynthError(
            f"need more than {n_holdout_groups} groups to split, got {len(groups)}"
        )
    rng = np.random.default_rng([seed, 555])
    held = set(rng.choice(groups, size=n_holdout_groups, replace=False).tolist())
    train = [e for e in entries if e.group not in held]
    valid = [e for e in entries if e.group in held]
    return train, valid


def _with_split(entries: list[ManifestEntry], split: str) -> list[ManifestEntry]:
    for e in entries:
        e.split = split
    return entries


def build_reverb_set(plan: SynthPlan, out_dir) -> dict[str, list[ManifestEntry]]:
    """Synthesize a reverberant corpus per `plan` under `out_dir`.

    Each clean utterance is paired with exactly one (rir, scale_factor) drawn
    by the plan seed; the response is time-scaled by the factor, convolved
    with the clean signal (trimmed to its length), and everything is written
    as float32 WAV plus three manifests.
    """
    out_dir = Path(out_dir)
    for sub in ("clean", "reverb", "rirs"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    cleans = synth_toy_clean(
        plan.n_clean, plan.seed, plan.sample_rate, plan.duration_range, plan.n_groups
    )
    test_cleans = [] if plan.n_test == 0 else synth_toy_clean(
        plan.n_test,
        plan.seed + 1,
        plan.sample_rate,
        plan.duration_range,
        max(1, plan.n_test // 4),
        group_offset=100,
    )
    train_rirs = synth_toy_rirs(
        plan.n_rirs_train, plan.seed, plan.sample_rate, plan.t60_range, tag="rtr"
    )
    test_rirs = synth_toy_rirs(
        plan.n_rirs_test, plan.seed + 1, plan.sample_rate, plan.t60_range, tag="rte"
    )
    if not cleans or not train_rirs:
        raise SynthError("empty source sets")
    train_rir_ids = {rid for _, rid in train_rirs}
    test_rir_ids = {rid for _, rid in test_rirs}
    if train_rir_ids & test_rir_ids:
        raise SynthError("train/test RIR sets overlap")

    for rir, rid in train_rirs + test_rirs:
        write_wav(out_dir / "rirs" / f"{rid}.wav", rir)

    rng = np.random.default_rng([plan.seed, 99])

    def make_entries(cleans_list, rirs, scales, prefix):
        entries = []
        for idx, (clean, group) in enumerate(cleans_list):
            uid = f"{prefix}{idx:03d}"
            rir, rid = rirs[rng.integers(len(rirs))]
            scale = float(scales[rng.integers(len(scales))])
            scaled = resample(rir, scale)
            reverbed = convolve(clean, scaled)
            clean_path = out_dir / "clean" / f"{uid}.wav"
            input_path = out_dir / "reverb" / f"{uid}.wav"
            write_wav(clean_path, clean)
            write_wav(input_path, reverbed)
            entries.append(
                ManifestEntry(
                    id=uid,
                    input_path=str(input_path),
                    split="train",
                    clean_path=str(clean_path),
                    degradation={"kind": "reverb", "rir_id": rid, "scale_factor": scale},
                    group=group,
                )
            )
        return entries

    pool = make_entries(cleans, train_rirs, plan.scale_train, "u")
    test = _with_split(
        make_entries(test_cleans, test_rirs, plan.scale_test, "t"), "test"
    )
    train, valid = split_by_group(pool, plan.n_valid_groups, plan.seed)
    _with_split(valid, "valid")

    manifests = {"train": train, "valid": valid, "test": test}
    for split, entries in manifests.items():
        save_manifest(entries, out_dir / f"manifest_{split}.jsonl")
    return manifests


def build_noisy_set(plan: SynthPlan, out_dir) -> dict[str, list[ManifestEntry]]:
    """Synthesize an additive-noise corpus per `plan` under `out_dir`."""
    out_dir = Path(out_dir)
    for sub in ("clean", "noisy"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    cleans = synth_toy_clean(
        plan.n_clean, plan.seed, plan.sample_rate, plan.duration_range, plan.n_groups
    )
    test_cleans = [] if plan.n_test == 0 else synth_toy_clean(
        plan.n_test,
        plan.seed + 1,
        plan.sample_rate,
        plan.duration_range,
        max(1, plan.n_test // 4),
        group_offset=100,
    )
    noises = synth_toy_noises(plan.n_noise_sources, plan.seed, plan.sample_rate)
    if not cleans or not noises:
        raise SynthError("empty source sets")

    rng = np.random.default_rng([plan.seed, 98])

    def make_entries(cleans_list, prefix):
        entries = []
        for idx, (clean, group) in enumerate(cleans_list):
            uid = f"{prefix}{idx:03d}"
            noise, nid = noises[rng.integers(len(noises))]
            snr = float(plan.snrs[rng.integers(len(plan.snrs))])
            mixed = mix_at_snr(clean, noise, snr)
            clean_path = out_dir / "clean" / f"{uid}.wav"
            input_path = out_dir / "noisy" / f"{uid}.wav"
            write_wav(clean_path, clean)
            write_wav(input_path, mixed)
            entries.append(
                ManifestEntry(
                    id=uid,
                    input_path=str(input_path),
                    split="train",
                    clean_path=str(clean_path),
                    degradation={"kind": "noise", "noise_id": nid, "snr_db": snr},
                    group=group,
                )
            )
        return entries

    pool = make_entries(cleans, "u")
    test = _with_split(make_entries(test_cleans, "t"), "test")
    train, valid = split_by_group(pool, plan.n_valid_groups, plan.seed)
    _with_split(valid, "valid")

    manifests = {"train": train, "valid": valid, "test": test}
    for split, entries in manifests.items():
        save_manifest(entries, out_dir / f"manifest_{split}.jsonl")
    return manifests


def build_corpus(plan: SynthPlan, out_dir) -> dict[str, list[ManifestEntry]]:
    if plan.task == "reverb":
        return build_reverb_set(plan, out_dir)
    return build_noisy_set(plan, out_dir)
