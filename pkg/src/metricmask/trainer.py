"""Adversarial training loop for metric-driven mask estimation.

Each epoch alternates two passes over the training set. The critic pass
scores the current enhanced output and the raw input with the black-box
metric and regresses the critic onto those scores:

    (D(enhanced) - q_enhanced)^2 + (D(input) - q_input)^2

The masker pass freezes the critic and updates the generator to pull the
critic's score of its output toward the target, optionally anchored by a
self-reconstruction term on the magnitude spectrogram:

    (D(enhanced) - target)^2 + recon_weight * mean((enhanced_mag - mag)^2)

Raw-input scores never change, so they are cached per utterance. Validation
runs after every epoch; the best-validation checkpoint ("half" regime) and
the final checkpoint ("full" regime) are both kept.
"""
from __future__ import annotations

import collections
import csv
import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import models, nn
from .autodiff import AutodiffError, Tensor, backward, no_grad, zero_grads
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .datasynth import ManifestEntry
from .dsp import Spectrogram, StftConfig, Waveform, istft, read_wav, stft
from .metrics import MetricScore, parallel_map
from .srmr import MetricError

log = logging.getLogger("metricmask.trainer")

CHECKPOINT_FORMAT = 1


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    target_score: float = 1.0
    recon_weight: float = 0.0
    epochs: int = 600
    d_passes_per_epoch: int = 1
    g_passes_per_epoch: int = 1
    d_warmup_epochs: int = 0  # critic-only epochs before alternation starts
    early_stop: bool = False
    patience: int = 20
    history_pool: int = 0
    seed: int = 0
    lr_generator: float = 5e-4
    lr_discriminator: float = 5e-4
    mask_floor: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.target_score <= 1.0:
            raise TrainError(f"target_score must be in (0, 1], got {self.target_score}")
        if self.recon_weight < 0.0:
            raise TrainError("recon_weight must be >= 0")
        if self.epochs < 0:
            raise TrainError("epochs must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_loss: float
    val_score_enhanced: float
    val_score_noisy: float
    recon_l2: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not np.isfinite(v):
                raise TrainError(f"non-finite {name} in epoch record")


CURVE_FIELDS = ["epoch", "d_loss", "g_loss", "val_score_enhanced", "val_score_noisy", "recon_l2"]


# ------------------------------------------------------------------- data


@dataclass
class Utterance:
    id: str
    wave: Waveform
    spec: Spectrogram
    mag: np.ndarray
    feat: np.ndarray
    clean_mag: np.ndarray | None = None


def prepare_utterance(uid: str, wave: Waveform, stft_cfg: StftConfig,
                      feat_cfg: models.FeatureConfig,
                      clean: Waveform | None = None) -> Utterance:
    spec = stft(wave, stft_cfg)
    mag = spec.magnitude()
    clean_mag = None
    if clean is not None:
        clean_mag = stft(clean, stft_cfg).magnitude()
        if clean_mag.shape != mag.shape:
            raise TrainError(
                f"{uid}: clean/input frame mismatch {clean_mag.shape} vs {mag.shape}"
            )
    return Utterance(
        id=uid, wave=wave, spec=spec, mag=mag,
        feat=models.transform_array(mag, feat_cfg), clean_mag=clean_mag,
    )


def load_utterances(entries: list[ManifestEntry], stft_cfg: StftConfig,
                    feat_cfg: models.FeatureConfig, with_clean: bool = False) -> list[Utterance]:
    out = []
    for e in entries:
        try:
            wave = read_wav(e.input_path)
        except FileNotFoundError:
            raise TrainError(f"missing file for id {e.id}: {e.input_path}")
        clean = None
        if with_clean:
            if not e.clean_path:
                raise TrainError(f"missing clean path for id {e.id}")
            clean = read_wav(e.clean_path)
        out.append(prepare_utterance(e.id, wave, stft_cfg, feat_cfg, clean))
    return out


class ScoreCache:
    """Per-utterance scores of fixed inputs, computed at most once."""

    def __init__(self, metric):
        self.metric = metric
        self._scores: dict[str, MetricScore] = {}
        self.hits = 0
        self.misses = 0

    def input_score(self, utt: Utterance) -> MetricScore:
        if utt.id in self._scores:
            self.hits += 1
        else:
            self.misses += 1
            self._scores[utt.id] = self.metric.score(utt.wave)
        return self._scores[utt.id]

    def warm(self, utterances: list[Utterance], threads: int = 1) -> None:
        missing = [u for u in utterances if u.id not in self._scores]
        scores = parallel_map(lambda u: self.metric.score(u.wave), missing, threads)
        for u, s in zip(missing, scores):
            self._scores[u.id] = s
            self.misses += 1


# ------------------------------------------------------------------ models


@dataclass
class ModelBundle:
    gen_params: dict[str, Tensor]
    disc_params: dict[str, Tensor]
    gen_spec: models.GeneratorSpec
    disc_spec: models.DiscriminatorSpec
    feature: models.FeatureConfig
    stft_cfg: StftConfig
    mask_floor: float = 0.05

    @classmethod
    def create(cls, seed: int, gen_spec=None, disc_spec=None, feature=None,
               stft_cfg=None, mask_floor: float = 0.05) -> "ModelBundle":
        gen_spec = gen_spec or models.GeneratorSpec()
        disc_spec = disc_spec or models.DiscriminatorSpec()
        stft_cfg = stft_cfg or StftConfig()
        if gen_spec.output_bins != stft_cfg.bins:
            raise TrainError(
                f"generator bins {gen_spec.output_bins} != stft bins {stft_cfg.bins}"
            )
        return cls(
            gen_params=models.init_generator(gen_spec, np.random.default_rng([seed, 1])),
            disc_params=models.init_discriminator(disc_spec, np.random.default_rng([seed, 2])),
            gen_spec=gen_spec,
            disc_spec=disc_spec,
            feature=feature or models.FeatureConfig(),
            stft_cfg=stft_cfg,
            mask_floor=mask_floor,
        )

    def critic(self, mag_tensor) -> Tensor:
        return models.discriminator_forward(self.disc_params, self.disc_spec, mag_tensor)

    def mask_for(self, utt: Utterance) -> Tensor:
        return models.generator_forward(self.gen_params, self.gen_spec, utt.feat, self.mask_floor)


def save_bundle(path, bundle: ModelBundle, *, epoch: int = 0, val_score: float = 0.0,
                optimizers: dict[str, nn.AdamState] | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for k, t in bundle.gen_params.items():
        tensors[f"g.{k}"] = t.data
    for k, t in bundle.disc_params.items():
        tensors[f"d.{k}"] = t.data
    opt_meta = {}
    if optimizers:
        for tag, state in optimizers.items():
            for k, v in state.m.items():
                tensors[f"opt.{tag}.m.{k}"] = v
            for k, v in state.v.items():
                tensors[f"opt.{tag}.v.{k}"] = v
            opt_meta[tag] = {"step_count": state.step_count, **asdict(state.config)}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "generator_spec": asdict(bundle.gen_spec),
        "discriminator_spec": asdict(bundle.disc_spec),
        "feature": asdict(bundle.feature),
        "stft": asdict(bundle.stft_cfg),
        "mask_floor": bundle.mask_floor,
        "epoch": epoch,
        "val_score": val_score,
        "optimizers": opt_meta,
    }
    save_checkpoint(path, tensors, meta)


def load_bundle(path) -> tuple[ModelBundle, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format')}")
    gs = meta["generator_spec"]
    ds = meta["discriminator_spec"]
    gen_spec = models.GeneratorSpec(**gs)
    disc_spec = models.DiscriminatorSpec(
        conv_layers=ds["conv_layers"], filters=ds["filters"],
        kernel=tuple(ds["kernel"]), dense_widths=tuple(ds["dense_widths"]),
        leaky_slope=ds["leaky_slope"],
    )
    stft_cfg = StftConfig(**meta["stft"])
    if gen_spec.output_bins != stft_cfg.bins:
        raise CheckpointError(
            f"checkpoint/config mismatch: generator bins {gen_spec.output_bins} "
            f"!= stft bins {stft_cfg.bins}"
        )
    bundle = ModelBundle(
        gen_params={k[2:]: Tensor(v, requires_grad=True)
                    for k, v in tensors.items() if k.startswith("g.")},
        disc_params={k[2:]: Tensor(v, requires_grad=True)
                     for k, v in tensors.items() if k.startswith("d.")},
        gen_spec=gen_spec,
        disc_spec=disc_spec,
        feature=models.FeatureConfig(**meta["feature"]),
        stft_cfg=stft_cfg,
        mask_floor=meta["mask_floor"],
    )
    return bundle, meta


# ------------------------------------------------------------------- losses


def discriminator_loss(d_enh, q_enh: float, d_noisy, q_noisy: float) -> Tensor:
    """Squared regression error of the critic on enhanced and raw inputs."""
    enh_term = ad.square(ad.sub(ad.as_tensor(d_enh), float(q_enh)))
    noisy_term = ad.square(ad.sub(ad.as_tensor(d_noisy), float(q_noisy)))
    return ad.add(enh_term, noisy_term)


def generator_loss(d_enh, target_score: float, recon_l2, recon_weight: float) -> Tensor:
    """Critic-target pull plus the weighted self-reconstruction anchor."""
    adv = ad.square(ad.sub(ad.as_tensor(d_enh), float(target_score)))
    if recon_weight == 0.0:
        return adv
    return ad.add(adv, ad.mul(ad.as_tensor(recon_l2), float(recon_weight)))


# ------------------------------------------------------------------ running


def resynthesize(utt: Utterance, mask_values: np.ndarray) -> Waveform:
    """Masked magnitudes + input phase back to a waveform of input length.

    Samples past the last full analysis frame are passed through unchanged.
    """
    masked = Spectrogram(
        utt.spec.values * mask_values, utt.spec.config, utt.wave.sample_rate
    )
    synth = istft(masked).samples
    out = utt.wave.samples.copy()
    n = min(len(out), len(synth))
    out[:n] = synth[:n]
    return Waveform(out, utt.wave.sample_rate)


def enhance_arrays(bundle: ModelBundle, utt: Utterance) -> tuple[np.ndarray, np.ndarray, float]:
    """(mask, enhanced magnitude, recon distance) without recording a tape."""
    with no_grad():
        mask = bundle.mask_for(utt).data
    enh_mag = mask * utt.mag
    recon = float(np.mean((enh_mag - utt.mag) ** 2))
    return mask, enh_mag, recon


@dataclass
class DEpochStats:
    mean_loss: float
    skipped: int


def train_discriminator_epoch(
    bundle: ModelBundle,
    data: list[Utterance],
    metric,
    cache: ScoreCache,
    opt_state: nn.AdamState,
    cfg: TrainConfig,
    critic=None,
    pool: collections.deque | None = None,
    pool_rng: np.random.Generator | None = None,
) -> DEpochStats:
    """One pass fitting the critic to metric scores with the masker frozen."""
    if not data:
        raise TrainError("empty dataset")
    critic = critic or bundle.critic
    losses = []
    skipped = 0
    for utt in data:
        mask, enh_mag, _ = enhance_arrays(bundle, utt)
        try:
            q_enh = metric.score(resynthesize(utt, mask)).normalized
            q_noisy = cache.input_score(utt).normalized
        except MetricError as exc:
            skipped += 1
            log.warning("metric failed on %s, skipping: %s", utt.id, exc)
            continue
        enh_feat = models.transform_array(enh_mag, bundle.feature)
        d_enh = critic(Tensor(enh_feat))
        d_noisy = critic(Tensor(utt.feat))
        loss = discriminator_loss(d_enh, q_enh, d_noisy, q_noisy)
        if pool is not None and len(pool):
            feat_p, q_p = pool[int(pool_rng.integers(len(pool)))]
            loss = ad.add(loss, ad.square(ad.sub(critic(Tensor(feat_p)), q_p)))
        if pool is not None:
            pool.append((enh_feat, q_enh))
        zero_grads(bundle.disc_params)
        backward(loss)
        nn.adam_step(bundle.disc_params, opt_state)
        losses.append(loss.item())
    if not losses:
        raise TrainError("metric failed on every utterance in the epoch")
    return DEpochStats(mean_loss=float(np.mean(losses)), skipped=skipped)


@dataclass
class GEpochStats:
    mean_loss: float
    mean_recon: float


def train_generator_epoch(
    bundle: ModelBundle,
    data: list[Utterance],
    opt_state: nn.AdamState,
    cfg: TrainConfig,
    critic=None,
) -> GEpochStats:
    """One pass ascending the frozen critic with the masker."""
    if not data:
        raise TrainError("empty dataset")
    critic = critic or bundle.critic
    frozen = {name: p.requires_grad for name, p in bundle.disc_params.items()}
    for p in bundle.disc_params.values():
        p.requires_grad = False
    losses, recons = [], []
    try:
        for utt in data:
            mask = bundle.mask_for(utt)
            enh_mag = ad.mul(mask, utt.mag)
            d_enh = critic(models.transform_tensor(enh_mag, bundle.feature))
            recon = ad.reduce_mean(ad.square(ad.sub(enh_mag, utt.mag)))
            loss = generator_loss(d_enh, cfg.target_score, recon, cfg.recon_weight)
            zero_grads(bundle.gen_params)
            try:
                backward(loss)
            except AutodiffError as exc:
                raise TrainError(f"aborting epoch at utterance {utt.id}: {exc}")
            nn.adam_step(bundle.gen_params, opt_state)
            losses.append(loss.item())
            recons.append(recon.item())
    finally:
        for name, p in bundle.disc_params.items():
            p.requires_grad = frozen[name]
    return GEpochStats(mean_loss=float(np.mean(losses)), mean_recon=float(np.mean(recons)))


@dataclass
class ValidationStats:
    mean_enhanced: float
    mean_input: float
    mean_recon: float
    per_utterance: dict[str, float]
    raw_per_utterance: dict[str, float]


def validate(bundle: ModelBundle, data: list[Utterance], metric, cache: ScoreCache,
             threads: int = 1) -> ValidationStats:
    if not data:
        raise TrainError("empty validation set")
    cache.warm(data, threads)
    prepared = [(utt, *enhance_arrays(bundle, utt)) for utt in data]

    def score_one(item):
        utt, mask, _, _ = item
        return metric.score(resynthesize(utt, mask))

    scores = parallel_map(score_one, prepared, threads)
    per_utt = {utt.id: s.normalized for (utt, *_), s in zip(prepared, scores)}
    raw_per_utt = {utt.id: s.raw for (utt, *_), s in zip(prepared, scores)}
    return ValidationStats(
        mean_enhanced=float(np.mean(list(per_utt.values()))),
        mean_input=float(np.mean([cache.input_score(u).normalized for u in data])),
        mean_recon=float(np.mean([rec for (_, _, _, rec) in prepared])),
        per_utterance=per_utt,
        raw_per_utterance=raw_per_utt,
    )


@dataclass
class TrainResult:
    records: list[EpochRecord]
    best_epoch: int
    best_score: float
    init_path: str
    best_path: str | None
    final_path: str | None
    curve_path: str
    cache_hits: int
    cache_misses: int
    skipped: int
    final_val_scores: dict[str, float] = field(default_factory=dict)
    best_val_scores: dict[str, float] = field(default_factory=dict)


def write_curves(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for r in records:
            writer.writerow([r.epoch, f"{r.d_loss:.8f}", f"{r.g_loss:.8f}",
                             f"{r.val_score_enhanced:.8f}", f"{r.val_score_noisy:.8f}",
                             f"{r.recon_l2:.8f}"])


def train(
    train_data: list[Utterance],
    valid_data: list[Utterance],
    metric,
    cfg: TrainConfig,
    bundle: ModelBundle,
    out_dir,
    threads: int = 1,
    render_figures: bool = True,
) -> TrainResult:
    """Full alternating loop; deterministic given cfg.seed in single-thread mode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt_d = nn.AdamState(nn.AdamConfig(lr=cfg.lr_discriminator))
    opt_g = nn.AdamState(nn.AdamConfig(lr=cfg.lr_generator))
    cache = ScoreCache(metric)
    pool = collections.deque(maxlen=cfg.history_pool) if cfg.history_pool else None
    pool_rng = np.random.default_rng([cfg.seed, 3])

    init_path = out_dir / "init.ckpt"
    save_bundle(init_path, bundle, epoch=0)
    curve_path = out_dir / "curves.csv"

    records: list[EpochRecord] = []
    result = TrainResult(
        records=records, best_epoch=0, best_score=-np.inf,
        init_path=str(init_path), best_path=None, final_path=None,
        curve_path=str(curve_path), cache_hits=0, cache_misses=0, skipped=0,
    )
    if cfg.epochs == 0:
        write_curves(records, curve_path)
        result.best_score = 0.0
        return result

    cache.warm(train_data, threads)
    val0 = validate(bundle, valid_data, metric, cache, threads)
    records.append(EpochRecord(0, 0.0, 0.0, val0.mean_enhanced, val0.mean_input, val0.mean_recon))
    best_path = out_dir / "best.ckpt"
    result.best_score = val0.mean_enhanced
    result.best_val_scores = dict(val0.per_utterance)
    save_bundle(best_path, bundle, epoch=0, val_score=val0.mean_enhanced)
    result.best_path = str(best_path)
    result.final_val_scores = dict(val0.per_utterance)
    epochs_since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        d_losses, g_losses, g_recons = [], [], []
        for _ in range(cfg.d_passes_per_epoch):
            stats = train_discriminator_epoch(
                bundle, train_data, metric, cache, opt_d, cfg, pool=pool, pool_rng=pool_rng
            )
            d_losses.append(stats.mean_loss)
            result.skipped += stats.skipped
        if epoch <= cfg.d_warmup_epochs:
            # critic-only warmup: report the masker as unchanged
            recon = float(np.mean([enhance_arrays(bundle, u)[2] for u in train_data]))
            g_losses.append(0.0)
            g_recons.append(recon)
        else:
            for _ in range(cfg.g_passes_per_epoch):
                gstats = train_generator_epoch(bundle, train_data, opt_g, cfg)
                g_losses.append(gstats.mean_loss)
                g_recons.append(gstats.mean_recon)
        val = validate(bundle, valid_data, metric, cache, threads)
        records.append(EpochRecord(
            epoch, float(np.mean(d_losses)), float(np.mean(g_losses)),
            val.mean_enhanced, val.mean_input, float(np.mean(g_recons)),
        ))
        result.final_val_scores = dict(val.per_utterance)
        log.info("epoch %d: d=%.4f g=%.4f val=%.4f", epoch,
                 records[-1].d_loss, records[-1].g_loss, val.mean_enhanced)
        if val.mean_enhanced > result.best_score:
            result.best_score = val.mean_enhanced
            result.best_epoch = epoch
            result.best_val_scores = dict(val.per_utterance)
            save_bundle(best_path, bundle, epoch=epoch, val_score=val.mean_enhanced)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if cfg.early_stop and epochs_since_best >= cfg.patience:
            log.info("early stop after %d epochs without improvement", cfg.patience)
            break

    final_path = out_dir / "final.ckpt"
    save_bundle(final_path, bundle, epoch=records[-1].epoch,
                val_score=records[-1].val_score_enhanced,
                optimizers={"g": opt_g, "d": opt_d})
    result.final_path = str(final_path)
    write_curves(records, curve_path)
    if render_figures:
        from . import plots

        plots.render_curves(records, out_dir / "curves.png")
    result.cache_hits = cache.hits
    result.cache_misses = cache.misses
    return result


def train_supervised_mse(
    train_data: list[Utterance],
    valid_data: list[Utterance],
    metric,
    cfg: TrainConfig,
    bundle: ModelBundle,
    out_dir,
    threads: int = 1,
    render_figures: bool = True,
) -> TrainResult:
    """Comparator: minimize masked-vs-clean magnitude MSE with paired data.

    Shares the logging, validation, and checkpoint machinery; the d_loss
    column is fixed at 0 and g_loss carries the MSE.
    """
    for utt in train_data:
        if utt.clean_mag is None:
            raise TrainError(f"missing clean reference for {utt.id}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt_g = nn.AdamState(nn.AdamConfig(lr=cfg.lr_generator))
    cache = ScoreCache(metric)
    init_path = out_dir / "init.ckpt"
    save_bundle(init_path, bundle, epoch=0)
    curve_path = out_dir / "curves.csv"
    records: list[EpochRecord] = []
    result = TrainResult(
        records=records, best_epoch=0, best_score=-np.inf,
        init_path=str(init_path), best_path=None, final_path=None,
        curve_path=str(curve_path), cache_hits=0, cache_misses=0, skipped=0,
    )
    if cfg.epochs == 0:
        write_curves(records, curve_path)
        result.best_score = 0.0
        return result

    val0 = validate(bundle, valid_data, metric, cache, threads)
    records.append(EpochRecord(0, 0.0, 0.0, val0.mean_enhanced, val0.mean_input, val0.mean_recon))
    best_path = out_dir / "best.ckpt"
    result.best_score = val0.mean_enhanced
    save_bundle(best_path, bundle, epoch=0, val_score=val0.mean_enhanced)
    result.best_path = str(best_path)

    for epoch in range(1, cfg.epochs + 1):
        losses, recons = [], []
        for utt in train_data:
            mask = bundle.mask_for(utt)
            enh_mag = ad.mul(mask, utt.mag)
            loss = ad.reduce_mean(ad.square(ad.sub(enh_mag, utt.clean_mag)))
            zero_grads(bundle.gen_params)
            backward(loss)
            nn.adam_step(bundle.gen_params, opt_g)
            losses.append(loss.item())
            recons.append(float(np.mean((mask.data * utt.mag - utt.mag) ** 2)))
        val = validate(bundle, valid_data, metric, cache, threads)
        records.append(EpochRecord(
            epoch, 0.0, float(np.mean(losses)),
            val.mean_enhanced, val.mean_input, float(np.mean(recons)),
        ))
        result.final_val_scores = dict(val.per_utterance)
        if val.mean_enhanced > result.best_score:
            result.best_score = val.mean_enhanced
            result.best_epoch = epoch
            save_bundle(best_path, bundle, epoch=epoch, val_score=val.mean_enhanced)

    final_path = out_dir / "final.ckpt"
    save_bundle(final_path, bundle, epoch=records[-1].epoch,
                val_score=records[-1].val_score_enhanced, optimizers={"g": opt_g})
    result.final_path = str(final_path)
    write_curves(records, curve_path)
    if render_figures:
        from . import plots

        plots.render_curves(records, out_dir / "curves.png")
    result.cache_hits = cache.hits
    result.cache_misses = cache.misses
    return result


# ---------------------------------------------------------------- inference


def enhance(wave: Waveform, checkpoint_path) -> Waveform:
    """Mask-and-resynthesize `wave` with a trained checkpoint."""
    bundle, _ = load_bundle(checkpoint_path)
    utt = prepare_utterance("input", wave, bundle.stft_cfg, bundle.feature)
    mask, _, _ = enhance_arrays(bundle, utt)
    return resynthesize(utt, mask)


def evaluate(entries: list[ManifestEntry], metric, checkpoint_path=None,
             threads: int = 1) -> list[dict]:
    """Score every manifest entry; returns per-utterance rows plus a mean row."""
    bundle = None
    if checkpoint_path is not None:
        bundle, _ = load_bundle(checkpoint_path)

    def score_entry(e: ManifestEntry) -> dict:
        try:
            wave = read_wav(e.input_path)
        except FileNotFoundError:
            raise TrainError(f"missing file for id {e.id}: {e.input_path}")
        if bundle is not None:
            utt = prepare_utterance(e.id, wave, bundle.stft_cfg, bundle.feature)
            mask, _, _ = enhance_arrays(bundle, utt)
            wave = resynthesize(utt, mask)
        s = metric.score(wave)
        return {"id": e.id, "raw": s.raw, "normalized": s.normalized}

    rows = parallel_map(score_entry, entries, threads)
    rows.append({
        "id": "mean",
        "raw": float(np.mean([r["raw"] for r in rows])),
        "normalized": float(np.mean([r["normalized"] for r in rows])),
    })
    return rows


def write_scores_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in r.items()})
