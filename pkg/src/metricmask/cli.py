"""Command-line entry point.

Subcommands: synth, train, enhance, eval, baseline, selfcheck. Exit codes:
0 success, 1 usage error, 2 runtime failure. Training keys resolve in the
order defaults < config file (--config, flat key=value lines) < environment
(METRICMASK_<KEY>) < command-line flags, and every run echoes its effective
configuration next to its outputs.
"""
from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
import traceback
from pathlib import Path

import numpy as np

from . import models, selfcheck, trainer
from .datasynth import SynthPlan, build_corpus, load_manifest
from .dsp import StftConfig, read_wav, segmental_snr, write_wav
from .metrics import ExternalMetricConfig, make_metric
from .srmr import SrmrConfig
from .wiener import WienerConfig, wiener_enhance

ENV_PREFIX = "METRICMASK_"

log = logging.getLogger("metricmask")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(v: str) -> bool:
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


# key -> (type caster, default); the single source of truth for train config
TRAIN_KEYS: dict[str, tuple] = {
    "epochs": (int, 600),
    "target_score": (float, 1.0),
    "recon_weight": (float, 0.0),
    "d_passes": (int, 1),
    "g_passes": (int, 1),
    "d_warmup_epochs": (int, 0),
    "early_stop": (_parse_bool, False),
    "patience": (int, 20),
    "history_pool": (int, 0),
    "seed": (int, 0),
    "lr_generator": (float, 5e-4),
    "lr_discriminator": (float, 5e-4),
    "mask_floor": (float, 0.05),
    "metric": (str, "srmr"),
    "adapter": (str, ""),
    "endpoint": (str, ""),
    "raw_min": (float, 1.0),
    "raw_max": (float, 5.0),
    "srmr_cap": (float, 10.0),
    "fft_size": (int, 512),
    "hop": (int, 256),
    "window": (str, "hann"),
    "transform": (str, "power"),
    "power_exponent": (float, 0.3),
    "blstm_layers": (int, 2),
    "blstm_width": (int, 200),
    "dense_width": (int, 300),
    "disc_layers": (int, 4),
    "disc_filters": (int, 15),
    "disc_dense": (str, "50,10"),
    "threads": (int, 1),
    "supervised": (_parse_bool, False),
}


def read_kv_file(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (want key = value): {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv_file(path, mapping: dict) -> None:
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_train_config(args) -> dict:
    resolved = {k: default for k, (_, default) in TRAIN_KEYS.items()}
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        for k, v in read_kv_file(args.config).items():
            if k not in TRAIN_KEYS:
                raise UsageError(f"unknown config key {k!r}")
            resolved[k] = TRAIN_KEYS[k][0](v)
    for k in TRAIN_KEYS:
        env = os.environ.get(ENV_PREFIX + k.upper())
        if env is not None:
            resolved[k] = TRAIN_KEYS[k][0](env)
    for k in TRAIN_KEYS:
        flag = getattr(args, k, None)
        if flag is not None:
            resolved[k] = TRAIN_KEYS[k][0](flag)
    return resolved


def build_metric(conf: dict):
    if conf["metric"] == "external":
        return make_metric(
            "external",
            external=ExternalMetricConfig(
                command=conf["adapter"] or None,
                endpoint=conf["endpoint"] or None,
                raw_range=(conf["raw_min"], conf["raw_max"]),
            ),
        )
    return make_metric("srmr", srmr_cap=conf["srmr_cap"])


def bundle_from_config(conf: dict) -> trainer.ModelBundle:
    stft_cfg = StftConfig(conf["fft_size"], conf["hop"], conf["window"])
    gen_spec = models.GeneratorSpec(
        blstm_layers=conf["blstm_layers"], blstm_width=conf["blstm_width"],
        dense_width=conf["dense_width"], output_bins=stft_cfg.bins,
    )
    disc_spec = models.DiscriminatorSpec(
        conv_layers=conf["disc_layers"], filters=conf["disc_filters"],
        dense_widths=tuple(int(x) for x in conf["disc_dense"].split(",") if x),
    )
    feature = models.FeatureConfig(conf["transform"], conf["power_exponent"])
    return trainer.ModelBundle.create(
        conf["seed"], gen_spec, disc_spec, feature, stft_cfg, conf["mask_floor"]
    )


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    plan_kv = read_kv_file(args.plan) if args.plan else {}
    def pick(key, cast, default):
        if getattr(args, key, None) is not None:
            return cast(getattr(args, key))
        if key in plan_kv:
            return cast(plan_kv[key])
        return default

    floats_list = lambda s: tuple(float(x) for x in str(s).split(",") if x)
    plan = SynthPlan(
        task=pick("task", str, "reverb"),
        n_clean=pick("n_clean", int, 48),
        n_test=pick("n_test", int, 8),
        n_groups=pick("n_groups", int, 12),
        n_valid_groups=pick("valid_groups", int, 2),
        duration_range=(pick("dur_min", float, 1.4), pick("dur_max", float, 1.9)),
        seed=pick("seed", int, 0),
        n_rirs_train=pick("rirs_train", int, 12),
        n_rirs_test=pick("rirs_test", int, 4),
        t60_range=(pick("t60_min", float, 0.3), pick("t60_max", float, 0.8)),
        scale_train=pick("scales_train", floats_list, (1.2, 1.1, 1.0, 0.9, 0.8)),
        scale_test=pick("scales_test", floats_list, (1.15, 1.05, 0.95, 0.85, 0.75)),
        snrs=pick("snrs", floats_list, (15.0, 10.0, 5.0, 0.0)),
        n_noise_sources=pick("noise_sources", int, 4),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifests = build_corpus(plan, out)
    echo = {f"plan.{k}": v for k, v in vars(plan).items()}
    write_kv_file(out / "effective_config.txt", echo)
    for split, entries in manifests.items():
        print(f"{split}: {len(entries)} utterances")
    return 0


def _load_split(args, conf, split_name, path_flag):
    path = getattr(args, path_flag)
    if path is None:
        raise UsageError(f"--{path_flag.replace('_', '-')} is required")
    if not Path(path).exists():
        raise UsageError(f"manifest not found: {path}")
    entries = load_manifest(path)
    stft_cfg = StftConfig(conf["fft_size"], conf["hop"], conf["window"])
    feature = models.FeatureConfig(conf["transform"], conf["power_exponent"])
    return trainer.load_utterances(entries, stft_cfg, feature,
                                   with_clean=conf["supervised"])


def cmd_train(args) -> int:
    conf = resolve_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_data = _load_split(args, conf, "train", "train_manifest")
    valid_data = _load_split(args, conf, "valid", "valid_manifest")
    metric = build_metric(conf)
    bundle = bundle_from_config(conf)
    cfg = trainer.TrainConfig(
        target_score=conf["target_score"], recon_weight=conf["recon_weight"],
        epochs=conf["epochs"], d_passes_per_epoch=conf["d_passes"],
        g_passes_per_epoch=conf["g_passes"], d_warmup_epochs=conf["d_warmup_epochs"],
        early_stop=conf["early_stop"],
        patience=conf["patience"], history_pool=conf["history_pool"],
        seed=conf["seed"], lr_generator=conf["lr_generator"],
        lr_discriminator=conf["lr_discriminator"], mask_floor=conf["mask_floor"],
    )
    write_kv_file(out / "effective_config.txt", conf)
    train_fn = trainer.train_supervised_mse if conf["supervised"] else trainer.train
    try:
        result = train_fn(train_data, valid_data, metric, cfg, bundle, out,
                          threads=conf["threads"])
    finally:
        if hasattr(metric, "close"):
            metric.close()
    print(f"best epoch {result.best_epoch}: validation score {result.best_score:.4f}")
    print(f"curves: {result.curve_path}")
    for tag in ("init_path", "best_path", "final_path"):
        p = getattr(result, tag)
        if p:
            print(f"{tag.replace('_path', '')} checkpoint: {p}")
    return 0


def cmd_enhance(args) -> int:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if args.manifest:
        out_dir = Path(args.out_dir or "enhanced")
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = load_manifest(args.manifest)
        for e in entries:
            enhanced = trainer.enhance(read_wav(e.input_path), args.checkpoint)
            write_wav(out_dir / f"{e.id}.wav", enhanced)
        print(f"wrote {len(entries)} files to {out_dir}")
        return 0
    if not (args.input and args.output):
        raise UsageError("either --manifest/--out-dir or --in/--out is required")
    enhanced = trainer.enhance(read_wav(args.input), args.checkpoint)
    write_wav(args.output, enhanced)
    print(f"wrote {args.output}")
    return 0


def cmd_eval(args) -> int:
    conf = resolve_train_config(args)
    if not Path(args.manifest).exists():
        raise UsageError(f"manifest not found: {args.manifest}")
    entries = load_manifest(args.manifest)
    metric = build_metric(conf)
    try:
        rows = trainer.evaluate(entries, metric, checkpoint_path=args.checkpoint,
                                threads=conf["threads"])
    finally:
        if hasattr(metric, "close"):
            metric.close()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.write_scores_csv(rows, out / "scores.csv")
    from . import plots

    plots.render_scores(rows, out / "scores.png")
    write_kv_file(out / "effective_config.txt", conf)
    for r in rows:
        print(f"{r['id']}: raw {r['raw']:.4f}  normalized {r['normalized']:.4f}")
    return 0


def cmd_baseline(args) -> int:
    conf = resolve_train_config(args)
    if not Path(args.manifest).exists():
        raise UsageError(f"manifest not found: {args.manifest}")
    entries = load_manifest(args.manifest)
    wiener_cfg = WienerConfig(
        noise_frames=args.noise_frames, smoothing=args.smoothing,
        snr_floor_db=args.snr_floor_db, gain_floor=args.gain_floor,
        stft=StftConfig(conf["fft_size"], conf["hop"], conf["window"]),
    )
    out = Path(args.out)
    (out / "enhanced").mkdir(parents=True, exist_ok=True)
    metric = build_metric(conf)
    rows = []
    try:
        for e in entries:
            noisy = read_wav(e.input_path)
            enhanced = wiener_enhance(noisy, wiener_cfg)
            write_wav(out / "enhanced" / f"{e.id}.wav", enhanced)
            score = metric.score(enhanced)
            row = {"id": e.id, "raw": score.raw, "normalized": score.normalized}
            if e.clean_path:
                clean = read_wav(e.clean_path)
                row["segsnr_in"] = segmental_snr(clean, noisy)
                row["segsnr_out"] = segmental_snr(clean, enhanced)
            rows.append(row)
    finally:
        if hasattr(metric, "close"):
            metric.close()
    mean_row = {"id": "mean"}
    for key in rows[0]:
        if key != "id":
            mean_row[key] = float(np.mean([r[key] for r in rows]))
    rows.append(mean_row)
    trainer.write_scores_csv(rows, out / "scores.csv")
    from . import plots

    plots.render_scores(rows, out / "scores.png", title="wiener baseline scores")
    write_kv_file(out / "effective_config.txt", conf)
    for r in rows:
        extra = f"  segsnr {r['segsnr_in']:.2f} -> {r['segsnr_out']:.2f}" if "segsnr_in" in r else ""
        print(f"{r['id']}: raw {r['raw']:.4f}{extra}")
    return 0


def cmd_selfcheck(args) -> int:
    results = selfcheck.run_selfcheck(
        break_op=args.break_op,
        progress=lambda r: print(
            f"{'PASS' if r['passed'] else 'FAIL'} {r['name']} ({r['measured']})"
        ),
    )
    failed = [r for r in results if not r["passed"]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(r["name"] for r in failed))
        return 2
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> Parser:
    parser = Parser(prog="metricmask",
                    description="metric-driven unsupervised speech enhancement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a desk-scale corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--plan", help="flat key=value plan file")
    for flag in ("task",):
        p.add_argument(f"--{flag}", choices=("reverb", "noise"))
    for flag in ("n-clean", "n-test", "n-groups", "valid-groups", "seed",
                 "rirs-train", "rirs-test", "noise-sources"):
        p.add_argument(f"--{flag}", type=int, dest=flag.replace("-", "_"))
    for flag in ("dur-min", "dur-max", "t60-min", "t60-max"):
        p.add_argument(f"--{flag}", type=float, dest=flag.replace("-", "_"))
    for flag in ("scales-train", "scales-test", "snrs"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
    p.set_defaults(fn=cmd_synth)

    def add_train_keys(p, keys=None):
        for key in (keys or TRAIN_KEYS):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)

    p = sub.add_parser("train", help="train the masker against a metric")
    p.add_argument("--train-manifest", required=False)
    p.add_argument("--valid-manifest", required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key=value config file")
    add_train_keys(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance WAV files with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("eval", help="score a manifest, optionally after enhancement")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    add_train_keys(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="wiener-filter comparator over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--noise-frames", type=int, default=6)
    p.add_argument("--smoothing", type=float, default=0.98)
    p.add_argument("--snr-floor-db", type=float, default=-25.0)
    p.add_argument("--gain-floor", type=float, default=0.1)
    add_train_keys(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("selfcheck", help="run the built-in verification battery")
    p.add_argument("--break-op", help="testing hook: corrupt one op's backward pass")
    p.set_defaults(fn=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        if "-v" in (argv or sys.argv):
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
