"""Scratch: desk-scale dereverberation training probe (not part of the package)."""
import logging
import sys
import tempfile
import time

import numpy as np

logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout, force=True)

from metricmask.datasynth import SynthPlan, build_reverb_set
from metricmask import trainer, models
from metricmask.dsp import StftConfig
from metricmask.metrics import SrmrMetric
from metricmask.srmr import srmr

# args: seed cap lr_g lr_d epochs d_passes warmup filters transform
a = sys.argv[1:]
seed = int(a[0]) if len(a) > 0 else 11
cap = float(a[1]) if len(a) > 1 else 40.0
lr_g = float(a[2]) if len(a) > 2 else 5e-3
lr_d = float(a[3]) if len(a) > 3 else 2e-3
epochs = int(a[4]) if len(a) > 4 else 30
d_passes = int(a[5]) if len(a) > 5 else 2
warmup = int(a[6]) if len(a) > 6 else 5
filters = int(a[7]) if len(a) > 7 else 10
transform = a[8] if len(a) > 8 else "power"

tmp = tempfile.mkdtemp(prefix="deskrun_")
print("workdir", tmp, flush=True)
plan = SynthPlan(task="reverb", n_clean=48, n_test=8, n_groups=12, n_valid_groups=2,
                 duration_range=(1.4, 1.9), seed=seed)
manifests = build_reverb_set(plan, tmp)
print({k: len(v) for k, v in manifests.items()}, flush=True)

stft_cfg = StftConfig()
feat = models.FeatureConfig(transform=transform)
gspec = models.GeneratorSpec(blstm_layers=1, blstm_width=48, dense_width=48, output_bins=257)
dspec = models.DiscriminatorSpec(conv_layers=4, filters=filters, dense_widths=(50, 10))
bundle = trainer.ModelBundle.create(seed + 1, gspec, dspec, feat, stft_cfg, mask_floor=0.05)

train_data = trainer.load_utterances(manifests["train"], stft_cfg, feat)
valid_data = trainer.load_utterances(manifests["valid"], stft_cfg, feat)
metric = SrmrMetric(cap=cap)

input_raw = [srmr(u.wave) for u in valid_data]
print("valid input raw srmr mean:", np.mean(input_raw), flush=True)

cfg = trainer.TrainConfig(target_score=1.0, recon_weight=0.6, epochs=epochs, seed=seed,
                          lr_generator=lr_g, lr_discriminator=lr_d,
                          d_passes_per_epoch=d_passes, d_warmup_epochs=warmup)
t0 = time.time()
res = trainer.train(train_data, valid_data, metric, cfg, bundle, tmp + "/run",
                    render_figures=False)
print(f"total {time.time()-t0:.0f}s", flush=True)

best = trainer.load_bundle(res.best_path)[0]
raws = []
for u in valid_data:
    mask, _, _ = trainer.enhance_arrays(best, u)
    raws.append(srmr(trainer.resynthesize(u, mask)))
print("best-epoch enhanced raw srmr mean:", np.mean(raws), flush=True)
print("ratio vs input:", np.mean(raws) / np.mean(input_raw), flush=True)
print("best epoch:", res.best_epoch, "best score:", res.best_score, flush=True)
print("recon at best:", [r.recon_l2 for r in res.records if r.epoch == res.best_epoch], flush=True)
