"""Frequency bands and scalp regions on a 10-20 synthetic montage.

Run: python3 demos/band_and_region.py

Shows how much signal energy each band keeps and which channels each
region selects, then trains a tiny model per band to compare retrieval.
"""

import numpy as np

from ndec.config import RunConfig
from ndec.pipeline import ablation_table, run_ablate
from ndec.signals import BAND_ORDER, BandSpec, bandpass_filter, select_region, synth_dataset

train, _ = synth_dataset(n_classes=6, per_class=4, C=32, T=128, d_target=64, montage="10-20", seed=1)
total = float((train.batch.signals.astype(np.float64) ** 2).sum())
for band in BAND_ORDER:
    kept = bandpass_filter(train.batch, BandSpec.named(band, train.batch.sample_rate))
    share = float((kept.signals.astype(np.float64) ** 2).sum()) / total
    print(f"{band:>6s}: {100 * share:5.1f}% of energy")

for region in ("frontal", "temporal", "central", "parietal", "occipital"):
    print(f"{region:>9s}: {' '.join(select_region(train.batch, region).channel_names)}")

cfg = RunConfig().updated(**{
    "data.n_classes": 10, "data.channels": 16, "data.samples": 128, "data.montage": "10-20",
    "model.d_embed": 64, "model.fusion_heads": 4,
    "train.epochs": 15, "train.text_epochs": 15, "train.fusion_epochs": 15, "train.sth_epochs": 15,
    "train.batch_size": 32, "train.lr": 1e-3,
})
print("\nfusion retrieval per band (tiny model):")
for row, top1, top5 in ablation_table(run_ablate(cfg, "band")):
    print(f"{row:>6s}  top1={top1:.2f}  top5={top5:.2f}")
