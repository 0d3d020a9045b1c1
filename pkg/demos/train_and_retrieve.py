"""Train the three stages on the synthetic benchmark and inspect the result.

Run: python3 demos/train_and_retrieve.py [out_dir]

A reduced model (256-d embeddings) keeps this to about a minute and a half on one
core. Writes the JSON/CSV report, an embedding similarity heatmap and a
channel saliency strip.
"""

import os
import sys
import time

import numpy as np

from ndec.config import RunConfig
from ndec.metrics import rsa_heatmap, saliency_topography, semantic_order
from ndec.pipeline import embed_all, load_data, run_eval, run_train
from ndec.report import emit_report

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/train"
cfg = RunConfig().updated(**{
    "model.d_embed": 256, "train.epochs": 30, "train.text_epochs": 30,
    "train.fusion_epochs": 150, "train.sth_epochs": 30, "train.batch_size": 32,
})
train, test = load_data(cfg)
print(f"train epochs {train.batch.shape}, test epochs {test.batch.shape}")

t0 = time.perf_counter()
bundle, log = run_train(cfg, (train, test))
print(f"trained in {time.perf_counter() - t0:.0f}s")
for m in ("image", "text", "depth", "edge"):
    losses = [r["loss"] for r in log.records if r.get("branch") == m]
    print(f"  {m:>6s} expert loss {losses[0]:.3f} -> {losses[-1]:.3f}")
fus = [r["val_top1"] for r in log.records if r["stage"] == "fusion"]
print(f"  fusion validation top-1 every 25 epochs: {fus[::25]}")

reports = run_eval(bundle, cfg, test)
for r in reports:
    print(f"{r.modality:>7s}  top1={r.top1:.3f}  top5={r.top5:.3f}  (chance {1 / r.n_gallery:.3f})")

# Similarity structure of the image-branch embeddings, sorted by class.
Z = embed_all(bundle.experts, test.batch.signals)
order = semantic_order(test.batch.labels)
rsa = rsa_heatmap(Z["image"], order)
off = rsa.matrix[~np.eye(len(order), dtype=bool)]
print(f"image embeddings: mean off-diagonal cosine {off.mean():.3f}")

# Which channels drive the image embedding for the first test epoch.
topo = saliency_topography(test.batch.signals[0], bundle.experts["image"], test.targets["image"][0])
print("channel saliency:", " ".join(f"{s:.2f}" for s in topo.scores))

paths = emit_report(reports, out, cfg.hash, cfg.train.seed, rsa={"image": rsa},
                    topographies={"image": (topo, test.batch.channel_names)})
print("wrote", *paths, sep="\n  ")
