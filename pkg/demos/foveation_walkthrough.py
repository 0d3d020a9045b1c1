"""Foveated blur and the blur-radius policy, step by step.

Run: python3 demos/foveation_walkthrough.py [out_dir]

Writes the mask, a source image and its foveated versions as PGM files.
"""

import os
import sys

import numpy as np

from ndec.foveation import (FoveaParams, MemoryBank, UMPolicy, apply_foveation, ema_update,
                            fovea_mask, select_sigma, similarity_score, stub_encode)
from ndec.images import ImageBuffer, write_pgm_array, write_pnm

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/foveation"
os.makedirs(out, exist_ok=True)

# The mask is 1 at the centre and decays radially towards the corners.
fovea = FoveaParams(r_centre=1.0, r_edge=0.0, lam=3.0)
mask = fovea_mask(65, 65, fovea)
print(f"mask centre {mask[32, 32]:.3f}, corner {mask[0, 0]:.3f}")
write_pgm_array(os.path.join(out, "mask.pgm"), mask, 0.0, 1.0)

# A checkerboard makes blur easy to see.
yy, xx = np.mgrid[0:64, 0:64]
img = ImageBuffer((((yy // 4) + (xx // 4)) % 2).astype(float))
write_pnm(os.path.join(out, "source.pgm"), img)

# The stub encoder turns each image into a unit vector; more blur drifts further from the original.
v0 = stub_encode(img, d_target=256)
for sigma in (0.0, 2.0, 6.0, 12.0):
    blurred = apply_foveation(img, fovea, sigma)
    write_pnm(os.path.join(out, f"foveated_s{sigma:g}.pgm"), blurred)
    sim = similarity_score(v0, stub_encode(blurred, d_target=256))
    print(f"sigma {sigma:5.1f}: cosine to unblurred embedding {sim:.3f}")

# The memory bank keeps a smoothed similarity per sample.
rng = np.random.default_rng(0)
bank = MemoryBank(50, gamma=0.3)
for _ in range(5):
    for i in range(50):
        ema_update(bank, i, float(np.clip(0.6 + 0.3 * np.sin(i) + 0.05 * rng.standard_normal(), -1, 1)))
stats = bank.stats()
print(f"bank mean {stats.mean:.3f}, std {stats.std:.3f} over {stats.count} samples")

# Hard samples (low score) get less blur, easy ones more.
policy = UMPolicy(sigma0=6.0, c=6.0, z=1.0)
sigmas = np.array([select_sigma(s, stats, policy) for s in bank.scores])
for level in policy.levels:
    print(f"sigma {level:4.1f}: {int((sigmas == level).sum())} samples")
print(f"images written to {out}")
