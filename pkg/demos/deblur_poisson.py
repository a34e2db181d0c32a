"""
Deblurring photon-limited images
================================

A grayscale photograph is blurred by a 7x7 Gaussian and observed with at
most 1024 photons per pixel.  We restore it by minimizing a Poisson
likelihood plus a weighted total-variation penalty, first with a constant
weight, then with the weights a small learned model assigns per pixel.

Run:  python demos/deblur_poisson.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np
from skimage import data

from pixtune.deblur import DeblurConfig, solve
from pixtune.imaging import add_poisson_noise, convolve, gaussian_kernel, save_image
from pixtune.metrics import psnr
from pixtune.model import map_field
from pixtune.training import CropSpec, TrainingRun, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "deblur_demo")
out.mkdir(exist_ok=True)

truth = data.camera()[128:256, 160:288] / 255.0
observed = add_poisson_noise(convolve(truth, gaussian_kernel()), 1024, seed=0)
print(f"observed PSNR {psnr(observed, truth):.2f} dB")

# one weight everywhere: the cost must go down at every accepted step
cfg = DeblurConfig(iterations=200)
res = solve(observed, 0.0065, cfg)
assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))
print(f"constant weight 0.0065: {psnr(res.image, truth):.2f} dB after {res.iterations} steps")
save_image(observed, out / "observed.png")
save_image(res.image, out / "restored_constant.png")

# learn a per-pixel weight from local mean and contrast on a few crops
images = [f() / 255.0 for f in (data.astronaut, data.coffee, data.chelsea)]
run = TrainingRun("tv", train=[0, 1, 2], test=[], crop=CropSpec(64, 1, 0), seed=1,
                  processor_config={"iterations": 100},
                  simplex_global={"max_evals": 30, "init_step": 1.0},
                  simplex_adaptive={"max_evals": 60})
result = train(run, images=images, log=print)
print(result.report.to_text())

proc = result.trainer.proc
field = proc.features(observed, result.adaptive_model.feature_spec)
weights = map_field(field, result.adaptive_model)["p0"]
adaptive = solve(observed, weights, DeblurConfig(iterations=200))
print(f"learned weights: {psnr(adaptive.image, truth):.2f} dB; weight range "
      f"{weights.min():.4f} to {weights.max():.4f}")
save_image(adaptive.image, out / "restored_adaptive.png")
save_image((weights - weights.min()) / max(np.ptp(weights), 1e-12), out / "weights.png", 16)
