"""
Learning where to use large patches
====================================

A short tour of adaptive non-local means.  We add Gaussian noise to a few
sample photographs, learn one global parameter pair, lift it to a model that
reads local variance and entropy, and compare the three on the training crops.
The budgets are tiny so the script finishes in a few minutes; raise them for
better models.

Run:  python demos/denoise_walkthrough.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np
from skimage import data

from pixtune.features import local_variance
from pixtune.imaging import save_image
from pixtune.model import save_model
from pixtune.training import CropSpec, TrainingRun, global_values, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "denoise_demo")
out.mkdir(exist_ok=True)

# clean references as floats in [0, 1]
images = [f() / 255.0 for f in (data.astronaut, data.coffee, data.chelsea)]

# sigma is on the 0-255 scale; three crops train, none are held out
run = TrainingRun("anlm", sigma=20, train=[0, 1, 2], test=[], crop=CropSpec(96, 1, 0), seed=1,
                  simplex_global={"max_evals": 40, "init_step": 1.0},
                  simplex_adaptive={"max_evals": 150})
result = train(run, images=images, log=print)
print(result.report.to_text())
print("global parameters:", global_values(result.global_model))

save_model(result.adaptive_model, out / "anlm_adaptive.json")

# where did the model put large patches?  compare smooth and busy pixels
trainer = result.trainer
for k in trainer.split("train"):
    noisy = trainer.input(k)
    p0 = trainer.field(result.adaptive_model, k)["p0"]
    v = local_variance(noisy.mean(axis=2), 5)
    smooth = p0[v <= np.quantile(v, 0.1)].mean()
    busy = p0[v >= np.quantile(v, 0.9)].mean()
    print(f"{trainer.pairs[k].name}: mean patch size {smooth:.1f} on flat areas, {busy:.1f} on texture")
    save_image(noisy, out / f"noisy_{k}.png")
    save_image(trainer.output(result.adaptive_model, k), out / f"adaptive_{k}.png")
    save_image((p0 - 3) / 18, out / f"p0_map_{k}.png", 16)

print("images and the model are in", out)
