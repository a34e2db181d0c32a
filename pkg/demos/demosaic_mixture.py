"""
Mixing three demosaicers
========================

Each built-in demosaicer has its own failure mode: bilinear blurs, the
gradient-corrected filter rings near sharp color edges, the edge-directed
one guesses directions.  A learned convex mixture usually beats all three.
This script trains the global weights on Bayer mosaics of sample photographs
and writes the blend map of one image (each color channel shows the share of
one demosaicer).

Run:  python demos/demosaic_mixture.py [outdir]
"""

import sys
from pathlib import Path

from skimage import data

from pixtune.demosaic import blend_adaptive, export_blend_map
from pixtune.imaging import mosaic, save_image
from pixtune.model import map_field
from pixtune.processors import make_processor
from pixtune.training import CropSpec, TrainingRun, global_values, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demosaic_demo")
out.mkdir(exist_ok=True)

images = [f() / 255.0 for f in (data.astronaut, data.coffee, data.chelsea, data.rocket)]
run = TrainingRun("blend", train=[0, 1, 2, 3], test=[], crop=CropSpec(128, 1, 0), seed=1,
                  simplex_adaptive={"max_evals": 400})
result = train(run, images=images, log=print)
print(result.report.to_text())
print("normalized global weights:")
w = global_values(result.global_model)
total = sum(w.values())
for name, value in zip(result.trainer.proc.ids, w.values()):
    print(f"  {name:<20} {value / total:.3f}")

# apply the adaptive model to a full image and export its blend map
m = mosaic(images[1], "RGGB")
rgb = blend_adaptive(m, result.adaptive_model)
save_image(rgb, out / "coffee_demosaiced.png")
proc = make_processor("blend", run.processor_settings())
field = map_field(proc.features(m, result.adaptive_model.feature_spec), result.adaptive_model)
export_blend_map(field, out / "coffee_blend_map.png")
print("wrote", out / "coffee_demosaiced.png", "and", out / "coffee_blend_map.png")
