"""The three tunable processors behind one small interface.

A processor knows its parameters (names, bounds, published defaults), the
feature set it is steered by, how to prepare per-image state that does not
depend on the parameters, and how to run with a parameter field.  Training,
evaluation and the command line all go through :func:`process`.
"""

from __future__ import annotations

import numpy as np

from . import anlm, deblur, demosaic
from .features import (FeatureMap, FeatureSpec, anlm_feature_spec, bayer_feature_spec,
                       build_feature_map, denoise_feature_map, tv_feature_spec)
from .imaging import BayerMosaic, to_grayscale
from .model import ParamMapperModel, ParamSpec, map_field

PROCESSORS = ("anlm", "blend", "tv")


class Processor:
    name = ""

    def __init__(self, config: dict | None = None):
        self.config = dict(config or {})

    # parameters -------------------------------------------------------------
    def param_specs(self, bounds: dict | None = None) -> tuple:
        bounds = bounds or {}
        out = []
        for name, lo, hi, discrete in self._params():
            lo, hi = bounds.get(name, (lo, hi))
            out.append(ParamSpec(name, float(lo), float(hi), discrete))
        return tuple(out)

    def defaults(self, specs) -> tuple:
        raise NotImplementedError

    def default_features(self) -> FeatureSpec:
        raise NotImplementedError

    # per-image work -----------------------------------------------------------
    def check_input(self, x):
        return x

    def features(self, x, spec: FeatureSpec) -> FeatureMap:
        return build_feature_map(x, spec)

    def context(self, x):
        return None

    def run(self, x, field, ctx=None) -> np.ndarray:
        raise NotImplementedError

    def config_dict(self) -> dict:
        return dict(self.config)


class AnlmProcessor(Processor):
    """Patch size p0 (odd) and strength p1 of approximate NLM."""

    name = "anlm"
    DEFAULTS = {"p0": 5.0, "p1": 0.40}

    def __init__(self, config=None):
        super().__init__(config)
        c = self.config
        self.cfg = anlm.AnlmConfig(
            sigma=float(c.get("sigma", 20.0 / 255.0)),
            n_neighbors=int(c.get("n_neighbors", 16)),
            search_radius=int(c.get("search_radius", 10)),
            aggregation=c.get("aggregation", "patch-accumulate"),
        )
        self.feature_denoise = bool(c.get("feature_denoise", True))
        self.denoise_patch = int(c.get("feature_denoise_patch", 9))
        self.denoise_strength = float(c.get("feature_denoise_strength", 0.4))

    def _params(self):
        return (("p0", 3, 21, "odd"), ("p1", 0.05, 1.5, None))

    def defaults(self, specs):
        return tuple(self.DEFAULTS[s.name] for s in specs)

    def default_features(self):
        return anlm_feature_spec()

    def check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (2, 3):
            raise ValueError("anlm expects a gray or RGB image")
        return x

    def features(self, x, spec):
        fm = build_feature_map(x, spec)
        if self.feature_denoise and fm.F > 1:
            # smoothed with matches taken on the noisy image itself
            fm = denoise_feature_map(fm, x, self.cfg.sigma, self.denoise_patch,
                                     self.denoise_strength, self.cfg)
        return fm

    def context(self, x):
        return anlm.NeighborTable(x, self.cfg)

    def run(self, x, field, ctx=None):
        return anlm.denoise(x, field, self.cfg, ctx)

    def config_dict(self):
        return {
            "sigma": self.cfg.sigma,
            "n_neighbors": self.cfg.n_neighbors,
            "search_radius": self.cfg.search_radius,
            "aggregation": self.cfg.aggregation,
            "feature_denoise": self.feature_denoise,
            "feature_denoise_patch": self.denoise_patch,
            "feature_denoise_strength": self.denoise_strength,
        }


class BlendProcessor(Processor):
    """Per-pixel weights of several demosaicers."""

    name = "blend"

    def __init__(self, config=None):
        super().__init__(config)
        self.ids = tuple(self.config.get("ids", demosaic.BUILTIN_IDS))
        self.layout = self.config.get("layout", "RGGB")
        self.window = int(self.config.get("feature_window", 7))

    def _params(self):
        return tuple((f"w{k}", 0.0, 1.0, None) for k in range(len(self.ids)))

    def defaults(self, specs):
        # equal midpoints give the uniform mixture
        return tuple(0.5 * (s.p_min + s.p_max) for s in specs)

    def default_features(self):
        return bayer_feature_spec(self.window)

    def check_input(self, x):
        if not isinstance(x, BayerMosaic):
            x = BayerMosaic(np.asarray(x, dtype=np.float64), self.layout)
        return x

    def context(self, x):
        return [demosaic.demosaic(x, k) for k in self.ids]

    def run(self, x, field, ctx=None):
        outputs = ctx if ctx is not None else self.context(x)
        return demosaic.blend(outputs, field)

    def config_dict(self):
        return {"ids": list(self.ids), "layout": self.layout, "feature_window": self.window}


class TvProcessor(Processor):
    """Per-pixel TV regularization weight p0 for Poisson deblurring."""

    name = "tv"

    def __init__(self, config=None):
        super().__init__(config)
        self.cfg = deblur.DeblurConfig.from_dict(self.config)

    def _params(self):
        return (("p0", 1e-4, 5e-2, None),)

    def defaults(self, specs):
        return tuple(0.5 * (s.p_min + s.p_max) for s in specs)

    def default_features(self):
        return tv_feature_spec()

    def check_input(self, x):
        return to_grayscale(np.asarray(x, dtype=np.float64))

    def run(self, x, field, ctx=None):
        return deblur.deblur(x, field, self.cfg)

    def config_dict(self):
        return self.cfg.to_dict()


_CLASSES = {"anlm": AnlmProcessor, "blend": BlendProcessor, "tv": TvProcessor}


def make_processor(name: str, config: dict | None = None) -> Processor:
    try:
        return _CLASSES[name](config)
    except KeyError:
        raise ValueError(f"unknown processor {name!r}; choose from {PROCESSORS}") from None


def processor_for(model: ParamMapperModel) -> Processor:
    return make_processor(model.processor, model.processor_config)


def process(model: ParamMapperModel, x, ctx=None, features: FeatureMap | None = None,
            proc: Processor | None = None):
    """Run ``model``'s processor on ``x`` with the field the model maps from its features.

    Returns ``(output, field)``.
    """
    proc = proc or processor_for(model)
    x = proc.check_input(x)
    if features is None:
        features = proc.features(x, model.feature_spec)
    field = map_field(features, model)
    return proc.run(x, field, ctx), field
