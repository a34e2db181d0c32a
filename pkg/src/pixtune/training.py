"""Learning the feature-to-parameter mapping on pairs of degraded and clean images.

Training runs in two stages.  The global stage (F = 1) starts where the mapped
parameters equal the processor defaults and searches the constant parameters.
The adaptive stage embeds that solution exactly into the full feature model and
searches all coefficients.  Since Nelder-Mead never loses its incumbent, the
training-set score of baseline, global and adaptive models is non-decreasing.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .features import FeatureMap, FeatureSpec
from .imaging import (add_gaussian_noise, add_poisson_noise, convolve, gaussian_kernel,
                      image_seed, load_image, mosaic, to_grayscale)
from .metrics import METRICS, metric_function
from .model import (ParamMapperModel, constant_model, embed_global, feature_stats, map_field,
                    map_param, normalize_features, pack, unpack)
from .processors import PROCESSORS, make_processor
from .simplex import PENALTY, OptResult, SimplexOptions, nelder_mead


@dataclass(frozen=True)
class CropSpec:
    side: int = 128
    count: int = 1
    seed: int = 0


@dataclass
class TrainingRun:
    """Everything that determines a training run; serialized as JSON.

    ``sigma`` is on the 0-255 scale.  ``train``/``test`` index ``dataset``;
    when both are omitted the first half trains and the second half tests.
    """

    processor: str
    metric: str = "PSNR"
    dataset: list = field(default_factory=list)
    train: list | None = None
    test: list | None = None
    sigma: float = 20.0
    layout: str = "RGGB"
    kernel: list | None = None
    photon_max: float = 1024.0
    feature_spec: list | None = None
    bounds: dict | None = None
    crop: CropSpec | None = None
    simplex_global: dict = field(default_factory=lambda: {"max_evals": 150, "init_step": 1.0})
    simplex_adaptive: dict = field(default_factory=lambda: {"max_evals": 450})
    adaptive: bool = True
    processor_config: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.processor not in PROCESSORS:
            raise ValueError(f"unknown processor {self.processor!r}")
        if self.metric.upper() not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if isinstance(self.crop, dict):
            self.crop = CropSpec(**self.crop)
        n = len(self.dataset)
        if self.train is None and self.test is None and n:
            self.train = list(range((n + 1) // 2))
            self.test = list(range((n + 1) // 2, n))
        self.train = list(self.train or [])
        self.test = list(self.test or [])
        if set(self.train) & set(self.test):
            raise ValueError("train and test splits overlap")
        if self.crop is not None:
            widest = max((d.window for d in self.spec().descriptors), default=1)
            if self.crop.side < 4 * widest:
                raise ValueError(f"crop side must be at least {4 * widest}")
            if self.processor == "blend" and self.crop.side % 2:
                raise ValueError("blend crops need an even side")

    def processor_settings(self) -> dict:
        cfg = dict(self.processor_config)
        if self.processor == "anlm":
            cfg.setdefault("sigma", self.sigma / 255.0)
        elif self.processor == "blend":
            cfg.setdefault("layout", self.layout)
        else:
            cfg.setdefault("photon_max", self.photon_max)
            cfg.setdefault("kernel", self.blur_kernel().tolist())
        return cfg

    def blur_kernel(self) -> np.ndarray:
        return gaussian_kernel() if self.kernel is None else np.asarray(self.kernel, dtype=np.float64)

    def spec(self) -> FeatureSpec:
        if self.feature_spec is not None:
            return FeatureSpec.from_list(self.feature_spec)
        return make_processor(self.processor, self.processor_settings()).default_features()

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["crop"] = None if self.crop is None else asdict(self.crop)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRun":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run fields: {sorted(unknown)}")
        return cls(**d)


def save_run(run: TrainingRun, path) -> None:
    with open(os.fspath(path), "w") as fh:
        json.dump(run.to_dict(), fh, indent=2)
        fh.write("\n")


def load_run(path) -> TrainingRun:
    path = os.fspath(path)
    with open(path) as fh:
        d = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    d["dataset"] = [p if os.path.isabs(p) else os.path.join(base, p) for p in d.get("dataset", [])]
    return TrainingRun.from_dict(d)


# ---------------------------------------------------------------------------
# pairs


@dataclass
class TrainingPair:
    index: int  # position in the dataset
    name: str
    input: object  # degraded image or BayerMosaic
    reference: np.ndarray
    seed: int


def _crops(img, crop: CropSpec | None, index: int):
    if crop is None:
        return [img]
    h, w = img.shape[:2]
    side = min(crop.side, h, w)
    side -= side % 2
    rng = np.random.default_rng([crop.seed, index])
    out = []
    for _ in range(crop.count):
        y = int(rng.integers(0, h - side + 1)) // 2 * 2
        x = int(rng.integers(0, w - side + 1)) // 2 * 2
        out.append(img[y:y + side, x:x + side])
    return out


def degrade(run: TrainingRun, reference, seed: int):
    """The run's degradation of one clean image: returns (input, reference)."""
    if run.processor == "anlm":
        return add_gaussian_noise(reference, run.sigma / 255.0, seed), reference
    if run.processor == "blend":
        if reference.ndim != 3:
            raise ValueError("demosaic training needs RGB references")
        return mosaic(reference, run.layout), reference
    gray = to_grayscale(reference)
    blurred = convolve(gray, run.blur_kernel())
    return add_poisson_noise(blurred, run.photon_max, seed), gray


def make_pairs(run: TrainingRun, images=None, indices=None) -> list:
    """Deterministic degraded/reference pairs for ``indices`` of the dataset.

    ``images`` may supply the clean references as arrays instead of paths.
    """
    n = len(images) if images is not None else len(run.dataset)
    indices = range(n) if indices is None else indices
    pairs = []
    for j in indices:
        if images is not None:
            ref = np.asarray(images[j], dtype=np.float64)
            name = f"image{j}"
        else:
            ref = load_image(run.dataset[j])
            name = os.path.basename(run.dataset[j])
        crops = _crops(ref, run.crop, j)
        for c, crop in enumerate(crops):
            k = j * len(crops) + c
            seed = image_seed(run.seed, k)
            inp, clean = degrade(run, crop, seed)
            label = name if len(crops) == 1 else f"{name}#{c}"
            pairs.append(TrainingPair(j, label, inp, clean, seed))
    return pairs


# ---------------------------------------------------------------------------
# trainer


class Trainer:
    """Holds the pairs of a run and caches everything independent of the coefficients."""

    def __init__(self, run: TrainingRun, images=None, pairs=None):
        self.run = run
        self.proc = make_processor(run.processor, run.processor_settings())
        self.specs = self.proc.param_specs(run.bounds)
        self.feature_spec = run.spec()
        if pairs is None:
            pairs = make_pairs(run, images, sorted(set(run.train) | set(run.test)))
        self.pairs = pairs
        self._ctx = {}
        self._raw = {}
        self._norm = {}
        self._inputs = {}

    # selections -----------------------------------------------------------
    def split(self, name: str) -> list:
        wanted = set(self.run.train if name == "train" else self.run.test)
        return [k for k, p in enumerate(self.pairs) if p.index in wanted]

    # caches ---------------------------------------------------------------
    def input(self, k):
        if k not in self._inputs:
            self._inputs[k] = self.proc.check_input(self.pairs[k].input)
        return self._inputs[k]

    def context(self, k):
        if k not in self._ctx:
            self._ctx[k] = self.proc.context(self.input(k))
        return self._ctx[k]

    def raw_features(self, k) -> FeatureMap:
        if k not in self._raw:
            self._raw[k] = self.proc.features(self.input(k), self.feature_spec)
        return self._raw[k]

    def features(self, k, model: ParamMapperModel) -> FeatureMap:
        if model.F == 1:
            shape = np.shape(getattr(self.input(k), "samples", self.input(k)))[:2]
            return FeatureMap(np.ones(shape + (1,)), model.feature_norm)
        if model.feature_spec != self.feature_spec:
            raise ValueError("model features differ from the run's feature spec")
        key = (k, model.feature_norm.tobytes())
        if key not in self._norm:
            self._norm[key] = normalize_features(self.raw_features(k), model.feature_norm)
        return self._norm[key]

    # evaluation -----------------------------------------------------------
    def field(self, model: ParamMapperModel, k):
        return map_field(self.features(k, model), model)

    def output(self, model: ParamMapperModel, k) -> np.ndarray:
        return self.proc.run(self.input(k), self.field(model, k), self.context(k))

    def _map(self, fn, items):
        if self.run.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.run.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def score(self, model: ParamMapperModel, indices, metric: str | None = None) -> float:
        """Mean metric over pairs ``indices``, summed in index order."""
        fn = metric_function(metric or self.run.metric)

        def one(k):
            out = self.output(model, k)
            if not np.all(np.isfinite(out)):
                return PENALTY
            return fn(out, self.pairs[k].reference)

        values = self._map(one, list(indices))
        total = 0.0
        for v in values:
            if not np.isfinite(v) or v <= PENALTY:
                return PENALTY
            total += v
        return total / len(values)

    def objective(self, template: ParamMapperModel, indices=None):
        """Closure: packed coefficients -> mean training metric (penalty on failure)."""
        indices = self.split("train") if indices is None else list(indices)
        if not indices:
            raise ValueError("no training pairs")

        def f(vec):
            if not np.all(np.isfinite(vec)):
                return PENALTY
            try:
                return self.score(unpack(vec, template), indices)
            except (ValueError, FloatingPointError, ZeroDivisionError):
                return PENALTY

        return f

    # models ---------------------------------------------------------------
    def initial_model(self) -> ParamMapperModel:
        """Global model reproducing the processor defaults; also the baseline."""
        values = self.proc.defaults(self.specs)
        return constant_model(self.run.processor, self.specs, values, self.proc.config_dict())

    def train_global(self, warm: ParamMapperModel | None = None):
        start = warm or self.initial_model()
        opts = SimplexOptions.from_dict({"seed": self.run.seed, **self.run.simplex_global})
        res = nelder_mead(self.objective(start), pack(start), opts)
        return unpack(res.x, start), res

    def adaptive_template(self, warm: ParamMapperModel) -> ParamMapperModel:
        train = self.split("train")
        stats = feature_stats([self.raw_features(k) for k in train])
        return embed_global(warm, self.feature_spec, stats)

    def train_adaptive(self, warm: ParamMapperModel):
        if warm.F != 1:
            raise ValueError("warm start must be a global model")
        start = self.adaptive_template(warm)
        opts = SimplexOptions.from_dict({"seed": self.run.seed, **self.run.simplex_adaptive})
        res = nelder_mead(self.objective(start), pack(start), opts)
        return unpack(res.x, start), res

    def evaluate(self, models: dict, splits=("train", "test")) -> "TrainingReport":
        rows = []
        for split in splits:
            for k in self.split(split):
                pair = self.pairs[k]
                candidates = list(self._reference_outputs(k).items())
                candidates += [(label, None) for label in models]
                for label, out in candidates:
                    if out is None:
                        out = self.output(models[label], k)
                    scores = [metric_function(m)(out, pair.reference) for m in METRICS]
                    rows.append(ReportRow(split, pair.name, label, *scores))
        params = {label: global_values(m) for label, m in models.items() if m.F == 1}
        return TrainingReport(self.run.processor, self.run.metric.upper(), rows, params)

    def _reference_outputs(self, k) -> dict:
        if self.run.processor == "blend":
            return dict(zip(self.proc.ids, self.context(k)))
        return {"input": self.input(k)}


def global_values(model: ParamMapperModel) -> dict:
    """Parameter values of a global (F = 1) model."""
    f = np.ones(1)
    return {p.name: float(map_param(f, i, model)) for i, p in enumerate(model.params)}


# ---------------------------------------------------------------------------
# functional entry points


def objective(run: TrainingRun, template: ParamMapperModel, images=None):
    return Trainer(run, images).objective(template)


def train_global(run: TrainingRun, images=None) -> ParamMapperModel:
    return Trainer(run, images).train_global()[0]


def train_adaptive(run: TrainingRun, warm: ParamMapperModel, images=None) -> ParamMapperModel:
    return Trainer(run, images).train_adaptive(warm)[0]


def evaluate(models: dict, run: TrainingRun, images=None) -> "TrainingReport":
    return Trainer(run, images).evaluate(models)


@dataclass
class TrainingResult:
    baseline: ParamMapperModel
    global_model: ParamMapperModel
    global_opt: OptResult
    adaptive_model: ParamMapperModel | None = None
    adaptive_opt: OptResult | None = None
    report: "TrainingReport | None" = None
    trainer: Trainer | None = None

    @property
    def final(self) -> ParamMapperModel:
        return self.adaptive_model or self.global_model

    def trace(self) -> list:
        """Joint (eval index, best value) trace across both stages."""
        out = list(self.global_opt.trace)
        if self.adaptive_opt is not None:
            n = self.global_opt.n_evals
            best = out[-1][1]
            for i, v in self.adaptive_opt.trace:
                best = max(best, v)
                out.append((n + i, best))
        return out


def train(run: TrainingRun, images=None, report=True, log=None) -> TrainingResult:
    """Global then (optionally) adaptive training, followed by evaluation."""
    trainer = Trainer(run, images)
    clock = {}
    t0 = time.perf_counter()
    baseline = trainer.initial_model()
    g_model, g_opt = trainer.train_global(baseline)
    clock["global"] = time.perf_counter() - t0
    if log:
        log(f"global: {g_opt.value:.4f} after {g_opt.n_evals} evaluations "
            f"({clock['global']:.1f} s); parameters {global_values(g_model)}")
    result = TrainingResult(baseline, g_model, g_opt, trainer=trainer)
    if run.adaptive:
        t1 = time.perf_counter()
        result.adaptive_model, result.adaptive_opt = trainer.train_adaptive(g_model)
        clock["adaptive"] = time.perf_counter() - t1
        if log:
            log(f"adaptive: {result.adaptive_opt.value:.4f} after "
                f"{result.adaptive_opt.n_evals} evaluations ({clock['adaptive']:.1f} s)")
    if report:
        models = {"baseline": baseline, "global": g_model}
        if result.adaptive_model is not None:
            models["adaptive"] = result.adaptive_model
        result.report = trainer.evaluate(models)
        result.report.evaluations = {"global": g_opt.n_evals}
        if result.adaptive_opt is not None:
            result.report.evaluations["adaptive"] = result.adaptive_opt.n_evals
        result.report.wall_clock = clock
    return result


# ---------------------------------------------------------------------------
# report


@dataclass
class ReportRow:
    split: str
    image: str
    method: str
    psnr: float
    ssim: float
    ms_ssim: float

    def value(self, metric: str) -> float:
        return {"PSNR": self.psnr, "SSIM": self.ssim, "MS-SSIM": self.ms_ssim}[metric.upper()]


@dataclass
class TrainingReport:
    processor: str
    metric: str
    rows: list
    global_params: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)  # seconds; never written to files

    def methods(self) -> list:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def splits(self) -> list:
        seen = []
        for r in self.rows:
            if r.split not in seen:
                seen.append(r.split)
        return seen

    def mean(self, split: str, method: str, metric: str) -> float:
        vals = [r.value(metric) for r in self.rows if r.split == split and r.method == method]
        if not vals:
            raise KeyError(f"no rows for {split}/{method}")
        return float(sum(vals) / len(vals))

    def to_text(self) -> str:
        splits = self.splits()
        header = ["method"] + [f"{s}:{m}" for s in splits for m in METRICS]
        body = []
        for method in self.methods():
            cells = [method]
            for s in splits:
                for m in METRICS:
                    try:
                        v = self.mean(s, method, m)
                        cells.append(f"{v:.2f}" if m == "PSNR" else f"{v:.4f}")
                    except KeyError:
                        cells.append("-")
            body.append(cells)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = [f"processor {self.processor}, trained metric {self.metric}"]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                      for i, (c, w) in enumerate(zip(cells, widths)))
        lines.append(fmt(header))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend(fmt(r) for r in body)
        for label, params in self.global_params.items():
            vals = ", ".join(f"{k}={v:.4g}" for k, v in params.items())
            lines.append(f"{label} parameters: {vals}")
        for label, n in self.evaluations.items():
            lines.append(f"{label} evaluations: {n}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "image", "method", "PSNR", "SSIM", "MS-SSIM"])
        for r in self.rows:
            w.writerow([r.split, r.image, r.method, repr(r.psnr), repr(r.ssim), repr(r.ms_ssim)])
        return buf.getvalue()

    def write(self, text_path=None, csv_path=None) -> None:
        if text_path:
            with open(os.fspath(text_path), "w") as fh:
                fh.write(self.to_text())
        if csv_path:
            with open(os.fspath(csv_path), "w", newline="") as fh:
                fh.write(self.to_csv())


def read_report_csv(path) -> list:
    with open(os.fspath(path), newline="") as fh:
        return [ReportRow(r["split"], r["image"], r["method"], float(r["PSNR"]),
                          float(r["SSIM"]), float(r["MS-SSIM"])) for r in csv.DictReader(fh)]
