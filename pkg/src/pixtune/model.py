"""Quadratic-logistic mapping from feature vectors to bounded parameters.

For parameter ``k`` the score is::

    h = theta0 + theta1 . f + sum_{i <= j} T_ij f_i f_j

with ``T`` stored as its upper triangle (diagonal included, row-major), and
the parameter is ``p_min + (p_max - p_min) * logistic(h)``.  Parameters flagged
``odd`` are rounded to the nearest odd integer, ties going to the smaller one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .features import FeatureMap, FeatureSpec

FORMAT_VERSION = "1.0.0"
NORM_STD_FLOOR = 1e-9


def triangle_size(F: int) -> int:
    return F * (F + 1) // 2


def block_size(F: int) -> int:
    return 1 + F + triangle_size(F)


@dataclass(frozen=True)
class CoefficientBlock:
    theta0: float
    theta1: np.ndarray
    theta2: np.ndarray  # packed upper triangle, length F(F+1)/2

    def __post_init__(self):
        t1 = np.asarray(self.theta1, dtype=np.float64).ravel()
        t2 = np.asarray(self.theta2, dtype=np.float64).ravel()
        if t2.size != triangle_size(t1.size):
            raise ValueError(f"theta2 needs {triangle_size(t1.size)} entries for F={t1.size}")
        object.__setattr__(self, "theta0", float(self.theta0))
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)

    @property
    def F(self) -> int:
        return self.theta1.size

    @classmethod
    def zeros(cls, F: int) -> "CoefficientBlock":
        return cls(0.0, np.zeros(F), np.zeros(triangle_size(F)))

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.theta0], self.theta1, self.theta2])

    @classmethod
    def unpack(cls, vec, F: int) -> "CoefficientBlock":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != block_size(F):
            raise ValueError(f"expected {block_size(F)} coefficients, got {vec.size}")
        return cls(vec[0], vec[1:1 + F].copy(), vec[1 + F:].copy())

    def dense_quadratic(self) -> np.ndarray:
        """The upper-triangular F x F matrix of the quadratic term."""
        T = np.zeros((self.F, self.F))
        T[np.triu_indices(self.F)] = self.theta2
        return T


def eval_h(f, block: CoefficientBlock):
    """Quadratic score of feature vector(s) ``f`` (last axis has length F)."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != block.F:
        raise ValueError(f"feature length {f.shape[-1]} does not match block F={block.F}")
    lin = f @ block.theta1
    quad = np.einsum("...i,ij,...j->...", f, block.dense_quadratic(), f)
    return block.theta0 + lin + quad


def round_odd(p):
    """Nearest odd integer, ties toward the smaller odd value."""
    return 2.0 * np.ceil((np.asarray(p, dtype=np.float64) - 2.0) / 2.0) + 1.0


@dataclass(frozen=True)
class ParamSpec:
    name: str
    p_min: float
    p_max: float
    discrete: str | None = None  # None or "odd"
    block: CoefficientBlock | None = None

    def __post_init__(self):
        if not self.p_min < self.p_max:
            raise ValueError(f"{self.name}: p_min must be below p_max")
        if self.discrete not in (None, "odd"):
            raise ValueError(f"unknown discreteness {self.discrete!r}")

    def map_h(self, h):
        """Logistic squashing of scores into [p_min, p_max], with odd rounding."""
        p = self.p_min + (self.p_max - self.p_min) * expit(h)
        p = np.clip(p, self.p_min, self.p_max)
        if self.discrete == "odd":
            p = np.clip(round_odd(p), *self.odd_range())
        return p

    def odd_range(self) -> tuple[float, float]:
        lo, hi = np.ceil(self.p_min), np.floor(self.p_max)
        lo += lo % 2 == 0
        hi -= hi % 2 == 0
        if lo > hi:
            raise ValueError(f"{self.name}: no odd integer inside the bounds")
        return float(lo), float(hi)

    def h_for(self, value: float) -> float:
        """Score whose mapped value is ``value`` (inverse logistic)."""
        u = (value - self.p_min) / (self.p_max - self.p_min)
        if not 0.0 < u < 1.0:
            raise ValueError(f"{self.name}: {value} is not strictly inside the bounds")
        return float(logit(u))


@dataclass(frozen=True)
class ParameterField:
    """(H, W, P) per-pixel parameter values."""

    values: np.ndarray
    names: tuple = ()

    @property
    def P(self) -> int:
        return self.values.shape[-1]

    @property
    def shape(self):
        return self.values.shape[:2]

    def __getitem__(self, k):
        if isinstance(k, str):
            k = self.names.index(k)
        return self.values[..., k]


@dataclass(frozen=True)
class ParamMapperModel:
    processor: str
    params: tuple  # of ParamSpec, each carrying its block
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)
    feature_norm: np.ndarray | None = None  # (F, 2) mean/std, row 0 = (0, 1)
    processor_config: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    def __post_init__(self):
        F = self.feature_spec.F
        for p in self.params:
            if p.block is None or p.block.F != F:
                raise ValueError(f"parameter {p.name} has no coefficient block for F={F}")
        norm = identity_norm(F) if self.feature_norm is None else np.asarray(self.feature_norm, dtype=np.float64)
        if norm.shape != (F, 2):
            raise ValueError(f"feature_norm must have shape ({F}, 2)")
        object.__setattr__(self, "feature_norm", norm)
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def F(self) -> int:
        return self.feature_spec.F

    @property
    def P(self) -> int:
        return len(self.params)

    @property
    def names(self) -> tuple:
        return tuple(p.name for p in self.params)

    def with_blocks(self, blocks) -> "ParamMapperModel":
        params = tuple(replace(p, block=b) for p, b in zip(self.params, blocks))
        return replace(self, params=params)


def identity_norm(F: int) -> np.ndarray:
    norm = np.zeros((F, 2))
    norm[:, 1] = 1.0
    return norm


def pack(model: ParamMapperModel) -> np.ndarray:
    return np.concatenate([p.block.pack() for p in model.params])


def unpack(vec, template: ParamMapperModel) -> ParamMapperModel:
    vec = np.asarray(vec, dtype=np.float64)
    n = block_size(template.F)
    if vec.size != n * template.P:
        raise ValueError(f"expected {n * template.P} coefficients, got {vec.size}")
    blocks = [CoefficientBlock.unpack(vec[k * n:(k + 1) * n], template.F) for k in range(template.P)]
    return template.with_blocks(blocks)


def feature_stats(maps) -> np.ndarray:
    """Pooled per-feature (mean, std) over a list of raw feature maps."""
    stacked = np.concatenate([m.values.reshape(-1, m.F) for m in maps], axis=0)
    stats = np.empty((stacked.shape[1], 2))
    stats[:, 0] = stacked.mean(axis=0)
    stats[:, 1] = stacked.std(axis=0)
    stats[0] = (0.0, 1.0)
    return stats


def normalize_features(fm: FeatureMap, stats) -> FeatureMap:
    """z-score features 1..F-1 with ``stats``; slot 0 stays exactly 1."""
    stats = np.asarray(stats, dtype=np.float64)
    if stats.shape != (fm.F, 2):
        raise ValueError(f"stats shape {stats.shape} does not match F={fm.F}")
    values = np.empty_like(fm.values)
    values[..., 0] = 1.0
    values[..., 1:] = (fm.values[..., 1:] - stats[1:, 0]) / np.maximum(stats[1:, 1], NORM_STD_FLOOR)
    return FeatureMap(values, stats)


def map_param(f, k: int, model: ParamMapperModel):
    """Parameter ``k`` for already-normalized feature vector(s) ``f``."""
    spec = model.params[k]
    return spec.map_h(eval_h(f, spec.block))


def map_field(fm: FeatureMap, model: ParamMapperModel) -> ParameterField:
    """Per-pixel parameters; raw feature maps are normalized with the model's stats."""
    if fm.F != model.F:
        raise ValueError(f"feature map has F={fm.F}, model expects F={model.F}")
    if fm.norm is None:
        fm = normalize_features(fm, model.feature_norm)
    values = np.stack([map_param(fm.values, k, model) for k in range(model.P)], axis=-1)
    return ParameterField(values, model.names)


def constant_model(processor: str, params, values, processor_config=None) -> ParamMapperModel:
    """F = 1 model whose mapped parameters equal ``values`` (up to rounding)."""
    blocks = []
    for spec, v in zip(params, values):
        b = CoefficientBlock.zeros(1)
        blocks.append(CoefficientBlock(spec.h_for(v), b.theta1, b.theta2))
    params = tuple(replace(p, block=b) for p, b in zip(params, blocks))
    return ParamMapperModel(processor, params, FeatureSpec(), None, dict(processor_config or {}))


def embed_global(warm: ParamMapperModel, spec: FeatureSpec, stats=None) -> ParamMapperModel:
    """Lift an F = 1 model to ``spec`` with every feature-dependent term zero.

    The lifted model produces exactly the warm model's (constant) field.
    """
    if warm.F != 1:
        raise ValueError("warm model must be global (F = 1)")
    F = spec.F
    blocks = []
    for p in warm.params:
        t1 = np.zeros(F)
        t2 = np.zeros(triangle_size(F))
        t1[0] = p.block.theta1[0]
        t2[0] = p.block.theta2[0]
        blocks.append(CoefficientBlock(p.block.theta0, t1, t2))
    lifted = replace(warm, feature_spec=spec, feature_norm=stats,
                     params=tuple(replace(p, block=b) for p, b in zip(warm.params, blocks)))
    return lifted


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: ParamMapperModel) -> dict:
    return {
        "version": model.version,
        "processor": model.processor,
        "F": model.F,
        "P": model.P,
        "feature_spec": model.feature_spec.to_list(),
        "feature_norm": model.feature_norm.tolist(),
        "processor_config": model.processor_config,
        "params": [
            {
                "name": p.name,
                "p_min": p.p_min,
                "p_max": p.p_max,
                "discrete": p.discrete,
                "theta0": p.block.theta0,
                "theta1": p.block.theta1.tolist(),
                "theta2": p.block.theta2.tolist(),
            }
            for p in model.params
        ],
    }


def model_from_dict(d: dict) -> ParamMapperModel:
    spec = FeatureSpec.from_list(d["feature_spec"])
    params = []
    for p in d["params"]:
        block = CoefficientBlock(p["theta0"], p["theta1"], p["theta2"])
        params.append(ParamSpec(p["name"], p["p_min"], p["p_max"], p.get("discrete"), block))
    model = ParamMapperModel(d["processor"], tuple(params), spec, np.array(d["feature_norm"]),
                             dict(d.get("processor_config", {})), d.get("version", FORMAT_VERSION))
    if model.F != d["F"] or model.P != d["P"]:
        raise ValueError("model file F/P fields disagree with its contents")
    return model


def save_model(model: ParamMapperModel, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(os.fspath(path), "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> ParamMapperModel:
    with open(os.fspath(path)) as fh:
        return model_from_dict(json.load(fh))
