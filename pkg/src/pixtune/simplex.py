"""Nelder-Mead downhill simplex, stated as a maximizer.

The objective is maximized by running the classical minimizer on its negation.
Objective values that are not finite count as a large penalty so the simplex
backs away from them instead of aborting.

References
----------
Nelder & Mead (1965), "A simplex method for function minimization".
Lagarias, Reeds, Wright & Wright (1998), "Convergence properties of the
Nelder-Mead simplex method in low dimensions".
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

PENALTY = -1e30


@dataclass(frozen=True)
class SimplexOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    init_step: float | tuple = 0.25
    max_evals: int = 2000
    f_tol: float = 1e-5
    x_tol: float = 1e-6
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.reflection > 0:
            raise ValueError("reflection must be > 0")
        if not self.expansion > 1:
            raise ValueError("expansion must be > 1")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must be in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must be in (0, 1)")
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if isinstance(d["init_step"], tuple):
            d["init_step"] = list(d["init_step"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimplexOptions":
        d = dict(d)
        if isinstance(d.get("init_step"), list):
            d["init_step"] = tuple(d["init_step"])
        return cls(**d)


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    n_evals: int
    trace: list = field(default_factory=list)  # (eval index, best-so-far)
    converged: bool = False
    restarts_used: int = 0


class _Counter:
    def __init__(self, objective):
        self.objective = objective
        self.n = 0
        self.best_x = None
        self.best = -np.inf
        self.trace = []

    def __call__(self, x):
        self.n += 1
        v = self.objective(x.copy())
        v = float(v) if v is not None and np.isfinite(v) else PENALTY
        if self.best_x is None or v > self.best:
            self.best = v
            self.best_x = x.copy()
        self.trace.append((self.n, self.best))
        return -v


def _initial_simplex(x0, step):
    n = x0.size
    pts = np.repeat(x0[None], n + 1, axis=0)
    pts[1:] += np.diag(step)
    return pts


def nelder_mead(objective, x0, opts: SimplexOptions | None = None) -> OptResult:
    """Maximize ``objective`` starting from ``x0``.

    The first evaluation is ``x0`` itself, so the result is never worse than
    the starting point.
    """
    opts = opts or SimplexOptions()
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.size < 1 or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a non-empty finite vector")
    n = x0.size
    step = np.broadcast_to(np.asarray(opts.init_step, dtype=np.float64), (n,)).copy()
    rng = np.random.default_rng(opts.seed)
    f = _Counter(objective)
    a, g, c, s = opts.reflection, opts.expansion, opts.contraction, opts.shrink

    pts = _initial_simplex(x0, step)
    vals = np.array([f(p) for p in pts])
    restarts = 0
    converged = False

    while f.n < opts.max_evals:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        spread_f = vals[-1] - vals[0]
        spread_x = np.max(np.abs(pts[1:] - pts[0]))
        if spread_f < opts.f_tol and spread_x < opts.x_tol:
            if restarts >= opts.restarts:
                converged = True
                break
            restarts += 1
            signs = rng.choice([-1.0, 1.0], size=n)
            pts = _initial_simplex(pts[0], signs * step / 4.0)
            vals = np.concatenate([[vals[0]], [f(p) for p in pts[1:]]])
            continue

        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + a * (centroid - worst)
        fr = f(xr)
        if fr < vals[0]:
            xe = centroid + g * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
        elif fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + c * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + c * (worst - centroid)
                fc = f(xc)
                accept = fc < vals[-1]
            if accept:
                pts[-1], vals[-1] = xc, fc
            else:
                pts[1:] = pts[0] + s * (pts[1:] - pts[0])
                vals[1:] = [f(p) for p in pts[1:]]

    return OptResult(f.best_x, f.best, f.n, f.trace, converged, restarts)


def best_of_trace(result: OptResult) -> tuple[int, float]:
    """The final (eval index, best value) entry of the trace."""
    if not result.trace:
        raise ValueError("empty trace")
    return result.trace[-1]


def write_trace(result: OptResult, path) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eval_index", "best_value"])
        for i, v in result.trace:
            w.writerow([i, repr(v)])
