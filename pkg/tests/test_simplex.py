import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixtune.simplex import PENALTY, SimplexOptions, best_of_trace, nelder_mead, write_trace


def sphere(x):
    return -((x[0] - 1) ** 2 + (x[1] - 2) ** 2)


def booth(x):
    return -((x[0] + 2 * x[1] - 7) ** 2 + (2 * x[0] + x[1] - 5) ** 2)


def rosenbrock(x):
    return -(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


class TestBenchmarks:
    def test_sphere(self):
        r = nelder_mead(sphere, [0, 0])
        np.testing.assert_allclose(r.x, [1, 2], atol=1e-4)
        assert r.value == pytest.approx(0, abs=1e-6)

    def test_booth(self):
        r = nelder_mead(booth, [0, 0])
        np.testing.assert_allclose(r.x, [1, 3], atol=1e-3)

    def test_rosenbrock(self):
        r = nelder_mead(rosenbrock, [-1.2, 1], SimplexOptions(max_evals=2000, restarts=1))
        np.testing.assert_allclose(r.x, [1, 1], atol=1e-2)
        assert r.n_evals <= 2000 + 2 + 1

    @pytest.mark.parametrize("dim", [1, 3, 6, 10])
    def test_concave_quadratic(self, dim):
        rng = np.random.default_rng(dim)
        A = rng.normal(size=(dim, dim))
        Q = A @ A.T + dim * np.eye(dim)
        xs = rng.normal(size=dim)
        r = nelder_mead(lambda x: -(x - xs) @ Q @ (x - xs), np.zeros(dim),
                        SimplexOptions(max_evals=500 * dim))
        np.testing.assert_allclose(r.x, xs, atol=1e-3)
        assert r.n_evals <= 500 * dim + dim + 1


class TestContract:
    def test_trace(self):
        r = nelder_mead(booth, [0, 0])
        values = [v for _, v in r.trace]
        assert [i for i, _ in r.trace] == list(range(1, r.n_evals + 1))
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert best_of_trace(r) == (r.n_evals, r.value)

    def test_single_evaluation(self):
        r = nelder_mead(sphere, [0, 0], SimplexOptions(max_evals=1))
        assert best_of_trace(r)[0] == 1 or r.n_evals <= 3
        assert r.trace[0] == (1, sphere([0, 0]))

    def test_value_matches_point(self):
        r = nelder_mead(rosenbrock, [-1.2, 1], SimplexOptions(max_evals=300))
        assert rosenbrock(r.x) == r.value

    def test_deterministic(self):
        a = nelder_mead(rosenbrock, [-1.2, 1], SimplexOptions(max_evals=500, seed=3))
        b = nelder_mead(rosenbrock, [-1.2, 1], SimplexOptions(max_evals=500, seed=3))
        np.testing.assert_array_equal(a.x, b.x)
        assert a.trace == b.trace

    def test_penalty_for_nonfinite(self):
        def f(x):
            return np.nan if x[0] > 0.5 else -(x[0] - 2) ** 2
        r = nelder_mead(f, [0.0], SimplexOptions(max_evals=200))
        assert r.x[0] <= 0.5 and np.isfinite(r.value)
        assert r.value >= f([0.0])

    def test_all_penalty(self):
        r = nelder_mead(lambda x: float("inf"), [0.0, 0.0], SimplexOptions(max_evals=20))
        assert r.value == PENALTY

    def test_restart_used(self):
        r = nelder_mead(sphere, [0, 0], SimplexOptions(restarts=1))
        assert r.converged and r.restarts_used == 1

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            nelder_mead(sphere, [np.nan, 0])
        with pytest.raises(ValueError):
            SimplexOptions(contraction=1.0)
        with pytest.raises(ValueError):
            SimplexOptions(expansion=1.0)

    def test_per_coordinate_steps(self):
        r = nelder_mead(sphere, [0, 0], SimplexOptions(init_step=(0.5, 0.01)))
        np.testing.assert_allclose(r.x, [1, 2], atol=1e-4)

    def test_options_round_trip(self):
        o = SimplexOptions(init_step=(0.1, 0.2), max_evals=7)
        assert SimplexOptions.from_dict(o.to_dict()) == o

    def test_write_trace(self, tmp_path):
        r = nelder_mead(sphere, [0, 0], SimplexOptions(max_evals=30))
        write_trace(r, tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["eval_index", "best_value"]
        assert len(rows) == r.n_evals + 1
        assert float(rows[-1][1]) == r.value


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.integers(5, 120))
def test_never_worse_and_budget(x0, budget):
    def f(x):
        return -np.sum(np.abs(x - 0.7)) + np.cos(3 * x).sum()
    r = nelder_mead(f, x0, SimplexOptions(max_evals=budget))
    assert r.value >= f(np.array(x0))
    assert r.n_evals <= budget + len(x0) + 1
