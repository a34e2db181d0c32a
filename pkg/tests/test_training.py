import numpy as np
import pytest

from pixtune.imaging import save_image
from pixtune.metrics import psnr
from pixtune.model import load_model, pack, save_model
from pixtune.simplex import PENALTY
from pixtune.training import (CropSpec, Trainer, TrainingRun, global_values,
                              load_run, make_pairs, read_report_csv, save_run, train)


def references(n=4, size=48, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = np.cumsum(np.cumsum(rng.normal(size=(size, size, 3)), 0), 1)
        out.append((base - base.min()) / np.ptp(base))
    return out


def small_anlm(**kw):
    args = dict(train=[0, 1], test=[2], crop=CropSpec(32, 1, 0), seed=3,
                processor_config={"n_neighbors": 4, "search_radius": 2},
                simplex_global={"max_evals": 12, "init_step": 1.0},
                simplex_adaptive={"max_evals": 20})
    args.update(kw)
    return TrainingRun("anlm", **args)


class TestRun:
    def test_default_split_halves(self):
        run = TrainingRun("anlm", dataset=["a", "b", "c", "d", "e"])
        assert run.train == [0, 1, 2] and run.test == [3, 4]

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            TrainingRun("anlm", train=[0, 1], test=[1])

    def test_crop_too_small(self):
        with pytest.raises(ValueError):
            TrainingRun("anlm", crop=CropSpec(16))

    def test_unknown(self):
        with pytest.raises(ValueError):
            TrainingRun("sharpen")
        with pytest.raises(ValueError):
            TrainingRun("anlm", metric="L1")
        with pytest.raises(ValueError):
            TrainingRun.from_dict({"processor": "anlm", "colour": 1})

    def test_round_trip(self, tmp_path):
        run = small_anlm(dataset=["x.png", "y.png", "z.png"])
        save_run(run, tmp_path / "run.json")
        back = load_run(tmp_path / "run.json")
        assert back.dataset == [str(tmp_path / p) for p in run.dataset]
        back.dataset = run.dataset
        assert back == run

    def test_sigma_scale(self):
        assert TrainingRun("anlm", sigma=25.5).processor_settings()["sigma"] == pytest.approx(0.1)


class TestPairs:
    def test_deterministic_and_seeded(self):
        imgs = references()
        run = small_anlm()
        a = make_pairs(run, imgs)
        b = make_pairs(run, imgs)
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.input, q.input)
        assert [p.seed for p in a] == [3 ^ k for k in range(4)]

    def test_order_independent(self):
        imgs = references()
        run = small_anlm()
        full = make_pairs(run, imgs)
        one = make_pairs(run, imgs, indices=[2])
        np.testing.assert_array_equal(one[0].input, full[2].input)

    def test_crop_origin_even(self):
        imgs = references(1, 50)
        run = TrainingRun("blend", crop=CropSpec(28, 3, 5))
        pairs = make_pairs(run, imgs)
        assert len(pairs) == 3
        for p in pairs:
            assert p.reference.shape == (28, 28, 3)
            hits = [(y, x) for y in range(0, 23) for x in range(0, 23)
                    if np.array_equal(imgs[0][y:y + 28, x:x + 28], p.reference)]
            assert hits and all(y % 2 == 0 and x % 2 == 0 for y, x in hits)

    def test_tv_reference_is_gray(self):
        run = TrainingRun("tv", crop=CropSpec(40))
        p = make_pairs(run, references(1))[0]
        assert p.reference.ndim == 2 and p.input.shape == p.reference.shape


class TestTrainer:
    def test_score_is_mean_metric(self):
        imgs = references()
        tr = Trainer(small_anlm(), imgs)
        model = tr.initial_model()
        ks = tr.split("train")
        want = sum(psnr(tr.output(model, k), tr.pairs[k].reference) for k in ks) / len(ks)
        assert tr.score(model, ks) == want

    def test_initial_model_is_defaults(self):
        tr = Trainer(small_anlm(), references())
        assert global_values(tr.initial_model()) == pytest.approx({"p0": 5.0, "p1": 0.4})

    def test_objective_penalizes_failure(self):
        tr = Trainer(small_anlm(), references())
        f = tr.objective(tr.initial_model())
        assert f(np.array([0.0, np.nan, 0.0, 0.0, 0.0, 0.0])) == PENALTY

    def test_embedding_scores_identically(self):
        tr = Trainer(small_anlm(), references())
        g = tr.initial_model()
        lifted = tr.adaptive_template(g)
        ks = tr.split("train")
        assert tr.score(lifted, ks) == tr.score(g, ks)
        for k in ks:
            np.testing.assert_array_equal(tr.field(lifted, k).values, tr.field(g, k).values)

    def test_splits_disjoint(self):
        tr = Trainer(small_anlm(), references())
        assert set(tr.split("train")).isdisjoint(tr.split("test"))
        assert tr.split("test") == [2]


@pytest.fixture(scope="module")
def result():
    return train(small_anlm(), references())


class TestTrain:
    def test_chain_never_worse(self, result):
        rep = result.report
        b, g, a = (rep.mean("train", m, "PSNR") for m in ("baseline", "global", "adaptive"))
        assert b <= g <= a

    def test_trace_monotone(self, result):
        tr = result.trace()
        assert [i for i, _ in tr] == list(range(1, len(tr) + 1))
        assert all(y >= x for (_, x), (_, y) in zip(tr, tr[1:]))
        assert len(tr) == result.global_opt.n_evals + result.adaptive_opt.n_evals

    def test_deterministic(self, result):
        again = train(small_anlm(), references())
        np.testing.assert_array_equal(pack(again.adaptive_model), pack(result.adaptive_model))
        assert again.report.to_csv() == result.report.to_csv()

    def test_report_rows(self, result):
        rep = result.report
        assert rep.methods() == ["input", "baseline", "global", "adaptive"]
        assert rep.splits() == ["train", "test"]
        assert len(rep.rows) == 3 * 4
        assert "train:PSNR" in rep.to_text() and "global parameters" in rep.to_text()

    def test_report_csv_round_trip(self, result, tmp_path):
        result.report.write(tmp_path / "r.txt", tmp_path / "r.csv")
        rows = read_report_csv(tmp_path / "r.csv")
        assert rows == result.report.rows

    def test_model_file_round_trip(self, result, tmp_path):
        save_model(result.adaptive_model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        tr = result.trainer
        for k in range(len(tr.pairs)):
            np.testing.assert_array_equal(tr.output(back, k), tr.output(result.adaptive_model, k))

    def test_global_only(self):
        res = train(small_anlm(adaptive=False), references())
        assert res.adaptive_model is None and res.final is res.global_model
        assert "adaptive" not in res.report.methods()


class TestBlendTraining:
    def test_demosaicer_rows_and_dominance(self):
        run = TrainingRun("blend", train=[0, 1], test=[], crop=CropSpec(32), adaptive=False,
                          simplex_global={"max_evals": 40, "init_step": 1.0})
        res = train(run, references())
        rep = res.report
        assert rep.methods()[:3] == ["bilinear", "gradient-corrected", "edge-directed"]
        g = rep.mean("train", "global", "PSNR")
        assert g >= rep.mean("train", "baseline", "PSNR")


class TestPaths:
    def test_dataset_from_files(self, tmp_path):
        imgs = references(2, 40)
        paths = []
        for j, img in enumerate(imgs):
            p = tmp_path / f"ref{j}.png"
            save_image(img, p, 16)
            paths.append(str(p))
        run = TrainingRun("anlm", dataset=paths, crop=CropSpec(32))
        pairs = make_pairs(run)
        assert [p.name for p in pairs] == ["ref0.png", "ref1.png"]
        assert pairs[0].reference.shape == (32, 32, 3)
        assert pairs[0].input.min() >= 0 and pairs[0].input.max() <= 1
