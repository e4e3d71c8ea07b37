import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agbnet.models import ArchitectureDescriptor
from agbnet.preprocess.dataset import PatchSample, StandardizationStats
from agbnet.raster_io import FootprintRecord, RasterGrid
from agbnet.training import (
    FootprintSample,
    ModelCheckpoint,
    TrainConfig,
    TrainingError,
    evaluate,
    kfold_plan,
    predict_patches,
    regression_metrics,
    split_dataset,
    train,
)

TINY = ArchitectureDescriptor("AU", depth=2, base_channels=4, in_channels=3, patch_size=16)


def _patches(n=12, seed=0, size=16):
    """Labels are a smooth function of channel 0 on a sparse pixel set."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.standard_normal((3, size, size))
        lab = np.full((size, size), -1.0)
        sel = rng.uniform(size=(size, size)) < 0.2
        lab[sel] = 100 + 40 * x[0][sel]
        lab = np.clip(lab, -1, None)
        lab[~sel] = -1.0
        out.append(PatchSample(x, lab, 0, i * size))
    return out


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.initial_lr, c.lr_decay_factor, c.lr_decay_every, c.max_epochs) == (1e-3, 0.1, 40, 120)
        assert (c.batch_size, c.weight_decay, tuple(c.split_ratio), c.folds) == (128, 1e-5, (7, 2, 1), 5)

    @pytest.mark.parametrize("epoch, lr", [(1, 1e-3), (40, 1e-3), (41, 1e-4), (80, 1e-4), (81, 1e-5), (120, 1e-5)])
    def test_schedule(self, epoch, lr):
        assert math.isclose(TrainConfig().lr_at(epoch), lr, rel_tol=1e-12)

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"weight_decay": -1}, {"split_ratio": (5, 3, 1)}, {"initial_lr": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()

    def test_dict_round_trip(self):
        c = TrainConfig(max_epochs=7, seed=3)
        assert TrainConfig.from_dict(c.to_dict()) == c


class TestSplits:
    def test_ten(self):
        tr, va, te = split_dataset(range(10), seed=1)
        assert (len(tr), len(va), len(te)) == (7, 2, 1)

    def test_too_few(self):
        with pytest.raises(ValueError):
            split_dataset(range(9))

    def test_seeded(self):
        assert split_dataset(range(100), seed=4) == split_dataset(range(100), seed=4)
        assert split_dataset(range(100), seed=4) != split_dataset(range(100), seed=5)

    @given(st.integers(10, 500), st.integers(0, 2**32 - 1))
    def test_partition(self, n, seed):
        tr, va, te = split_dataset(range(n), seed=seed)
        assert sorted(tr + va + te) == list(range(n))
        assert len(tr) == n * 7 // 10 and len(va) == n * 2 // 10

    def test_kfold_ten_by_five(self):
        plan = kfold_plan(range(10), 5, seed=0)
        assert [len(v) for _, v in plan] == [2] * 5
        assert sorted(x for _, v in plan for x in v) == list(range(10))
        for tr, va in plan:
            assert sorted(tr + va) == list(range(10))

    def test_kfold_too_few(self):
        with pytest.raises(ValueError):
            kfold_plan(range(3), 5)


class TestMetrics:
    def test_perfect(self):
        m = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (m.r2, m.rmse, m.bias) == (1.0, 0.0, 0.0)

    def test_mean_predictor(self):
        y = np.array([1.0, 5.0, 9.0])
        assert regression_metrics(y, np.full(3, y.mean())).r2 == 0.0

    def test_hand_evaluated(self):
        m = regression_metrics([0.0, 100.0, 200.0], [10.0, 100.0, 190.0])
        assert math.isclose(m.r2, 0.99)
        assert math.isclose(m.rmse, math.sqrt(200 / 3)) and abs(m.rmse - 8.165) < 1e-3
        assert m.bias == 0.0

    def test_constant_reference_flagged(self):
        m = regression_metrics([5.0, 5.0], [4.0, 6.0])
        assert math.isnan(m.r2) and m.flags
        assert m.to_dict()["r2"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            regression_metrics([], [])

    @given(st.lists(st.floats(0, 300), min_size=2, max_size=30), st.floats(-50, 50))
    def test_bias_shift(self, y, c):
        y = np.array(y)
        p = y * 0.9 + 3
        a = regression_metrics(y, p)
        b = regression_metrics(y, p + c)
        assert math.isclose(b.bias - a.bias, c, abs_tol=1e-9)


class TestTrain:
    def test_overfit_single_patch(self):
        size = 16
        lab = np.full((size, size), -1.0)
        lab[::3, ::2] = 150.0
        patch = PatchSample(np.random.default_rng(0).standard_normal((3, size, size)), lab, 0, 0)
        stats = StandardizationStats(np.zeros(3), np.ones(3), 100.0, 50.0)
        cfg = TrainConfig(max_epochs=200, batch_size=1, weight_decay=0.0, lr_decay_every=1000)
        res = train([patch], [], TINY, cfg, stats=stats)
        assert len(res.history) == 200
        assert min(h["train_loss"] for h in res.history) < 1e-3

    def test_deterministic(self):
        cfg = TrainConfig(max_epochs=3, batch_size=4, lr_decay_every=2, seed=11)
        a = train(_patches(), _patches(4, seed=1), TINY, cfg)
        b = train(_patches(), _patches(4, seed=1), TINY, cfg)
        for ra, rb in zip(a.history, b.history):
            assert abs(ra["train_loss"] - rb["train_loss"]) <= 1e-9
            assert abs(ra["val_loss"] - rb["val_loss"]) <= 1e-9
        assert [r["lr"] for r in a.history] == [1e-3, 1e-3, 1e-4]

    def test_best_epoch_kept(self, tmp_path):
        cfg = TrainConfig(max_epochs=4, batch_size=4)
        res = train(_patches(), _patches(4, seed=1), TINY, cfg)
        best = min(res.history, key=lambda h: h["val_loss"])
        assert res.checkpoint.epoch == best["epoch"]
        assert math.isclose(res.checkpoint.val_loss, best["val_loss"])
        res.write_history(tmp_path / "h.csv")
        rows = (tmp_path / "h.csv").read_text().splitlines()
        assert rows[0] == "epoch,train_loss,val_loss,lr" and len(rows) == 5

    def test_checkpoint_round_trip(self, tmp_path):
        res = train(_patches(), [], TINY, TrainConfig(max_epochs=2, batch_size=4))
        res.checkpoint.save(tmp_path / "ck")
        back = ModelCheckpoint.load(tmp_path / "ck")
        assert back.desc == TINY and back.epoch == 2
        test = _patches(3, seed=9)
        np.testing.assert_allclose(predict_patches(back, test), predict_patches(res.checkpoint, test), rtol=1e-6)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_loss(self):
        stats = StandardizationStats(np.zeros(3), np.ones(3), 0.0, 1e-45)
        with pytest.raises(TrainingError, match="epoch 1, batch 1"):
            train(_patches(), [], TINY, TrainConfig(max_epochs=1, batch_size=4), stats=stats)

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            train([FootprintSample(np.zeros(3), 1.0)], [], TINY)

    def test_au_fc_on_footprint_samples(self):
        rng = np.random.default_rng(2)
        samples = [FootprintSample(v, float(100 + 30 * v[0])) for v in rng.standard_normal((12, 29))]
        desc = ArchitectureDescriptor("AU_FC", 2, 2, 29, 64)
        res = train(samples, samples[:4], desc, TrainConfig(max_epochs=2, batch_size=6))
        m = evaluate(res.checkpoint, samples, "footprint")
        assert m.level == "footprint" and m.n == 12 and math.isfinite(m.rmse)


class TestEvaluate:
    def test_pixel_and_footprint(self):
        patches = _patches(2)
        for p in patches:
            p.labels[:] = -1.0
            p.labels[4:12, 4:12] = 120.0
        template = RasterGrid(np.zeros((3, 16, 32)), ["a", "b", "c"], (0.0, 160.0), (10.0, -10.0))
        res = train(_patches(), [], TINY, TrainConfig(max_epochs=1, batch_size=4))
        pred = np.full((2, 16, 16), 100.0)
        m = evaluate(res.checkpoint, patches, "pixel", predictions=pred)
        assert m.n == 128 and math.isclose(m.bias, -20.0)
        fp = FootprintRecord("a", 80.0, 80.0, 12.5, rh80=20.0, rh98=25.0)
        m = evaluate(res.checkpoint, patches, "footprint", [fp], template, predictions=pred)
        assert m.n == 1 and math.isclose(m.bias, 100.0 - 5.58 * 20**1.12)

    def test_unknown_level(self):
        res = train(_patches(), [], TINY, TrainConfig(max_epochs=1, batch_size=4))
        with pytest.raises(ValueError):
            evaluate(res.checkpoint, _patches(2), "region")
