import math

import numpy as np
import pytest
from scipy import stats

from covid_acoustics import model as nn
from covid_acoustics.errors import EmptyClass, NumericalBlowup
from covid_acoustics.features import FeatureMatrix
from covid_acoustics.training import (
    ChunkPool,
    OptimizerState,
    TrainConfig,
    adam_step,
    balanced_batch,
    chunk_array,
    dump_config,
    load_config,
    make_chunks,
    plateau_scheduler,
    train_model,
    write_epoch_log,
)


def pool_of(sizes_pos, sizes_neg, rows=2, T=3):
    pool = ChunkPool()
    for y, sizes in ((1, sizes_pos), (0, sizes_neg)):
        for k, n in enumerate(sizes):
            fid = f"{'p' if y else 'n'}{k}"
            # first entry of every chunk encodes (file, chunk) for bookkeeping
            chunks = np.zeros((n, rows, T))
            chunks[:, 0, 0] = np.arange(n)
            pool.add(fid, y, chunks)
    return pool


def run_schedule(losses, lr0=1e-4):
    state = OptimizerState(np.zeros(1), np.zeros(1), lr0)
    history = []
    for loss in losses:
        state = plateau_scheduler(state, loss)
        history.append(state.lr)
    return state, history


def toy_features(n_files, rng, rows=6, shift=1.5):
    feats, labels = {}, {}
    for k in range(n_files):
        y = int(k % 3 == 0)
        n = int(rng.integers(4, 12))
        feats[f"f{k:02d}"] = FeatureMatrix(rng.normal(size=(rows, n)) + shift * y, f"f{k:02d}")
        labels[f"f{k:02d}"] = y
    return feats, labels


TINY = TrainConfig(batch_size=16, max_epochs=3, batches_per_epoch=4, hidden=4, fc_dim=3,
                   chunk_frames=5, chunk_stride=2, lr=1e-2)


class TestChunking:
    def test_count_and_stride(self):
        x = np.arange(2 * 100).reshape(2, 100).astype(float)
        c = chunk_array(x)
        assert c.shape == ((100 - 51) // 10 + 1, 2, 51)
        np.testing.assert_array_equal(c[1], x[:, 10:61])

    def test_exact_width(self):
        assert chunk_array(np.ones((3, 51))).shape == (1, 3, 51)

    def test_reflect_pad(self):
        x = np.arange(5.0)[None]
        c = chunk_array(x, T=8)
        np.testing.assert_array_equal(c[0, 0], [0, 1, 2, 3, 4, 3, 2, 1])

    def test_single_frame(self):
        c = chunk_array(np.array([[2.0], [3.0]]))
        assert c.shape == (1, 2, 51)
        assert np.all(c[0, 0] == 2.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            chunk_array(np.zeros((3, 0)))

    def test_make_chunks_label(self):
        chunks = make_chunks(FeatureMatrix(np.zeros((4, 70)), "a"), 1)
        assert len(chunks) == 2
        assert all(c.label == 1 and c.source_id == "a" for c in chunks)


class TestBalancedBatch:
    def test_split(self):
        pool = pool_of([3, 1], [5, 2, 9, 4])
        for seed in range(20):
            x, y, ids = balanced_batch(pool, 1024, seed)
            assert x.shape == (1024, 2, 3)
            assert (y == 1).sum() == 512 and (y == 0).sum() == 512
            assert all(i.startswith("p") for i in ids[:512])

    def test_single_positive_file(self):
        pool = pool_of([7], [2, 2, 2])
        _, _, ids = balanced_batch(pool, 1024, 0)
        assert ids.count("p0") == 512

    def test_empty_class(self):
        pool = pool_of([], [3])
        with pytest.raises(EmptyClass):
            balanced_batch(pool, 8, 0)

    def test_odd_batch(self):
        with pytest.raises(ValueError):
            balanced_batch(pool_of([1], [1]), 7, 0)

    def test_file_first_uniform(self):
        # files of very different sizes are still picked equally often
        pool = pool_of([1, 50], [2, 30, 100])
        counts = {f: 0 for f in ("p0", "p1", "n0", "n1", "n2")}
        rng = np.random.default_rng(3)
        for _ in range(100):
            for f in balanced_batch(pool, 1024, rng)[2]:
                counts[f] += 1
        assert stats.chisquare([counts["p0"], counts["p1"]]).pvalue > 0.001
        assert stats.chisquare([counts["n0"], counts["n1"], counts["n2"]]).pvalue > 0.001

    def test_chunk_uniform_within_file(self):
        pool = pool_of([10], [1])
        x, _, _ = balanced_batch(pool, 20000, 5)
        idx = x[:10000, 0, 0].astype(int)
        assert stats.chisquare(np.bincount(idx, minlength=10)).pvalue > 0.001

    def test_seeded(self):
        pool = pool_of([3, 4], [5, 6])
        a = balanced_batch(pool, 64, 11)
        b = balanced_batch(pool, 64, 11)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[2] == b[2]


class TestAdam:
    def _scalar(self, theta, g):
        dims = nn.Dims(1, 1, 1)
        p = nn.NetworkParams(dims, np.full(nn.expected_param_count(dims), theta))
        return p, nn.NetworkParams(dims, np.full(p.size, g))

    def test_fixed_point(self):
        p, g = self._scalar(0.0, 0.0)
        q, state = adam_step(p, g, OptimizerState.create(p))
        np.testing.assert_array_equal(q.flat, 0.0)
        assert state.step == 1

    def test_first_step_hand_value(self):
        p, g = self._scalar(0.0, 1.0)
        q, _ = adam_step(p, g, OptimizerState.create(p, lr=1e-4), l2=0.0)
        # m_hat = 1, v_hat = 1 at t = 1
        np.testing.assert_allclose(q.flat, -1e-4 / (1.0 + 1e-8), rtol=1e-15)

    def test_l2_alone_shrinks(self):
        p, g = self._scalar(1.0, 0.0)
        state = OptimizerState.create(p)
        norms = [np.linalg.norm(p.flat)]
        for _ in range(5):
            p, state = adam_step(p, g, state, l2=1e-4)
            norms.append(np.linalg.norm(p.flat))
        assert np.all(np.diff(norms) < 0)

    def test_second_step_hand_value(self):
        p, g = self._scalar(0.0, 1.0)
        p1, s1 = adam_step(p, g, OptimizerState.create(p, lr=0.1), l2=0.0)
        _, g2 = self._scalar(0.0, 3.0)
        p2, s2 = adam_step(p1, g2, s1, l2=0.0)
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        expected = p1.flat[0] - 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        assert p2.flat[0] == pytest.approx(expected, rel=1e-12)
        assert s2.step == 2

    def test_blowup(self):
        p, g = self._scalar(0.0, np.nan)
        with pytest.raises(NumericalBlowup):
            adam_step(p, g, OptimizerState.create(p))


class TestScheduler:
    def test_improving(self):
        state, lrs = run_schedule([1.0, 0.9, 0.8])
        assert state.reductions == 0 and lrs == [1e-4] * 3

    def test_four_flat(self):
        state, lrs = run_schedule([1.0] * 4)
        assert state.reductions == 1
        assert lrs[:3] == [1e-4] * 3

    def test_eight_flat(self):
        assert run_schedule([1.0] * 8)[0].reductions == 2

    def test_min_delta(self):
        # gains smaller than 1e-6 do not count as improvement
        state, _ = run_schedule([1.0, 1.0 - 5e-7, 1.0 - 9e-7, 1.0 - 1e-6 + 1e-9])
        assert state.reductions == 1

    def test_floor(self):
        state, lrs = run_schedule([1.0] * 40)
        assert state.reductions == 4
        assert min(lrs) == pytest.approx(1e-8)
        assert state.at_floor

    def test_lr_always_power_of_ten(self):
        rng = np.random.default_rng(0)
        _, lrs = run_schedule(rng.random(60))
        m = np.round(np.log10(1e-4 / np.array(lrs)))
        np.testing.assert_allclose(lrs, 1e-4 / 10.0 ** m, rtol=1e-12)
        assert np.all(np.diff(lrs) <= 0)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.lr, cfg.l2, cfg.dropout, cfg.max_epochs) == (1024, 1e-4, 1e-4, 0.1, 25)

    def test_roundtrip(self, tmp_path):
        cfg = TrainConfig(batch_size=32, dropout=0.2, deterministic=False)
        (tmp_path / "c.cfg").write_text("# tuned\n" + dump_config(cfg))
        assert load_config(tmp_path / "c.cfg") == cfg

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("learning_rate = 3\n")
        with pytest.raises(ValueError):
            load_config(tmp_path / "c.cfg")


class TestTrainModel:
    def test_zero_epochs(self):
        rng = np.random.default_rng(0)
        tr, trl = toy_features(12, rng)
        va, val = toy_features(6, rng)
        res = train_model(tr, trl, va, val, TrainConfig(max_epochs=0, hidden=4, fc_dim=3, chunk_frames=5), 3)
        assert len(res.log) == 1 and res.best_epoch == 0
        init = nn.init_params(nn.Dims(6, 4, 3), np.random.default_rng(3))
        np.testing.assert_array_equal(res.params.flat, init.flat)

    def test_learns_and_reproducible(self, tmp_path):
        rng = np.random.default_rng(1)
        tr, trl = toy_features(30, rng)
        va, val = toy_features(12, rng)
        cfg = TrainConfig(**{**TINY.__dict__, "max_epochs": 6})
        a = train_model(tr, trl, va, val, cfg, 7)
        b = train_model(tr, trl, va, val, cfg, 7)
        assert repr(a.log) == repr(b.log)  # nan-safe comparison
        np.testing.assert_array_equal(a.params.flat, b.params.flat)
        assert a.log[a.best_epoch].val_auc == max(r.val_auc for r in a.log)
        assert a.log[a.best_epoch].val_auc > 0.9
        write_epoch_log(a.log, tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_auc,lr"
        assert len(lines) == len(a.log) + 1

    def test_stops_at_floor(self):
        rng = np.random.default_rng(2)
        tr, trl = toy_features(9, rng)
        va, val = toy_features(6, rng)
        cfg = TrainConfig(**{**TINY.__dict__, "max_epochs": 50, "lr": 1e-8, "lr_floor": 1e-8,
                             "batches_per_epoch": 1})
        res = train_model(tr, trl, va, val, cfg, 0)
        assert len(res.log) < 51
