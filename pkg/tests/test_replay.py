import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _toys import toy_student, toy_teacher
from ltsnet import diffcore as dc
from ltsnet.data import gen_glyph_tasks
from ltsnet.replay import (
    LOG_COLUMNS,
    MetricsLog,
    MissingSnapshotError,
    ReplayBatch,
    TaskSequence,
    TrainConfig,
    lifelong_train,
    mix_batch,
    pseudo_label_batch,
)
from ltsnet.student import StudentConfig, loss_supervised
from ltsnet.teacher import TeacherConfig, task_switch


def fresh_batch(n, k=2, dim=2):
    return ReplayBatch(np.full((n, dim), 0.5), np.zeros(n, int), np.full(n, k - 1), np.zeros(n, bool))


def tiny_setup(tasks=2, r=0.5, epochs=2, mode="supervised", **train_kw):
    data = gen_glyph_tasks(tasks, 2, 12, size=8, noise=0.05, seed=0)
    s_cfg = StudentConfig(input_shape=(8, 8, 1), d_z=2, n_classes=2, k_max=tasks, mode=mode, arch="mlp",
                          hidden=(8,), adversary_hidden=4)
    t_cfg = TeacherConfig(data_shape=(8, 8, 1), z_dim=4, k_max=tasks, hidden=(8,), critic_hidden=(8,))
    tr = TrainConfig(epochs=epochs, batch_size=8, r=r, **train_kw)
    return TaskSequence(data, r), s_cfg, t_cfg, tr


def tiny_run(seed=0, mode="supervised", **kw):
    seq, s_cfg, t_cfg, tr = tiny_setup(mode=mode, **kw)
    return lifelong_train(seq, mode, s_cfg, t_cfg, tr, seed=seed)


@pytest.fixture(scope="module")
def snapshot_and_labeler():
    teacher = toy_teacher()
    return task_switch(teacher, 1), toy_student()


class TestMixBatch:
    def test_first_task_all_fresh(self, snapshot_and_labeler):
        snap, student = snapshot_and_labeler
        out = mix_batch(snap, student, fresh_batch(50, k=1), 0.5, np.random.default_rng(0), k=1)
        assert not out.generated.any()

    def test_fresh_fraction(self, snapshot_and_labeler):
        snap, student = snapshot_and_labeler
        out = mix_batch(snap, student, fresh_batch(100_000), 0.5, np.random.default_rng(0), k=2)
        assert 0.49 <= 1.0 - out.generated.mean() <= 0.51

    def test_r_one_returns_fresh(self, snapshot_and_labeler):
        snap, student = snapshot_and_labeler
        fresh = fresh_batch(20)
        assert mix_batch(snap, student, fresh, 1.0, np.random.default_rng(0), k=2) is fresh
        assert mix_batch(None, None, fresh, 1.0, np.random.default_rng(0), k=2) is fresh

    def test_missing_snapshot(self):
        with pytest.raises(MissingSnapshotError):
            mix_batch(None, None, fresh_batch(4), 0.5, np.random.default_rng(0), k=2)

    def test_generated_fields(self, snapshot_and_labeler):
        snap, student = snapshot_and_labeler
        fresh = fresh_batch(2000, k=2)
        out = mix_batch(snap, student, fresh, 0.5, np.random.default_rng(1), k=2)
        gen = out.generated
        assert np.all(out.d[gen] == 0)
        assert np.all(out.d[~gen] == 1)
        assert np.all((out.y >= 0) & (out.y < 2))
        assert np.all(out.x[~gen] == 0.5)
        assert np.all((out.x[gen] > 0) & (out.x[gen] < 1))
        # the fresh batch is not modified in place
        assert not fresh.generated.any() and np.all(fresh.x == 0.5)

    def test_unlabeled_generation(self, snapshot_and_labeler):
        snap, _ = snapshot_and_labeler
        out = mix_batch(snap, None, fresh_batch(200), 0.5, np.random.default_rng(2), k=2, label=False)
        assert np.all(out.y[out.generated] == -1)

    @given(st.integers(2, 5), st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_replayed_domains_are_past_tasks(self, k, seed):
        teacher = toy_teacher(k_max=5)
        snap = task_switch(teacher, k - 1)
        out = mix_batch(snap, None, fresh_batch(300, k=k), 0.3, np.random.default_rng(seed), k=k, label=False)
        assert np.all(out.d[out.generated] < k - 1 + 1e-9)
        assert np.all(out.d[out.generated] >= 0)
        assert np.all(out.d[~out.generated] == k - 1)

    def test_ratio_over_epoch_converges(self, snapshot_and_labeler):
        snap, student = snapshot_and_labeler
        rng = np.random.default_rng(3)
        r, n_batches, bs = 0.3, 200, 64
        fresh = sum(int((~mix_batch(snap, student, fresh_batch(bs), r, rng, k=2).generated).sum())
                    for _ in range(n_batches))
        n = n_batches * bs
        assert abs(fresh / n - r) < 3 * np.sqrt(r * (1 - r) / n)


class TestPseudoLabels:
    def test_memorized_sample_gets_its_label(self):
        rng = np.random.default_rng(0)
        m = toy_student(input_shape=(4,), n_classes=3, hidden=(16,))
        x = rng.uniform(size=(6, 4))
        y = np.array([0, 1, 2, 0, 1, 2])
        names = [n for n in m.store if not n.startswith("zeta")]
        for _ in range(400):
            m.store.zero_grad()
            loss_supervised(m, x, y, np.zeros(6, int), rng).total.backward()
            dc.adam_step(m.store, 2e-2, names=names)
        np.testing.assert_array_equal(pseudo_label_batch(m, x), y)

    def test_tie_takes_lowest_index(self):
        m = toy_student()
        last = m.enc_s.layers[-1]
        m.store[last.weight_name].data[...] = 0.0
        m.store[last.prefix + ".b"].data[...] = 0.0
        np.testing.assert_array_equal(pseudo_label_batch(m, np.random.default_rng(0).uniform(size=(5, 2))), 0)

    def test_labels_in_range(self):
        m = toy_student(n_classes=2)
        labels = pseudo_label_batch(m, np.random.default_rng(0).uniform(size=(100, 2)))
        assert np.all((labels >= 0) & (labels < 2))


class TestTaskSequence:
    def test_empty(self):
        with pytest.raises(ValueError):
            TaskSequence([])

    def test_r_range(self):
        tasks = gen_glyph_tasks(1, 2, 2, seed=0)
        with pytest.raises(ValueError):
            TaskSequence(tasks, r=0.0)

    def test_shapes_must_agree(self):
        a = gen_glyph_tasks(1, 2, 2, size=8, seed=0)
        b = gen_glyph_tasks(1, 2, 2, size=10, seed=0)
        with pytest.raises(ValueError):
            TaskSequence(a + b)


class TestMetricsLog:
    def test_unknown_column(self):
        with pytest.raises(KeyError):
            MetricsLog().append(kind="eval", bogus=1)

    def test_csv_round_trip(self, tmp_path):
        log = MetricsLog()
        log.append(kind="epoch", task_index=1, epoch=1, step=3, loss_total=0.1 + 0.2)
        log.append(kind="eval", task_index=1, epoch=1, step=3, eval_task=1, accuracy=50.0)
        path = tmp_path / "m.csv"
        log.to_csv(path)
        rows = MetricsLog.read_csv(path)
        assert list(rows[0]) == list(LOG_COLUMNS)
        assert float(rows[0]["loss_total"]) == 0.1 + 0.2
        assert rows[0]["accuracy"] == ""
        assert log.accuracy_after(1, 1) == 50.0

    def test_missing_accuracy(self):
        with pytest.raises(KeyError):
            MetricsLog().accuracy_after(1, 1)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(lr=0.0), dict(r=1.5), dict(teacher_steps=0),
                                    dict(labeled_per_class=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestLifelongTrain:
    def test_deterministic(self):
        runs = [tiny_run(seed=3).log.rows for _ in range(2)]
        assert runs[0] == runs[1]

    def test_log_shape(self):
        seq, s, t, tr = tiny_setup(epochs=2)
        res = lifelong_train(seq, "supervised", s, t, tr, seed=0)
        epochs = [r for r in res.log.rows if r["kind"] == "epoch"]
        evals = [r for r in res.log.rows if r["kind"] == "eval"]
        assert len(epochs) == 2 * 2
        # task 1 is evaluated during both tasks, task 2 only during its own
        assert len(evals) == 2 + 2 * 2
        assert [s.k for s in res.snapshots] == [1, 2]

    def test_single_task_never_replays(self):
        results = [tiny_run(seed=5, tasks=1, r=r) for r in (0.5, 1.0)]
        a, b = (res.student.store for res in results)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a)

    def test_r_one_is_sequential_finetuning(self):
        seq, s, t, tr = tiny_setup(r=1.0)
        res = lifelong_train(seq, "supervised", s, t, tr, seed=0)
        assert res.snapshots == []
        assert all(r["teacher_critic_loss"] is None for r in res.log.rows)

    def test_test_sets_untouched(self):
        seq, s, t, tr = tiny_setup()
        before = [ds.test_x.copy() for ds in seq.tasks]
        lifelong_train(seq, "supervised", s, t, tr, seed=0)
        assert all(np.array_equal(b, ds.test_x) for b, ds in zip(before, seq.tasks))

    def test_semi_and_unsupervised_run(self):
        for mode, kw in (("semi", dict(labeled_per_class=3)), ("unsupervised", {})):
            seq, s, t, tr = tiny_setup(mode=mode, epochs=1, nll_samples=2, **kw)
            res = lifelong_train(seq, mode, s, t, tr, seed=0)
            evals = [r for r in res.log.rows if r["kind"] == "eval"]
            assert all(np.isfinite(r["nll"]) for r in evals)
            if mode == "unsupervised":
                assert all(r["accuracy"] is None for r in evals)

    def test_semi_needs_labels(self):
        seq, s, t, tr = tiny_setup(mode="semi", epochs=1)
        with pytest.raises(ValueError):
            lifelong_train(seq, "semi", s, t, tr, seed=0)

    def test_mode_mismatch(self):
        seq, s, t, tr = tiny_setup()
        with pytest.raises(ValueError):
            lifelong_train(seq, "unsupervised", s, t, tr)

    def test_k_max_must_cover_tasks(self):
        seq, _, t, tr = tiny_setup(tasks=2)
        small = StudentConfig(input_shape=(8, 8, 1), d_z=2, n_classes=2, k_max=1, arch="mlp", hidden=(8,))
        with pytest.raises(ValueError):
            lifelong_train(seq, "supervised", small, t, tr)
