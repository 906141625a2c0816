import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltsnet.data import (
    ALPHABET,
    DataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    InsufficientSamplesError,
    TaskDataset,
    gaussian_bayes_predict,
    gen_gaussian_mixture_tasks,
    gen_glyph_tasks,
    glyph_template,
    load_idx,
    load_manifest,
    materialize_idx,
    nearest_template_predict,
    parse_idx_header,
    read_idx,
    split_semi,
    to_rgb32,
    write_idx,
    write_manifest,
)


def reference_idx(raw: bytes):
    """Minimal independent IDX decoder for unsigned-byte files."""
    assert raw[0] == 0 and raw[1] == 0 and raw[2] == 0x08
    ndim = raw[3]
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    payload = list(raw[4 + 4 * ndim:])
    return dims, payload


def idx_bytes(magic, dims, payload):
    return bytes(magic) + b"".join(struct.pack(">I", d) for d in dims) + bytes(payload)


class TestIdx:
    def test_header_unsigned_byte(self):
        dtype, ndim = parse_idx_header(bytes([0, 0, 8, 3]))
        assert dtype == np.dtype(">u1") and ndim == 3

    def test_label_file(self, tmp_path):
        p = tmp_path / "l.idx"
        p.write_bytes(idx_bytes([0, 0, 8, 1], [10], range(10)))
        np.testing.assert_array_equal(read_idx(p), np.arange(10))

    def test_images_match_reference(self, tmp_path):
        rng = np.random.default_rng(0)
        pix = rng.integers(0, 256, size=3 * 4 * 5).tolist()
        raw = idx_bytes([0, 0, 8, 3], [3, 4, 5], pix)
        (tmp_path / "i").write_bytes(raw)
        (tmp_path / "l").write_bytes(idx_bytes([0, 0, 8, 1], [3], [1, 2, 0]))
        x, y = load_idx(tmp_path / "i", tmp_path / "l")
        dims, payload = reference_idx(raw)
        assert list(x.shape) == dims + [1]
        np.testing.assert_array_equal(x.ravel() * 255.0, payload)
        np.testing.assert_array_equal(y, [1, 2, 0])

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "i").write_bytes(idx_bytes([0, 0, 8, 3], [100, 1, 1], [0] * 100))
        (tmp_path / "l").write_bytes(idx_bytes([0, 0, 8, 1], [99], [0] * 99))
        with pytest.raises(IdxCountMismatchError):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "i").write_bytes(idx_bytes([0, 0, 8, 1], [1], [0]))
        (tmp_path / "l").write_bytes(idx_bytes([0, 0, 8, 1], [1], [0]))
        with pytest.raises(IdxMagicError):
            load_idx(tmp_path / "i", tmp_path / "l")
        with pytest.raises(IdxMagicError):
            parse_idx_header(bytes([1, 0, 8, 1]))

    def test_truncated(self, tmp_path):
        p = tmp_path / "t"
        p.write_bytes(idx_bytes([0, 0, 8, 1], [10], range(9)))
        with pytest.raises(IdxTruncatedError):
            read_idx(p)
        p.write_bytes(bytes([0, 0, 8, 3, 0, 0]))
        with pytest.raises(IdxTruncatedError):
            read_idx(p)

    def test_errors_are_distinct(self):
        kinds = {IdxMagicError, IdxTruncatedError, IdxCountMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, DataError) for k in kinds)

    def test_gzip(self, tmp_path):
        p = tmp_path / "g.gz"
        p.write_bytes(gzip.compress(idx_bytes([0, 0, 8, 1], [3], [7, 8, 9])))
        np.testing.assert_array_equal(read_idx(p), [7, 8, 9])

    @given(st.sampled_from([np.uint8, np.int8, np.int16, np.int32, np.float32, np.float64]),
           st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, tmp_path_factory, dtype, shape, seed):
        arr = (np.random.default_rng(seed).uniform(-100, 100, size=shape)).astype(dtype)
        if np.issubdtype(dtype, np.unsignedinteger):
            arr = np.abs(arr)
        p = tmp_path_factory.mktemp("rt") / "a.idx"
        write_idx(p, arr)
        back = read_idx(p)
        assert back.dtype == arr.dtype and np.array_equal(back, arr)


class TestGlyphs:
    def test_twenty_six_templates(self):
        assert len(ALPHABET) == 26
        flat = {glyph_template(c).tobytes() for c in ALPHABET}
        assert len(flat) == 26

    def test_template_border_empty(self):
        for c in ALPHABET:
            t = glyph_template(c, 8)
            assert t[0].sum() == t[-1].sum() == t[:, 0].sum() == t[:, -1].sum() == 0

    def test_noise_free_equals_template(self):
        for ds in gen_glyph_tasks(2, 3, 5, noise=0.0, seed=1):
            for x, y in zip(ds.train_x, ds.train_y):
                np.testing.assert_array_equal(x[..., 0], glyph_template(ds.meta["letters"][y]))

    def test_deterministic(self):
        a, b = gen_glyph_tasks(2, 3, 10, seed=4), gen_glyph_tasks(2, 3, 10, seed=4)
        for u, v in zip(a, b):
            assert np.array_equal(u.train_x, v.train_x) and np.array_equal(u.test_y, v.test_y)

    def test_alphabets_disjoint(self):
        tasks = gen_glyph_tasks(5, 5, 1, seed=0)
        letters = [set(t.meta["letters"]) for t in tasks]
        assert all(not (a & b) for i, a in enumerate(letters) for b in letters[i + 1:])

    def test_nearest_template_oracle(self):
        for ds in gen_glyph_tasks(2, 5, 200, size=8, noise=0.05, seed=0):
            pred = nearest_template_predict(ds.train_x, ds.meta["letters"])
            assert np.mean(pred == ds.train_y) >= 0.99

    def test_alphabet_exhausted(self):
        with pytest.raises(DataError):
            gen_glyph_tasks(3, 9, 1)

    def test_size_minimum(self):
        with pytest.raises(DataError):
            gen_glyph_tasks(1, 2, 1, size=5)


class TestGaussian:
    def test_bayes_accuracy(self):
        (ds,) = gen_gaussian_mixture_tasks(1, 3, 2, 10.0, 20_000, seed=0)
        assert np.mean(gaussian_bayes_predict(ds, ds.train_x) == ds.train_y) >= 0.999

    def test_means_separated(self):
        for ds in gen_gaussian_mixture_tasks(3, 5, 2, 4.0, 10, seed=2):
            m = np.asarray(ds.meta["means"])
            d = np.linalg.norm(m[:, None] - m[None], axis=-1)
            assert d[~np.eye(5, dtype=bool)].min() >= 4.0

    def test_tasks_differ(self):
        a, b = gen_gaussian_mixture_tasks(2, 3, 2, 4.0, 10, seed=0)
        assert not np.allclose(a.meta["means"], b.meta["means"])

    def test_label_uniformity(self):
        n, k = 30_000, 3
        (ds,) = gen_gaussian_mixture_tasks(1, k, 2, 4.0, n, seed=5)
        counts = np.bincount(ds.train_y, minlength=k)
        sigma = np.sqrt(n * (1 / k) * (1 - 1 / k))
        assert np.all(np.abs(counts - n / k) <= 3 * sigma)

    def test_errors(self):
        with pytest.raises(DataError):
            gen_gaussian_mixture_tasks(1, 3, 2, 0.0, 10)
        with pytest.raises(DataError):
            gen_gaussian_mixture_tasks(1, 3, 2, 1.0, 2)


def test_generators_fuzz():
    rng = np.random.default_rng(0)
    for i in range(1000):
        if i % 2:
            tasks = gen_glyph_tasks(int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 4)),
                                    size=int(rng.integers(6, 12)), noise=float(rng.uniform()),
                                    seed=int(rng.integers(1 << 30)))
        else:
            c = int(rng.integers(1, 5))
            tasks = gen_gaussian_mixture_tasks(int(rng.integers(1, 3)), c, int(rng.integers(1, 4)),
                                               float(rng.uniform(0.1, 10)), c + int(rng.integers(0, 20)),
                                               seed=int(rng.integers(1 << 30)))
        for ds in tasks:
            for x, y in ((ds.train_x, ds.train_y), (ds.test_x, ds.test_y)):
                assert x.min() >= 0.0 and x.max() <= 1.0
                assert y.min() >= 0 and y.max() < ds.n_classes


class TestSplitSemi:
    def _ds(self, per_class=120, classes=10):
        y = np.repeat(np.arange(classes), per_class)
        return TaskDataset("t", np.zeros((len(y), 1)), y, np.zeros((1, 1)), [0], classes)

    def test_thousand_labels(self):
        ds = self._ds()
        split = split_semi(ds, 100, seed=0)
        assert len(split.labeled) == 1000
        np.testing.assert_array_equal(np.bincount(ds.train_y[split.labeled]), np.full(10, 100))

    def test_partition(self):
        ds = self._ds(30, 3)
        split = split_semi(ds, 7, seed=1)
        assert not set(split.labeled) & set(split.unlabeled)
        assert sorted(np.concatenate([split.labeled, split.unlabeled])) == list(range(90))

    def test_full_class(self):
        assert len(split_semi(self._ds(5, 2), 5).unlabeled) == 0

    def test_deterministic(self):
        ds = self._ds()
        np.testing.assert_array_equal(split_semi(ds, 10, 3).labeled, split_semi(ds, 10, 3).labeled)

    def test_insufficient(self):
        with pytest.raises(InsufficientSamplesError):
            split_semi(self._ds(5, 2), 6)


class TestTaskDataset:
    def test_range_checked(self):
        with pytest.raises(DataError):
            TaskDataset("t", [[1.5]], [0], [[0.0]], [0], 1)
        with pytest.raises(DataError):
            TaskDataset("t", [[0.5]], [2], [[0.0]], [0], 2)

    def test_rgb32(self):
        x = np.ones((2, 28, 28, 1))
        out = to_rgb32(x)
        assert out.shape == (2, 32, 32, 3)
        assert out.sum() == 3 * 2 * 28 * 28 and out[:, :2].sum() == 0


class TestManifest:
    def test_generator_entries(self, tmp_path):
        path = tmp_path / "m.json"
        params = {"task_count": 2, "classes_per_task": 2, "samples_per_class": 3, "seed": 1}
        write_manifest(path, [{"kind": "glyph", "params": params, "task_index": i} for i in (1, 0)])
        a, b = load_manifest(path)
        direct = gen_glyph_tasks(**params)
        assert np.array_equal(a.train_x, direct[1].train_x)
        assert np.array_equal(b.train_x, direct[0].train_x)

    def test_idx_round_trip(self, tmp_path):
        tasks = gen_glyph_tasks(2, 2, 4, seed=0)
        entries = materialize_idx(tasks, tmp_path)
        write_manifest(tmp_path / "m.json", entries)
        for orig, back in zip(tasks, load_manifest(tmp_path / "m.json")):
            assert np.array_equal(orig.train_x, back.train_x)
            assert np.array_equal(orig.test_y, back.test_y)
            assert back.n_classes == orig.n_classes

    @pytest.mark.parametrize("doc", [{"version": 2, "tasks": []}, {"version": 1, "tasks": []},
                                     {"version": 1, "tasks": [{"kind": "nope"}]},
                                     {"version": 1, "tasks": [{"kind": "idx", "train_images": "a",
                                                               "train_labels": "b", "test_images": "c",
                                                               "test_labels": "d"}]}])
    def test_bad_manifests(self, tmp_path, doc):
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_manifest(p)

    def test_missing_and_invalid(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(DataError):
            load_manifest(tmp_path / "bad.json")
