"""Datasets: IDX file I/O, procedural glyph tasks, Gaussian-mixture vector tasks,
balanced labeled/unlabeled splits and the JSON manifest the CLI consumes.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Base class for dataset problems (bad files, impossible configs)."""


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


class InsufficientSamplesError(DataError):
    pass


@dataclass
class TaskDataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train_x = np.asarray(self.train_x, dtype=np.float64)
        self.test_x = np.asarray(self.test_x, dtype=np.float64)
        self.train_y = np.asarray(self.train_y, dtype=np.int64)
        self.test_y = np.asarray(self.test_y, dtype=np.int64)
        if self.train_x.shape[1:] != self.test_x.shape[1:]:
            raise DataError(f"{self.name}: train/test input shapes differ")
        if len(self.train_x) != len(self.train_y) or len(self.test_x) != len(self.test_y):
            raise DataError(f"{self.name}: inputs and labels have different lengths")
        for arr in (self.train_x, self.test_x):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DataError(f"{self.name}: inputs must lie in [0, 1]")
        for arr in (self.train_y, self.test_y):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise DataError(f"{self.name}: labels must lie in [0, {self.n_classes})")

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train_x.shape[1:])


@dataclass
class SemiSplit:
    labeled: np.ndarray
    unlabeled: np.ndarray


# ------------------------------------------------------------------ IDX

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.newbyteorder("="): code for code, dt in _IDX_TYPES.items()}


def parse_idx_header(header: bytes) -> tuple[np.dtype, int]:
    """Decode the 4-byte magic into (element dtype, number of dimensions)."""
    if len(header) < 4:
        raise IdxTruncatedError("IDX header shorter than 4 bytes")
    zero, code, ndim = struct.unpack(">HBB", header[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise IdxMagicError(f"bad IDX magic {header[:4].hex()}")
    return _IDX_TYPES[code], ndim


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path) -> np.ndarray:
    """Read any IDX file (optionally gzip-compressed) into an array of its native type."""
    raw = _read_bytes(path)
    dtype, ndim = parse_idx_header(raw)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: header needs {head} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - head < need:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - head} bytes, header promises {need}")
    data = np.frombuffer(raw, dtype=dtype, count=need // dtype.itemsize, offset=head)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {array.dtype} has no IDX encoding")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """MNIST-style pair: (N, rows, cols, 1) images in [0, 1] and integer labels."""
    raw = _read_bytes(images_path)
    if raw[:4] != b"\x00\x00\x08\x03":
        raise IdxMagicError(f"{images_path}: expected image magic 00000803, got {raw[:4].hex()}")
    raw_l = _read_bytes(labels_path)
    if raw_l[:4] != b"\x00\x00\x08\x01":
        raise IdxMagicError(f"{labels_path}: expected label magic 00000801, got {raw_l[:4].hex()}")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return images[..., None].astype(np.float64) / 255.0, labels.astype(np.int64)


def to_rgb32(x: np.ndarray) -> np.ndarray:
    """Zero-pad (N, H, W, 1) images to 32x32 and replicate the channel three times."""
    n, h, w, c = x.shape
    if c != 1 or h > 32 or w > 32:
        raise DataError(f"cannot pad shape {x.shape} to 32x32x3")
    top, left = (32 - h) // 2, (32 - w) // 2
    out = np.zeros((n, 32, 32, 3), dtype=x.dtype)
    out[:, top:top + h, left:left + w, :] = x
    return out


# ------------------------------------------------------------------ glyphs

# Strokes on a 5x5 lattice (x right, y down), one entry per capital letter.
_STROKES = {
    "A": [(0, 4, 2, 0), (2, 0, 4, 4), (1, 2, 3, 2)],
    "B": [(0, 0, 0, 4), (0, 0, 3, 0), (3, 0, 4, 1), (4, 1, 3, 2), (0, 2, 3, 2), (3, 2, 4, 3), (4, 3, 3, 4), (3, 4, 0, 4)],
    "C": [(4, 0, 0, 0), (0, 0, 0, 4), (0, 4, 4, 4)],
    "D": [(0, 0, 0, 4), (0, 0, 2, 0), (2, 0, 4, 2), (4, 2, 2, 4), (2, 4, 0, 4)],
    "E": [(4, 0, 0, 0), (0, 0, 0, 4), (0, 4, 4, 4), (0, 2, 3, 2)],
    "F": [(0, 0, 0, 4), (0, 0, 4, 0), (0, 2, 3, 2)],
    "G": [(4, 0, 0, 0), (0, 0, 0, 4), (0, 4, 4, 4), (4, 4, 4, 2), (4, 2, 2, 2)],
    "H": [(0, 0, 0, 4), (4, 0, 4, 4), (0, 2, 4, 2)],
    "I": [(0, 0, 4, 0), (2, 0, 2, 4), (0, 4, 4, 4)],
    "J": [(0, 0, 4, 0), (3, 0, 3, 4), (3, 4, 0, 4), (0, 4, 0, 3)],
    "K": [(0, 0, 0, 4), (4, 0, 0, 2), (0, 2, 4, 4)],
    "L": [(0, 0, 0, 4), (0, 4, 4, 4)],
    "M": [(0, 4, 0, 0), (0, 0, 2, 2), (2, 2, 4, 0), (4, 0, 4, 4)],
    "N": [(0, 4, 0, 0), (0, 0, 4, 4), (4, 4, 4, 0)],
    "O": [(0, 0, 4, 0), (4, 0, 4, 4), (4, 4, 0, 4), (0, 4, 0, 0)],
    "P": [(0, 0, 0, 4), (0, 0, 4, 0), (4, 0, 4, 2), (4, 2, 0, 2)],
    "Q": [(0, 0, 4, 0), (4, 0, 4, 4), (4, 4, 0, 4), (0, 4, 0, 0), (2, 2, 4, 4)],
    "R": [(0, 0, 0, 4), (0, 0, 4, 0), (4, 0, 4, 2), (4, 2, 0, 2), (0, 2, 4, 4)],
    "S": [(4, 0, 0, 0), (0, 0, 0, 2), (0, 2, 4, 2), (4, 2, 4, 4), (4, 4, 0, 4)],
    "T": [(0, 0, 4, 0), (2, 0, 2, 4)],
    "U": [(0, 0, 0, 4), (0, 4, 4, 4), (4, 4, 4, 0)],
    "V": [(0, 0, 2, 4), (2, 4, 4, 0)],
    "W": [(0, 0, 0, 4), (0, 4, 2, 2), (2, 2, 4, 4), (4, 4, 4, 0)],
    "X": [(0, 0, 4, 4), (4, 0, 0, 4)],
    "Y": [(0, 0, 2, 2), (4, 0, 2, 2), (2, 2, 2, 4)],
    "Z": [(0, 0, 4, 0), (4, 0, 0, 4), (0, 4, 4, 4)],
}
ALPHABET = "".join(sorted(_STROKES))


def glyph_template(letter: str, size: int = 8) -> np.ndarray:
    """Rasterize one letter into a binary ``size x size`` image with a one-pixel empty border."""
    if size < 6:
        raise DataError("glyph size must be at least 6")
    img = np.zeros((size, size))
    scale = (size - 3) / 4.0
    for x0, y0, x1, y1 in _STROKES[letter]:
        steps = 4 * size
        t = np.linspace(0.0, 1.0, steps)
        cols = np.rint(1 + scale * (x0 + t * (x1 - x0))).astype(int)
        rows = np.rint(1 + scale * (y0 + t * (y1 - y0))).astype(int)
        img[rows, cols] = 1.0
    return img


def _task_rng(seed: int, task_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(task_index)]))


def _glyph_samples(template: np.ndarray, count: int, noise: float, jitter: bool,
                   rng: np.random.Generator) -> np.ndarray:
    out = np.repeat(template[None], count, axis=0)
    if jitter:
        shifts = rng.integers(-1, 2, size=(count, 2))
        for i, (dy, dx) in enumerate(shifts):
            # the border row/column is empty, so rolling never wraps ink around
            out[i] = np.roll(out[i], (dy, dx), axis=(0, 1))
    if noise > 0:
        flips = rng.uniform(size=out.shape) < noise
        out = np.abs(out - flips)
    return out


def gen_glyph_tasks(task_count: int, classes_per_task: int, samples_per_class: int, size: int = 8,
                    noise: float = 0.05, seed: int = 0, test_per_class: int | None = None,
                    jitter: bool | None = None) -> list[TaskDataset]:
    """Disjoint-alphabet glyph tasks; labels run 0..classes_per_task-1 within every task.

    Jitter (a random one-pixel shift) is on whenever ``noise > 0`` unless set
    explicitly, so ``noise=0`` reproduces the templates exactly.
    """
    if task_count * classes_per_task > len(ALPHABET):
        raise DataError(f"{task_count} tasks x {classes_per_task} classes exceeds the {len(ALPHABET)}-glyph alphabet")
    if not 0.0 <= noise <= 1.0:
        raise DataError("noise must lie in [0, 1]")
    if samples_per_class < 1:
        raise DataError("samples_per_class must be positive")
    if size < 6:
        raise DataError("glyph size must be at least 6")
    test_per_class = max(1, samples_per_class // 5) if test_per_class is None else test_per_class
    jitter = noise > 0 if jitter is None else jitter
    tasks = []
    for t in range(task_count):
        rng = _task_rng(seed, t)
        letters = ALPHABET[t * classes_per_task:(t + 1) * classes_per_task]
        xs, ys, txs, tys = [], [], [], []
        for label, letter in enumerate(letters):
            tmpl = glyph_template(letter, size)
            xs.append(_glyph_samples(tmpl, samples_per_class, noise, jitter, rng))
            txs.append(_glyph_samples(tmpl, test_per_class, noise, jitter, rng))
            ys.append(np.full(samples_per_class, label))
            tys.append(np.full(test_per_class, label))
        order = rng.permutation(samples_per_class * classes_per_task)
        train_x = np.concatenate(xs)[order][..., None]
        train_y = np.concatenate(ys)[order]
        meta = {"generator": "glyph", "letters": letters, "task_index": t, "size": size, "noise": noise}
        tasks.append(TaskDataset(f"glyph-{letters}", train_x, train_y, np.concatenate(txs)[..., None],
                                 np.concatenate(tys), classes_per_task, meta))
    return tasks


def nearest_template_predict(x: np.ndarray, letters: str, size: int = 8, max_shift: int = 1) -> np.ndarray:
    """Label of the template (over all shifts up to ``max_shift``) with smallest Hamming distance."""
    flat = x.reshape(len(x), -1)
    best = np.full(len(x), np.inf)
    pred = np.zeros(len(x), dtype=np.int64)
    for label, letter in enumerate(letters):
        tmpl = glyph_template(letter, size)
        for dy in range(-max_shift, max_shift + 1):
            for dx in range(-max_shift, max_shift + 1):
                t = np.roll(tmpl, (dy, dx), axis=(0, 1)).ravel()
                dist = np.abs(flat - t).sum(axis=1)
                better = dist < best
                best[better] = dist[better]
                pred[better] = label
    return pred


# ------------------------------------------------------------------ Gaussian mixtures

def _separated_means(rng: np.random.Generator, components: int, dim: int, separation: float) -> np.ndarray:
    side = 2.0 * separation * max(1.0, components ** (1.0 / dim))
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < components:
        cand = rng.uniform(0.0, side, size=dim)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)
        tries += 1
        if tries % 1000 == 0:
            side *= 1.5
    return np.array(means)


def gen_gaussian_mixture_tasks(task_count: int, components: int, dim: int, separation: float, n: int,
                               seed: int = 0, n_test: int | None = None) -> list[TaskDataset]:
    """Unit-covariance mixtures with pairwise mean distance >= ``separation``.

    Inputs are rescaled per dimension to [0, 1]; ``meta`` keeps the raw means
    and the affine map so the Bayes classifier can be evaluated exactly.
    """
    if separation <= 0:
        raise DataError("separation must be positive")
    if n < components:
        raise DataError(f"n={n} is smaller than components={components}")
    n_test = max(components, n // 4) if n_test is None else n_test
    tasks = []
    for t in range(task_count):
        rng = _task_rng(seed, t)
        means = _separated_means(rng, components, dim, separation)
        y = rng.integers(components, size=n + n_test)
        raw = means[y] + rng.standard_normal((n + n_test, dim))
        lo, hi = raw.min(axis=0), raw.max(axis=0)
        scale = np.where(hi > lo, hi - lo, 1.0)
        x = np.clip((raw - lo) / scale, 0.0, 1.0)
        meta = {"generator": "gaussian", "task_index": t, "means": means.tolist(),
                "offset": lo.tolist(), "scale": scale.tolist()}
        tasks.append(TaskDataset(f"gmm-{t}", x[:n], y[:n], x[n:], y[n:], components, meta))
    return tasks


def gaussian_bayes_predict(ds: TaskDataset, x: np.ndarray) -> np.ndarray:
    """Bayes-optimal labels for equal-weight unit-covariance components: the nearest raw mean."""
    means = np.asarray(ds.meta["means"])
    raw = x * np.asarray(ds.meta["scale"]) + np.asarray(ds.meta["offset"])
    d2 = ((raw[:, None, :] - means[None]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


# ------------------------------------------------------------------ semi-supervised split

def split_semi(ds: TaskDataset, labeled_per_class: int, seed: int = 0) -> SemiSplit:
    """Exactly ``labeled_per_class`` labeled indices per class; everything else unlabeled."""
    rng = np.random.default_rng(seed)
    labeled = []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.train_y == c)
        if len(idx) < labeled_per_class:
            raise InsufficientSamplesError(f"class {c} has {len(idx)} samples, need {labeled_per_class}")
        labeled.append(rng.choice(idx, size=labeled_per_class, replace=False))
    lab = np.sort(np.concatenate(labeled)) if labeled else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(ds.train_y), dtype=bool)
    mask[lab] = False
    return SemiSplit(lab.astype(np.int64), np.flatnonzero(mask))


# ------------------------------------------------------------------ manifests

MANIFEST_VERSION = 1
_GENERATORS = {"glyph": gen_glyph_tasks, "gaussian": gen_gaussian_mixture_tasks}


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_manifest(path) -> list[TaskDataset]:
    """Load every task listed in a manifest, in order."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest {path} not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if doc.get("version") != MANIFEST_VERSION or not isinstance(doc.get("tasks"), list):
        raise DataError(f"manifest {path} lacks version {MANIFEST_VERSION} or a task list")
    base = path.parent
    cache: dict[str, list[TaskDataset]] = {}
    tasks = []
    for entry in doc["tasks"]:
        kind = entry.get("kind")
        if kind == "idx":
            files = {k: _resolve(base, entry[k]) for k in ("train_images", "train_labels", "test_images", "test_labels")}
            for f in files.values():
                if not f.exists():
                    raise DataError(f"manifest entry {entry.get('name')!r}: missing file {f}")
            tx, ty = load_idx(files["train_images"], files["train_labels"])
            vx, vy = load_idx(files["test_images"], files["test_labels"])
            if entry.get("pad32", False):
                tx, vx = to_rgb32(tx), to_rgb32(vx)
            n_classes = int(entry.get("n_classes", int(max(ty.max(), vy.max())) + 1))
            tasks.append(TaskDataset(entry.get("name", files["train_images"].stem), tx, ty, vx, vy, n_classes,
                                     {"source": "idx"}))
        elif kind in _GENERATORS:
            params = dict(entry.get("params", {}))
            key = json.dumps([kind, params], sort_keys=True)
            if key not in cache:
                try:
                    cache[key] = _GENERATORS[kind](**params)
                except TypeError as exc:
                    raise DataError(f"bad {kind} generator parameters: {exc}") from None
            idx = int(entry.get("task_index", 0))
            if not 0 <= idx < len(cache[key]):
                raise DataError(f"task_index {idx} out of range for {kind} generator")
            tasks.append(cache[key][idx])
        else:
            raise DataError(f"unknown manifest task kind {kind!r}")
    if not tasks:
        raise DataError(f"manifest {path} lists no tasks")
    return tasks


def write_manifest(path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps({"version": MANIFEST_VERSION, "tasks": entries}, indent=2) + "\n")


def materialize_idx(tasks: list[TaskDataset], out_dir) -> list[dict]:
    """Write image tasks as IDX files and return the matching manifest entries.

    Only exact multiples of 1/255 survive the unsigned-byte encoding, which
    holds for the binary glyph data.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ds in enumerate(tasks):
        if ds.train_x.ndim != 4 or ds.train_x.shape[-1] != 1:
            raise DataError(f"{ds.name}: only single-channel image tasks can be written as IDX")
        names = {}
        for split, x, y in (("train", ds.train_x, ds.train_y), ("test", ds.test_x, ds.test_y)):
            img = np.rint(x[..., 0] * 255.0)
            if not np.allclose(img / 255.0, x[..., 0], atol=0, rtol=0):
                raise DataError(f"{ds.name}: pixel values are not representable as bytes")
            stem = f"task{i}-{split}"
            write_idx(out_dir / f"{stem}-images.idx3-ubyte", img.astype(np.uint8))
            write_idx(out_dir / f"{stem}-labels.idx1-ubyte", y.astype(np.uint8))
            names[f"{split}_images"] = f"{stem}-images.idx3-ubyte"
            names[f"{split}_labels"] = f"{stem}-labels.idx1-ubyte"
        entries.append({"name": ds.name, "kind": "idx", "n_classes": ds.n_classes, **names})
    return entries

