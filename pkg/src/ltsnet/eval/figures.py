"""Latent traversals, cross-domain interpolations and binary PGM/PPM output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..student import StudentModel, student_decode, student_infer


def _point_estimates(student: StudentModel, x: np.ndarray):
    """Posterior mean of z plus one-hot argmax estimates of s and delta."""
    cfg = student.config
    bundle = student_infer(student, x)
    mu = bundle.z_post.mu.data
    delta = np.eye(cfg.k_max)[np.argmax(bundle.delta_probs, axis=-1)]
    if cfg.mode == "unsupervised":
        s = np.zeros((len(x), cfg.n_classes))
    else:
        s = np.eye(cfg.n_classes)[np.argmax(bundle.s_probs, axis=-1)]
    return mu, s, delta


def _as_images(student: StudentModel, flat: np.ndarray) -> np.ndarray:
    shape = student.config.input_shape
    if len(shape) == 1:
        return flat.reshape(len(flat), 1, shape[0], 1)
    if len(shape) == 2:
        return flat.reshape(len(flat), *shape, 1)
    return flat


def tile_row(images: np.ndarray) -> np.ndarray:
    """(n, H, W, C) -> (H, n*W, C)."""
    n, h, w, c = images.shape
    return images.transpose(1, 0, 2, 3).reshape(h, n * w, c)


def reconstruct(student: StudentModel, x: np.ndarray) -> np.ndarray:
    with dc.no_grad():
        mu, s, delta = _point_estimates(student, np.asarray(x, dtype=np.float64))
        return student_decode(student, mu, s, delta).data


def latent_traversal(student: StudentModel, x: np.ndarray, dim_index: int, lo: float = -2.0, hi: float = 2.0,
                     steps: int = 10, domain: int | None = None) -> np.ndarray:
    """Sweep one coordinate of the posterior mean of ``x`` and decode each step.

    ``x`` is a single input (no batch axis). Returns a one-row grid of
    ``steps`` tiles.
    """
    cfg = student.config
    if not 0 <= dim_index < cfg.d_z:
        raise IndexError(f"dim_index {dim_index} outside [0, {cfg.d_z})")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)[None]
    with dc.no_grad():
        mu, s, delta = _point_estimates(student, x)
        if domain is not None:
            delta = student.one_hot_domain([domain])
        z = np.repeat(mu, steps, axis=0)
        z[:, dim_index] = np.linspace(lo, hi, steps)
        out = student_decode(student, z, np.repeat(s, steps, axis=0), np.repeat(delta, steps, axis=0)).data
    return tile_row(_as_images(student, out))


def traversal_grid(student: StudentModel, x: np.ndarray, dims=None, lo: float = -2.0, hi: float = 2.0,
                   steps: int = 10, domain: int | None = None) -> np.ndarray:
    """One traversal row per latent dimension, stacked vertically."""
    dims = range(student.config.d_z) if dims is None else dims
    return np.concatenate([latent_traversal(student, x, i, lo, hi, steps, domain) for i in dims], axis=0)


def interpolate_pair(student: StudentModel, x_a: np.ndarray, x_b: np.ndarray, steps: int = 10) -> np.ndarray:
    """Decode a linear path between the point estimates of two inputs."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.shape != x_b.shape:
        raise ValueError(f"input shapes differ: {x_a.shape} vs {x_b.shape}")
    with dc.no_grad():
        mu, s, delta = _point_estimates(student, np.stack([x_a, x_b]))
        t = np.linspace(0.0, 1.0, steps)[:, None]
        lerp = lambda v: (1.0 - t) * v[0] + t * v[1]  # noqa: E731
        out = student_decode(student, lerp(mu), lerp(s), lerp(delta)).data
    return tile_row(_as_images(student, out))


def write_pnm(path, grid: np.ndarray) -> None:
    """8-bit binary PGM for one channel, PPM for three; values must lie in [0, 1]."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[..., None]
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    h, w, c = grid.shape
    if c not in (1, 3):
        raise ValueError(f"cannot write {c}-channel image as PGM/PPM")
    magic = b"P5" if c == 1 else b"P6"
    pixels = np.rint(grid * 255.0).astype(np.uint8)
    with open(Path(path), "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pnm(path) -> np.ndarray:
    """Inverse of :func:`write_pnm` for files it produced."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    magic, dims, maxval, payload = parts
    w, h = (int(v) for v in dims.split())
    c = 1 if magic == b"P5" else 3
    if int(maxval) != 255:
        raise ValueError("only 8-bit PNM files are supported")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c) / 255.0
