"""Classification accuracy, importance-weighted NLL, exact enumeration on tiny
models, and forgetting curves assembled from a training log.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .. import diffcore as dc
from ..latents import gaussian_log_density, kl_categorical, kl_gaussian_vs_conditional
from ..student import StudentModel, classify, reconstruction_nll_np

EVAL_CHUNK = 512


def accuracy_eval(student: StudentModel, x: np.ndarray, y: np.ndarray) -> float:
    """Percentage of ``x`` whose predicted class equals ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("empty test set")
    correct = 0
    with dc.no_grad():
        for i in range(0, len(x), EVAL_CHUNK):
            correct += int(np.sum(classify(student, x[i:i + EVAL_CHUNK]) == y[i:i + EVAL_CHUNK]))
    return 100.0 * correct / len(x)


def _log_weights(student: StudentModel, x: np.ndarray, d: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """(n, k) log importance weights for proposal q(z|x) q(s|x) against p(z|delta) p(s)."""
    cfg = student.config
    n = len(x)
    post, _, slog = student.encode(x)
    mu, ls = post.mu.data, post.log_sigma.data
    eps = rng.standard_normal((n, k, cfg.d_z))
    z = mu[:, None, :] + np.exp(ls)[:, None, :] * eps
    prior_mean = student.prior.means(d)[:, None, :]
    log_w = gaussian_log_density(z, prior_mean, np.full_like(z, np.log(cfg.sigma_prior)))
    log_w -= gaussian_log_density(z, mu[:, None, :], ls[:, None, :])
    if cfg.mode == "unsupervised":
        s = np.zeros((n, k, cfg.n_classes))
    else:
        logq = slog.data - logsumexp(slog.data, axis=-1, keepdims=True)
        cdf = np.cumsum(np.exp(logq), axis=-1)
        u = rng.uniform(size=(n, k, 1))
        idx = np.minimum((u >= cdf[:, None, :]).sum(axis=-1), cfg.n_classes - 1)
        s = np.eye(cfg.n_classes)[idx]
        log_w += -np.log(cfg.n_classes) - np.take_along_axis(logq, idx, axis=-1)
    delta = np.repeat(student.one_hot_domain(d), k, axis=0)
    logits = student.decoder_logits(z.reshape(n * k, -1), s.reshape(n * k, -1), delta).data
    x_rep = np.repeat(x, k, axis=0)
    log_w -= reconstruction_nll_np(student, x_rep, logits).reshape(n, k)
    return log_w


def nll_eval(student: StudentModel, x: np.ndarray, d, samples_per_datum: int = 64,
             rng: np.random.Generator | int = 0, chunk: int | None = None) -> float:
    """Average importance-weighted negative log-likelihood in nats.

    ``d`` holds ground-truth domain indices (a scalar applies to every row).
    With one sample per datum this is the negative single-sample ELBO of the
    discrete model, with s drawn from q(s|x) rather than relaxed.
    """
    if samples_per_datum < 1:
        raise ValueError("samples_per_datum must be >= 1")
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    d = np.broadcast_to(np.asarray(d, dtype=int), (len(x),))
    chunk = chunk or max(1, 4096 // samples_per_datum)
    total = 0.0
    with dc.no_grad():
        for i in range(0, len(x), chunk):
            lw = _log_weights(student, x[i:i + chunk], d[i:i + chunk], samples_per_datum, rng)
            total += float(np.sum(np.log(samples_per_datum) - logsumexp(lw, axis=1)))
    return total / len(x)


# ---------------------------------------------------------------- exact enumeration for tiny models

def _standard_grid(d_z: int, points: int | None = None):
    """Trapezoid nodes/log-weights on [-10, 10]^d_z for integrating against N(0, I)."""
    if d_z > 2:
        raise ValueError("exact enumeration is limited to d_z <= 2")
    points = points or (4001 if d_z == 1 else 301)
    u = np.linspace(-10.0, 10.0, points)
    w = np.full(points, u[1] - u[0])
    w[[0, -1]] *= 0.5
    grids = np.meshgrid(*([u] * d_z), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    logw = sum(np.log(m).ravel() for m in np.meshgrid(*([w] * d_z), indexing="ij"))
    logw = logw + np.sum(-0.5 * nodes**2 - 0.5 * np.log(2 * np.pi), axis=-1)
    return nodes, logw


def _s_states(student: StudentModel) -> np.ndarray:
    if student.config.mode == "unsupervised":
        return np.zeros((1, student.config.n_classes))
    return np.eye(student.config.n_classes)


def _recon_grid(student: StudentModel, xi: np.ndarray, z: np.ndarray, s: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """log p(x_i | z_j, s, delta) for every grid node j."""
    m = len(z)
    logits = student.decoder_logits(z, np.repeat(s[None], m, axis=0), np.repeat(delta[None], m, axis=0)).data
    return -reconstruction_nll_np(student, np.repeat(xi[None], m, axis=0), logits)


def exact_log_likelihood(student: StudentModel, x: np.ndarray, d, points: int | None = None) -> np.ndarray:
    """log p(x | delta) by summing over s and integrating z on a dense grid (d_z <= 2)."""
    cfg = student.config
    x = np.asarray(x, dtype=np.float64)
    d = np.broadcast_to(np.asarray(d, dtype=int), (len(x),))
    nodes, logw = _standard_grid(cfg.d_z, points)
    states = _s_states(student)
    log_ps = -np.log(len(states)) if cfg.mode != "unsupervised" else 0.0
    out = np.empty(len(x))
    with dc.no_grad():
        for i, (xi, di) in enumerate(zip(x, d)):
            z = student.prior.means(di) + cfg.sigma_prior * nodes
            delta = student.one_hot_domain(di)
            terms = [_recon_grid(student, xi, z, s, delta) + logw + log_ps for s in states]
            out[i] = logsumexp(np.concatenate(terms))
    return out


def exact_elbo(student: StudentModel, x: np.ndarray, d, points: int | None = None) -> np.ndarray:
    """Expected training objective with the discrete s enumerated exactly.

    E_q(s) E_q(z) log p(x|z,s,delta) - beta1 KL_z - beta2 KL_delta - beta3 KL_s,
    where the expectations over z use the same grid as :func:`exact_log_likelihood`.
    """
    cfg = student.config
    x = np.asarray(x, dtype=np.float64)
    d = np.broadcast_to(np.asarray(d, dtype=int), (len(x),))
    nodes, logw = _standard_grid(cfg.d_z, points)
    wts = np.exp(logw)
    states = _s_states(student)
    out = np.empty(len(x))
    with dc.no_grad():
        post, dlog, slog = student.encode(x)
        kl_z = kl_gaussian_vs_conditional(post, student.prior, d).data
        mu, sig = post.mu.data, np.exp(post.log_sigma.data)
        k = student.n_seen_domains
        for i in range(len(x)):
            q_d = np.exp(dlog.data[i] - logsumexp(dlog.data[i]))
            total = -cfg.beta1 * kl_z[i] - cfg.beta2 * kl_categorical(q_d, np.full(k, 1.0 / k))
            z = mu[i] + sig[i] * nodes
            delta = student.one_hot_domain(d[i])
            if cfg.mode == "unsupervised":
                total += float(wts @ _recon_grid(student, x[i], z, states[0], delta))
            else:
                q_s = np.exp(slog.data[i] - logsumexp(slog.data[i]))
                total -= cfg.beta3 * kl_categorical(q_s, np.full(cfg.n_classes, 1.0 / cfg.n_classes))
                for j, s in enumerate(states):
                    if q_s[j] > 0:
                        total += q_s[j] * float(wts @ _recon_grid(student, x[i], z, s, delta))
            out[i] = total
    return out


# ---------------------------------------------------------------- forgetting curves

@dataclass
class ForgettingCurve:
    """Accuracy on every evaluated task after each (task learned, epoch)."""

    rows: list[tuple[int, int]] = field(default_factory=list)
    eval_tasks: list[int] = field(default_factory=list)
    accuracy: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def column(self, task: int) -> np.ndarray:
        return self.accuracy[:, self.eval_tasks.index(task)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_index", "epoch"] + [f"acc_task_{t}" for t in self.eval_tasks])
            for (task, epoch), vals in zip(self.rows, self.accuracy):
                w.writerow([task, epoch] + ["" if np.isnan(v) else f"{v:.6f}" for v in vals])


_REQUIRED = ("kind", "task_index", "epoch", "eval_task", "accuracy")


def forgetting_curve(rows: list[dict]) -> ForgettingCurve:
    """Pivot the ``kind == "eval"`` rows of a metrics log; not-yet-seen tasks are NaN."""
    evals = [r for r in rows if r.get("kind") == "eval"]
    if not evals:
        raise ValueError("metrics log has no evaluation rows")
    for key in _REQUIRED:
        if key not in evals[0]:
            raise ValueError(f"metrics log is missing column {key!r}")
    order: list[tuple[int, int]] = []
    tasks = sorted({int(r["eval_task"]) for r in evals})
    cells: dict[tuple[int, int], dict[int, float]] = {}
    for r in evals:
        key = (int(r["task_index"]), int(r["epoch"]))
        if key not in cells:
            order.append(key)
            cells[key] = {}
        acc = r["accuracy"]
        cells[key][int(r["eval_task"])] = float(acc) if acc not in ("", None) else np.nan
    mat = np.full((len(order), len(tasks)), np.nan)
    for i, key in enumerate(order):
        for t, v in cells[key].items():
            mat[i, tasks.index(t)] = v
    return ForgettingCurve(order, tasks, mat)
