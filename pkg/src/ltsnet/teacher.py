"""The WGAN Teacher: a delta-conditioned generator, a critic, the Earth-Mover
objective with weight clipping (or gradient penalty), and frozen snapshots
used for replay.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .diffcore.nn import MLP


@dataclass
class TeacherConfig:
    data_shape: tuple = (8, 8, 1)
    z_dim: int = 16
    k_max: int = 2
    hidden: tuple = (128, 128)
    critic_hidden: tuple = (128, 128)
    clip_value: float = 0.01
    critic_steps: int = 5
    gp_weight: float = 0.0
    conditional_critic: bool = True
    adam_betas: tuple = (0.9, 0.999)

    def __post_init__(self):
        self.data_shape = tuple(int(v) for v in self.data_shape)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.critic_hidden = tuple(int(v) for v in self.critic_hidden)
        self.adam_betas = tuple(float(v) for v in self.adam_betas)
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be nonnegative")
        if self.clipping and self.clip_value <= 0:
            raise ValueError("clip_value must be positive in clipping mode")

    @property
    def clipping(self) -> bool:
        return self.gp_weight == 0

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.data_shape))

    def to_dict(self) -> dict:
        return asdict(self)


def _check_one_hot(delta: np.ndarray, k_max: int) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2 or delta.shape[1] != k_max:
        raise ValueError(f"delta must have shape (n, {k_max}), got {delta.shape}")
    if not (np.all((delta == 0) | (delta == 1)) and np.all(delta.sum(axis=1) == 1)):
        raise ValueError("delta rows must be one-hot")
    return delta


class TeacherModel:
    def __init__(self, config: TeacherConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng)
        self.config = cfg = config
        self.store = dc.ParamStore()
        self.generator = MLP("psi", [cfg.z_dim + cfg.k_max, *cfg.hidden, cfg.data_dim])
        critic_in = cfg.data_dim + (cfg.k_max if cfg.conditional_critic else 0)
        self.critic = MLP("critic", [critic_in, *cfg.critic_hidden, 1])
        self.generator.init(self.store, rng)
        self.critic.init(self.store, rng)
        if cfg.clipping:
            enforce_lipschitz(self)

    @property
    def psi_names(self) -> list[str]:
        return self.store.group("psi.")

    @property
    def critic_names(self) -> list[str]:
        return self.store.group("critic.")

    def critic_input(self, x, delta) -> Tensor:
        x = dc.as_tensor(x)
        flat = dc.reshape(x, (x.shape[0], self.config.data_dim))
        if self.config.conditional_critic:
            return dc.concat([flat, dc.as_tensor(delta)], axis=-1)
        return flat

    def score(self, x, delta) -> Tensor:
        return dc.reshape(self.critic(self.store, self.critic_input(x, delta)), (-1,))

    def copy(self) -> "TeacherModel":
        other = object.__new__(TeacherModel)
        other.__dict__.update(self.__dict__)
        other.store = self.store.copy()
        return other


def _generate(generator: MLP, store, z, delta, data_shape) -> Tensor:
    z = dc.as_tensor(z)
    out = dc.sigmoid(generator(store, dc.concat([z, dc.as_tensor(delta)], axis=-1)))
    return dc.reshape(out, (z.shape[0], *data_shape))


def teacher_generate(model: TeacherModel, z, delta) -> Tensor:
    delta = _check_one_hot(delta, model.config.k_max)
    z = dc.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != model.config.z_dim or z.shape[0] != delta.shape[0]:
        raise ValueError(f"z must have shape ({delta.shape[0]}, {model.config.z_dim}), got {z.shape}")
    return _generate(model.generator, model.store, z, delta, model.config.data_shape)


def _gradient_penalty(model: TeacherModel, real: np.ndarray, fake: np.ndarray, delta: np.ndarray,
                      rng: np.random.Generator) -> Tensor:
    """mean((||grad_x D(x_hat)|| - 1)^2) with grad_x built on the tape from relu masks."""
    n = real.shape[0]
    mix = rng.uniform(size=(n,) + (1,) * (real.ndim - 1))
    x_hat = mix * real + (1.0 - mix) * fake
    inp = model.critic_input(x_hat, delta)
    pre = model.critic.hidden_states(model.store, inp)
    layers = model.critic.layers
    g = dc.broadcast_to(dc.transpose(model.store[layers[-1].weight_name]), (n, layers[-1].n_in))
    for layer, a in zip(reversed(layers[:-1]), reversed(pre[:-1])):
        g = g * (a.data > 0)
        g = dc.matmul(g, dc.transpose(model.store[layer.weight_name]))
    gx = g[:, : model.config.data_dim]
    norm = dc.exp(0.5 * dc.log(dc.sum_(gx * gx, axis=-1) + 1e-12))
    dev = norm - 1.0
    return dc.mean(dev * dev)


def wgan_losses(model: TeacherModel, real, z, delta, rng: np.random.Generator | None = None):
    """(critic_loss, generator_loss) = (E D(fake) - E D(real), -E D(fake)).

    In gradient-penalty mode the critic loss also carries ``gp_weight`` times
    the penalty, which needs ``rng`` for the interpolation weights.
    """
    real = np.asarray(real.data if isinstance(real, Tensor) else real, dtype=np.float64)
    if real.shape[0] == 0:
        raise ValueError("empty batch")
    delta = _check_one_hot(delta, model.config.k_max)
    fake = teacher_generate(model, z, delta)
    d_fake = dc.mean(model.score(fake, delta))
    d_real = dc.mean(model.score(real, delta))
    critic_loss = d_fake - d_real
    if not model.config.clipping:
        if rng is None:
            raise ValueError("gradient-penalty mode needs an rng")
        critic_loss = critic_loss + model.config.gp_weight * _gradient_penalty(model, real, fake.data, delta, rng)
    return critic_loss, -d_fake


def enforce_lipschitz(model: TeacherModel) -> None:
    c = model.config.clip_value
    for name in model.critic_names:
        np.clip(model.store[name].data, -c, c, out=model.store[name].data)


def teacher_train_step(model: TeacherModel, real, delta, rng: np.random.Generator, lr: float = 1e-3,
                       betas: tuple[float, float] | None = None, check_clip: bool = False) -> tuple[float, float]:
    """``critic_steps`` critic updates followed by one generator update on a real batch."""
    cfg = model.config
    betas = cfg.adam_betas if betas is None else betas
    n = len(real)
    critic_val = 0.0
    for _ in range(cfg.critic_steps):
        z = rng.standard_normal((n, cfg.z_dim))
        model.store.zero_grad()
        critic_loss, _ = wgan_losses(model, real, z, delta, rng)
        critic_loss.backward()
        dc.adam_step(model.store, lr, *betas, names=model.critic_names)
        if cfg.clipping:
            enforce_lipschitz(model)
            if check_clip:
                worst = max(np.abs(model.store[k].data).max() for k in model.critic_names)
                assert worst <= cfg.clip_value, "critic weight escaped the clip range"
        critic_val = critic_loss.item()
    z = rng.standard_normal((n, cfg.z_dim))
    model.store.zero_grad()
    _, gen_loss = wgan_losses(model, real, z, delta, rng)
    gen_loss.backward()
    dc.adam_step(model.store, lr, *betas, names=model.psi_names)
    model.store.zero_grad()
    return critic_val, gen_loss.item()


def refit_critic(model: TeacherModel, real_pool, delta_row, rng: np.random.Generator, steps: int = 300,
                 batch: int = 256, lr: float = 1e-3) -> TeacherModel:
    """Copy of ``model`` whose critic is retrained against the frozen generator.

    The critic that comes out of alternating training lags the generator; a
    refit gives a gap that tracks the current generator's distance to the data.
    """
    fitted = model.copy()
    cfg = fitted.config
    real_pool = np.asarray(real_pool, dtype=np.float64)
    delta = np.repeat(np.asarray(delta_row, dtype=np.float64)[None], batch, axis=0)
    betas = cfg.adam_betas
    for _ in range(steps):
        real = real_pool[rng.integers(0, len(real_pool), size=batch)]
        z = rng.standard_normal((batch, cfg.z_dim))
        fitted.store.zero_grad()
        critic_loss, _ = wgan_losses(fitted, real, z, delta, rng)
        critic_loss.backward()
        dc.adam_step(fitted.store, lr, *betas, names=fitted.critic_names)
        if cfg.clipping:
            enforce_lipschitz(fitted)
    fitted.store.zero_grad()
    return fitted


def wasserstein1_1d_oracle(samples_a, samples_b) -> float:
    """Exact empirical W1 in one dimension: mean gap between sorted samples."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValueError(f"sample counts differ: {a.size} vs {b.size}")
    return float(np.mean(np.abs(a - b)))


def retention_probability(w: float) -> float:
    if w < 0:
        raise ValueError("Wasserstein distance must be nonnegative")
    return 1.0 - min(1.0, float(w))


def critic_gap(model: TeacherModel, real, delta, rng: np.random.Generator) -> float:
    """E D(real) - E D(fake): the critic's Earth-Mover estimate, up to its Lipschitz scale."""
    delta = _check_one_hot(delta, model.config.k_max)
    z = rng.standard_normal((len(real), model.config.z_dim))
    fake = teacher_generate(model, z, delta)
    return float(np.mean(model.score(real, delta).data) - np.mean(model.score(fake, delta).data))


class TeacherSnapshot:
    """Immutable copy of the generator taken at a task boundary."""

    def __init__(self, model: TeacherModel, k: int):
        self.k = int(k)
        self.config = model.config
        self.generator = model.generator
        self.store = dc.ParamStore()
        for name in model.psi_names:
            t = self.store.add(name, model.store[name].data.copy())
            t.requires_grad = False
            t.data.setflags(write=False)

    def generate(self, z, delta) -> np.ndarray:
        delta = _check_one_hot(delta, self.config.k_max)
        return _generate(self.generator, self.store, z, delta, self.config.data_shape).data

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: self.store[name].data for name in self.store}


def task_switch(teacher: TeacherModel, k: int) -> TeacherSnapshot:
    return TeacherSnapshot(teacher, k)
