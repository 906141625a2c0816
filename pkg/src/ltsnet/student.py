"""The VAE Student: encoders for z, the domain variable and the class variable,
one decoder over concat(z, s, delta), and the auxiliary adversary on z.

All objectives are returned as *losses* (to be minimized) and are averaged
over the batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .diffcore.nn import MLP, ConvDecoder, ConvEncoder
from .latents import (
    ConditionalPrior,
    GaussianPosterior,
    RelaxedCategorical,
    gaussian_reparameterize,
    gumbel_softmax_sample,
    kl_categorical_logits,
    kl_gaussian_vs_conditional,
    sample_gumbel,
)

MODES = ("supervised", "semi", "unsupervised")
HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


class ModeError(RuntimeError):
    """Operation not available in the model's training mode."""


@dataclass
class StudentConfig:
    input_shape: tuple = (8, 8, 1)
    d_z: int = 8
    n_classes: int = 10
    k_max: int = 2
    mode: str = "supervised"
    arch: str = "conv"
    hidden: tuple = (256,)
    channels: tuple = (32, 64)
    adversary_hidden: int = 64
    beta1: float = 1.0
    beta2: float = 0.01
    beta3: float = 0.01
    a: float = 1.0
    temperature: float = 0.5
    adversary_scale: float = 1.0
    sigma_prior: float = 1.0
    prior_spacing: float = 3.0
    likelihood: str = "bernoulli"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.channels = tuple(int(v) for v in self.channels)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.arch not in ("conv", "mlp"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.arch == "conv" and len(self.input_shape) != 3:
            raise ValueError("conv arch needs an (H, W, C) input shape")
        if min(self.beta1, self.beta2, self.beta3) < 0 or self.a < 0:
            raise ValueError("beta weights and a must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorBundle:
    z_post: GaussianPosterior
    delta_probs: np.ndarray
    s_probs: np.ndarray
    delta_logits: Tensor = field(repr=False, default=None)
    s_logits: Tensor = field(repr=False, default=None)


@dataclass
class LossTerms:
    total: Tensor
    recon: float = 0.0
    kl_z: float = 0.0
    kl_delta: float = 0.0
    kl_s: float = 0.0
    ce_s: float = 0.0
    ce_delta: float = 0.0
    independence: float = 0.0

    def as_dict(self) -> dict[str, float]:
        out = {k: float(v) for k, v in asdict(self).items() if k != "total"}
        out["total"] = self.total.item()
        return out


def _encoder(prefix: str, cfg: StudentConfig, out_dim: int):
    if cfg.arch == "conv":
        return ConvEncoder(prefix, cfg.input_shape, out_dim, cfg.channels)
    return MLP(prefix, [cfg.input_dim, *cfg.hidden, out_dim])


class StudentModel:
    def __init__(self, config: StudentConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng)
        self.config = cfg = config
        self.store = dc.ParamStore()
        self.enc_z = _encoder("theta1", cfg, 2 * cfg.d_z)
        self.enc_delta = _encoder("theta2", cfg, cfg.k_max)
        self.enc_s = _encoder("theta3", cfg, cfg.n_classes)
        latent_in = cfg.d_z + cfg.n_classes + cfg.k_max
        if cfg.arch == "conv":
            self.decoder = ConvDecoder("omega", latent_in, cfg.input_shape, cfg.channels)
        else:
            self.decoder = MLP("omega", [latent_in, *reversed(cfg.hidden), cfg.input_dim])
        self.adversary = MLP("zeta", [cfg.d_z, cfg.adversary_hidden, cfg.n_classes])
        for net in (self.enc_z, self.enc_delta, self.enc_s, self.decoder, self.adversary):
            net.init(self.store, rng)
        self.prior = ConditionalPrior.one_hot_table(cfg.k_max, cfg.d_z, cfg.prior_spacing, cfg.sigma_prior)
        # domains whose prior/posterior mass is active; grows with each task
        self.n_seen_domains = cfg.k_max

    def copy(self) -> "StudentModel":
        other = object.__new__(StudentModel)
        other.__dict__.update(self.__dict__)
        other.store = self.store.copy()
        return other

    def trainable_names(self) -> list[str]:
        groups = ["theta1", "theta2", "omega"]
        if self.config.mode != "unsupervised":
            groups += ["theta3", "zeta"]
        return [n for g in groups for n in self.store.group(g + ".")]

    # ----------------------------------------------------------- plumbing

    def _prepare(self, x) -> Tensor:
        x = dc.as_tensor(x)
        cfg = self.config
        if tuple(x.shape[1:]) != cfg.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != configured {cfg.input_shape}")
        if cfg.arch == "mlp":
            return dc.reshape(x, (x.shape[0], cfg.input_dim))
        return x

    def encode(self, x):
        """Raw encoder outputs: (GaussianPosterior, seen-domain logits, class logits)."""
        xin = self._prepare(x)
        d_z = self.config.d_z
        h = self.enc_z(self.store, xin)
        post = GaussianPosterior(h[:, :d_z], h[:, d_z:])
        delta_logits = self.enc_delta(self.store, xin)[:, : self.n_seen_domains]
        s_logits = self.enc_s(self.store, xin)
        return post, delta_logits, s_logits

    def decoder_logits(self, z, s, delta) -> Tensor:
        cfg = self.config
        z, s, delta = dc.as_tensor(z), dc.as_tensor(s), dc.as_tensor(delta)
        if z.shape[-1] != cfg.d_z or s.shape[-1] != cfg.n_classes or delta.shape[-1] != cfg.k_max:
            raise ValueError(
                f"latent dims ({z.shape[-1]}, {s.shape[-1]}, {delta.shape[-1]}) "
                f"!= ({cfg.d_z}, {cfg.n_classes}, {cfg.k_max})"
            )
        out = self.decoder(self.store, dc.concat([z, s, delta], axis=-1))
        return dc.reshape(out, (out.shape[0], *cfg.input_shape))

    def one_hot_domain(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=int)
        if np.any(d < 0) or np.any(d >= self.config.k_max):
            raise ValueError("domain label out of range")
        return np.eye(self.config.k_max)[d]

    def one_hot_class(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=int)
        if np.any(y < 0) or np.any(y >= self.config.n_classes):
            raise ValueError("class label out of range")
        return np.eye(self.config.n_classes)[y]


def student_infer(model: StudentModel, x) -> PosteriorBundle:
    post, dlog, slog = model.encode(x)
    seen = dc.softmax(dlog, axis=-1).data
    delta = np.zeros((seen.shape[0], model.config.k_max))
    delta[:, : seen.shape[1]] = seen
    return PosteriorBundle(post, delta, dc.softmax(slog, axis=-1).data, dlog, slog)


def student_decode(model: StudentModel, z, s, delta) -> Tensor:
    return dc.sigmoid(model.decoder_logits(z, s, delta))


def reconstruction_nll(model: StudentModel, x, logits: Tensor) -> Tensor:
    """Per-sample negative log-likelihood of ``x`` under the decoder output."""
    x = dc.as_tensor(x)
    n = x.shape[0]
    if model.config.likelihood == "bernoulli":
        per_pixel = dc.softplus(logits) - x * logits
    else:
        diff = x - dc.sigmoid(logits)
        per_pixel = 0.5 * diff * diff + HALF_LOG_2PI
    return dc.sum_(dc.reshape(per_pixel, (n, -1)), axis=-1)


def reconstruction_nll_np(model: StudentModel, x: np.ndarray, logits: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if model.config.likelihood == "bernoulli":
        per = np.logaddexp(0.0, logits) - x * logits
    else:
        mean = 1.0 / (1.0 + np.exp(-logits))
        per = 0.5 * (x - mean) ** 2 + HALF_LOG_2PI
    return per.reshape(n, -1).sum(axis=-1)


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    return -dc.sum_(dc.log_softmax(logits, axis=-1) * onehot, axis=-1)


def _check_domains(model: StudentModel, d) -> np.ndarray:
    d = np.asarray(d, dtype=int)
    if np.any(d < 0) or np.any(d >= model.n_seen_domains):
        raise ValueError(f"domain labels must be < {model.n_seen_domains} seen domains")
    return d


def _vae_terms(model: StudentModel, x, d, rng, s_input):
    """Shared ELBO pieces given the decoder's s input; returns per-sample tensors."""
    cfg = model.config
    post, dlog, slog = model.encode(x)
    n = post.mu.shape[0]
    eps = rng.standard_normal((n, cfg.d_z))
    z = gaussian_reparameterize(post, eps)
    gumbel = sample_gumbel(rng, (n, cfg.n_classes))
    if isinstance(s_input, str):
        s = gumbel_softmax_sample(RelaxedCategorical(slog, cfg.temperature), gumbel)
    else:
        s = dc.as_tensor(s_input)
    delta_in = model.one_hot_domain(d)
    recon = reconstruction_nll(model, x, model.decoder_logits(z, s, delta_in))
    kl_z = kl_gaussian_vs_conditional(post, model.prior, d)
    k = model.n_seen_domains
    kl_d = kl_categorical_logits(dlog, np.full(k, 1.0 / k))
    return {"post": post, "z": z, "dlog": dlog, "slog": slog, "recon": recon, "kl_z": kl_z, "kl_delta": kl_d}


def _combine(terms: dict, weights: dict) -> Tensor:
    total = None
    for key in ("recon", "kl_z", "kl_delta", "kl_s", "ce_s", "ce_delta", "independence"):
        if key not in terms:
            continue
        piece = dc.mean(terms[key]) * weights.get(key, 1.0)
        total = piece if total is None else total + piece
    return total


def _report(total: Tensor, terms: dict) -> LossTerms:
    vals = {k: float(np.mean(v.data)) for k, v in terms.items() if k in LossTerms.__dataclass_fields__}
    return LossTerms(total=total, **vals)


def loss_supervised(model: StudentModel, x, y, d, rng: np.random.Generator, s_override=None,
                    with_independence: bool = False) -> LossTerms:
    """Negative ELBO with the class/domain cross-entropy heads.

    ``s_override`` replaces the Gumbel-softmax sample fed to the decoder (the
    E_s heads are still evaluated).
    """
    cfg = model.config
    y_oh = model.one_hot_class(y)
    d = _check_domains(model, d)
    t = _vae_terms(model, x, d, rng, "gumbel" if s_override is None else s_override)
    t["kl_s"] = kl_categorical_logits(t["slog"], np.full(cfg.n_classes, 1.0 / cfg.n_classes))
    t["ce_s"] = _cross_entropy(t["slog"], y_oh)
    t["ce_delta"] = _cross_entropy(t["dlog"], model.one_hot_domain(d)[:, : model.n_seen_domains])
    if with_independence:
        t["independence"] = _independence_from_z(model, t["z"], y_oh)
    total = _combine(t, {"kl_z": cfg.beta1, "kl_delta": cfg.beta2, "kl_s": cfg.beta3})
    return _report(total, t)


def _independence_from_z(model: StudentModel, z: Tensor, y_oh: np.ndarray) -> Tensor:
    reversed_z = dc.grad_reverse(z, model.config.adversary_scale)
    return _cross_entropy(model.adversary(model.store, reversed_z), y_oh)


def loss_independence(model: StudentModel, x, y, rng: np.random.Generator | None = None) -> Tensor:
    """Adversary cross-entropy on z; zeta minimizes it, theta1 (through the reversal) maximizes it.

    With ``rng`` the reparameterized sample is used, otherwise the posterior mean.
    """
    y_oh = model.one_hot_class(y)
    post, _, _ = model.encode(x)
    if rng is None:
        z = post.mu
    else:
        z = gaussian_reparameterize(post, rng.standard_normal(post.mu.shape))
    return dc.mean(_independence_from_z(model, z, y_oh))


def loss_semi(model: StudentModel, labeled, unlabeled, rng: np.random.Generator,
              with_independence: bool = False) -> LossTerms:
    """Labeled ELBO with s clamped to the label, plus ``a`` times the unlabeled ELBO.

    ``labeled`` is (x, y, d); ``unlabeled`` is (x, d) and may hold zero samples.
    """
    cfg = model.config
    x_l, y_l, d_l = labeled
    if len(x_l) == 0:
        raise ValueError("labeled batch must be nonempty")
    y_oh = model.one_hot_class(y_l)
    d_l = _check_domains(model, d_l)
    t = _vae_terms(model, x_l, d_l, rng, y_oh)
    t["ce_s"] = _cross_entropy(t["slog"], y_oh)
    t["ce_delta"] = _cross_entropy(t["dlog"], model.one_hot_domain(d_l)[:, : model.n_seen_domains])
    if with_independence:
        t["independence"] = _independence_from_z(model, t["z"], y_oh)
    total = _combine(t, {"kl_z": cfg.beta1, "kl_delta": cfg.beta2})
    report = {k: t[k] for k in ("recon", "kl_z", "kl_delta", "ce_s", "ce_delta", "independence") if k in t}

    x_u, d_u = unlabeled
    if len(x_u) > 0 and cfg.a > 0:
        d_u = _check_domains(model, d_u)
        u = _vae_terms(model, x_u, d_u, rng, "gumbel")
        u["kl_s"] = kl_categorical_logits(u["slog"], np.full(cfg.n_classes, 1.0 / cfg.n_classes))
        unl = _combine(u, {"kl_z": cfg.beta1, "kl_delta": cfg.beta2, "kl_s": cfg.beta3})
        total = total + cfg.a * unl
        report["kl_s"] = u["kl_s"]
        for key in ("recon", "kl_z", "kl_delta"):
            report[key] = Tensor(np.concatenate([report[key].data, u[key].data]))
    return _report(total, report)


def loss_unsupervised(model: StudentModel, x, d, rng: np.random.Generator) -> LossTerms:
    """Negative ELBO over z and delta only; the decoder sees a constant zero s."""
    cfg = model.config
    d = _check_domains(model, d)
    s_const = np.zeros((len(d), cfg.n_classes))
    t = _vae_terms(model, x, d, rng, s_const)
    t["ce_delta"] = _cross_entropy(t["dlog"], model.one_hot_domain(d)[:, : model.n_seen_domains])
    total = _combine(t, {"kl_z": cfg.beta1, "kl_delta": cfg.beta2})
    return _report(total, t)


def argmax_class(probs) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest index."""
    return np.argmax(np.asarray(probs), axis=-1)


def classify(model: StudentModel, x) -> np.ndarray:
    if model.config.mode == "unsupervised":
        raise ModeError("classify is unavailable for an unsupervised student")
    _, _, slog = model.encode(x)
    return argmax_class(slog.data)
