"""Variational auto-encoder trained with the reparameterized single-sample bound.

Recognition net maps a (standardized) taxel frame to ``[mean, logvar]`` of a
diagonal Gaussian over the latent space; the generative net maps a latent
sample back to the mean of an isotropic Gaussian whose log-variance is one
learned scalar shared by all taxels. The prior is a standard normal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from .nn import (
    MlpParams,
    NumericError,
    OptimizerState,
    ShapeError,
    backprop_grads,
    forward_trace,
    init_mlp,
    mlp_forward,
    optimizer_step,
)

log = logging.getLogger(__name__)

LATENT_WIDTH = 128
LOG_2PI = float(np.log(2 * np.pi))


@dataclass
class LatentCode:
    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mean.shape != self.logvar.shape:
            raise ShapeError(f"mean {self.mean.shape} and logvar {self.logvar.shape} differ")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "rmsprop"
    step_rate: float = 0.001
    activation: str = "sigmoid"
    hidden_width: int = 512
    latent_width: int = LATENT_WIDTH
    n_hidden: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def for_archetype(cls, archetype: str, **overrides) -> "TrainConfig":
        """Per-sensor network settings: sigmoid + rmsprop(0.001) for the dense
        sensor, rectifier + adadelta(0.1) for the sparse one."""
        if archetype == "dense_nonlinear":
            base = dict(activation="sigmoid", optimizer="rmsprop", step_rate=0.001)
        elif archetype == "sparse_linear":
            base = dict(activation="rectifier", optimizer="adadelta", step_rate=0.1)
        else:
            raise ValueError(f"unknown archetype {archetype!r}")
        base.update(overrides)
        return cls(**base)


@dataclass
class VaeModel:
    recognition: MlpParams
    generative: MlpParams
    output_logvar: float = 0.0
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    config: Optional[TrainConfig] = None

    def __post_init__(self):
        if self.recognition.n_out != 2 * self.generative.n_in:
            raise ShapeError(
                f"recognition output width {self.recognition.n_out} != 2 * latent width {self.generative.n_in}"
            )
        if self.generative.n_out != self.recognition.n_in:
            raise ShapeError("generative output width must equal the taxel width")
        if not np.isfinite(self.output_logvar):
            raise NumericError("output_logvar must be finite")
        d = self.taxel_width
        self.input_mean = np.zeros(d) if self.input_mean is None else np.asarray(self.input_mean, float)
        self.input_scale = np.ones(d) if self.input_scale is None else np.asarray(self.input_scale, float)
        if self.input_mean.shape != (d,) or self.input_scale.shape != (d,):
            raise ShapeError("standardization statistics must match the taxel width")

    @property
    def latent_width(self) -> int:
        return self.generative.n_in

    @property
    def taxel_width(self) -> int:
        return self.recognition.n_in

    def standardize(self, frames) -> np.ndarray:
        x = np.asarray(frames, dtype=np.float64)
        if x.shape[-1] != self.taxel_width:
            raise ShapeError(f"frame width {x.shape[-1]} does not match model width {self.taxel_width}")
        return (x - self.input_mean) / self.input_scale

    def named_arrays(self) -> Dict[str, np.ndarray]:
        out = self.recognition.named_arrays("recognition.")
        out.update(self.generative.named_arrays("generative."))
        return out


def init_vae(taxel_width: int, config: TrainConfig, rng: np.random.Generator) -> VaeModel:
    hidden = [config.hidden_width] * config.n_hidden
    L = config.latent_width
    rec = init_mlp([taxel_width, *hidden, 2 * L], config.activation, rng)
    gen = init_mlp([L, *hidden, taxel_width], config.activation, rng)
    return VaeModel(rec, gen, 0.0, config=config)


def reparameterize(code: LatentCode, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != code.mean.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match latent shape {code.mean.shape}")
    return code.mean + np.exp(0.5 * code.logvar) * eps


def kl_to_standard_normal(code: LatentCode) -> float | np.ndarray:
    """Closed-form KL(N(mean, exp(logvar)) || N(0, I)); per row for batched codes."""
    m, lv = code.mean, code.logvar
    # expm1(lv) - lv keeps the per-dim term >= 0 even for |lv| near round-off
    return 0.5 * np.sum(m * m + (np.expm1(lv) - lv), axis=-1)


def gaussian_nll(x, mu_x, output_logvar: float) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu_x = np.asarray(mu_x, dtype=np.float64)
    if x.shape != mu_x.shape:
        raise ShapeError(f"x {x.shape} and reconstruction {mu_x.shape} differ")
    r2 = (x - mu_x) ** 2
    d = x.shape[-1]
    return 0.5 * (np.sum(r2, axis=-1) * np.exp(-output_logvar) + d * (output_logvar + LOG_2PI))


def encode(model: VaeModel, frames) -> LatentCode:
    """Deterministic recognition pass; accepts one frame or a batch."""
    out = mlp_forward(model.recognition, model.standardize(frames))
    L = model.latent_width
    return LatentCode(out[..., :L], out[..., L:])


def decode(model: VaeModel, z) -> np.ndarray:
    """Generative mean in raw (unstandardized) taxel units."""
    return mlp_forward(model.generative, z) * model.input_scale + model.input_mean


def elbo_loss(model: VaeModel, batch, eps_batch, with_grads: bool = False):
    """Batch-mean negative bound: reconstruction NLL plus KL to the prior.

    With ``with_grads`` returns ``(loss, grads)`` where ``grads`` maps every
    parameter block name (plus ``"output_logvar"``) to its gradient.
    """
    x = model.standardize(np.atleast_2d(batch))
    eps = np.atleast_2d(np.asarray(eps_batch, dtype=np.float64))
    n, L = x.shape[0], model.latent_width
    if eps.shape != (n, L):
        raise ShapeError(f"need one {L}-wide noise vector per frame, got {eps.shape}")

    rec_trace = forward_trace(model.recognition, x)
    enc = rec_trace[-1][2]
    mean, logvar = enc[:, :L], enc[:, L:]
    std = np.exp(0.5 * logvar)
    z = mean + std * eps
    gen_trace = forward_trace(model.generative, z)
    mu_x = gen_trace[-1][2]

    s = model.output_logvar
    per_frame = gaussian_nll(x, mu_x, s) + kl_to_standard_normal(LatentCode(mean, logvar))
    if not np.all(np.isfinite(per_frame)):
        bad = int(np.flatnonzero(~np.isfinite(per_frame))[0])
        raise NumericError(f"non-finite loss at frame {bad} of the batch")
    loss = float(per_frame.mean())
    if not with_grads:
        return loss

    resid = x - mu_x
    inv_var = np.exp(-s)
    g_mu_x = -resid * inv_var / n
    g_s = 0.5 * float(np.sum(1.0 - resid**2 * inv_var)) / n
    gen_grads, g_z = backprop_grads(model.generative, z, g_mu_x, trace=gen_trace, return_input_grad=True)
    g_mean = g_z + mean / n
    g_logvar = g_z * 0.5 * std * eps + 0.5 * np.expm1(logvar) / n
    rec_grads = backprop_grads(model.recognition, x, np.hstack([g_mean, g_logvar]), trace=rec_trace)

    grads = rec_grads.named_arrays("recognition.")
    grads.update(gen_grads.named_arrays("generative."))
    grads["output_logvar"] = np.array(g_s)
    return loss, grads


def standardization_stats(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = frames.mean(axis=0)
    scale = frames.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


class TrainingDiverged(NumericError):
    pass


def train_vae(frames, config: TrainConfig, progress: bool = False):
    """Fit a VAE to raw frames; returns ``(model, per-epoch mean loss list)``.

    Standardization statistics come from ``frames`` and are stored on the
    model. The run is a pure function of ``(frames, config)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("need a non-empty (n, taxels) array of frames")
    rng = np.random.default_rng(config.seed)
    model = init_vae(frames.shape[1], config, rng)
    model.input_mean, model.input_scale = standardization_stats(frames)

    params = model.named_arrays()
    logvar_box = np.array([model.output_logvar])
    params["output_logvar"] = logvar_box.reshape(())
    state = OptimizerState(config.optimizer, config.step_rate)

    n, L = len(frames), config.latent_width
    history: List[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            eps = rng.standard_normal((len(idx), L))
            model.output_logvar = float(logvar_box[0])
            try:
                loss, grads = elbo_loss(model, frames[idx], eps, with_grads=True)
                optimizer_step(params, grads, state)
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            total += loss * len(idx)
        model.output_logvar = float(logvar_box[0])
        history.append(total / n)
        if progress:
            log.info("epoch %d loss %.4f", epoch + 1, history[-1])
    return model, history


def active_units(model: VaeModel, frames, threshold: float = 0.01, criterion: str = "mean") -> List[int]:
    """Latent indices carrying information about the data.

    ``criterion="mean"``: variance over the data of the posterior mean exceeds
    ``threshold``. ``criterion="posterior"``: the average posterior variance is
    below ``1 - threshold``, i.e. the unit has moved away from the prior.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    code = encode(model, np.atleast_2d(frames))
    if criterion == "mean":
        score = code.mean.var(axis=0)
        return [int(i) for i in np.flatnonzero(score > threshold)]
    if criterion == "posterior":
        post = np.exp(code.logvar).mean(axis=0)
        return [int(i) for i in np.flatnonzero(post < 1.0 - threshold)]
    raise ValueError(f"unknown criterion {criterion!r}")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
