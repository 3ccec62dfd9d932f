"""Finite-difference checks of the analytic gradients (MLP backprop and the VAE bound)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .nn import ACTIVATIONS, MlpParams, backprop_grads, finite_diff_check, init_mlp, mlp_forward, relative_error
from .vae import TrainConfig, VaeModel, elbo_loss, init_vae

# gradients smaller than this are compared in absolute terms (float64 round-off of
# a central difference with h=1e-5 on O(1) losses sits around 1e-11)
GRAD_FLOOR = 1e-7


@dataclass
class GradcheckReport:
    cases: List[Dict[str, object]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((float(c["rel_error"]) for c in self.cases), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _numeric_block_grad(f, arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``arr``, perturbing it in place."""
    orig = arr.copy()

    # finite_diff_check perturbs its own copy, so route that copy back into ``arr``
    def wrapped(x):
        arr[...] = x
        return f()

    out = finite_diff_check(wrapped, orig.copy(), h)
    arr[...] = orig
    return out


def check_mlp(net: MlpParams, x: np.ndarray, proj: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error for the loss ``sum(proj * net(x))`` over all weights and biases."""
    analytic = backprop_grads(net, x, proj).named_arrays()

    def loss() -> float:
        return float(np.sum(proj * mlp_forward(net, x)))

    worst = 0.0
    for name, arr in net.named_arrays().items():
        numeric = _numeric_block_grad(loss, arr, h)
        worst = max(worst, relative_error(analytic[name], numeric, GRAD_FLOOR))
    return worst


def random_mlp_suite(seed: int = 0, n_nets: int = 20, h: float = 1e-5) -> GradcheckReport:
    """Random nets with 1-3 layers, <= 16 units, cycling through every hidden activation."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for k in range(n_nets):
        n_layers = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 17, size=n_layers + 1)]
        act = ACTIVATIONS[k % len(ACTIVATIONS)]
        out_act = ACTIVATIONS[(k // len(ACTIVATIONS)) % len(ACTIVATIONS)]
        net = init_mlp(sizes, act, rng, output_activation=out_act)
        for layer in net.layers:
            layer.bias[...] = rng.normal(0.0, 0.5, layer.bias.shape)
        x = rng.normal(size=(4, sizes[0]))
        proj = rng.normal(size=(4, sizes[-1]))
        err = check_mlp(net, x, proj, h)
        report.cases.append({"case": f"mlp{k}", "sizes": sizes, "activation": act,
                             "output_activation": out_act, "rel_error": err})
    return report


def check_elbo(model: VaeModel, batch: np.ndarray, eps: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of the bound's gradient with the reparameterization noise frozen."""
    _, analytic = elbo_loss(model, batch, eps, with_grads=True)

    def loss() -> float:
        return elbo_loss(model, batch, eps)

    worst = 0.0
    for name, arr in model.named_arrays().items():
        worst = max(worst, relative_error(analytic[name], _numeric_block_grad(loss, arr, h), GRAD_FLOOR))
    s0 = model.output_logvar
    model.output_logvar = s0 + h
    fp = loss()
    model.output_logvar = s0 - h
    fm = loss()
    model.output_logvar = s0
    worst = max(worst, relative_error(analytic["output_logvar"], np.array((fp - fm) / (2 * h)), GRAD_FLOOR))
    return worst


def elbo_suite(seed: int = 0, h: float = 1e-5) -> GradcheckReport:
    """Small VAEs for both hidden activations, random standardization and noise."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for act in ("sigmoid", "rectifier"):
        cfg = TrainConfig(hidden_width=8, latent_width=3, activation=act, seed=seed)
        model = init_vae(6, cfg, rng)
        model.output_logvar = float(rng.normal(0.0, 0.3))
        model.input_mean = rng.normal(size=6)
        model.input_scale = rng.uniform(0.5, 2.0, size=6)
        batch = rng.normal(size=(5, 6))
        eps = rng.normal(size=(5, 3))
        report.cases.append({"case": f"elbo-{act}", "rel_error": check_elbo(model, batch, eps, h)})
    return report


def full_suite(seed: int = 0, n_nets: int = 20) -> GradcheckReport:
    report = random_mlp_suite(seed, n_nets)
    report.cases.extend(elbo_suite(seed).cases)
    return report
