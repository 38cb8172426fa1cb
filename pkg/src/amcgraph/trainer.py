"""Full-batch training loop: fresh views each epoch, both encodings,
per-layer losses, attention fusion, reverse sweep, Adam step.

Seeding: the run seed spawns one child stream for parameter init and one
per epoch for augmentation, so histories are bit-reproducible for a
fixed (seed, config, dataset) triple in single-threaded mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, generate_views
from .encoder import ModelParams, bind_params, encode, init_params, project
from .graphdata import Dataset
from .kernels import ArrayPool
from .objective import (LossConfig, attention_weights, layer_loss,
                        total_loss)


class NumericalError(RuntimeError):
    """Training aborted on a non-finite quantity."""


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    tau: float = 0.9
    hidden_dim: int = 128
    activation: str = "relu"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    target_layers: int = 2
    aux_layers: int = 2
    aux_enabled: bool = True
    similarity: str = "cosine"
    layer_mode: str = "multi"
    alpha_mode: str = "layer_mean"
    block_rows: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.target_layers < 1:
            raise ValueError("target_layers must be >= 1")
        if self.aux_layers < 0:
            raise ValueError("aux_layers must be >= 0")
        self.augment.validate()
        self.loss_config().validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, similarity=self.similarity,
                          layer_mode=self.layer_mode,
                          alpha_mode=self.alpha_mode,
                          block_rows=self.block_rows)


@dataclass
class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              wd: float) -> None:
    """Bias-corrected Adam with coupled weight decay (g += wd * theta),
    updating parameter arrays in place."""
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        g = g.reshape(theta.shape)
        if wd != 0.0:
            g = g + wd * theta
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainHistory:
    """Per-epoch total loss, per-layer losses and node-mean attention.
    layer_indices holds the 0-based encoder layers that were contrasted."""

    layer_indices: list
    total: list = field(default_factory=list)
    layer_losses: list = field(default_factory=list)
    mean_alpha: list = field(default_factory=list)

    def append(self, total: float, losses, alphas) -> None:
        self.total.append(total)
        self.layer_losses.append(list(losses))
        self.mean_alpha.append(list(alphas))

    def __len__(self) -> int:
        return len(self.total)

    def write_csv(self, path) -> None:
        labels = [k + 1 for k in self.layer_indices]
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "total_loss"]
                       + [f"loss_k{k}" for k in labels]
                       + [f"alpha_k{k}" for k in labels])
            for e in range(len(self.total)):
                w.writerow([e + 1, repr(self.total[e])]
                           + [repr(x) for x in self.layer_losses[e]]
                           + [repr(x) for x in self.mean_alpha[e]])


def train(dataset: Dataset, cfg: TrainConfig, pool: ArrayPool | None = None,
          progress=None) -> tuple[ModelParams, TrainHistory]:
    """Run the contrastive training loop and return final parameters plus
    the loss/attention history."""
    cfg.validate()
    multi = cfg.layer_mode == "multi"
    # without the multi-layer loss only the target stage's final layer is
    # contrasted, so an auxiliary stage would be provably dead weight
    l2_eff = cfg.aux_layers if (cfg.aux_enabled and multi) else 0

    root = np.random.SeedSequence(cfg.seed)
    init_ss, aug_ss = root.spawn(2)
    mp = init_params(dataset.features.shape[1], cfg.hidden_dim,
                     cfg.target_layers, l2_eff, cfg.activation,
                     np.random.default_rng(init_ss),
                     with_attention=multi,
                     head_layers=None if multi else [cfg.target_layers - 1])
    epoch_seeds = aug_ss.spawn(cfg.epochs)

    contrasted = list(range(mp.num_layers)) if multi else [cfg.target_layers - 1]
    history = TrainHistory(layer_indices=contrasted)
    loss_cfg = cfg.loss_config()
    state = AdamState()
    if pool is None:
        pool = ArrayPool()

    for epoch in range(cfg.epochs):
        view1, view2 = generate_views(dataset, cfg.augment,
                                      epoch_seeds[epoch], cfg.hidden_dim)
        tape = ad.Tape(pool=pool)
        bound = bind_params(tape, mp)
        hs_u = encode(view1, mp, bound, tape)
        hs_v = encode(view2, mp, bound, tape)
        zs_u = project(hs_u, mp, bound, contrasted)
        zs_v = project(hs_v, mp, bound, contrasted)
        losses = [layer_loss(zs_u[k], zs_v[k], loss_cfg, pool)
                  for k in contrasted]
        if multi:
            alpha = attention_weights([zs_u[k] for k in contrasted], bound,
                                      tape)
            loss = total_loss(losses, alpha, loss_cfg, tape)
            alpha_means = alpha.value.mean(axis=0).tolist()
        else:
            loss = losses[0]
            alpha_means = [1.0]
        loss_value = float(loss.value[0, 0])
        if not np.isfinite(loss_value):
            raise NumericalError(f"non-finite total loss at epoch {epoch + 1}")

        tape.backward(loss)
        grads = {name: tape.grad(expr) for name, expr in bound.items()}
        adam_step(dict(mp.named_parameters()), grads, state,
                  cfg.learning_rate, cfg.weight_decay)
        tape.release()

        history.append(loss_value,
                       [float(l.value[0, 0]) for l in losses], alpha_means)
        if progress is not None:
            progress(epoch, loss_value)

    return mp, history
