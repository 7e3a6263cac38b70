"""Finite-difference check of the joint loss on a tiny random SHAPED model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import EOS, StyledExample
from .model import ModelConfig, ShapedModel


@dataclass
class TinySetup:
    vocab_size: int = 20
    embed_dim: int = 8
    hidden_dim: int = 12
    attn_dim: int = 8
    cls_hidden: int = 8
    num_styles: int = 2
    batch: int = 2
    # Near the usual +-0.08 init the loss gradients are ~1e-9 and central
    # differences are dominated by round-off, so the check samples a wider point.
    init_scale: float = 1.0
    samples_per_param: int | None = 24
    eps: float = 1e-5


def tiny_problem(setup: TinySetup, seed: int) -> tuple[ShapedModel, list[StyledExample]]:
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        vocab_size=setup.vocab_size, embed_dim=setup.embed_dim, hidden_dim=setup.hidden_dim,
        attn_dim=setup.attn_dim, cls_hidden=setup.cls_hidden, init_scale=setup.init_scale,
    )
    styles = [f"style{i}" for i in range(setup.num_styles)]
    model = ShapedModel(config, styles, "shaped", seed=seed)
    batch = []
    for i in range(setup.batch):
        src = rng.integers(4, setup.vocab_size, size=int(rng.integers(3, 7))).tolist()
        tgt = rng.integers(4, setup.vocab_size, size=int(rng.integers(1, 5))).tolist() + [EOS]
        batch.append(StyledExample(src, tgt, i % setup.num_styles))
    return model, batch


def check_joint_gradients(setup: TinySetup | None = None, seed: int = 0, corrupt=None) -> ad.GradCheckResult:
    setup = setup or TinySetup()
    model, batch = tiny_problem(setup, seed)
    return ad.grad_check(
        lambda params: model.joint_loss(batch), model.params,
        eps=setup.eps, samples_per_param=setup.samples_per_param, seed=seed, corrupt=corrupt,
    )


def group_errors(model: ShapedModel, result: ad.GradCheckResult) -> dict[str, float]:
    return {g: max(result.per_param[n] for n in names) for g, names in model.param_groups().items()}
