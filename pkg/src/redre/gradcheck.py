"""Finite-difference check of the full encoder + weighted BCE in every position mode."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, forward, init_params
from .rotary import PositionMode
from .training import bce_loss


def random_problem(section, seed: int | None = None):
    """Tiny batch, labels with both classes, and irregular timestamps."""
    rng = np.random.default_rng(section.seed if seed is None else seed)
    B, N, F = section.batch, section.seq_len, section.input_dim
    X = rng.standard_normal((B, N, F))
    T = np.cumsum(rng.exponential(3600.0, (B, N)), axis=1) + rng.uniform(0, 1e6, (B, 1))
    lengths = np.full(B, N)
    if B > 1:
        lengths[-1] = max(1, N - 1)  # exercise padding too
    y = (np.arange(B) % 2 == 0).astype(np.float64)
    return X, T, lengths, y


def encoder_loss_fn(config: EncoderConfig, X, T, lengths, y, pos_weight: float):
    def loss(graph, handles):
        return bce_loss(forward(graph, handles, config, X, T, lengths), y, pos_weight)
    return loss


def check_mode(section, mode, pos_weight: float = 3.0) -> ad.GradReport:
    config = EncoderConfig(
        input_dim=section.input_dim, model_dim=section.model_dim, heads=section.heads,
        layers=section.layers, ff_dim=section.ff_dim, position_mode=mode,
        max_seq_len=max(section.seq_len, 1),
    )
    rng = np.random.default_rng(section.seed + 1)
    params = init_params(config, section.seed)
    # move gains/biases off their init values so every path carries gradient
    for name, value in params.items():
        if value.ndim == 1:
            params[name] = value + 0.2 * rng.standard_normal(value.shape)
    X, T, L, y = random_problem(section)
    return ad.finite_difference_check(encoder_loss_fn(config, X, T, L, y, pos_weight), params, section.eps)


def run_suite(section, modes=tuple(PositionMode)) -> dict[str, ad.GradReport]:
    return {PositionMode.parse(m).value: check_mode(section, m) for m in modes}
