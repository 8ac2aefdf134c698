"""Class-weighted BCE training with Adam, and the three-way model comparison."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, forward, init_params, pad_batch
from .metrics import EvalReport, config_digest, evaluate
from .rotary import PositionMode

log = logging.getLogger(__name__)

DEFAULT_MODES = (PositionMode.SINUSOIDAL, PositionMode.ROPE, PositionMode.REDRE)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 15
    seed: int = 0
    pos_weight_override: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.pos_weight_override is not None and not self.pos_weight_override > 0:
            raise ValueError("pos_weight_override must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# loss


def pos_weight_from_counts(n_neg: int, n_pos: int) -> float:
    if n_pos < 1:
        raise ValueError("no positive samples to weight")
    return n_neg / n_pos


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(z):
    return np.logaddexp(0.0, z)


def weighted_bce(logit, label, pos_weight: float = 1.0):
    """``-[w y log s(z) + (1 - y) log(1 - s(z))]`` in log-sum-exp form."""
    if not pos_weight > 0:
        raise ValueError("pos_weight must be positive")
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    return pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)


def weighted_bce_grad(logit, label, pos_weight: float = 1.0):
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    s = sigmoid(z)
    return pos_weight * y * (s - 1.0) + (1.0 - y) * s


def bce_loss(logits: ad.Var, labels, pos_weight: float) -> ad.Var:
    """Mean weighted BCE over a batch, recorded on the tape."""
    labels = np.asarray(labels, dtype=np.float64)
    z = logits.value
    n = z.size
    value = np.asarray(weighted_bce(z, labels, pos_weight).mean())
    grad = weighted_bce_grad(z, labels, pos_weight) / n
    return logits.graph.record("weighted_bce", (logits,), value, lambda g: (g * grad,))


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameter and state objects."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ValueError("params, grads and optimiser state cover different names")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k in params:
        g = grads[k]
        if g.shape != params[k].shape or state.m[k].shape != params[k].shape:
            raise ValueError(f"{k}: shape mismatch between parameter and gradient/state")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = params[k] - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_auc: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    best_epoch: int = -1
    pos_weight: float = 1.0

    def __len__(self):
        return len(self.train_loss)

    def to_tsv(self, include_time: bool = True) -> str:
        head = ["epoch", "train_loss", "valid_auc"] + (["wall_time"] if include_time else [])
        rows = ["\t".join(head)]
        for i in range(len(self)):
            cols = [str(i + 1), repr(self.train_loss[i]), repr(self.valid_auc[i])]
            if include_time:
                cols.append(f"{self.wall_time[i]:.3f}")
            rows.append("\t".join(cols))
        return "\n".join(rows) + "\n"


def _targets(sequences) -> np.ndarray:
    return np.array([s.label for s in sequences], dtype=np.int64)


def loss_on_batch(config: EncoderConfig, params, sequences, pos_weight: float):
    """Build the tape for one batch; returns ``(graph, loss_var)``."""
    X, T, L = pad_batch([s.features for s in sequences], [s.timestamps for s in sequences],
                        config.input_dim)
    graph = ad.Graph()
    handles = {k: graph.param(v, k) for k, v in params.items()}
    logits = forward(graph, handles, config, X, T, L)
    return graph, bce_loss(logits, _targets(sequences), pos_weight)


def epoch_batches(lengths, batch_size: int, seed: int, epoch: int, bucket: int = 16) -> list[np.ndarray]:
    """Mini-batch index lists for one epoch, a pure function of (seed, epoch).

    Indices are shuffled, sorted by length inside chunks of ``bucket``
    batches to cut padding, cut into batches, and the batches shuffled.
    """
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(lengths))
    lengths = np.asarray(lengths)
    chunk = batch_size * bucket
    batches = []
    for lo in range(0, len(order), chunk):
        part = order[lo:lo + chunk]
        part = part[np.argsort(lengths[part], kind="stable")]
        batches.extend(part[i:i + batch_size] for i in range(0, len(part), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def train(train_set, valid_set, encoder_config: EncoderConfig, train_config: TrainConfig,
          params: dict[str, np.ndarray] | None = None):
    """Train on ``train_set`` and keep the epoch with the best validation AUC.

    Returns ``(params, history)``.  When the validation set lacks a class the
    AUC is recorded as NaN and the final epoch is kept.
    """
    y = _targets(train_set)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("training set must contain both classes")
    if train_config.pos_weight_override is not None:
        pos_weight = train_config.pos_weight_override
    else:
        pos_weight = pos_weight_from_counts(len(y) - n_pos, n_pos)
    if params is None:
        params = init_params(encoder_config, train_config.seed)
    state = AdamState.zeros_like(params)
    lengths = [len(s) for s in train_set]
    history = TrainHistory(pos_weight=pos_weight)
    y_valid = _targets(valid_set)
    can_score = len(y_valid) > 0 and 0 < y_valid.sum() < len(y_valid)
    best, best_auc = params, -np.inf
    for epoch in range(train_config.epochs):
        start = time.perf_counter()
        total = 0.0
        for idx in epoch_batches(lengths, train_config.batch_size, train_config.seed, epoch):
            batch = [train_set[i] for i in idx]
            graph, loss = loss_on_batch(encoder_config, params, batch, pos_weight)
            grads = graph.backward(loss)
            params, state = adam_step(params, grads, state, train_config)
            total += float(loss.value) * len(batch)
        auc = evaluate(params, valid_set, encoder_config).auc if can_score else float("nan")
        history.train_loss.append(total / len(train_set))
        history.valid_auc.append(auc)
        history.wall_time.append(time.perf_counter() - start)
        log.info("%s epoch %d loss %.4f valid auc %.4f", encoder_config.position_mode.value,
                 epoch + 1, history.train_loss[-1], auc)
        if not can_score or auc > best_auc:
            best, best_auc, history.best_epoch = params, auc, epoch
    return best, history


# ---------------------------------------------------------------------------
# comparison protocol


@dataclass
class ModelResult:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    history: TrainHistory
    report: EvalReport


@dataclass
class Comparison:
    results: dict[str, ModelResult]

    def aucs(self) -> dict[str, float]:
        return {mode: r.report.auc for mode, r in self.results.items()}

    def summary(self) -> str:
        lines = ["mode\tvalid_auc\tbest_epoch\tn_pos\tn_neg"]
        for mode, r in self.results.items():
            lines.append(
                f"{mode}\t{r.report.auc:.6f}\t{r.history.best_epoch + 1}\t{r.report.n_pos}\t{r.report.n_neg}"
            )
        return "\n".join(lines) + "\n"

    def write(self, directory) -> None:
        """Checkpoint, report, ROC table and history per mode plus ``summary.tsv``.

        Wall-clock times go to ``*.timing.json`` files only, so every other
        file is reproducible byte for byte.
        """
        from .encoder import save_checkpoint

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for mode, r in self.results.items():
            save_checkpoint(directory / f"{mode}.ckpt", r.config, r.params,
                            {"best_epoch": r.history.best_epoch})
            r.report.write(directory / f"{mode}.report.json")
            (directory / f"{mode}.history.tsv").write_text(r.history.to_tsv(include_time=False))
        (directory / "summary.tsv").write_text(self.summary())
        timing = {mode: {"epochs": r.history.wall_time, "eval": r.report.wall_time}
                  for mode, r in self.results.items()}
        (directory / "run.timing.json").write_text(json.dumps(timing, indent=2) + "\n")


def compare_models(dataset, encoder_config: EncoderConfig, train_config: TrainConfig,
                   modes=DEFAULT_MODES) -> Comparison:
    """Train and evaluate one model per position mode under identical settings."""
    results = {}
    for mode in modes:
        mode = PositionMode.parse(mode)
        cfg = encoder_config.replace(position_mode=mode)
        params, history = train(dataset.train, dataset.valid, cfg, train_config)
        digest = config_digest(cfg.to_dict(), train_config.to_dict())
        report = evaluate(params, dataset.valid, cfg, train_config.seed, digest)
        results[mode.value] = ModelResult(cfg, params, history, report)
    return Comparison(results)
