"""Causal multi-head self-attention encoder producing one fraud logit per sequence.

Block layout (pre-norm, per layer)::

    h = h + Wo . attention(rotate(LN(h) Wq + bq), rotate(LN(h) Wk), LN(h) Wv + bv)
    h = h + W2 . relu(LN(h) W1 + b1) + b2

The key projection carries no bias: under softmax it only adds a per-row
constant to the scores in the non-rotary modes.

Sequences in a batch are right-padded.  Because of the causal mask a real
token never attends to padding, so padded and unpadded evaluation agree.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import container
from .rotary import PositionMode, frequency_schedule, sequence_angles, sinusoidal_table

MASK_VALUE = -1e30
CHECKPOINT_KIND = "redre-checkpoint"


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    model_dim: int = 32
    heads: int = 4
    layers: int = 2
    ff_dim: int = 64
    position_mode: PositionMode = PositionMode.SINUSOIDAL
    max_seq_len: int = 32
    tau: float = 3600.0
    rope_base: float = 10000.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "position_mode", PositionMode.parse(self.position_mode))
        for name in ("input_dim", "model_dim", "heads", "layers", "ff_dim", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive count")
        if self.model_dim % self.heads:
            raise ValueError(f"heads={self.heads} does not divide model_dim={self.model_dim}")
        if self.head_dim % 2:
            raise ValueError(f"head_dim={self.head_dim} must be even for pairwise rotation")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def replace(self, **changes) -> EncoderConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["position_mode"] = self.position_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    D, F = config.model_dim, config.ff_dim
    shapes = {"in.w": (config.input_dim, D), "in.b": (D,)}
    for i in range(config.layers):
        p = f"layer{i}."
        shapes.update({
            p + "ln1.g": (D,), p + "ln1.b": (D,),
            p + "wq": (D, D), p + "bq": (D,),
            p + "wk": (D, D),
            p + "wv": (D, D), p + "bv": (D,),
            p + "wo": (D, D), p + "bo": (D,),
            p + "ln2.g": (D,), p + "ln2.b": (D,),
            p + "w1": (D, F), p + "b1": (F,),
            p + "w2": (F, D), p + "b2": (D,),
        })
    shapes.update({"out.ln.g": (D,), "out.ln.b": (D,), "cls.w": (D, 1), "cls.b": (1,)})
    return shapes


def init_params(config: EncoderConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 1/fan_in), biases 0, layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def check_params(config: EncoderConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter set mismatch; missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


# ---------------------------------------------------------------------------
# building blocks


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, a huge negative above."""
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


def project_qkv(x: ad.Var, p: dict[str, ad.Var], prefix: str = "layer0."):
    """Affine query/key/value projections of ``(..., N, model_dim)`` inputs."""
    d = p[prefix + "wq"].shape[0]
    if x.shape[-1] != d:
        raise ValueError(f"input width {x.shape[-1]} does not match model_dim {d}")
    q = x @ p[prefix + "wq"] + p[prefix + "bq"]
    k = x @ p[prefix + "wk"]
    v = x @ p[prefix + "wv"] + p[prefix + "bv"]
    return q, k, v


def split_heads(x: ad.Var, heads: int) -> ad.Var:
    B, N, D = x.shape
    return ad.transpose(ad.reshape(x, (B, N, heads, D // heads)), (0, 2, 1, 3))


def merge_heads(x: ad.Var) -> ad.Var:
    B, H, N, hd = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, N, H * hd))


def apply_position(q: ad.Var, k: ad.Var, angles: np.ndarray | None):
    """Rotate per-head queries and keys ``(B, H, N, head_dim)``.

    ``angles`` is ``(N, P)`` or ``(B, N, P)``; None leaves q and k untouched.
    Values are never rotated.
    """
    if angles is None:
        return q, k
    if angles.ndim == 3:
        angles = angles[:, None]
    cos, sin = np.cos(angles), np.sin(angles)
    return ad.rotate_pairs(q, cos, sin), ad.rotate_pairs(k, cos, sin)


def attention(q: ad.Var, k: ad.Var, v: ad.Var, mask: np.ndarray, trace: list | None = None) -> ad.Var:
    """Scaled dot-product attention per head; returns ``(B, H, N, head_dim)``."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * scale + mask
    weights = ad.softmax(scores)
    if trace is not None:
        trace.append(weights.value.copy())
    return weights @ v


@dataclass
class AttentionTrace:
    """Per-layer attention weights, each ``(B, heads, N, N)``."""

    layers: list[np.ndarray] = field(default_factory=list)


def forward(graph: ad.Graph, p: dict[str, ad.Var], config: EncoderConfig,
            features: np.ndarray, timestamps: np.ndarray | None, lengths: np.ndarray,
            trace: AttentionTrace | None = None) -> ad.Var:
    """Logits ``(B,)`` for a right-padded batch ``features (B, N, input_dim)``."""
    B, N, _ = features.shape
    h = graph.constant(features) @ p["in.w"] + p["in.b"]
    mode = config.position_mode
    if mode is PositionMode.SINUSOIDAL:
        h = h + sinusoidal_table(N, config.model_dim)
    angles = None
    if mode.rotary:
        sched = frequency_schedule(config.head_dim, config.rope_base)
        angles = sequence_angles(mode, sched, timestamps, length=N, tau=config.tau)
    mask = causal_mask(N)
    captured = trace.layers if trace is not None else None
    for i in range(config.layers):
        pre = f"layer{i}."
        a = ad.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"], config.ln_eps)
        q, k, v = project_qkv(a, p, pre)
        q, k = apply_position(split_heads(q, config.heads), split_heads(k, config.heads), angles)
        o = attention(q, k, split_heads(v, config.heads), mask, captured)
        h = h + (merge_heads(o) @ p[pre + "wo"] + p[pre + "bo"])
        f = ad.layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"], config.ln_eps)
        f = ad.relu(f @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
        h = h + f
    last = ad.take_rows(h, np.asarray(lengths) - 1)
    last = ad.layer_norm(last, p["out.ln.g"], p["out.ln.b"], config.ln_eps)
    logits = last @ p["cls.w"] + p["cls.b"]
    return ad.reshape(logits, (B,))


# ---------------------------------------------------------------------------
# numpy-level entry points


def pad_batch(features: list[np.ndarray], timestamps: list[np.ndarray], width: int | None = None):
    """Right-pad variable-length sequences; returns (features, timestamps, lengths)."""
    lengths = np.array([len(f) for f in features], dtype=np.int64)
    n = int(lengths.max())
    dim = features[0].shape[1] if width is None else width
    X = np.zeros((len(features), n, dim))
    T = np.zeros((len(features), n))
    for b, (f, t) in enumerate(zip(features, timestamps)):
        X[b, : len(f)] = f
        T[b, : len(t)] = t
        T[b, len(t):] = t[-1] if len(t) else 0.0
    return X, T, lengths


def _validate_batch(config: EncoderConfig, features: np.ndarray, lengths: np.ndarray):
    if features.ndim != 3 or features.shape[2] != config.input_dim:
        raise ValueError(
            f"features must be (B, N, {config.input_dim}), got {features.shape}"
        )
    if lengths.size and lengths.min() < 1:
        raise ValueError("sequences must contain at least one token")
    if lengths.size and lengths.max() > config.max_seq_len:
        raise ValueError(f"sequence length {lengths.max()} exceeds max_seq_len {config.max_seq_len}")


def encode_batch(config: EncoderConfig, params: dict[str, np.ndarray], features, timestamps,
                 lengths, trace: AttentionTrace | None = None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    lengths = np.asarray(lengths)
    _validate_batch(config, features, lengths)
    if config.position_mode is PositionMode.REDRE and timestamps is None:
        raise ValueError("REDRE mode requires timestamps")
    graph = ad.Graph()
    handles = {name: graph.constant(value) for name, value in params.items()}
    return forward(graph, handles, config, features, timestamps, lengths, trace).value.copy()


def encode(features, timestamps, config: EncoderConfig, params: dict[str, np.ndarray],
           trace: AttentionTrace | None = None) -> float:
    """Fraud logit for the last token of a single sequence ``features (N, input_dim)``."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("a sequence needs at least one token")
    t = None if timestamps is None else np.asarray(timestamps, dtype=np.float64)[None]
    out = encode_batch(config, params, features[None], t, np.array([features.shape[0]]), trace)
    return float(out[0])


def score_sequences(config: EncoderConfig, params, features: list[np.ndarray],
                    timestamps: list[np.ndarray], batch_size: int = 256) -> np.ndarray:
    """Logits for many sequences, returned in input order.

    Sequences are batched in order of length to limit padding.
    """
    order = np.argsort([len(f) for f in features], kind="stable")
    out = np.empty(len(features))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        X, T, L = pad_batch([features[i] for i in idx], [timestamps[i] for i in idx], config.input_dim)
        out[idx] = encode_batch(config, params, X, T, L)
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, config: EncoderConfig, params: dict[str, np.ndarray], meta: dict | None = None):
    check_params(config, params)
    container.write(path, CHECKPOINT_KIND, {"config": config.to_dict(), **(meta or {})}, params)


def load_checkpoint(path):
    """Returns ``(config, params, meta)``."""
    meta, params = container.read(path, CHECKPOINT_KIND)
    config = EncoderConfig.from_dict(meta.pop("config"))
    check_params(config, params)
    return config, params, meta
