"""INI run configuration: ``[data]``, ``[model]``, ``[train]``, ``[compare]``, ``[gradcheck]``.

Every key is optional; missing keys take the defaults below.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import DEFAULT_GROUPING
from .encoder import EncoderConfig
from .rotary import PositionMode
from .training import DEFAULT_MODES, TrainConfig

DEFAULT_INI = """\
[data]
transactions =
identity =
grouping_columns = card1, card2, card3, card4, card5, card6
feature_columns =
max_seq_len = 32
valid_fraction = 0.2
split_seed = 0
hash_buckets = 64

[model]
position_mode = sinusoidal
model_dim = 32
heads = 4
layers = 2
ff_dim = 64
tau = 3600
rope_base = 10000

[train]
learning_rate = 0.001
batch_size = 64
epochs = 15
seed = 0
pos_weight =
beta1 = 0.9
beta2 = 0.999
adam_eps = 1e-8

[compare]
modes = sinusoidal, rope, redre

[gradcheck]
model_dim = 8
heads = 2
layers = 1
ff_dim = 16
input_dim = 5
seq_len = 4
batch = 3
eps = 1e-5
tolerance = 1e-4
seed = 0
"""


class ConfigError(ValueError):
    pass


def _list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class DataSection:
    transactions: str | None = None
    identity: str | None = None
    grouping_columns: list[str] = field(default_factory=lambda: list(DEFAULT_GROUPING))
    feature_columns: list[str] | None = None
    max_seq_len: int = 32
    valid_fraction: float = 0.2
    split_seed: int = 0
    hash_buckets: int = 64


@dataclass
class GradcheckSection:
    model_dim: int = 8
    heads: int = 2
    layers: int = 1
    ff_dim: int = 16
    input_dim: int = 5
    seq_len: int = 4
    batch: int = 3
    eps: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 0


@dataclass
class RunConfig:
    data: DataSection
    model: dict
    train: TrainConfig
    modes: list[PositionMode]
    gradcheck: GradcheckSection

    def encoder_config(self, input_dim: int, mode=None) -> EncoderConfig:
        model = dict(self.model)
        if mode is not None:
            model["position_mode"] = PositionMode.parse(mode)
        return EncoderConfig(input_dim=input_dim, max_seq_len=self.data.max_seq_len, **model)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_INI)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    defaults = configparser.ConfigParser()
    defaults.read_string(DEFAULT_INI)
    for name in cp.sections():
        if not defaults.has_section(name):
            raise ConfigError(f"{source}: unknown section [{name}]")
        unknown = set(cp[name]) - set(defaults[name])
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{name}]: {sorted(unknown)}")
    try:
        d = cp["data"]
        data = DataSection(
            transactions=d.get("transactions") or None,
            identity=d.get("identity") or None,
            grouping_columns=_list(d["grouping_columns"]),
            feature_columns=_list(d["feature_columns"]) or None,
            max_seq_len=d.getint("max_seq_len"),
            valid_fraction=d.getfloat("valid_fraction"),
            split_seed=d.getint("split_seed"),
            hash_buckets=d.getint("hash_buckets"),
        )
        m = cp["model"]
        model = {
            "position_mode": PositionMode.parse(m["position_mode"]),
            "model_dim": m.getint("model_dim"),
            "heads": m.getint("heads"),
            "layers": m.getint("layers"),
            "ff_dim": m.getint("ff_dim"),
            "tau": m.getfloat("tau"),
            "rope_base": m.getfloat("rope_base"),
        }
        t = cp["train"]
        train = TrainConfig(
            learning_rate=t.getfloat("learning_rate"),
            batch_size=t.getint("batch_size"),
            epochs=t.getint("epochs"),
            seed=t.getint("seed"),
            pos_weight_override=float(t["pos_weight"]) if t["pos_weight"].strip() else None,
            beta1=t.getfloat("beta1"),
            beta2=t.getfloat("beta2"),
            adam_eps=t.getfloat("adam_eps"),
        )
        modes = [PositionMode.parse(x) for x in _list(cp["compare"]["modes"])] or list(DEFAULT_MODES)
        g = cp["gradcheck"]
        gradcheck = GradcheckSection(
            **{k: g.getint(k) for k in ("model_dim", "heads", "layers", "ff_dim", "input_dim",
                                         "seq_len", "batch", "seed")},
            eps=g.getfloat("eps"), tolerance=g.getfloat("tolerance"),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(data, model, train, modes, gradcheck)


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config("")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config(path.read_text(), str(path))
