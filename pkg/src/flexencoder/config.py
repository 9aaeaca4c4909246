"""Model configuration and the flat ``key=value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .nn import Activation
from .optim import OptimizerKind

MAX_HIDDEN_LAYERS = 5

PIVOTS = {"user": (0, 1), "item": (1, 0)}


@dataclass(frozen=True)
class ModelConfig:
    """One point in the configuration space, plus the seed that makes it replayable.

    Defaults are the example column of the parameter table.
    """

    lr: float = 0.001
    weight_decay: float = 0.001
    hidden_layers: tuple[int, ...] = (512, 256)
    drop_prob: float = 0.3
    noise_prob: float = 0.2
    train_batch_size: int = 128
    epochs: int = 20
    optimizer: OptimizerKind = OptimizerKind.ADAM
    activation: Activation = Activation.RELU
    dense_refeed: int = 1
    dense_refeed_rounding: bool = True
    decoder_constraint: bool = False
    mean_normalization: bool = True
    prediction_rounding: bool = False
    pivot: str = "user"
    test_mask_rate: float = 0.5
    test_split_rate: float = 0.3
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "optimizer", OptimizerKind.parse(self.optimizer))
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        object.__setattr__(self, "pivot", _parse_pivot(self.pivot))
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if not 1 <= len(self.hidden_layers) <= MAX_HIDDEN_LAYERS:
            raise ConfigError(
                f"hidden_layers: need 1 to {MAX_HIDDEN_LAYERS} layers, got {len(self.hidden_layers)}"
            )
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f"hidden_layers: sizes must be >= 1, got {list(self.hidden_layers)}")
        for name in ("drop_prob", "noise_prob", "test_mask_rate", "test_split_rate"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1), got {p}")
        if self.train_batch_size < 1:
            raise ConfigError(f"train_batch_size: must be >= 1, got {self.train_batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if self.dense_refeed < 0:
            raise ConfigError(f"dense_refeed: must be >= 0, got {self.dense_refeed}")

    @property
    def pivot_index(self) -> tuple[int, int]:
        return PIVOTS[self.pivot]

    @property
    def item_based(self) -> bool:
        return self.pivot == "item"

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, str]:
        """Field name to config-file value text."""
        return {f.name: format_value(getattr(self, f.name)) for f in dataclasses.fields(self)}


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig))


def _parse_pivot(value: Any) -> str:
    if isinstance(value, str):
        text = value.strip().lower().replace(" ", "")
        if text in PIVOTS:
            return text
        for name, idx in PIVOTS.items():
            if text == f"[{idx[0]},{idx[1]}]" or text == f"{idx[0]},{idx[1]}":
                return name
    elif isinstance(value, (tuple, list)):
        for name, idx in PIVOTS.items():
            if tuple(int(v) for v in value) == idx:
                return name
    raise ConfigError(f"pivot: expected [0,1] (user-based) or [1,0] (item-based), got {value!r}")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_int(text: str) -> int:
    try:
        return int(text)  # exact, also for seeds beyond 2**53
    except ValueError:
        pass
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_int_list(text: str) -> tuple[int, ...]:
    t = text.strip()
    if not (t.startswith("[") and t.endswith("]")):
        raise ValueError(f"expected a bracketed list like [512,256], got {text!r}")
    body = t[1:-1].strip()
    if not body:
        return ()
    return tuple(_parse_int(part) for part in body.split(","))


PARSERS: dict[str, Callable[[str], Any]] = {
    "lr": float,
    "weight_decay": float,
    "hidden_layers": _parse_int_list,
    "drop_prob": float,
    "noise_prob": float,
    "train_batch_size": _parse_int,
    "epochs": _parse_int,
    "optimizer": OptimizerKind.parse,
    "activation": Activation.parse,
    "dense_refeed": _parse_int,
    "dense_refeed_rounding": _parse_bool,
    "decoder_constraint": _parse_bool,
    "mean_normalization": _parse_bool,
    "prediction_rounding": _parse_bool,
    "pivot": _parse_pivot,
    "test_mask_rate": float,
    "test_split_rate": float,
    "seed": _parse_int,
}


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (OptimizerKind, Activation)):
        return value.value
    if isinstance(value, tuple):
        return "[" + ",".join(str(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, text: str) -> Any:
    if key not in PARSERS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return PARSERS[key](text)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{key}: malformed value {text.strip()!r} ({exc})") from None


def parse_config_text(text: str, source: str = "<config>") -> ModelConfig:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key not in PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        lines[key] = lineno
    try:
        return ModelConfig(**values)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        where = f"{source}:{lines[key]}" if key in lines else source
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(path: str | Path) -> ModelConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def serialize_config(config: ModelConfig) -> str:
    values = config.to_dict()
    values["pivot"] = format_value(config.pivot_index).replace(" ", "")
    return "".join(f"{k}={v}\n" for k, v in values.items())
