"""Training configuration and its key=value text form.

The text form is an INI file (stdlib ``configparser``) with sections
``[pretrain]``, ``[model]``, ``[augment]``, ``[prototypes]``, ``[objective]``
and ``[finetune]``.  Every field of :class:`TrainConfig` appears exactly once;
unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, field, fields, replace

SECTIONS = {
    "pretrain": ("seed", "batch_size", "epochs_local", "epochs_joint", "lr", "dtype", "strict_numerics"),
    "model": ("num_layers", "hidden_dim", "embed_std"),
    "augment": ("mask_rate", "mask_mode"),
    "prototypes": ("k_per_layer", "kmeans_iters", "temperature", "estep_input", "nce_reduction"),
    "objective": ("k_neg", "nodes_per_graph", "use_graph", "use_sub", "use_global"),
    "finetune": ("ft_batch_size", "ft_epochs", "ft_lr", "ft_gamma", "ft_step_size", "ft_scheduler", "ft_mode"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    epochs_local: int = 1
    epochs_joint: int = 10
    lr: float = 1e-3
    dtype: str = "float64"
    strict_numerics: bool = False

    num_layers: int = 3
    hidden_dim: int = 64
    embed_std: float = 0.02

    mask_rate: float = 0.3
    mask_mode: str = "node"

    # listed top layer first
    k_per_layer: tuple[int, ...] = (4, 8, 16)
    kmeans_iters: int = 100
    temperature: float = 1.0
    estep_input: str = "clean"
    nce_reduction: str = "mean"

    k_neg: int = 1
    nodes_per_graph: int = 8
    use_graph: bool = True
    use_sub: bool = True
    use_global: bool = True

    ft_batch_size: int = 32
    ft_epochs: int = 100
    ft_lr: float = 1e-3
    ft_gamma: float = 0.3
    ft_step_size: int = 30
    ft_scheduler: bool = True
    ft_mode: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "k_per_layer", tuple(int(k) for k in self.k_per_layer))
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.k_per_layer)

    def validate(self) -> None:
        counts = ("batch_size", "num_layers", "hidden_dim", "kmeans_iters", "k_neg", "nodes_per_graph",
                  "ft_batch_size", "ft_step_size")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs_local", "epochs_joint", "ft_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.k_per_layer or any(k < 1 for k in self.k_per_layer):
            raise ConfigError("k_per_layer needs at least one positive entry")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigError("mask_rate must lie in [0, 1]")
        if self.mask_mode not in ("node", "edge"):
            raise ConfigError("mask_mode must be node or edge")
        if self.temperature <= 0 or self.lr <= 0 or self.ft_lr <= 0:
            raise ConfigError("temperature and learning rates must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.estep_input not in ("clean", "masked"):
            raise ConfigError("estep_input must be clean or masked")
        if self.nce_reduction not in ("mean", "sum"):
            raise ConfigError("nce_reduction must be mean or sum")
        if self.ft_mode not in ("full", "probe"):
            raise ConfigError("ft_mode must be full or probe")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale hyperparameters: 5-layer, 300-wide GIN, N=512, three layers of 50 prototypes."""
        base = dict(num_layers=5, hidden_dim=300, batch_size=512, k_per_layer=(50, 50, 50),
                    epochs_local=1, epochs_joint=10, lr=1e-3)
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        values = asdict(self)
        for section, keys in SECTIONS.items():
            parser[section] = {k: _format(values[k]) for k in keys}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        updates = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                updates[key] = raw
        return (base or cls()).with_overrides(updates)

    def with_overrides(self, updates: dict[str, str]) -> "TrainConfig":
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, raw in updates.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _parse(key, types[key], raw)
        try:
            return replace(self, **parsed)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    typ = str(typ)
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ.startswith("tuple"):
            return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw
