"""Training/run configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

log = logging.getLogger(__name__)

# Published hyperparameters; ``desk`` overrides only the cost-driving ones.
PROFILES = {
    "full": {},
    "desk": {"epochs": 200, "batch_size": 64, "subsample": 0.05},
}
UNUSED_KEYS = ("beta", "tau")
# Not part of the model/optimisation identity, so excluded from the fingerprint.
RUN_ONLY = ("epochs", "eval_every", "checkpoint_path", "profile")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 512
    epochs: int = 2000
    embed_dim: int = 128
    alpha: float = 0.2
    beta: float = 0.2
    tau: float = 0.5
    threshold_p: float = 6.0
    seed: int = 0
    dp: bool = True
    gcn: bool = True
    trans: bool = True
    eval_every: int = 0
    checkpoint_path: str = ""
    profile: str = "full"
    subsample: float = 1.0
    max_seq_len: int = 1000
    n_heads: int = 4
    n_blocks: int = 2
    d_ff: int = 256
    head_hidden: tuple = (512, 128)
    dropout: float = 0.1
    clip_norm: float = 5.0
    contact_threshold: float = 0.5
    contact_direction: str = "ge"
    chain_window: int = 2
    strong_threshold: float = 7.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.gcn:
            raise ConfigError("gcn = false is not a supported configuration; the GCN branch is always on")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.embed_dim % self.n_heads:
            raise ConfigError("embed_dim must be divisible by n_heads")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample must be in (0, 1]")
        if self.contact_direction not in ("ge", "le"):
            raise ConfigError("contact_direction must be 'ge' or 'le'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        self.head_hidden = tuple(int(h) for h in self.head_hidden)

    @property
    def flags(self) -> dict:
        return {"dp": self.dp, "gcn": self.gcn, "trans": self.trans}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if k == "head_hidden" else v) for k, v in d.items() if k in known})

    def fingerprint(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in RUN_ONLY}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **kw) -> TrainConfig:
        return dataclasses.replace(self, **kw)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""
    output_dir: str = ""
    report_path: str = ""
    contact_map_dir: str = ""
    unused: list = field(default_factory=list)

    def check_paths(self) -> None:
        for name in ("dataset", "contact_map_dir"):
            p = getattr(self, name)
            if p and not Path(p).exists():
                raise ConfigError(f"{name}: path {p!r} does not exist")


_RUN_KEYS = {"dataset", "output_dir", "report_path", "contact_map_dir"}
_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False, "on": True, "off": False}


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool or kind == "bool":
            v = _BOOL.get(raw.lower())
            if v is None:
                raise ValueError
            return v
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        if kind is tuple or kind == "tuple":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        name = getattr(kind, "__name__", kind)
        raise ConfigError(f"config key {key!r}: expected {name}, got {raw!r}") from None


def parse_config_text(text: str, base_dir: Path | None = None, source: str = "<config>") -> RunConfig:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        entries[key] = raw
    types = {f.name: f.type for f in fields(TrainConfig)}
    profile = entries.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values: dict = dict(PROFILES[profile])
    run: dict = {}
    unused = []
    for key, raw in entries.items():
        if key in _RUN_KEYS:
            p = Path(raw)
            if base_dir is not None and raw and not p.is_absolute():
                p = base_dir / p
            run[key] = str(p) if raw else ""
        elif key in types:
            values[key] = _coerce(key, raw, types[key])
            if key in UNUSED_KEYS:
                unused.append(key)
        else:
            raise ConfigError(f"{source}: unknown config key {key!r}")
    for key in unused:
        log.warning("config key %r is accepted and recorded but unused by the model", key)
    try:
        train = TrainConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return RunConfig(train=train, unused=unused, **run)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), base_dir=path.parent, source=str(path))
    cfg.check_paths()
    return cfg
