"""Training/eval configuration: a flat dataclass read from `key = value` files."""

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .mapper import MapperConfig
from .nn import ConfigError
from .objective import LossWeights
from .tiling import TilingPolicy

BRANCHES = ("local", "global", "both")
FUSIONS = ("uncertainty", "fixed", "learned-scalar")
SCORERS = ("token", "heatmap", "both")


@dataclass
class TrainConfig:
    seed: int = 7
    steps: int = 200
    batch_size: int = 8
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    focal_weight: float = 1.0
    laplace_weight: float = 1.0
    score_weight: float = 1.0
    focal_gamma: float = 2.0
    laplace_warmup_steps: int = 0
    width: int = 64
    heads: int = 4
    stack_depth: int = 2
    tokens_per_tile: int = 1
    feature_grid: int = 8
    tile_resolution: int = 16
    mlp_ratio: int = 2
    residual: bool = True
    pos_embed: bool = True
    base_tile_size: int = 64
    max_tiles: int = 4
    heat_resolution: int = 64
    scorer_hidden: int = 32
    branch: str = "both"
    fusion: str = "uncertainty"
    scorer: str = "both"
    use_gt_heatmap_for_scorer: bool = False
    fixation_threshold: float = 0.5
    region_threshold: float = 0.3
    log_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.laplace_warmup_steps < 0:
            raise ConfigError("laplace_warmup_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.branch not in BRANCHES:
            raise ConfigError(f"branch must be one of {BRANCHES}, got {self.branch!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.base_tile_size % self.feature_grid:
            raise ConfigError("base_tile_size must be divisible by feature_grid")
        if self.heat_resolution % 4:
            raise ConfigError("heat_resolution must be divisible by 4")
        if not 0.0 < self.region_threshold < 1.0:
            raise ConfigError("region_threshold must lie in (0, 1)")
        self.loss_weights()
        self.mapper_config()
        self.tiling_policy()

    def mapper_config(self):
        return MapperConfig(self.width, self.heads, self.stack_depth, self.tokens_per_tile,
                            self.feature_grid, self.tile_resolution, self.mlp_ratio,
                            self.residual, self.pos_embed)

    def tiling_policy(self):
        return TilingPolicy(self.base_tile_size, self.max_tiles)

    def loss_weights(self):
        return LossWeights(self.focal_weight, self.laplace_weight, self.score_weight, self.focal_gamma)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replace(self, **kw):
        d = self.to_dict()
        for k in kw:
            if k not in d:
                raise ConfigError(f"unknown config key {k!r}")
        d.update(kw)
        return TrainConfig(**d)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def _coerce(raw, default, key):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from e
    return raw.strip("\"'")


def parse_config_text(text, base=None):
    base = base or TrainConfig()
    values = base.to_dict()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in values:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(raw, getattr(TrainConfig, key), key)
    return TrainConfig(**values)


def load_config(path):
    with open(path) as f:
        return parse_config_text(f.read())


def dump_config_text(cfg):
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n"
                   for k, v in cfg.to_dict().items())
