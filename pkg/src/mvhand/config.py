"""Configuration dataclasses and TOML/JSON loading.

A config file has optional sections ``[model]``, ``[loss]``, ``[train]``,
``[rig]``, ``[noise]`` and ``[data]``; every field has a default. Unknown
keys and out-of-range values raise :class:`ConfigError` naming the field.
"""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    grid: int = 64                 # heatmap grid (image / 4)
    heatmap_sigma: float = 2.0     # pixels on the heatmap grid
    channels: tuple = (8, 16, 32, 64)
    head_hidden: int = 256
    head_layers: int = 2           # hidden layers per regression head
    head_pool: str = "mean"        # "mean" (global average) or "flatten" over the last level
    head_coords: bool = True       # append per-joint heatmap centroids and masses to the head input
    c1: int = 16
    c2: int = 32
    heads: int = 4
    cva_hidden: int = 64
    gcn_hidden: int = 64
    adjacency_gain: float = 4.0
    token_width: int = 32
    refine_hidden: int = 64
    use_cva: bool = True
    use_vsf: bool = True
    use_dcvi: bool = True
    use_g1: bool = True
    use_g2: bool = True
    use_g3: bool = True

    @property
    def c3(self):
        return sum(self.channels[:3])

    @property
    def width(self):
        return self.c1 + self.c2 + self.c3

    def validate(self):
        _positive(self, "grid", "heatmap_sigma", "head_hidden", "head_layers", "c1", "c2", "heads", "cva_hidden",
                  "gcn_hidden", "token_width", "refine_hidden")
        if self.head_pool not in ("mean", "flatten"):
            raise ConfigError("model.head_pool: must be 'mean' or 'flatten'")
        if len(self.channels) != 4 or any(c <= 0 for c in self.channels):
            raise ConfigError("model.channels: need four positive widths")
        if self.grid % 32:
            raise ConfigError("model.grid: must be a multiple of 32 (4x patch then three 2x levels)")
        h4 = (self.grid // 32) ** 2
        if self.c2 % h4:
            raise ConfigError(f"model.c2: must be divisible by the {h4} cells of the last level")
        if self.width % self.heads:
            raise ConfigError("model.heads: must divide c1 + c2 + c3")
        return self


@dataclass
class LossWeights:
    alpha: float = 0.01
    gamma: float = 100.0
    w_2d: float = 1.0
    w_c2d: float = 1.0
    w_cf: float = 1.0
    w_d: float = 1.0
    w_prior: float = 1.0
    metric_scale: float = 200.0     # multiplies 3D L1 terms (meters -> pixel-comparable units)
    scale_invariant_3d: bool = True  # rescale predictions to the target's size inside L_cf and L_d
    use_confidence: bool = True
    use_c2d: bool = True
    use_cf: bool = True
    use_d: bool = True

    def validate(self):
        for f in ("alpha", "gamma", "w_2d", "w_c2d", "w_cf", "w_d", "w_prior", "metric_scale"):
            if getattr(self, f) < 0:
                raise ConfigError(f"loss.{f}: must be >= 0")
        return self


@dataclass
class TrainConfig:
    warmup_epochs: int = 2
    main_epochs: int = 6
    lr: float = 3e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_timesteps: int = 8
    views: int = 8
    seed: int = 0
    clip_norm: float = 10.0
    collab_ramp_steps: int = 225      # linear warm-in of the collaborative loss weights over this many steps
    view_mask_finetune_epochs: int = 0
    self_training_iterations: int = 1
    use_extrinsics: bool = True
    warmup_only: bool = False

    def validate(self):
        for f in ("warmup_epochs", "main_epochs", "view_mask_finetune_epochs", "collab_ramp_steps"):
            if getattr(self, f) < 0:
                raise ConfigError(f"train.{f}: must be >= 0")
        _positive(self, "lr", "batch_timesteps", "views", "clip_norm", "eps")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay: must be >= 0")
        if not (1 <= self.self_training_iterations <= 3):
            raise ConfigError("train.self_training_iterations: must be in 1..3")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("train.betas: need two values in [0, 1)")
        return self


@dataclass
class RigConfig:
    num_views: int = 8
    radius: float = 0.5
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 128.0
    cy: float = 128.0
    image_size: int = 256
    elevation_deg: float = 20.0

    def validate(self):
        _positive(self, "num_views", "radius", "fx", "fy", "image_size")
        return self


@dataclass
class NoiseModel:
    gaussian_sigma_px: float = 2.0
    outlier_prob: float = 0.05
    outlier_radius_px: float = 40.0
    drop_prob: float = 0.05
    inlier_conf: tuple = (0.6, 1.0)
    outlier_conf: tuple = (0.1, 0.5)

    def validate(self):
        for f in ("outlier_prob", "drop_prob"):
            v = getattr(self, f)
            if not 0 <= v <= 1:
                raise ConfigError(f"noise.{f}: probability must be in [0, 1]")
        for f in ("gaussian_sigma_px", "outlier_radius_px"):
            if getattr(self, f) < 0:
                raise ConfigError(f"noise.{f}: must be >= 0")
        return self

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, (1.0, 1.0), (1.0, 1.0))


@dataclass
class DataConfig:
    num_samples: int = 2000
    seed: int = 0
    holdout_fraction: float = 0.1

    def validate(self):
        _positive(self, "num_samples")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("data.holdout_fraction: must be in [0, 1)")
        return self


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        out = cls()
        for section, values in d.items():
            if not hasattr(out, section):
                raise ConfigError(f"{section}: unknown config section")
            target = getattr(out, section)
            known = {f.name: f for f in dataclasses.fields(target)}
            for k, v in values.items():
                if k not in known:
                    raise ConfigError(f"{section}.{k}: unknown field")
                default = getattr(target, k)
                if isinstance(default, tuple):
                    v = tuple(v)
                elif isinstance(default, bool):
                    if not isinstance(v, bool):
                        raise ConfigError(f"{section}.{k}: expected a boolean")
                elif isinstance(default, int):
                    if isinstance(v, bool) or not isinstance(v, int):
                        raise ConfigError(f"{section}.{k}: expected an integer")
                elif isinstance(default, float):
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise ConfigError(f"{section}.{k}: expected a number")
                    v = float(v)
                setattr(target, k, v)
        return out.validate()


def _positive(obj, *names):
    section = {ModelConfig: "model", TrainConfig: "train", RigConfig: "rig",
               DataConfig: "data"}.get(type(obj), type(obj).__name__)
    for n in names:
        if not getattr(obj, n) > 0:
            raise ConfigError(f"{section}.{n}: must be > 0")


def read_config_file(path):
    """Raw section dict from a TOML or JSON file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ImportError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def load_config(path=None):
    if path is None:
        return ExperimentConfig().validate()
    return ExperimentConfig.from_dict(read_config_file(path))


def replace(cfg, **sections):
    """Copy of ``cfg`` with ``section={field: value}`` overrides applied."""
    d = cfg.to_dict()
    for section, values in sections.items():
        d[section].update(values)
    return ExperimentConfig.from_dict(d)
