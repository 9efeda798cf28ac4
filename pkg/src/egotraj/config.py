"""Pipeline configuration: one flat set of keys, read from an INI-style
``key = value`` file and overridable from the command line."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields

from .classifier import TrainConfig
from .descriptors import DescriptorConfig
from .encoding import EncodingConfig
from .errors import ConfigError, InputError
from .flow import FlowConfig
from .trajectories import TrackerConfig

SECTION = "egotraj"


@dataclass(frozen=True)
class Config:
    # tracking
    grid_step: int = 5
    traj_length: int = 15
    num_scales: int = 8
    scale_factor: float = 1.0 / math.sqrt(2.0)
    min_eig_frac: float = 0.001
    static_std_px: float = 1.0
    max_step_px: float = 20.0
    max_step_frac: float = 0.7
    median_kernel: int = 3
    # optical flow
    flow_levels: int = 4
    flow_pyr_scale: float = 0.5
    flow_winsize: int = 15
    flow_iterations: int = 5
    flow_poly_sigma: float = 1.1
    # head motion
    affine_grid: int = 8
    ransac_iters: int = 200
    ransac_thresh: float = 1.0
    # descriptors
    patch_size: int = 32
    n_sigma: int = 2
    n_tau: int = 3
    zero_flow_thresh: float = 0.4
    # encoding
    window: int = 30
    vocab_size: int = 2000
    sample_frac: float = 0.1
    hog_pyramid: int = 3
    hof_pyramid: int = 3
    use_shape: bool = False
    use_hog: bool = True
    use_hof: bool = True
    use_mbh: bool = True
    use_kinematic: bool = True
    use_statistical: bool = True
    use_camera: bool = True
    # classifier
    seed: int = 42
    c_grid: str = "0.1,1,10,100"
    gamma: str = "auto"
    folds: int = 4
    smo_tol: float = 1e-3
    # segmentation
    mrf_lambda: float = 1.0
    mrf_radius: int = 5

    def __post_init__(self):
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window must be an even number >= 2, got {self.window}")
        if not 0.0 < self.scale_factor < 1.0:
            raise ConfigError("scale_factor must lie in (0, 1)")
        if not 0.0 < self.sample_frac <= 1.0:
            raise ConfigError("sample_frac must lie in (0, 1]")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.mrf_radius < 1 or self.mrf_lambda < 0:
            raise ConfigError("mrf_radius must be >= 1 and mrf_lambda >= 0")
        try:
            self.tracker()
            self.descriptor()
            self.training()
        except InputError as e:
            raise ConfigError(str(e)) from None

    # -- typed views ---------------------------------------------------------

    def tracker(self) -> TrackerConfig:
        return TrackerConfig(self.grid_step, self.traj_length, self.num_scales, self.scale_factor,
                             self.min_eig_frac, self.static_std_px, self.max_step_px, self.max_step_frac)

    def flow(self) -> FlowConfig:
        return FlowConfig(levels=self.flow_levels, pyr_scale=self.flow_pyr_scale,
                          winsize=self.flow_winsize, iterations=self.flow_iterations,
                          poly_sigma=self.flow_poly_sigma)

    def descriptor(self) -> DescriptorConfig:
        return DescriptorConfig(patch_size=self.patch_size, n_sigma=self.n_sigma, n_tau=self.n_tau,
                                traj_length=self.traj_length, zero_flow_thresh=self.zero_flow_thresh)

    def encoding(self) -> EncodingConfig:
        chans = [c for c, on in (("shape", self.use_shape), ("hog", self.use_hog), ("hof", self.use_hof),
                                 ("mbhx", self.use_mbh), ("mbhy", self.use_mbh),
                                 ("kinematic", self.use_kinematic)) if on]
        if not chans:
            raise ConfigError("at least one histogram channel must be enabled")
        return EncodingConfig(vocab_size=self.vocab_size, channels=tuple(chans),
                              pyramid={"hog": self.hog_pyramid, "hof": self.hof_pyramid},
                              use_statistical=self.use_statistical, use_camera=self.use_camera,
                              window=self.window, sample_frac=self.sample_frac, seed=self.seed)

    def training(self) -> TrainConfig:
        try:
            grid = tuple(float(c) for c in self.c_grid.split(",") if c.strip())
            gamma = None if self.gamma.strip().lower() == "auto" else float(self.gamma)
        except ValueError:
            raise ConfigError(f"bad c_grid {self.c_grid!r} or gamma {self.gamma!r}") from None
        return TrainConfig(c_grid=grid, gamma=gamma, folds=self.folds, seed=self.seed, tol=self.smo_tol)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key, value):
    kind = FIELD_TYPES[key]
    try:
        if kind == "bool":
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value).strip()
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None


def from_mapping(values: dict, base: Config | None = None) -> Config:
    base = base or Config()
    changes = {}
    for k, v in values.items():
        key = k.strip().replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {k!r}")
        changes[key] = _convert(key, v)
    return base.replace(**changes)


def read_config(path, base: Config | None = None) -> Config:
    """Parse ``key = value`` lines, optionally under an ``[egotraj]`` section."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = f"[{SECTION}]\n" + text
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    values = {}
    for section in parser.sections():
        if section != SECTION:
            raise ConfigError(f"{path}: unknown section [{section}]")
        values.update(parser[section])
    return from_mapping(values, base)


def write_config(path, cfg: Config) -> None:
    with open(path, "w") as fh:
        fh.write(f"[{SECTION}]\n")
        for f in fields(Config):
            v = getattr(cfg, f.name)
            fh.write(f"{f.name} = {repr(v) if isinstance(v, float) else v}\n")
