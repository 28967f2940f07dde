"""Experiment configuration models for zakdd.

This module provides:
- Enums for experiment kinds, channel models, detectors and waveforms
- Pydantic models for the experiment configuration tree
- YAML loading with line/column error reporting and YAML dumping
- Feasibility checks reported by ``zakdd validate``
"""

from math import gcd
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
from enum import Enum

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from modules.channel import ChannelInstance, PathSpec, SeedLike, identity_channel, sample_veh_a
from modules.filters import FilterFamily, FilterSpec, make_filter
from modules.grid import GridParams, make_grid
from modules.rxchain import CgmConfig
from modules.schemes import MubConfig
from utils.error_handler import ConfigError, FileError, ZakDDError


# Enums
class ExperimentKind(str, Enum):
    """Experiments the runner knows."""
    AMBIGUITY = "ambiguity"
    FILTERS = "filters"
    BER = "ber"
    FDE = "fde"
    DIFFCOMM = "diffcomm"
    MUB = "mub"
    RADAR = "radar"
    POLARIMETRY = "polarimetry"
    PAPR = "papr"


class ChannelModel(str, Enum):
    """Channel sources."""
    IDENTITY = "identity"
    VEH_A = "veh_a"
    PATHS = "paths"


class Detector(str, Enum):
    """Equalization schemes compared by the BER experiment."""
    DD_MMSE = "dd-mmse"
    FD_CGM = "fd-cgm"


class WaveformKind(str, Enum):
    """Radar / ambiguity waveforms."""
    PULSONE = "pulsone"
    CHIRP = "chirp"
    CAZAC = "cazac"
    ZC = "zc"
    AUTO = "auto"


# Pydantic Models
class GridConfig(BaseModel):
    """Frame geometry."""
    M: int = Field(default=31, ge=1, description="Delay bins")
    N: int = Field(default=37, ge=1, description="Doppler bins")
    nu_p: float = Field(default=30e3, gt=0.0, description="Doppler period in Hz")

    def build(self) -> GridParams:
        return make_grid(self.M, self.N, self.nu_p)


class FilterConfig(BaseModel):
    """Pulse-shaping filter; parameters not given take the family defaults."""
    model_config = ConfigDict(use_enum_values=True)

    family: FilterFamily = Field(default=FilterFamily.SINC, description="Filter family")
    beta_tau: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    beta_nu: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    alpha_tau: Optional[float] = Field(default=None, gt=0.0)
    alpha_nu: Optional[float] = Field(default=None, gt=0.0)

    def build(self, grid: GridParams) -> FilterSpec:
        params = {k: v for k, v in self.model_dump(exclude={'family'}).items() if v is not None}
        return make_filter(self.family, grid, **params)


class PathConfig(BaseModel):
    """One path in grid units (delay and Doppler bins may be fractional)."""
    k: float = Field(..., ge=0.0, description="Delay in bins of 1/B")
    l: float = Field(default=0.0, description="Doppler in bins of 1/T")
    gain_re: float = 1.0
    gain_im: float = 0.0

    def build(self, grid: GridParams) -> PathSpec:
        return PathSpec(complex(self.gain_re, self.gain_im), self.k / grid.B, self.l / grid.T)


class ChannelConfig(BaseModel):
    """Channel source: identity, a Veh-A draw or explicit paths."""
    model_config = ConfigDict(use_enum_values=True)

    model: ChannelModel = Field(default=ChannelModel.VEH_A, description="Channel model")
    nu_max: float = Field(default=815.0, ge=0.0, description="Maximum Doppler in Hz (Veh-A)")
    paths: List[PathConfig] = Field(default_factory=list, description="Explicit paths")

    @model_validator(mode='after')
    def check_paths(self) -> "ChannelConfig":
        if self.model == ChannelModel.PATHS and not self.paths:
            raise ValueError("channel model 'paths' needs at least one path")
        return self

    def max_doppler(self, grid: GridParams) -> float:
        if self.model == ChannelModel.PATHS:
            return max(abs(p.l) for p in self.paths) / grid.T
        if self.model == ChannelModel.IDENTITY:
            return 0.0
        return self.nu_max

    def build(self, grid: GridParams, rng_seed: SeedLike = None) -> ChannelInstance:
        if self.model == ChannelModel.IDENTITY:
            return identity_channel()
        if self.model == ChannelModel.PATHS:
            return ChannelInstance(tuple(p.build(grid) for p in self.paths))
        return sample_veh_a(self.nu_max, rng_seed)


class TargetConfig(BaseModel):
    """Radar target on the DD grid."""
    k: float = Field(..., ge=0.0)
    l: float = 0.0
    gain_re: float = 1.0
    gain_im: float = 0.0
    sigma: Optional[List[List[float]]] = Field(default=None, description="Real 2x2 scattering matrix")

    @field_validator('sigma')
    @classmethod
    def validate_sigma(cls, v):
        if v is not None and (len(v) != 2 or any(len(row) != 2 for row in v)):
            raise ValueError("sigma must be a 2x2 matrix")
        return v


class ClutterConfig(BaseModel):
    """Constant-gamma clutter over a DD box [k_min, k_max, l_min, l_max]."""
    gamma_db: float = Field(default=-1.99)
    box: Tuple[int, int, int, int] = (0, 8, -9, 9)
    n_scatterers: int = Field(default=64, ge=1)


class SchemeConfig(BaseModel):
    """Experiment-specific settings; each experiment reads the fields it needs."""
    model_config = ConfigDict(use_enum_values=True)

    detectors: List[Detector] = Field(default_factory=lambda: [Detector.DD_MMSE, Detector.FD_CGM])
    cgm: CgmConfig = Field(default_factory=CgmConfig)
    oversampling: int = Field(default=16, ge=4, description="TD chain oversampling factor Q")
    mub: MubConfig = Field(default_factory=MubConfig)
    n_frames: int = Field(default=60, ge=1, description="Data frames (diffcomm)")
    pilot_period: int = Field(default=30, ge=1, description="Data frames per pilot frame")
    waveform: WaveformKind = Field(default=WaveformKind.PULSONE)
    chirp_alpha: int = Field(default=1, ge=1)
    targets: List[TargetConfig] = Field(default_factory=list)
    clutter: Optional[ClutterConfig] = None
    thresholds: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])
    n_draws: int = Field(default=200, ge=1, description="Random frames (papr)")
    window: Optional[Tuple[int, int, int, int]] = Field(default=None, description="Estimation window")


class SweepConfig(BaseModel):
    """SNR points and Monte Carlo effort."""
    snr_db: List[float] = Field(default_factory=lambda: [10.0, 14.0, 18.0])
    trials: int = Field(default=10, ge=1, description="Trials per SNR point")


class OutputConfig(BaseModel):
    """Result locations."""
    path: str = Field(default="results/output.csv", description="CSV output path")
    write_metadata: bool = Field(default=True, description="Write a JSON sidecar next to the CSV")


class ExperimentConfig(BaseModel):
    """Complete experiment description."""
    model_config = ConfigDict(use_enum_values=True)

    experiment: ExperimentKind = Field(..., description="Experiment to run")
    seed: int = Field(default=0, ge=0, description="Master seed")
    grid: GridConfig = Field(default_factory=GridConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    scheme: SchemeConfig = Field(default_factory=SchemeConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode='after')
    def check_domain(self) -> "ExperimentConfig":
        """Sub-configs must build under their module invariants."""
        try:
            grid = self.grid.build()
            self.filter.build(grid)
        except ZakDDError as e:
            raise ValueError(str(e)) from e
        window = self.scheme.window
        if window is not None and (window[1] - window[0] + 1 > grid.M or window[3] - window[2] + 1 > grid.N):
            raise ValueError(f"window {window} exceeds the fundamental period ({grid.M} x {grid.N})")
        return self


# Utility functions
def _node_mark(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]):
    """YAML start mark of the node at a pydantic error location, or the deepest found."""
    node, mark = root, getattr(root, 'start_mark', None)
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            break
        node, mark = match, match.start_mark
    return mark


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate a YAML config document.

    Args:
        text: YAML text
        source: Name used in error messages

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: On YAML syntax errors or invalid values, with line/column
    """
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        problem = getattr(e, 'problem', None) or str(e)
        raise ConfigError(f"{source}: YAML parse error: {problem}", line, column, stage="config") from e

    if not isinstance(data, dict):
        raise ConfigError(f"{source}: config must be a mapping", 1, 1, stage="config")

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first.get('loc', ())
        mark = _node_mark(root, loc)
        where = ".".join(str(p) for p in loc) or "<root>"
        raise ConfigError(
            f"{source}: invalid value at {where}: {first.get('msg')}",
            mark.line + 1 if mark is not None else None,
            mark.column + 1 if mark is not None else None,
            stage="config",
        ) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load an experiment config file.

    Raises:
        FileError: If the file cannot be read
        ConfigError: If the document is malformed or invalid
    """
    p = Path(path)
    try:
        text = p.read_text(encoding='utf-8')
    except OSError as e:
        raise FileError(f"Cannot read config {p}: {e}", stage="config") from e
    return parse_config(text, str(p))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode='json')


def dump_config(cfg: ExperimentConfig) -> str:
    """YAML text that parses back to an equal config."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=False)


def feasibility_warnings(cfg: ExperimentConfig) -> List[str]:
    """Warnings for grid/channel/scheme combinations that will misbehave."""
    grid = cfg.grid.build()
    warnings: List[str] = []
    nu_max = cfg.channel.max_doppler(grid)
    if 2 * nu_max >= grid.nu_p:
        warnings.append(
            f"crystallization condition violated: 2*nu_max={2 * nu_max:.1f} Hz >= nu_p={grid.nu_p:.1f} Hz"
        )
    if cfg.channel.model == ChannelModel.PATHS:
        tau_max = max(p.k for p in cfg.channel.paths) / grid.B
        if tau_max >= grid.tau_p:
            warnings.append(
                f"crystallization condition violated: tau_max={tau_max:.3e} s >= tau_p={grid.tau_p:.3e} s"
            )
    if cfg.experiment == ExperimentKind.MUB:
        if grid.N % 2 == 0 or grid.N % 3 == 0 or gcd(grid.M, grid.N) != 1:
            warnings.append(
                f"pulsone/GDAFT bases are not mutually unbiased for M={grid.M}, N={grid.N} "
                "(needs N odd, 3 not dividing N, gcd(M, N) = 1)"
            )
    return warnings


def validate_file_path(path: str) -> Path:
    """Validate an output file path, creating its parent directory.

    Raises:
        FileError: If the path is a directory or the parent cannot be created
    """
    p = Path(path)
    if p.exists() and not p.is_file():
        raise FileError(f"Output path exists but is not a file: {path}", stage="output")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileError(f"Cannot create output directory for {path}: {e}", stage="output") from e
    return p
