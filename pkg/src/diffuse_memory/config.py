"""Experiment configuration: JSON blocks, validation and the effective-config echo."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .hologram import SchmidtSpec
from .medium import GaussianCloud, MediumModel
from .profiles import PulseSpectrum
from .protocol import DEFAULT_MARGIN
from .readout import MAX_CHSH_NBAR, OPTIMAL_CHSH_ANGLES, InterferometerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CloudBlock:
    b0: float | None = 20.0
    r0: float = 1e-3  # m
    n0: float | None = None  # 1/m^3; give either b0 or n0

    def build(self, medium: MediumModel) -> GaussianCloud:
        if self.n0 is not None:
            return GaussianCloud(self.n0, self.r0)
        return GaussianCloud.from_optical_depth(self.b0, self.r0, medium.sigma0)


@dataclass(frozen=True)
class SpectrumBlock:
    detuning_min: float = -10.0
    detuning_max: float = 10.0
    points: int = 2001


@dataclass(frozen=True)
class PulseBlock:
    center: float = 0.0
    width: float = 1.0
    n_points: int = 4096
    span: float | None = None
    t_in: float | None = None
    orders: tuple = (0, 50, 100)
    estimator: str = "peel"
    cone_half_angle: float = 10.0
    shape: str = "flat"

    def build(self) -> PulseSpectrum:
        return PulseSpectrum(self.center, self.width, self.n_points, self.span, self.t_in, self.shape)


@dataclass(frozen=True)
class ProtocolBlock:
    margin: float = DEFAULT_MARGIN
    efficiency: float = 1.0
    b_sigma: float | None = None  # default for the stand-alone regime check: b0^2


@dataclass(frozen=True)
class HologramBlock:
    nbar: float = 1.0
    nmax: int | None = None
    tail_tolerance: float = 1e-8
    samples: int = 1000

    def build(self) -> SchmidtSpec:
        return SchmidtSpec(self.nbar, self.nmax, self.tail_tolerance)


@dataclass(frozen=True)
class ReadoutBlock:
    xi: float = 1e-3
    probe_photons: float = 1e6
    squeeze_r: float = 0.0
    mean_current: float = 1.0
    noiseless: bool = False
    samples_per_unit: int = 1
    bootstrap: int = 200

    def build(self) -> InterferometerConfig:
        return InterferometerConfig(self.xi, self.probe_photons, self.squeeze_r, self.mean_current)


@dataclass(frozen=True)
class ChshBlock:
    nbar: float = 0.2
    angles: tuple = OPTIMAL_CHSH_ANGLES  # a, a', b, b' (mixing angles, rad)
    nmax: int | None = None


@dataclass(frozen=True)
class RunBlock:
    seed: int = 0
    trajectories: int = 20_000
    shots: int = 50_000
    max_events: int = 1_000_000
    cap_fraction: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    medium: MediumModel = field(default_factory=MediumModel)
    cloud: CloudBlock = field(default_factory=CloudBlock)
    spectrum: SpectrumBlock = field(default_factory=SpectrumBlock)
    pulse: PulseBlock = field(default_factory=PulseBlock)
    protocol: ProtocolBlock = field(default_factory=ProtocolBlock)
    hologram: HologramBlock = field(default_factory=HologramBlock)
    readout: ReadoutBlock = field(default_factory=ReadoutBlock)
    chsh: ChshBlock = field(default_factory=ChshBlock)
    run: RunBlock = field(default_factory=RunBlock)

    def validate(self) -> "ExperimentConfig":
        """Check every block against its module's invariants; raise ConfigError."""
        try:
            _validate(self)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            block = dataclasses.asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in block.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace_run(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **changes))


_BLOCKS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}
# Execution settings may appear in the run block but are not part of the experiment.
EXECUTION_KEYS = ("out", "workers")


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _validate(cfg: ExperimentConfig) -> None:
    m = cfg.medium
    c = cfg.cloud
    _need((c.b0 is None) != (c.n0 is None), "cloud: give exactly one of b0 or n0")
    _need(c.b0 is None or c.b0 > 0, "cloud.b0 must be positive")
    _need(c.n0 is None or c.n0 > 0, "cloud.n0 must be positive")
    c.build(m)

    s = cfg.spectrum
    _need(s.detuning_max > s.detuning_min, "spectrum: detuning_max must exceed detuning_min")
    _need(int(s.points) == s.points and s.points >= 2, "spectrum.points must be an integer >= 2")

    p = cfg.pulse
    p.build()
    _need(len(p.orders) >= 1 and all(int(k) == k and k >= 0 for k in p.orders),
          "pulse.orders must be nonnegative integers")
    _need(p.estimator in ("peel", "cone"), "pulse.estimator must be 'peel' or 'cone'")
    _need(0 < p.cone_half_angle <= 90, "pulse.cone_half_angle must lie in (0, 90]")

    pr = cfg.protocol
    _need(pr.margin > 1, "protocol.margin must exceed 1")
    _need(0 <= pr.efficiency <= 1, "protocol.efficiency must lie in [0, 1]")
    _need(pr.b_sigma is None or pr.b_sigma > 0, "protocol.b_sigma must be positive")

    h = cfg.hologram
    spec = h.build()
    _need(spec.tail < spec.tail_tolerance,
          f"hologram: truncation tail {spec.tail:.3e} exceeds {spec.tail_tolerance:.1e}; increase nmax")
    _need(int(h.samples) == h.samples and h.samples >= 2, "hologram.samples must be an integer >= 2")

    r = cfg.readout
    rc = r.build()
    _need(r.samples_per_unit >= 1, "readout.samples_per_unit must be >= 1")
    _need(r.bootstrap >= 2, "readout.bootstrap must be >= 2")
    # largest atom number a truncated-state sample can produce must stay linear
    _need(rc.xi * spec.nmax < 0.3, "readout: xi * hologram nmax must stay below 0.3 (linear regime)")

    ch = cfg.chsh
    _need(0 < ch.nbar <= MAX_CHSH_NBAR, f"chsh.nbar must lie in (0, {MAX_CHSH_NBAR}]")
    _need(len(ch.angles) == 4 and all(math.isfinite(a) for a in ch.angles), "chsh.angles needs four angles")
    SchmidtSpec(ch.nbar, ch.nmax)

    run = cfg.run
    _need(isinstance(run.seed, int) and 0 <= run.seed < 2**64, "run.seed must be an unsigned 64-bit integer")
    _need(run.trajectories >= 1, "run.trajectories must be >= 1")
    _need(run.shots >= 1, "run.shots must be >= 1")
    _need(run.max_events >= 1, "run.max_events must be >= 1")
    _need(0 <= run.cap_fraction < 1, "run.cap_fraction must lie in [0, 1)")


def _block(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"block {name!r} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    vals = {k: tuple(v) if isinstance(defaults.get(k), tuple) and isinstance(v, list) else v
            for k, v in data.items()}
    try:
        return cls(**vals)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data: dict) -> tuple[ExperimentConfig, dict]:
    """Parse a config mapping; returns (config, execution settings)."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
    blocks, execution = {}, {}
    for name in _BLOCKS:
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"block {name!r} must be a JSON object")
        raw = dict(raw)
        if name == "cloud" and "n0" in raw and "b0" not in raw:
            raw["b0"] = None
        if name == "run":
            for key in EXECUTION_KEYS:
                if key in raw:
                    execution[key] = raw.pop(key)
        cls = type(_BLOCKS[name]()) if name != "medium" else MediumModel
        blocks[name] = _block(cls, raw, name)
    return ExperimentConfig(**blocks), execution


def load_config(path=None) -> tuple[ExperimentConfig, dict]:
    if path is None:
        return ExperimentConfig(), {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return from_dict(data)
