"""Run configuration: one TOML file covering model, gait, weights, solver,
controller, rollout protocol, perturbations, and memory training.

Unknown keys are rejected and every violation is reported with a path into
the document (e.g. ``gait.dsp_ratio``).  The shipped files under configs/
list every default explicitly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from wbmpc.ddp import SolverSettings
from wbmpc.gait import GaitParams, LF, RF
from wbmpc.memory import SamplerConfig, TrainingConfig
from wbmpc.ocp import CostWeights
from wbmpc.wbc import WbcWeights


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class PerturbationEvent:
    time: float
    impulse: float          # N s
    direction: tuple = (1.0, 0.0, 0.0)

    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"perturbation direction must be a unit vector, |d| = {n}")
        return d


@dataclass
class RolloutConfig:
    duration: float = 4.8
    control_period: float = 0.02
    warm_start: str = "previous"        # cold | previous | mlp
    perturbations: list = field(default_factory=list)
    seed: int = 0
    horizon: int = 60
    warmup_max_iters: int = 100         # iteration budget for the very first tick
    derivative_mode: str = "fd"
    memory_file: str | None = None
    cp_reference_file: str | None = None

    def __post_init__(self):
        if self.control_period <= 0:
            raise ValueError("control_period must be > 0")
        if self.warm_start not in ("cold", "previous", "mlp"):
            raise ValueError(f"unknown warm-start mode {self.warm_start!r}")
        for ev in self.perturbations:
            if not 0.0 <= ev.time < self.duration:
                raise ValueError(f"perturbation at t = {ev.time} outside [0, {self.duration})")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.control_period))


@dataclass
class MemoryConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset_tol: float = 1e-8
    dataset_max_iters: int = 120


@dataclass
class BenchmarkConfig:
    n_cycles: int = 10
    warmup_ticks: int = 10
    transition_window: int = 2  # +- ticks around contact transitions


@dataclass
class CompareConfig:
    n_trials: int = 20
    workers: int = 4
    impulse_jitter: float = 0.15       # relative magnitude jitter
    direction_jitter: float = 0.26     # rad, in the ground plane
    time_jitter: float = 0.06          # s


@dataclass
class RunConfig:
    model_file: str | None = None      # None -> built-in biped
    gait: GaitParams = field(default_factory=GaitParams)
    first_swing: str = RF
    lead_in: float = 0.8
    weights: CostWeights = field(default_factory=CostWeights)
    solver: SolverSettings = field(default_factory=SolverSettings)
    wbc: WbcWeights = field(default_factory=WbcWeights)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)


_SECTION_TYPES = {
    "gait": GaitParams,
    "weights": CostWeights,
    "solver": SolverSettings,
    "wbc": WbcWeights,
    "rollout": RolloutConfig,
    "benchmark": BenchmarkConfig,
    "compare": CompareConfig,
}


def _fill_dataclass(cls, data: dict, path: str, convert=()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}", f"unknown key for {cls.__name__}")
        if key in convert:
            value = convert[key](value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(path, str(e)) from e


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"configuration file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("$", f"invalid TOML: {e}")
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    known = {"model", "run", "memory", "perturbation", *_SECTION_TYPES}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown section")

    model = doc.get("model", {})
    if "file" in model:
        cfg.model_file = model["file"]
    for key in model:
        if key != "file":
            raise ConfigError(f"model.{key}", "unknown key")

    run = dict(doc.get("run", {}))
    if "first_swing" in run:
        v = run.pop("first_swing")
        if v not in (RF, LF, "right", "left"):
            raise ConfigError("run.first_swing", f"expected right/left, got {v!r}")
        cfg.first_swing = RF if v in (RF, "right") else LF
    if "lead_in" in run:
        cfg.lead_in = float(run.pop("lead_in"))
        if cfg.lead_in < 0:
            raise ConfigError("run.lead_in", "lead_in must be >= 0")
    if run:
        raise ConfigError(f"run.{next(iter(run))}", "unknown key")

    for name, cls in _SECTION_TYPES.items():
        if name in doc:
            conv = {}
            if name == "gait":
                conv = {"foot_half_extents": tuple}
            setattr(cfg, name if name != "gait" else "gait",
                    _fill_dataclass(cls, doc[name], name, convert=conv))

    events = []
    for i, ev in enumerate(doc.get("perturbation", [])):
        events.append(_fill_dataclass(PerturbationEvent, ev, f"perturbation[{i}]",
                                      convert={"direction": tuple}))
    if events:
        cfg.rollout.perturbations = events
        cfg.rollout.__post_init__()

    mem = doc.get("memory", {})
    mc = MemoryConfig()
    if "sampler" in mem:
        mc.sampler = _fill_dataclass(SamplerConfig, mem["sampler"], "memory.sampler",
                                     convert={"focus_ticks": tuple})
    if "training" in mem:
        mc.training = _fill_dataclass(TrainingConfig, mem["training"], "memory.training")
    for key in mem:
        if key in ("sampler", "training"):
            continue
        if key == "dataset_tol":
            mc.dataset_tol = float(mem[key])
        elif key == "dataset_max_iters":
            mc.dataset_max_iters = int(mem[key])
        else:
            raise ConfigError(f"memory.{key}", "unknown key")
    cfg.memory = mc
    return cfg
