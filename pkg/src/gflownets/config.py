"""Experiment configuration: dataclass schema, TOML/JSON loading, builders.

A config file holds one table per concern (env, params, objective,
exploration, optimizer, eval, diagnostics) plus a seed and an output
directory.  Unknown keys and inconsistent combinations are rejected
before any compute starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .environments import GRID_STANDARD, BitSequence, HyperGrid
from .exceptions import ConfigError
from .policies import EdgeFlowPolicy, MlpPolicy, TabularPolicy
from .sampling import ExplorationPolicy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

__all__ = [
    "EnvBlock",
    "ParamsBlock",
    "ObjectiveBlock",
    "ExplorationBlock",
    "OptimizerBlock",
    "EvalBlock",
    "DiagnosticsBlock",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_to_dict",
    "build_env",
    "build_policy",
    "LR_GRID",
    "LAM_GRID",
    "SEQ_LAM_GRID",
]

# hyperparameter grids used by the experiments, as named presets
LR_GRID = (0.0005, 0.00075, 0.001, 0.003, 0.005, 0.0075, 0.01)
LAM_GRID = (0.8, 0.9, 0.99)
SEQ_LAM_GRID = (0.9, 1.1, 1.5, 1.9)


@dataclass
class EnvBlock:
    kind: str = "hypergrid"
    # hypergrid fields
    height: int = 8
    ndim: int = 2
    r0: float = GRID_STANDARD[0]
    r1: float = GRID_STANDARD[1]
    r2: float = GRID_STANDARD[2]
    # bit-sequence fields
    n_bits: int = 32
    token_bits: int = 1
    n_modes: int = 8
    mode_seed: int = 0
    # shared
    beta: float = 1.0
    enumeration_limit: int = 2_000_000

    def validate(self):
        if self.kind not in ("hypergrid", "bitseq"):
            raise ConfigError(f"unknown env kind {self.kind!r}")


@dataclass
class ParamsBlock:
    kind: str = "tabular"
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "leaky_relu"
    backward_policy: str = "learned"

    def validate(self):
        if self.kind not in ("tabular", "mlp", "edge"):
            raise ConfigError(f"unknown parameterization {self.kind!r}")
        if self.backward_policy not in ("learned", "uniform"):
            raise ConfigError(f"unknown backward policy mode {self.backward_policy!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")


@dataclass
class ObjectiveBlock:
    kind: str = "subtb"
    lam: float = 0.9
    l_max: int | None = None
    scope: str = "batch"
    fm_epsilon: float = 0.0

    def validate(self):
        if self.kind not in ("fm", "db", "tb", "subtb"):
            raise ConfigError(f"unknown objective {self.kind!r}")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.l_max is not None and self.l_max < 1:
            raise ConfigError("l_max must be at least 1")
        if self.scope not in ("batch", "trajectory"):
            raise ConfigError(f"unknown weight scope {self.scope!r}")
        if self.fm_epsilon < 0:
            raise ConfigError("fm_epsilon must be nonnegative")


@dataclass
class ExplorationBlock:
    epsilon: float = 0.0
    temperature: float = 1.0

    def validate(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    def build(self) -> ExplorationPolicy:
        return ExplorationPolicy(self.epsilon, self.temperature)


@dataclass
class OptimizerBlock:
    learning_rate: float = 0.001
    z_lr_multiplier: float = 10.0
    batch_size: int = 16
    total_trajectories: int = 1_000_000

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.z_lr_multiplier <= 0:
            raise ConfigError("z_lr_multiplier must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.total_trajectories < 0:
            raise ConfigError("total_trajectories must be nonnegative")
        if self.total_trajectories % self.batch_size != 0:
            raise ConfigError("total_trajectories must be divisible by batch_size")


@dataclass
class EvalBlock:
    window: int = 200_000
    interval: int = 100
    checkpoint_interval: int = 0
    correlations: bool = True
    test_set_size: int = 1000

    def validate(self):
        if self.window < 1:
            raise ConfigError("window must be positive")
        if self.interval < 1:
            raise ConfigError("interval must be positive")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be nonnegative")
        if self.test_set_size < 2:
            raise ConfigError("test_set_size must be at least 2")


@dataclass
class DiagnosticsBlock:
    interval: int = 500
    batch: int = 1024
    flow_sources: tuple[str, ...] = ("learned", "true_forward", "true_backward")

    def validate(self):
        if self.interval < 1:
            raise ConfigError("diagnostics interval must be positive")
        if self.batch < 1 or (self.batch & (self.batch - 1)) != 0:
            raise ConfigError("diagnostics batch must be a power of two")
        bad = set(self.flow_sources) - {"learned", "true_forward", "true_backward"}
        if bad:
            raise ConfigError(f"unknown flow sources {sorted(bad)}")


@dataclass
class ExperimentConfig:
    env: EnvBlock = field(default_factory=EnvBlock)
    params: ParamsBlock = field(default_factory=ParamsBlock)
    objective: ObjectiveBlock = field(default_factory=ObjectiveBlock)
    exploration: ExplorationBlock = field(default_factory=ExplorationBlock)
    optimizer: OptimizerBlock = field(default_factory=OptimizerBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    diagnostics: DiagnosticsBlock = field(default_factory=DiagnosticsBlock)
    seed: int = 0
    out_dir: str = ""

    def validate(self):
        for block in (self.env, self.params, self.objective, self.exploration,
                      self.optimizer, self.eval, self.diagnostics):
            block.validate()
        if self.objective.kind == "fm" and self.params.kind != "edge":
            raise ConfigError("the fm objective requires the edge parameterization")
        if self.objective.kind != "fm" and self.params.kind == "edge":
            raise ConfigError("the edge parameterization only trains with fm")
        return self


_BLOCK_TYPES = {
    "env": EnvBlock,
    "params": ParamsBlock,
    "objective": ObjectiveBlock,
    "exploration": ExplorationBlock,
    "optimizer": OptimizerBlock,
    "eval": EvalBlock,
    "diagnostics": DiagnosticsBlock,
}

_TUPLE_FIELDS = {"hidden", "flow_sources"}


def _build_block(cls, data: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in [{where}]")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] block: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    allowed = set(_BLOCK_TYPES) | {"seed", "out_dir"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for name, cls in _BLOCK_TYPES.items():
        if name in data:
            block = data[name]
            if not isinstance(block, dict):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _build_block(cls, block, name)
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid TOML: {exc}")
    elif path.suffix == ".json":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    else:
        raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
    return config_from_dict(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    for block in out.values():
        if isinstance(block, dict):
            for key, value in block.items():
                if isinstance(value, tuple):
                    block[key] = list(value)
    return out


def build_env(block: EnvBlock):
    block.validate()
    if block.kind == "hypergrid":
        return HyperGrid(
            height=block.height, ndim=block.ndim,
            r0=block.r0, r1=block.r1, r2=block.r2,
            beta=block.beta, enumeration_limit=block.enumeration_limit,
        )
    return BitSequence(
        n_bits=block.n_bits, token_bits=block.token_bits,
        n_modes=block.n_modes, mode_seed=block.mode_seed,
        beta=block.beta, enumeration_limit=block.enumeration_limit,
    )


def build_policy(config: ExperimentConfig, env):
    params = config.params
    params.validate()
    uniform_pb = params.backward_policy == "uniform"
    if params.kind == "tabular":
        return TabularPolicy(env, uniform_pb=uniform_pb)
    if params.kind == "mlp":
        return MlpPolicy(env, hidden=params.hidden, activation=params.activation,
                         uniform_pb=uniform_pb, seed=config.seed)
    return EdgeFlowPolicy(env)
