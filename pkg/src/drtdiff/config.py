"""Experiment configuration: JSON file <-> nested dataclasses, with validation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .nn import ACTIVATIONS, MAX_LAYERS

OUT_DIR_ENV = "DRTDIFF_OUT"
TOPOLOGY_KINDS = ("ring", "hypercube", "erdos_renyi", "complete")
STRATEGIES = ("classical", "drt", "both")


@dataclass
class TopologyConfig:
    kind: str = "ring"
    num_agents: int = 16
    dim: int = 4
    p: float = 0.1
    seed: int = 0

    @property
    def agents(self) -> int:
        return 2**self.dim if self.kind == "hypercube" else self.num_agents


@dataclass
class DataConfig:
    num_classes: int = 10
    dim: int = 16
    per_class: int = 250
    test_per_class: int = 50
    spread: float = 0.5
    seed: int = 0
    classes_per_agent: tuple[int, int] = (5, 8)
    samples_per_agent: tuple[int, int] = (60, 80)
    iid: bool = False
    partition_seed: int = 0


@dataclass
class ModelConfig:
    layer_dims: tuple[int, ...] = (16, 32, 32, 10)
    activation: str = "relu"
    bias: bool = True


@dataclass
class RunConfig:
    mu: float = 0.05
    batch_size: int = 16
    rounds: int = 100
    consensus_steps: int = 3
    local_steps: int | None = None
    strategy: str = "both"
    kappa: float = 1e-8
    clip_N: float | None = None
    master_seed: int = 0
    freeze_weights_within_round: bool = False
    threads: int = 1


@dataclass
class OutputConfig:
    out_dir: str | None = None
    dump_tensors: bool = False
    checkpoint_every: int = 0


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def num_agents(self) -> int:
        return self.topology.agents

    @property
    def clip_N(self) -> float:
        return self.run.clip_N if self.run.clip_N is not None else 2.0 * self.num_agents

    def resolved_out_dir(self) -> Path:
        return Path(self.output.out_dir or os.environ.get(OUT_DIR_ENV, "runs"))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ExperimentConfig:
        sections = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config section")
        kwargs = {}
        for name, section_cls in _SECTION_TYPES.items():
            kwargs[name] = _build_section(name, section_cls, raw.get(name, {}))
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    def validate(self) -> None:
        t, d, m, r = self.topology, self.data, self.model, self.run
        if t.kind not in TOPOLOGY_KINDS:
            raise ConfigError("topology.kind", f"must be one of {TOPOLOGY_KINDS}")
        if t.kind == "hypercube" and t.dim < 1:
            raise ConfigError("topology.dim", "must be >= 1")
        if t.kind != "hypercube" and t.num_agents < 2:
            raise ConfigError("topology.num_agents", "must be >= 2")
        if t.kind == "erdos_renyi" and not 0 < t.p <= 1:
            raise ConfigError("topology.p", "must lie in (0, 1]")

        if d.num_classes < 2:
            raise ConfigError("data.num_classes", "must be >= 2")
        if d.dim < 2:
            raise ConfigError("data.dim", "must be >= 2")
        if d.per_class < 1 or d.test_per_class < 0:
            raise ConfigError("data.per_class", "per_class must be >= 1 and test_per_class >= 0")
        if d.spread < 0:
            raise ConfigError("data.spread", "must be >= 0")
        c_lo, c_hi = d.classes_per_agent
        s_lo, s_hi = d.samples_per_agent
        if not d.iid:
            if not 1 <= c_lo <= c_hi <= d.num_classes:
                raise ConfigError("data.classes_per_agent", f"need 1 <= lo <= hi <= num_classes ({d.num_classes})")
            if not 1 <= s_lo <= s_hi:
                raise ConfigError("data.samples_per_agent", "need 1 <= lo <= hi")
            if s_lo < c_hi:
                raise ConfigError("data.samples_per_agent", "lo must be >= classes_per_agent hi")
            if self.num_agents * s_lo > d.num_classes * d.per_class:
                raise ConfigError("data.samples_per_agent", "agents x lo exceeds the training set size")
        elif self.num_agents > d.num_classes * d.per_class:
            raise ConfigError("data.per_class", "fewer training samples than agents")

        if len(m.layer_dims) < 2 or len(m.layer_dims) - 1 > MAX_LAYERS:
            raise ConfigError("model.layer_dims", f"need between 1 and {MAX_LAYERS} layers")
        if any(v < 1 for v in m.layer_dims):
            raise ConfigError("model.layer_dims", "dims must be positive")
        if m.layer_dims[0] != d.dim:
            raise ConfigError("model.layer_dims", f"input dim {m.layer_dims[0]} != data.dim {d.dim}")
        if m.layer_dims[-1] != d.num_classes:
            raise ConfigError("model.layer_dims", f"output dim {m.layer_dims[-1]} != data.num_classes {d.num_classes}")
        if m.activation not in ACTIVATIONS:
            raise ConfigError("model.activation", f"must be one of {ACTIVATIONS}")

        if r.mu < 0:
            raise ConfigError("run.mu", "must be >= 0")
        if r.batch_size < 1:
            raise ConfigError("run.batch_size", "must be >= 1")
        if r.rounds < 0:
            raise ConfigError("run.rounds", "must be >= 0")
        if r.consensus_steps < 0:
            raise ConfigError("run.consensus_steps", "must be >= 0")
        if r.local_steps is not None and r.local_steps < 0:
            raise ConfigError("run.local_steps", "must be >= 0")
        if r.strategy not in STRATEGIES:
            raise ConfigError("run.strategy", f"must be one of {STRATEGIES}")
        if r.kappa < 0:
            raise ConfigError("run.kappa", "must be >= 0")
        if r.clip_N is not None and r.clip_N < 1:
            raise ConfigError("run.clip_N", "must be >= 1")
        if r.threads < 1:
            raise ConfigError("run.threads", "must be >= 1")
        if self.output.checkpoint_every < 0:
            raise ConfigError("output.checkpoint_every", "must be >= 0")


_SECTION_TYPES = {
    "topology": TopologyConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "run": RunConfig,
    "output": OutputConfig,
}

_TUPLE_FIELDS = {"classes_per_agent", "samples_per_agent", "layer_dims"}


def _build_section(name: str, section_cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be an object")
    known = {f.name for f in fields(section_cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    values = {}
    for key, value in raw.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) for v in value):
                raise ConfigError(f"{name}.{key}", "must be a list of integers")
            value = tuple(value)
            if key != "layer_dims" and len(value) != 2:
                raise ConfigError(f"{name}.{key}", "must be a [lo, hi] pair")
        values[key] = value
    return section_cls(**values)
