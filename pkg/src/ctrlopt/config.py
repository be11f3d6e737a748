"""Run configuration and task-file loading (YAML)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .aggregation import AggKind
from .domain import OracleRegistry, PropertySpec, TaskSpec, make_task
from .policy import Vocabulary


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSet:
    name: str
    tasks: tuple[TaskSpec, ...]
    vocab: Vocabulary
    registry: OracleRegistry
    max_len: int
    ranges: tuple[tuple[float, float], ...]  # declared oracle ranges, property order


def _tokens(src) -> list[str]:
    if isinstance(src, str):
        return list(src)  # single-character symbols, e.g. "ADDDD=D"
    return [str(t) for t in src]


BUILTIN_TASKS = Path(__file__).parent / "tasks"


def task_path(ref: str | Path) -> Path:
    """Resolve ``builtin:<name>`` to a shipped task file; other paths pass through."""
    ref = str(ref)
    if ref.startswith("builtin:"):
        path = BUILTIN_TASKS / f"{ref[len('builtin:'):]}.yaml"
        if not path.exists():
            raise ConfigError(f"no built-in task {ref!r}")
        return path
    return Path(ref)


def load_taskset(data: dict | str | Path) -> TaskSet:
    """Build tasks from a mapping or a YAML file.

    ``sources`` become one task each; all share the property list.
    """
    if not isinstance(data, dict):
        path = task_path(data)
        try:
            data = yaml.safe_load(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read task file {path}: {e}") from e
    try:
        max_len = int(data.get("max_len", 10))
        vocab = Vocabulary(tuple(data["vocab"])) if "vocab" in data else Vocabulary()
        registry = OracleRegistry(vocab.symbols, max_len)
        specs = [
            PropertySpec(
                name=str(p["name"]),
                direction=int(p["direction"]),
                delta=float(p["delta"]),
                theta=float(p["theta"]),
                oracle_id=str(p["oracle"]),
            )
            for p in data["properties"]
        ]
        sources = data["sources"]
    except KeyError as e:
        raise ConfigError(f"task file lacks required key {e.args[0]!r}") from None
    name = str(data.get("name", "tasks"))
    tasks = tuple(
        make_task(_tokens(s), specs, registry, name=f"{name}[{i}]") for i, s in enumerate(sources)
    )
    ranges = tuple((registry.resolve(s.oracle_id).lo, registry.resolve(s.oracle_id).hi) for s in specs)
    return TaskSet(name, tasks, vocab, registry, max_len, ranges)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    task_file: str = ""
    algorithm: str = "grpo"
    aggregation: str = "geometric_mean"
    sigmoid_align: bool = True
    group_size: int = 4
    rollout_batch: int = 32
    epochs: int = 2
    minibatches: int = 1
    max_steps: int = 300
    learning_rate: float = 1.0
    steepness: float = 1.0
    lse_temperature: float = 1.0
    order: int = 2
    clip: float = 0.2
    ratio_level: str = "token"
    kl_initial: float = 0.05
    kl_target: float = 1.0
    kl_adapt_rate: float = 0.1
    eps_grp: float = 1e-8
    eps_bn: float = 1e-8
    beam_width: int = 20
    eval_samples: int = 256
    gated_ssor: bool = True
    out_dir: str = "runs/default"
    task: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.algorithm not in ("grpo", "gdpo"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        try:
            kind = AggKind(self.aggregation)
        except ValueError:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}") from None
        if self.algorithm == "gdpo" and kind is AggKind.GEOMETRIC_MEAN:
            raise ConfigError("gdpo aggregates signed advantages; geometric mean is undefined there")
        for name in ("group_size", "rollout_batch", "epochs", "minibatches", "beam_width", "eval_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.minibatches > self.rollout_batch:
            raise ConfigError("more mini-batches than groups per rollout")
        if self.ratio_level not in ("token", "sequence"):
            raise ConfigError("ratio_level must be 'token' or 'sequence'")
        if not self.task_file and self.task is None:
            raise ConfigError("a task file (or inline task) is required")

    @property
    def advantage_mode(self) -> str:
        if self.algorithm == "grpo":
            return "grpo"
        return "gdpo_lse" if self.aggregation == "lse_softmin" else "gdpo_sum_bn"

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def with_(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def load_tasks(self) -> TaskSet:
        if self.task is not None:
            return load_taskset(self.task)
        return load_taskset(self.task_file)


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path, seed: int | None = None, **overrides) -> RunConfig:
    """Read a YAML run config; relative task paths resolve against the file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise ConfigError("a seed is required (pass --seed)")
    tf = data.get("task_file")
    if tf and not str(tf).startswith("builtin:") and not Path(tf).is_absolute():
        data["task_file"] = str((path.parent / tf).resolve())
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data)
