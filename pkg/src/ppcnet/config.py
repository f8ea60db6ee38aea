"""Run configuration: canonical JSON in, canonical JSON out.

Unknown keys are rejected everywhere so a typo cannot silently fall back
to a default. The network section may be null, in which case the standard
spec is resolved against the dataset's class count at run time.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import (TaskDataset, build_binary_dataset, build_front_dataset,
                       build_period_dataset, load_manifest)
from .errors import ConfigError, DataError
from .network import NetworkSpec, default_spec
from .rng import derive_rng
from .synth import synth_generate
from .training import TrainParams

TASK_KINDS = ("period", "seal", "left_sign", "front",
              "synth_period", "synth_seal", "synth_left_sign", "synth_front")


@dataclass
class TaskConfig:
    kind: str
    n_points: int = 8192
    manifest: str | None = None
    size_variant: str = "full747"
    n_per_class: int = 25
    cache_dir: str | None = None

    def validate(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; choose from {TASK_KINDS}")
        if self.n_points < 32:
            raise ConfigError("n_points must be at least 32")
        if not self.kind.startswith("synth_") and self.manifest is None:
            raise ConfigError(f"task {self.kind!r} needs a manifest path")
        if self.kind.startswith("synth_") and self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "TaskConfig":
        unknown = set(d) - set(TaskConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown task keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("task config needs a 'kind'")
        cfg = TaskConfig(**d)
        cfg.validate()
        return cfg

    def default_classes(self) -> int:
        return 4 if self.kind in ("period", "synth_period") else 2


@dataclass
class RunConfig:
    task: TaskConfig
    training: TrainParams = field(default_factory=TrainParams)
    network: NetworkSpec | None = None
    seed: int = 0
    out_dir: str = "runs/out"

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "training": self.training.to_dict(),
            "network": None if self.network is None else self.network.to_dict(),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        allowed = {"task", "training", "network", "seed", "out_dir"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "task" not in d:
            raise ConfigError("config needs a 'task' section")
        network = d.get("network")
        return RunConfig(
            task=TaskConfig.from_dict(d["task"]),
            training=TrainParams.from_dict(d.get("training", {})),
            network=None if network is None else NetworkSpec.from_dict(network),
            seed=d.get("seed", 0),
            out_dir=d.get("out_dir", "runs/out"),
        )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object: {path}")
    return RunConfig.from_dict(raw)


def build_dataset(cfg: RunConfig) -> TaskDataset:
    """Materialize the configured task into a dataset."""
    t = cfg.task
    seed = cfg.seed
    if t.kind.startswith("synth_"):
        rng = derive_rng(seed, 11)
        return synth_generate(t.kind[len("synth_"):], t.n_per_class, rng,
                              n_points=t.n_points, seed=seed)
    manifest = load_manifest(t.manifest)
    if t.kind == "period":
        return build_period_dataset(manifest, t.size_variant, t.n_points,
                                    seed=seed, cache_dir=t.cache_dir)
    if t.kind in ("seal", "left_sign"):
        return build_binary_dataset(manifest, t.kind, t.n_points,
                                    seed=seed, cache_dir=t.cache_dir)
    return build_front_dataset(manifest, derive_rng(seed, 12), t.n_points,
                               seed=seed, cache_dir=t.cache_dir)


def resolve_network(cfg: RunConfig, dataset: TaskDataset) -> NetworkSpec:
    """The configured spec, or the standard pyramid scaled to the task."""
    if cfg.network is not None:
        if cfg.network.num_classes != dataset.num_classes:
            raise DataError(f"network expects {cfg.network.num_classes} classes, "
                            f"dataset has {dataset.num_classes}")
        if cfg.network.input_points > cfg.task.n_points:
            raise DataError(f"network needs {cfg.network.input_points} points, "
                            f"task samples only {cfg.task.n_points}")
        return cfg.network
    return default_spec(dataset.num_classes, input_points=cfg.task.n_points)
