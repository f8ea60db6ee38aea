"""Task dataset construction.

A TaskDataset owns labeled instances that lazily materialize into
normalized point clouds. Each instance's cloud is sampled with its own
fixed seed, so every epoch sees the same base geometry and augmentation
variability comes solely from jitter. Splits never share a tablet id,
and the front-orientation task keeps both views of a tablet in the same
split so its agreement rule is evaluated on genuinely unseen geometry.
"""

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .meshio import Mesh, load_mesh
from .pointcloud import PointCloud, load_cloud, normalize, rotate_x_180, sample_surface, save_cloud
from .rng import derive_rng

CACHE_ENV = "PPC_CACHE_DIR"

PERIOD_VARIANTS = {"small337": 100, "medium631": 250, "full747": None}
BINARY_TASKS = ("seal", "left_sign")
TEST_FRACTION = 0.1


def stable_hash(text: str) -> int:
    """Platform-stable 62-bit hash for deriving per-instance seeds."""
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 2


@dataclass
class Instance:
    tablet_id: str
    label: int
    source: object  # mesh path (str) or an in-memory Mesh
    flip: bool = False

    @property
    def uid(self) -> str:
        return f"{self.tablet_id}:back" if self.flip else self.tablet_id


@dataclass
class TaskDataset:
    task: str
    instances: list
    num_classes: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    n_points: int
    sample_seed: int = 0
    cache_dir: str | None = None
    _memory: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        train = set(self.train_indices.tolist())
        test = set(self.test_indices.tolist())
        if train & test:
            raise DataError("train and test splits overlap")
        train_ids = {self.instances[i].tablet_id for i in train}
        test_ids = {self.instances[i].tablet_id for i in test}
        leaked = train_ids & test_ids
        if leaked:
            raise DataError(f"tablet ids in both splits: {sorted(leaked)[:5]}")
        for inst in self.instances:
            if not 0 <= inst.label < self.num_classes:
                raise DataError(f"label {inst.label} out of range for {inst.tablet_id}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances])

    @property
    def train_size(self) -> int:
        return len(self.train_indices)

    @property
    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=int)
        for i in self.train_indices:
            counts[self.instances[i].label] += 1
        return counts

    def load(self, i: int) -> PointCloud:
        """Materialize instance i as a normalized cloud (cached)."""
        inst = self.instances[i]
        base = self._memory.get(inst.tablet_id)
        if base is None:
            base = self._materialize(inst)
            self._memory[inst.tablet_id] = base
        return rotate_x_180(base) if inst.flip else base

    def _materialize(self, inst: Instance) -> PointCloud:
        if isinstance(inst.source, PointCloud):
            return inst.source
        path = self._cache_path(inst)
        if path is not None and path.exists():
            cloud, _ = load_cloud(path)
            if cloud.size == self.n_points:
                return cloud
        mesh = inst.source if isinstance(inst.source, Mesh) else load_mesh(inst.source)
        rng = derive_rng(self.sample_seed, stable_hash(inst.tablet_id))
        cloud = normalize(sample_surface(mesh, self.n_points, rng))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_cloud(cloud, path, provenance={
                "tablet_id": inst.tablet_id, "seed": self.sample_seed,
                "n_points": self.n_points, "normalized": True,
            })
        return cloud

    def _cache_path(self, inst: Instance) -> Path | None:
        root = self.cache_dir or os.environ.get(CACHE_ENV)
        if root is None:
            return None
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in inst.tablet_id)
        return Path(root) / f"{safe}_{self.sample_seed}_{self.n_points}.ppc"


@dataclass
class ManifestRow:
    mesh_path: str
    tablet_id: str
    period: str | None = None
    seal: int | None = None
    left_sign: int | None = None
    front_eligible: int | None = None
    split: str | None = None


@dataclass
class Manifest:
    rows: list

    def validate(self):
        ids = [r.tablet_id for r in self.rows]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate tablet ids in manifest")


MANIFEST_COLUMNS = ("mesh_path", "tablet_id", "period", "seal", "left_sign",
                    "front_eligible", "split")


def load_manifest(path) -> Manifest:
    """Read the manifest CSV; empty cells mean the label is missing."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"empty manifest: {path}")
        unknown = set(reader.fieldnames) - set(MANIFEST_COLUMNS)
        if unknown:
            raise DataError(f"unknown manifest columns: {sorted(unknown)}")
        for rec in reader:
            if not rec.get("mesh_path") or not rec.get("tablet_id"):
                raise DataError("manifest rows need mesh_path and tablet_id")
            rows.append(ManifestRow(
                mesh_path=rec["mesh_path"],
                tablet_id=rec["tablet_id"],
                period=rec.get("period") or None,
                seal=_parse_flag(rec.get("seal"), "seal"),
                left_sign=_parse_flag(rec.get("left_sign"), "left_sign"),
                front_eligible=_parse_flag(rec.get("front_eligible"), "front_eligible"),
                split=rec.get("split") or None,
            ))
    manifest = Manifest(rows)
    manifest.validate()
    return manifest


def save_manifest(manifest: Manifest, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            writer.writerow([r.mesh_path, r.tablet_id, r.period or "",
                             "" if r.seal is None else r.seal,
                             "" if r.left_sign is None else r.left_sign,
                             "" if r.front_eligible is None else r.front_eligible,
                             r.split or ""])


def _parse_flag(value, name):
    if value is None or value == "":
        return None
    if value in ("0", "1"):
        return int(value)
    raise DataError(f"{name} must be 0, 1, or empty, got {value!r}")


def _split_rows(rows, seed: int, key: int):
    """Tablet-level split: explicit split column when present, otherwise a
    seeded uniform 90/10."""
    explicit = [r for r in rows if r.split is not None]
    if explicit:
        bad = {r.split for r in rows if r.split not in (None, "train", "test")}
        if bad:
            raise DataError(f"split values must be train/test, got {sorted(bad)}")
        train = [r for r in rows if r.split == "train"]
        test = [r for r in rows if r.split == "test"]
        return train, test
    rng = derive_rng(seed, key)
    order = rng.permutation(len(rows))
    n_test = max(1, int(round(TEST_FRACTION * len(rows)))) if len(rows) > 1 else 0
    test_set = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(rows) if i not in test_set]
    test = [r for i, r in enumerate(rows) if i in test_set]
    return train, test


def build_period_dataset(manifest: Manifest, size_variant: str, n_points: int,
                         seed: int = 0, cache_dir: str | None = None) -> TaskDataset:
    """Multi-class period task. The test split is shared across size
    variants; the smaller variants cap each training class by a seeded
    subsample nested inside the larger ones."""
    if size_variant not in PERIOD_VARIANTS:
        raise DataError(f"unknown size variant {size_variant!r}; "
                        f"choose from {sorted(PERIOD_VARIANTS)}")
    rows = [r for r in manifest.rows if r.period is not None]
    if not rows:
        raise DataError("manifest has no period labels")
    classes = sorted({r.period for r in rows})
    if len(classes) < 2:
        raise DataError("degenerate task: need at least two period classes")
    label_of = {c: i for i, c in enumerate(classes)}

    train_rows, test_rows = _split_rows(rows, seed, key=1)
    cap = PERIOD_VARIANTS[size_variant]
    if cap is not None:
        kept = []
        for cls in classes:
            members = sorted((r for r in train_rows if r.period == cls),
                             key=lambda r: r.tablet_id)
            order = derive_rng(seed, 2, stable_hash(cls)).permutation(len(members))
            kept.extend(members[i] for i in sorted(order[:cap].tolist()))
        train_rows = kept

    instances = [Instance(r.tablet_id, label_of[r.period], r.mesh_path)
                 for r in train_rows + test_rows]
    return TaskDataset(
        task=f"period-{size_variant}", instances=instances, num_classes=len(classes),
        train_indices=np.arange(len(train_rows)),
        test_indices=np.arange(len(train_rows), len(instances)),
        n_points=n_points, sample_seed=seed, cache_dir=cache_dir)


def build_binary_dataset(manifest: Manifest, task: str, n_points: int,
                         seed: int = 0, cache_dir: str | None = None) -> TaskDataset:
    """Binary presence task (seal or left-side sign)."""
    if task not in BINARY_TASKS:
        raise DataError(f"unknown binary task {task!r}")
    flag = lambda r: getattr(r, task)
    rows = [r for r in manifest.rows if flag(r) is not None]
    if not rows:
        raise DataError(f"manifest has no {task} flags")
    if len({flag(r) for r in rows}) < 2:
        raise DataError(f"degenerate task: all {task} flags identical")
    train_rows, test_rows = _split_rows(rows, seed, key=3 if task == "seal" else 4)
    instances = [Instance(r.tablet_id, int(flag(r)), r.mesh_path)
                 for r in train_rows + test_rows]
    return TaskDataset(
        task=task, instances=instances, num_classes=2,
        train_indices=np.arange(len(train_rows)),
        test_indices=np.arange(len(train_rows), len(instances)),
        n_points=n_points, sample_seed=seed, cache_dir=cache_dir)


FRONT_LABEL = 1  # class 1 = the captured view, class 0 = its flipped sibling


def build_front_dataset(manifest: Manifest, rng: np.random.Generator,
                        n_points: int, seed: int = 0,
                        cache_dir: str | None = None) -> TaskDataset:
    """Front-orientation task: every eligible tablet contributes its cloud
    labeled front and the same cloud rotated 180 degrees about x labeled
    back. Split at the tablet level, 90/10."""
    rows = [r for r in manifest.rows if r.front_eligible == 1]
    if not rows:
        raise DataError("no front-eligible tablets in manifest")
    explicit = any(r.split is not None for r in rows)
    if explicit:
        train_rows = [r for r in rows if r.split == "train"]
        test_rows = [r for r in rows if r.split == "test"]
    else:
        order = rng.permutation(len(rows))
        n_test = max(1, int(round(TEST_FRACTION * len(rows)))) if len(rows) > 1 else 0
        test_set = set(order[:n_test].tolist())
        train_rows = [r for i, r in enumerate(rows) if i not in test_set]
        test_rows = [r for i, r in enumerate(rows) if i in test_set]

    instances = []
    for r in train_rows + test_rows:
        instances.append(Instance(r.tablet_id, FRONT_LABEL, r.mesh_path, flip=False))
        instances.append(Instance(r.tablet_id, 1 - FRONT_LABEL, r.mesh_path, flip=True))
    n_train = 2 * len(train_rows)
    return TaskDataset(
        task="front", instances=instances, num_classes=2,
        train_indices=np.arange(n_train),
        test_indices=np.arange(n_train, len(instances)),
        n_points=n_points, sample_seed=seed, cache_dir=cache_dir)
