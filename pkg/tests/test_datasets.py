import numpy as np
import pytest

from ppcnet.datasets import (Instance, Manifest, ManifestRow, TaskDataset,
                             build_binary_dataset, build_front_dataset,
                             build_period_dataset, load_manifest, save_manifest,
                             stable_hash)
from ppcnet.errors import DataError
from ppcnet.rng import make_rng
from ppcnet.synth import face_height_spread, synth_generate, tablet_mesh


def make_rows(n, periods=("a", "b", "c", "d"), split=None):
    rows = []
    for i in range(n):
        rows.append(ManifestRow(
            mesh_path=f"meshes/t{i:03d}.ply", tablet_id=f"t{i:03d}",
            period=periods[i % len(periods)], seal=i % 2, left_sign=(i // 2) % 2,
            front_eligible=1, split=split(i) if split else None))
    return rows


class TestManifest:
    def test_roundtrip(self, tmp_path):
        manifest = Manifest(make_rows(6))
        path = tmp_path / "manifest.csv"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert len(loaded.rows) == 6
        assert loaded.rows[0].tablet_id == "t000"
        assert loaded.rows[1].seal == 1
        assert loaded.rows[0].period == "a"

    def test_missing_cells_are_none(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("mesh_path,tablet_id,period,seal,left_sign,front_eligible\n"
                        "a.ply,t1,,,,\n")
        manifest = load_manifest(path)
        row = manifest.rows[0]
        assert row.period is None and row.seal is None and row.front_eligible is None

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("mesh_path,tablet_id\na.ply,t1\nb.ply,t1\n")
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(path)

    def test_unknown_column_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("mesh_path,tablet_id,color\na.ply,t1,red\n")
        with pytest.raises(DataError, match="unknown manifest columns"):
            load_manifest(path)

    def test_bad_flag_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("mesh_path,tablet_id,seal\na.ply,t1,yes\n")
        with pytest.raises(DataError, match="seal"):
            load_manifest(path)


class TestPeriodDataset:
    def test_full_variant_uses_explicit_split(self):
        # 40 train + 8 test marked explicitly: train size is exactly 40
        rows = make_rows(48, split=lambda i: "test" if i >= 40 else "train")
        data = build_period_dataset(Manifest(rows), "full747", n_points=64)
        assert data.train_size == 40
        assert len(data.test_indices) == 8
        assert data.num_classes == 4

    def test_small_variant_caps_classes(self):
        rows = make_rows(48, periods=("a", "b"), split=lambda i: "train")
        import ppcnet.datasets as ds
        original = ds.PERIOD_VARIANTS["small337"]
        data = build_period_dataset(Manifest(rows), "small337", n_points=64)
        assert original == 100  # caps only bite when classes exceed them
        assert data.train_size == 48
        rows = make_rows(480, periods=("a", "b"), split=lambda i: "train")
        data = build_period_dataset(Manifest(rows), "small337", n_points=64)
        assert data.class_counts.tolist() == [100, 100]

    def test_variants_nest_and_share_test_split(self):
        rows = make_rows(700)
        small = build_period_dataset(Manifest(rows), "small337", n_points=64, seed=3)
        medium = build_period_dataset(Manifest(rows), "medium631", n_points=64, seed=3)
        full = build_period_dataset(Manifest(rows), "full747", n_points=64, seed=3)
        ids = lambda d, idx: {d.instances[i].tablet_id for i in idx}
        assert ids(small, small.test_indices) == ids(full, full.test_indices)
        assert ids(small, small.train_indices) <= ids(medium, medium.train_indices)
        assert ids(medium, medium.train_indices) <= ids(full, full.train_indices)

    def test_missing_period_column_rejected(self):
        rows = [ManifestRow("a.ply", "t1"), ManifestRow("b.ply", "t2")]
        with pytest.raises(DataError, match="no period labels"):
            build_period_dataset(Manifest(rows), "full747", n_points=64)

    def test_unknown_variant(self):
        with pytest.raises(DataError, match="size variant"):
            build_period_dataset(Manifest(make_rows(8)), "big999", n_points=64)


class TestBinaryDataset:
    def test_class_counts(self):
        rows = []
        for i in range(40):
            rows.append(ManifestRow(f"m{i}.ply", f"t{i}", seal=1 if i < 10 else 0,
                                    split="train"))
        data = build_binary_dataset(Manifest(rows), "seal", n_points=64)
        assert data.class_counts.tolist() == [30, 10]

    def test_degenerate_task_rejected(self):
        rows = [ManifestRow(f"m{i}.ply", f"t{i}", seal=1) for i in range(10)]
        with pytest.raises(DataError, match="degenerate"):
            build_binary_dataset(Manifest(rows), "seal", n_points=64)

    def test_independent_tasks_same_ids(self):
        rows = make_rows(30)
        seal = build_binary_dataset(Manifest(rows), "seal", n_points=64, seed=1)
        left = build_binary_dataset(Manifest(rows), "left_sign", n_points=64, seed=1)
        assert {i.tablet_id for i in seal.instances} == {i.tablet_id for i in left.instances}
        assert seal.task == "seal" and left.task == "left_sign"

    def test_unknown_task(self):
        with pytest.raises(DataError, match="unknown binary task"):
            build_binary_dataset(Manifest(make_rows(10)), "weight", n_points=64)


class TestFrontDataset:
    def test_paper_sized_split(self):
        rows = make_rows(354)
        data = build_front_dataset(Manifest(rows), make_rng(0), n_points=64)
        train_tablets = {data.instances[i].tablet_id for i in data.train_indices}
        test_tablets = {data.instances[i].tablet_id for i in data.test_indices}
        assert len(train_tablets) == 319
        assert len(test_tablets) == 35

    def test_two_views_per_tablet_same_split(self):
        rows = make_rows(20)
        data = build_front_dataset(Manifest(rows), make_rng(1), n_points=64)
        assert len(data.instances) == 40
        for idx_set in (data.train_indices, data.test_indices):
            tablets = {}
            for i in idx_set:
                inst = data.instances[i]
                tablets.setdefault(inst.tablet_id, []).append(inst.label)
            for labels in tablets.values():
                assert sorted(labels) == [0, 1]

    def test_balanced_by_construction(self):
        data = build_front_dataset(Manifest(make_rows(20)), make_rng(2), n_points=64)
        assert data.class_counts[0] == data.class_counts[1]

    def test_no_eligible_rejected(self):
        rows = [ManifestRow("a.ply", "t1", front_eligible=0)]
        with pytest.raises(DataError, match="eligible"):
            build_front_dataset(Manifest(rows), make_rng(0), n_points=64)

    def test_sibling_views_are_exact_flips(self):
        data = synth_generate("front", 4, make_rng(3), n_points=128)
        from ppcnet.pointcloud import rotate_x_180
        front = data.load(0)
        back = data.load(1)
        assert data.instances[0].tablet_id == data.instances[1].tablet_id
        np.testing.assert_array_equal(rotate_x_180(front).positions, back.positions)
        np.testing.assert_array_equal(rotate_x_180(front).normals, back.normals)


class TestLeakageGuards:
    def test_overlapping_split_rejected(self):
        instances = [Instance("t1", 0, "a.ply"), Instance("t2", 1, "b.ply")]
        with pytest.raises(DataError, match="overlap"):
            TaskDataset(task="x", instances=instances, num_classes=2,
                        train_indices=np.array([0, 1]), test_indices=np.array([1]),
                        n_points=64)

    def test_shared_tablet_id_rejected(self):
        instances = [Instance("t1", 0, "a.ply"), Instance("t1", 1, "a.ply", flip=True)]
        with pytest.raises(DataError, match="both splits"):
            TaskDataset(task="x", instances=instances, num_classes=2,
                        train_indices=np.array([0]), test_indices=np.array([1]),
                        n_points=64)


class TestSynth:
    def test_period_generates_balanced(self):
        data = synth_generate("period", 5, make_rng(4), n_points=128)
        assert data.num_classes == 4
        assert len(data.instances) == 20
        counts = np.bincount(data.labels, minlength=4)
        np.testing.assert_array_equal(counts, [5, 5, 5, 5])

    def test_deterministic(self):
        a = synth_generate("seal", 3, make_rng(5), n_points=128)
        b = synth_generate("seal", 3, make_rng(5), n_points=128)
        np.testing.assert_array_equal(a.load(0).positions, b.load(0).positions)
        np.testing.assert_array_equal(a.train_indices, b.train_indices)

    def test_front_flatness_statistic(self):
        # positive (as-captured) views are flatter in front than in back
        rng = make_rng(6)
        flatter = 0
        for i in range(8):
            mesh = tablet_mesh(rng, f"t{i}")
            from ppcnet.pointcloud import sample_surface
            pc = sample_surface(mesh, 4096, make_rng(100 + i))
            front_var, back_var = face_height_spread(pc)
            flatter += front_var < back_var
        assert flatter == 8

    def test_unknown_task(self):
        with pytest.raises(DataError):
            synth_generate("script", 2, make_rng(0))

    def test_meshes_are_valid_and_samplable(self):
        from ppcnet.pointcloud import sample_surface
        mesh = tablet_mesh(make_rng(7), "check", seal=True, left_wedges=20)
        mesh.validate()
        pc = sample_surface(mesh, 512, make_rng(8))
        pc.validate()

    def test_cache_roundtrip(self, tmp_path):
        rows = make_rows(4)
        for r in rows:
            r.split = "train"
        mesh = tablet_mesh(make_rng(9), "cached")
        instances = [Instance(f"t{i}", i % 2, mesh) for i in range(4)]
        data = TaskDataset(task="x", instances=instances, num_classes=2,
                           train_indices=np.arange(4), test_indices=np.array([], dtype=int),
                           n_points=128, cache_dir=str(tmp_path))
        first = data.load(0)
        assert (tmp_path / f"t0_0_128.ppc").exists()
        data._memory.clear()
        second = data.load(0)
        np.testing.assert_allclose(first.positions, second.positions, atol=1e-6)


def test_stable_hash_is_stable():
    assert stable_hash("tablet-001") == stable_hash("tablet-001")
    assert stable_hash("a") != stable_hash("b")
    assert 0 <= stable_hash("x") < 2 ** 62
