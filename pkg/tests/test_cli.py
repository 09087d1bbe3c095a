import csv
import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from bsig3d import synthetic
from bsig3d.cli import main
from bsig3d.cloud_io import load_cloud, save_ply
from bsig3d.geometry import PointCloud, mesh_resolution
from bsig3d.matching import brute_force_match
from bsig3d.signature import read_descriptors


@pytest.fixture(scope="module")
def files(tmp_path_factory, blob):
    root = tmp_path_factory.mktemp("cli")
    save_ply(root / "blob.ply", blob)
    save_ply(root / "plane.ply", synthetic.plane_grid(25))
    save_ply(root / "cube.ply", synthetic.cube_surface(12))
    moved = blob.transformed(synthetic.random_rotation(np.random.default_rng(4)), [1, 2, 3])
    save_ply(root / "moved.ply", moved)
    return root


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def keypoints(files):
    out = files / "blob.csv"
    run("keypoints", "--input", files / "blob.ply", "--output", out)
    lines = out.read_text().split()
    assert len(lines) >= 10
    (files / "ten.csv").write_text("\n".join(lines[:10]) + "\n")
    return files / "ten.csv"


@pytest.fixture(scope="module")
def descriptors(files):
    run("keypoints", "--input", files / "blob.ply", "--output", files / "kp.csv")
    for name in ("blob", "moved"):
        run("describe", "--input", files / f"{name}.ply", "--keypoints", files / "kp.csv", "--output", files / f"{name}.bin")
    run("describe", "--input", files / "blob.ply", "--keypoints", files / "kp.csv", "--output", files / "n16.bin", "--n-neighbors", 16)
    return files


def header(path):
    return struct.unpack_from("<4sBHI", path.read_bytes())


class TestKeypoints:
    def test_plane_empty_with_warning(self, files, tmp_path, capsys):
        out = tmp_path / "k.csv"
        assert run("keypoints", "--input", files / "plane.ply", "--output", out) == 0
        assert out.read_text() == ""
        assert "warning" in capsys.readouterr().err.lower()

    def test_cube_corners(self, files, tmp_path):
        out = tmp_path / "k.csv"
        assert run("keypoints", "--input", files / "cube.ply", "--output", out) == 0
        cloud = load_cloud(files / "cube.ply")
        idx = [int(line) for line in out.read_text().split()]
        assert idx
        gaps = np.linalg.norm(cloud.points[idx][:, None] - synthetic.cube_corners()[None], axis=2).min(axis=1)
        assert np.all(gaps <= 2 * mesh_resolution(cloud))

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.ply"
        assert run("keypoints", "--input", missing, "--output", tmp_path / "k.csv") == 2
        assert str(missing) in capsys.readouterr().err
        assert not (tmp_path / "k.csv").exists()

    def test_idempotent(self, files, tmp_path):
        run("keypoints", "--input", files / "blob.ply", "--output", tmp_path / "a.csv")
        run("keypoints", "--input", files / "blob.ply", "--output", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestDescribe:
    def test_header_contract(self, files, keypoints, tmp_path):
        out = tmp_path / "d.bin"
        assert run("describe", "--input", files / "blob.ply", "--keypoints", keypoints, "--output", out) == 0
        assert header(out) == (b"3DBS", 1, 32, 10)

    def test_deterministic_across_threads(self, files, keypoints, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        run("describe", "--input", files / "blob.ply", "--keypoints", keypoints, "--output", a, "--threads", 1)
        run("describe", "--input", files / "blob.ply", "--keypoints", keypoints, "--output", b, "--threads", 4)
        assert a.read_bytes() == b.read_bytes()

    def test_skip_logged(self, blob, keypoints, tmp_path, capsys):
        kps = [int(x) for x in keypoints.read_text().split()]
        kp = kps[0]
        pts = np.vstack([blob.points, np.repeat(blob.points[kp : kp + 1], 40, axis=0)])
        normals = np.vstack([blob.normals, np.repeat(blob.normals[kp : kp + 1], 40, axis=0)])
        save_ply(tmp_path / "dup.ply", PointCloud(pts, normals=normals))
        out = tmp_path / "d.bin"
        assert run("describe", "--input", tmp_path / "dup.ply", "--keypoints", keypoints, "--output", out) == 0
        assert header(out)[3] == 9
        assert f"skipped keypoint {kp}" in capsys.readouterr().err

    def test_estimates_missing_normals(self, blob, keypoints, tmp_path):
        save_ply(tmp_path / "raw.ply", PointCloud(blob.points))
        out = tmp_path / "d.bin"
        assert run("describe", "--input", tmp_path / "raw.ply", "--keypoints", keypoints, "--output", out) == 0
        assert header(out)[3] == 10

    def test_bad_flag_writes_nothing(self, files, keypoints, tmp_path):
        out = tmp_path / "d.bin"
        code = run("describe", "--input", files / "blob.ply", "--keypoints", keypoints, "--output", out, "--n-neighbors", 1)
        assert code == 1 and not out.exists()
        code = run("describe", "--input", files / "blob.ply", "--keypoints", keypoints, "--output", out, "--theta-degrees", 0)
        assert code == 1 and not out.exists()


class TestMatch:
    def rows(self, path):
        with open(path) as fh:
            return list(csv.reader(fh))

    def test_exact_equals_oracle(self, descriptors, tmp_path):
        out = tmp_path / "m.csv"
        assert run("match", "--input", descriptors / "blob.bin", "--targets", descriptors / "moved.bin", "--output", out, "--exact", "--k", 2) == 0
        _, q = read_descriptors(descriptors / "blob.bin")
        _, t = read_descriptors(descriptors / "moved.bin")
        expected = [
            [str(q[m.query_id].keypoint_index), str(t[m.target_id].keypoint_index), str(m.distance)]
            for row in brute_force_match(q, t, 2)
            for m in row
        ]
        rows = self.rows(out)
        assert rows[0] == ["query_id", "target_id", "distance"]
        assert rows[1:] == expected

    def test_forest_full_checks_equal_exact(self, descriptors, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("match", "--input", descriptors / "blob.bin", "--targets", descriptors / "moved.bin", "--output", a, "--exact")
        _, t = read_descriptors(descriptors / "moved.bin")
        run("match", "--input", descriptors / "blob.bin", "--targets", descriptors / "moved.bin", "--output", b, "--max-checks", len(t))
        assert a.read_bytes() == b.read_bytes()

    def test_mismatched_n(self, descriptors, tmp_path, capsys):
        out = tmp_path / "m.csv"
        code = run("match", "--input", descriptors / "blob.bin", "--targets", descriptors / "n16.bin", "--output", out)
        assert code != 0 and not out.exists()
        assert "N=32" in capsys.readouterr().err

    def test_conflicting_flags(self, descriptors, tmp_path):
        out = tmp_path / "m.csv"
        assert run("match", "--input", descriptors / "blob.bin", "--targets", descriptors / "blob.bin", "--output", out, "--exact", "--max-checks", 4) == 1
        assert not out.exists()


class TestBench:
    def test_identity_auc(self, tmp_path):
        out = tmp_path / "r.json"
        assert run("bench", "--output", out, "--synthetic", 2, "--points", 3000, "--threads", 1) == 0
        report = json.loads(out.read_text())
        assert report["auc"] >= 0.9
        assert (tmp_path / "r.pr.csv").exists()

    def test_five_knobs(self, tmp_path):
        pr = tmp_path / "pr.csv"
        code = run("bench", "--output", tmp_path / "r.json", "--pr-csv", pr, "--synthetic", 1, "--points", 2000, "--knobs", 1, 2, 4, 8, 16)
        assert code == 0
        rows = list(csv.reader(open(pr)))
        assert len(rows) == 6 and rows[0] == ["knob", "precision", "recall"]

    def test_input_models(self, files, tmp_path):
        out = tmp_path / "r.json"
        assert run("bench", "--input", files / "blob.ply", "--output", out, "--rotation", "random", "--noise-sigma", 0.1, "--keep-fraction", 0.9) == 0
        params = json.loads(out.read_text())["params"]["recipe"]
        assert params["noise_sigma"] == 0.1 and params["keep_fraction"] == 0.9

    def test_unwritable_output(self, tmp_path):
        assert run("bench", "--output", tmp_path / "missing" / "r.json", "--synthetic", 1, "--points", 500) == 2

    def test_invalid_flags(self, tmp_path):
        out = tmp_path / "r.json"
        assert run("bench", "--output", out, "--keep-fraction", 0) == 1
        assert run("bench", "--output", out, "--knobs", 4, 2) == 1
        assert not out.exists()


class TestEntryPoint:
    def test_usage_error_exit_code(self):
        res = subprocess.run([sys.executable, "-m", "bsig3d", "keypoints"], capture_output=True, text=True)
        assert res.returncode == 1
        assert "required" in res.stderr

    def test_unknown_command(self):
        res = subprocess.run([sys.executable, "-m", "bsig3d", "frobnicate"], capture_output=True, text=True)
        assert res.returncode == 1
