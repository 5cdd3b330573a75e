import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hippo.core import (
    CameraIntrinsics,
    ColoredPointCloud,
    DatasetError,
    Frame,
    FrameDirectory,
    PlyError,
    RigidTransform,
    TriangleMesh,
    backproject,
    compose,
    invert,
    project,
    read_cloud,
    read_mesh,
    transform_cloud,
    write_cloud,
    write_frame,
    write_mesh,
    write_meta,
)
from hippo.core.pnm import read_pnm, write_pnm
from hippo.core.transform import random_rotation, rot_z


def rz(deg):
    return RigidTransform(rot_z(np.radians(deg)), np.zeros(3))


def random_pose(rng):
    return RigidTransform(random_rotation(rng), rng.normal(size=3))


class TestRigidTransform:
    def test_compose_identity(self):
        t = random_pose(np.random.default_rng(0))
        assert compose(t, RigidTransform.identity()).allclose(t, 0.0)

    def test_compose_inverse_is_identity(self):
        t = random_pose(np.random.default_rng(1))
        assert compose(t, invert(t)).allclose(RigidTransform.identity(), 1e-9)

    def test_rotation_composition(self):
        assert compose(rz(90), rz(90)).allclose(rz(180), 1e-12)

    def test_compose_order_applies_b_first(self):
        a = RigidTransform.from_translation([1, 0, 0])
        b = rz(90)
        p = np.array([[1.0, 0, 0]])
        np.testing.assert_allclose(compose(a, b).apply(p), [[1.0, 1.0, 0.0]], atol=1e-12)

    def test_invert_identity(self):
        assert invert(RigidTransform.identity()).allclose(RigidTransform.identity(), 0.0)

    def test_invert_translation(self):
        inv = invert(RigidTransform.from_translation([1, 2, 3]))
        np.testing.assert_array_equal(inv.translation, [-1, -2, -3])

    def test_invert_involution(self):
        t = random_pose(np.random.default_rng(2))
        assert invert(invert(t)).allclose(t, 1e-9)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_orthonormal_after_many_compositions(self):
        rng = np.random.default_rng(3)
        t = RigidTransform.identity()
        for _ in range(10_000):
            t = compose(t, RigidTransform(random_rotation(rng), rng.normal(size=3) * 0.01))
        assert abs(np.linalg.det(t.rotation) - 1.0) < 1e-6
        np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(3), atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rigid_transform_preserves_distances(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(40, 3))
        t = random_pose(rng)
        moved = t.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
        assert np.max(np.abs(d0 - d1)) < 1e-9


class TestTransformCloud:
    def test_identity(self):
        c = ColoredPointCloud(np.random.default_rng(0).normal(size=(10, 3)))
        np.testing.assert_array_equal(transform_cloud(c, RigidTransform.identity()).positions, c.positions)

    def test_single_point_rz90(self):
        c = ColoredPointCloud([[1.0, 0, 0]], [[1, 0, 0]], [[1.0, 0, 0]])
        out = transform_cloud(c, rz(90))
        np.testing.assert_allclose(out.positions, [[0, 1, 0]], atol=1e-12)
        np.testing.assert_allclose(out.normals, [[0, 1, 0]], atol=1e-12)
        np.testing.assert_array_equal(out.colors, c.colors)

    def test_normals_rotate_but_do_not_translate(self):
        c = ColoredPointCloud([[0.0, 0, 0]], None, [[0.0, 0, 1]])
        out = transform_cloud(c, RigidTransform.from_translation([5, 5, 5]))
        np.testing.assert_array_equal(out.normals, [[0, 0, 1]])

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        c = ColoredPointCloud(rng.normal(size=(100, 3)))
        t = random_pose(rng)
        back = transform_cloud(transform_cloud(c, t), invert(t))
        np.testing.assert_allclose(back.positions, c.positions, atol=1e-9)


class TestTypes:
    def test_cloud_length_mismatch(self):
        with pytest.raises(ValueError):
            ColoredPointCloud(np.zeros((3, 3)), np.zeros((2, 3)))

    def test_cloud_rejects_nan(self):
        with pytest.raises(ValueError):
            ColoredPointCloud([[np.nan, 0, 0]])

    def test_cloud_rejects_non_unit_normals(self):
        with pytest.raises(ValueError):
            ColoredPointCloud([[0.0, 0, 0]], None, [[0.0, 0, 2.0]])

    def test_mesh_rejects_bad_index(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])

    def test_mesh_rejects_degenerate_face(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.eye(3), [[0, 1, 1]])

    def test_intrinsics_invariants(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 1, 1, 4, 4)
        with pytest.raises(ValueError):
            CameraIntrinsics(1.0, 1.0, 4, 1, 4, 4)


def _frame(depth, mask=None, k=None):
    k = k or CameraIntrinsics(100.0, 120.0, 3.0, 2.0, 8, 6)
    depth = np.broadcast_to(depth, (k.height, k.width)).astype(float)
    color = np.zeros((k.height, k.width, 3))
    color[..., 0] = np.arange(k.width)[None] / k.width
    mask = np.ones(depth.shape, bool) if mask is None else mask
    return Frame(depth, color, mask, k)


class TestBackproject:
    def test_principal_point(self):
        k = CameraIntrinsics(100.0, 100.0, 3.0, 2.0, 8, 6)
        mask = np.zeros((6, 8), bool)
        mask[2, 3] = True
        cloud = backproject(_frame(0.7, mask, k))
        np.testing.assert_allclose(cloud.positions, [[0.0, 0.0, 0.7]], atol=0)

    def test_zero_depth_is_empty(self):
        assert len(backproject(_frame(0.0))) == 0

    def test_plane_at_one_meter(self):
        # closed form: every pixel of a fronto-parallel plane at z=1 maps to z=1
        f = _frame(1.0)
        cloud = backproject(f)
        assert len(cloud) == 8 * 6
        np.testing.assert_allclose(cloud.positions[:, 2], 1.0, atol=1e-6)
        u = np.tile(np.arange(8), 6)
        np.testing.assert_allclose(cloud.positions[:, 0], (u - 3.0) / 100.0, atol=1e-12)

    def test_colors_sampled_from_image(self):
        cloud = backproject(_frame(1.0))
        np.testing.assert_allclose(cloud.colors[:8, 0], np.arange(8) / 8)

    def test_masked_out_and_invalid_pixels_skipped(self):
        depth = np.ones((6, 8))
        depth[0, 0] = 0.0
        mask = np.ones((6, 8), bool)
        mask[1, 1] = False
        assert len(backproject(_frame(depth, mask))) == 46

    def test_project_inverts_backproject(self):
        rng = np.random.default_rng(5)
        k = CameraIntrinsics(525.0, 520.0, 319.5, 239.5, 640, 480)
        depth = rng.uniform(0.3, 3.0, size=(480, 640))
        cloud = backproject(_frame(depth, None, k))
        uv = project(cloud.positions, k)
        v, u = np.mgrid[0:480, 0:640]
        assert np.max(np.abs(uv - np.stack([u.ravel(), v.ravel()], 1))) < 0.5


def _tetra():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    c = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float)
    return TriangleMesh(v * 0.25, f, c)


class TestPly:
    @pytest.mark.parametrize("binary", [True, False])
    def test_mesh_round_trip(self, tmp_path, binary):
        m = _tetra()
        write_mesh(tmp_path / "m.ply", m, binary=binary)
        back = read_mesh(tmp_path / "m.ply")
        np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-7)
        np.testing.assert_array_equal(back.faces, m.faces)
        np.testing.assert_allclose(back.vertex_colors, m.vertex_colors, atol=1 / 255)

    @pytest.mark.parametrize("binary", [True, False])
    def test_cloud_with_normals_round_trip(self, tmp_path, binary):
        rng = np.random.default_rng(6)
        n = rng.normal(size=(50, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        c = ColoredPointCloud(rng.normal(size=(50, 3)), rng.uniform(size=(50, 3)), n)
        write_cloud(tmp_path / "c.ply", c, binary=binary)
        back = read_cloud(tmp_path / "c.ply")
        np.testing.assert_allclose(back.positions, c.positions, atol=1e-6)
        np.testing.assert_allclose(back.normals, c.normals, atol=1e-6)

    def test_header_declares_float_and_uchar(self, tmp_path):
        write_mesh(tmp_path / "m.ply", _tetra())
        head = (tmp_path / "m.ply").read_bytes().split(b"end_header")[0].decode()
        assert "format binary_little_endian 1.0" in head
        assert "property float x" in head and "property uchar red" in head
        assert "property list uchar int vertex_indices" in head

    def test_reads_quads_and_external_ascii(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\ncomment hand written\nelement vertex 4\n"
            "property double x\nproperty double y\nproperty double z\n"
            "element face 1\nproperty list uchar uint vertex_index\nend_header\n"
            "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        )
        (tmp_path / "q.ply").write_text(text)
        m = read_mesh(tmp_path / "q.ply")
        np.testing.assert_array_equal(m.faces, [[0, 1, 2], [0, 2, 3]])

    def test_malformed_ascii_reports_byte_offset(self, tmp_path):
        head = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
        data = head + "0 zz 0\n"
        (tmp_path / "bad.ply").write_text(data)
        with pytest.raises(PlyError) as err:
            read_mesh(tmp_path / "bad.ply")
        assert err.value.offset == len(head) + 2
        assert "byte offset" in str(err.value)

    def test_truncated_binary_reports_offset(self, tmp_path):
        write_mesh(tmp_path / "m.ply", _tetra())
        data = (tmp_path / "m.ply").read_bytes()
        (tmp_path / "t.ply").write_bytes(data[:-7])
        with pytest.raises(PlyError) as err:
            read_mesh(tmp_path / "t.ply")
        assert err.value.offset > 0

    def test_not_a_ply(self, tmp_path):
        (tmp_path / "x.ply").write_bytes(b"solid stl\n")
        with pytest.raises(PlyError):
            read_mesh(tmp_path / "x.ply")


class TestFrameFormat:
    def test_pgm16_is_big_endian(self, tmp_path):
        write_pnm(tmp_path / "d.pgm", np.array([[1, 258]], dtype=np.uint16), maxval=65535)
        raw = (tmp_path / "d.pgm").read_bytes()
        assert raw.startswith(b"P5")
        assert raw.endswith(b"\x00\x01\x01\x02")
        np.testing.assert_array_equal(read_pnm(tmp_path / "d.pgm"), [[1, 258]])

    def test_ppm_round_trip(self, tmp_path):
        img = np.random.default_rng(7).integers(0, 256, size=(4, 5, 3)).astype(np.uint8)
        write_pnm(tmp_path / "c.ppm", img)
        np.testing.assert_array_equal(read_pnm(tmp_path / "c.ppm"), img)

    def test_frame_directory_round_trip(self, tmp_path):
        k = CameraIntrinsics(50.0, 50.0, 3.5, 2.5, 8, 6)
        depth = np.random.default_rng(8).uniform(0.2, 2.0, size=(6, 8))
        depth[0, 0] = 0.0
        mask = depth > 0.5
        color = np.random.default_rng(9).uniform(size=(6, 8, 3))
        write_frame(tmp_path, 0, depth, color, mask)
        pose = RigidTransform(rot_z(0.3), [0.1, 0.2, 0.3])
        write_meta(tmp_path, k, [{"index": 0, "gt_pose": pose.matrix().tolist()}])
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert set(meta) >= {"fx", "fy", "cx", "cy", "width", "height", "frames"}
        ds = FrameDirectory(tmp_path)
        f = ds.load(0)
        assert np.max(np.abs(f.depth - depth)) <= 0.0005 + 1e-12
        np.testing.assert_array_equal(f.mask, mask)
        assert f.gt_pose.allclose(pose, 1e-12)
        assert f.intrinsics == k

    def test_missing_meta_names_path(self, tmp_path):
        with pytest.raises(DatasetError, match="meta.json"):
            FrameDirectory(tmp_path)
