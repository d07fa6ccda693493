"""Back-projection, rigid transforms, fusion, and voxel pooling."""

import numpy as np
import pytest

from rgbdsynth.core import CameraIntrinsics, CameraPose, RgbdFrame, TriangleMesh
from rgbdsynth.geometry import (BackprojectConfig, InvalidTransformError,
                                backproject_frame, fuse_meshes,
                                transform_mesh, voxel_pool)


def intr_2x2():
    return CameraIntrinsics(100.0, 100.0, 0.5, 0.5, 2, 2)


def frame_const_depth(depth, n=2):
    px = np.zeros((n, n, 4))
    px[..., :3] = 0.5
    px[..., 3] = depth
    return RgbdFrame(px)


def random_pose(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return CameraPose(q, rng.standard_normal(3))


def tri_mesh(offset=0.0):
    v = np.array([[0, 0, 2], [1, 0, 2], [0, 1, 2]], dtype=float) + offset
    return TriangleMesh(v, np.full((3, 3), 0.5), [[0, 1, 2]])


class TestBackprojectConfig:
    def test_defaults(self):
        cfg = BackprojectConfig()
        assert cfg.max_edge_len == 0.1
        assert cfg.min_depth == 0.1
        assert cfg.voxel_size == 0.02

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            BackprojectConfig(max_edge_len=0.0)


class TestBackprojectFrame:
    def test_all_invalid_gives_empty_mesh(self):
        m = backproject_frame(RgbdFrame.empty(2, 2), intr_2x2(),
                              CameraPose.identity())
        assert m.n_vertices == 0 and m.n_faces == 0

    def test_2x2_depth_one_two_faces(self):
        # pixel spacing at depth 1 with fx 100 is 0.01 m, under the filter
        m = backproject_frame(frame_const_depth(1.0), intr_2x2(),
                              CameraPose.identity())
        assert m.n_vertices == 4 and m.n_faces == 2

    def test_2x2_too_close_faces_removed(self):
        m = backproject_frame(frame_const_depth(0.05), intr_2x2(),
                              CameraPose.identity())
        assert m.n_vertices == 4 and m.n_faces == 0

    def test_long_edges_removed(self):
        px = np.zeros((2, 2, 4))
        px[..., :3] = 0.5
        px[..., 3] = [[1.0, 1.0], [1.0, 1.2]]  # 0.2 m depth jump
        m = backproject_frame(RgbdFrame(px), intr_2x2(), CameraPose.identity())
        assert m.n_faces == 1

    def test_triangulation_diagonal(self):
        m = backproject_frame(frame_const_depth(1.0), intr_2x2(),
                              CameraPose.identity())
        # vertex order follows row-major valid pixels: 00, 10, 01, 11
        assert m.faces.tolist() == [[0, 1, 2], [1, 3, 2]]

    def test_missing_corner_drops_one_face(self):
        px = np.zeros((2, 2, 4))
        px[..., :3] = 0.5
        px[..., 3] = 1.0
        px[1, 1] = 0.0
        m = backproject_frame(RgbdFrame(px), intr_2x2(), CameraPose.identity())
        assert m.n_vertices == 3 and m.n_faces == 1

    def test_colors_copied_from_pixels(self):
        px = np.zeros((1, 2, 4))
        px[0, 0] = (0.1, 0.2, 0.3, 1.0)
        px[0, 1] = (0.4, 0.5, 0.6, 1.0)
        m = backproject_frame(RgbdFrame(px),
                              CameraIntrinsics(100, 100, 0.5, 0.0, 2, 1),
                              CameraPose.identity())
        assert np.allclose(m.colors, [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])

    def test_se3_equivariance(self):
        rng = np.random.default_rng(3)
        frame = frame_const_depth(1.0, n=4)
        intr = CameraIntrinsics(100, 100, 1.5, 1.5, 4, 4)
        for _ in range(5):
            pose = random_pose(rng)
            g = random_pose(rng)
            a = transform_mesh(backproject_frame(frame, intr, pose), g)
            b = backproject_frame(frame, intr, g.compose(pose))
            assert np.allclose(a.vertices, b.vertices, atol=1e-9)
            assert np.array_equal(a.faces, b.faces)


class TestTransformMesh:
    def test_identity(self):
        m = tri_mesh()
        out = transform_mesh(m, CameraPose.identity())
        assert np.array_equal(out.vertices, m.vertices)
        assert np.array_equal(out.faces, m.faces)

    def test_pure_translation(self):
        out = transform_mesh(tri_mesh(), CameraPose(np.eye(3), (1.0, 0, 0)))
        assert np.array_equal(out.vertices[0], [1.0, 0.0, 2.0])

    def test_inverse_restores(self):
        rng = np.random.default_rng(5)
        g = random_pose(rng)
        m = tri_mesh()
        back = transform_mesh(transform_mesh(m, g), g.inverse())
        assert np.allclose(back.vertices, m.vertices, atol=1e-9)

    def test_rejects_non_rigid(self):
        with pytest.raises(InvalidTransformError):
            transform_mesh(tri_mesh(), (np.eye(3) * 2.0, np.zeros(3)))


class TestFuseMeshes:
    def test_empty_left_identity(self):
        m = tri_mesh()
        out = fuse_meshes(TriangleMesh.empty(), m)
        assert np.array_equal(out.vertices, m.vertices)

    def test_empty_right_identity(self):
        m = tri_mesh()
        out = fuse_meshes(m, TriangleMesh.empty())
        assert np.array_equal(out.vertices, m.vertices)

    def test_concatenation_offsets_indices(self):
        out = fuse_meshes(tri_mesh(), tri_mesh(offset=5.0))
        assert out.n_vertices == 6 and out.n_faces == 2
        assert out.faces.tolist() == [[0, 1, 2], [3, 4, 5]]

    def test_associative_in_geometry(self):
        a, b, c = tri_mesh(), tri_mesh(offset=3.0), tri_mesh(offset=6.0)
        left = fuse_meshes(fuse_meshes(a, b), c)
        right = fuse_meshes(a, fuse_meshes(b, c))
        assert np.array_equal(left.vertices, right.vertices)
        assert np.array_equal(
            left.vertices[left.faces], right.vertices[right.faces]
        )


class TestVoxelPool:
    def test_same_cell_merges_to_centroid(self):
        m = TriangleMesh(
            [[0, 0, 0], [0.005, 0, 0]],
            [[1, 0, 0], [0, 1, 0]],
            np.zeros((0, 3), np.int64),
        )
        out = voxel_pool(m, 0.02)
        assert out.n_vertices == 1
        assert np.allclose(out.vertices[0], [0.0025, 0, 0])
        assert np.allclose(out.colors[0], [0.5, 0.5, 0])

    def test_separate_cells_retained(self):
        m = TriangleMesh(
            [[0, 0, 0], [0.03, 0, 0]],
            np.zeros((2, 3)),
            np.zeros((0, 3), np.int64),
        )
        assert voxel_pool(m, 0.02).n_vertices == 2

    def test_collapsed_faces_removed(self):
        m = TriangleMesh(
            [[0, 0, 0], [0.001, 0, 0], [0, 1, 0]],
            np.zeros((3, 3)),
            [[0, 1, 2]],
        )
        out = voxel_pool(m, 0.02)
        assert out.n_vertices == 2 and out.n_faces == 0

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        m = TriangleMesh(rng.uniform(0, 1, (200, 3)),
                         rng.uniform(0, 1, (200, 3)),
                         np.zeros((0, 3), np.int64))
        once = voxel_pool(m, 0.05)
        twice = voxel_pool(once, 0.05)
        assert once.n_vertices == twice.n_vertices
        assert np.allclose(np.sort(once.vertices, axis=0),
                           np.sort(twice.vertices, axis=0), atol=1e-12)

    def test_rejects_nonpositive_voxel(self):
        with pytest.raises(ValueError):
            voxel_pool(tri_mesh(), 0.0)

    def test_anchored_grid_commutes_with_rigid_motion(self):
        rng = np.random.default_rng(13)
        m = TriangleMesh(rng.uniform(0, 1, (300, 3)),
                         rng.uniform(0, 1, (300, 3)),
                         np.zeros((0, 3), np.int64))
        anchor = random_pose(rng)
        g = random_pose(rng)
        a = transform_mesh(voxel_pool(m, 0.05, anchor), g)
        b = voxel_pool(transform_mesh(m, g), 0.05, g.compose(anchor))
        assert a.n_vertices == b.n_vertices
        assert np.allclose(np.sort(a.vertices, axis=0),
                           np.sort(b.vertices, axis=0), atol=1e-9)
