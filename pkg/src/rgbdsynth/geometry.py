"""Back-projection of RGBD frames into meshes, mesh fusion and voxel pooling.

Back-projection inherits connectivity from the 2D pixel grid: every 2x2
block of valid pixels contributes two triangles. Faces too close to the
viewpoint or with overly long edges are dropped.
"""

import numpy as np

from .core import CameraPose, RgbdFrame, TriangleMesh, unproject_pixel


class InvalidTransformError(ValueError):
    """Transform rotation is not a proper rotation."""


class BackprojectConfig:
    """Thresholds for mesh extraction from a depth image (all in meters)."""

    def __init__(self, max_edge_len=0.1, min_depth=0.1, voxel_size=0.02):
        if max_edge_len <= 0 or min_depth <= 0 or voxel_size <= 0:
            raise ValueError("all thresholds must be positive")
        self.max_edge_len = float(max_edge_len)
        self.min_depth = float(min_depth)
        self.voxel_size = float(voxel_size)


def backproject_frame(frame, intr, pose, cfg=None):
    """Lift an RGBD frame to a triangle mesh in world space.

    One vertex per valid pixel; each 2x2 pixel block yields triangles
    (p00, p10, p01) and (p10, p11, p01) when all three corners are valid.
    Faces are removed if any vertex is nearer than cfg.min_depth to the
    camera or any 3D edge is longer than cfg.max_edge_len.
    """
    if cfg is None:
        cfg = BackprojectConfig()
    if frame.width != intr.width or frame.height != intr.height:
        raise ValueError("frame dimensions do not match intrinsics")

    valid = frame.valid
    if not valid.any():
        return TriangleMesh.empty()

    vs, us = np.nonzero(valid)
    depths = frame.depth[vs, us]
    verts = unproject_pixel(us.astype(np.float64), vs.astype(np.float64),
                            depths, intr, pose)
    colors = frame.rgb[vs, us]

    # pixel (v, u) -> vertex index, -1 where invalid
    index = np.full((frame.height, frame.width), -1, dtype=np.int64)
    index[vs, us] = np.arange(len(vs))

    i00 = index[:-1, :-1]
    i10 = index[:-1, 1:]
    i01 = index[1:, :-1]
    i11 = index[1:, 1:]
    tri_a = np.stack([i00, i10, i01], axis=-1).reshape(-1, 3)
    tri_b = np.stack([i10, i11, i01], axis=-1).reshape(-1, 3)
    faces = np.concatenate([tri_a, tri_b])
    faces = faces[(faces >= 0).all(axis=1)]

    if len(faces):
        cam_depth = depths[faces]  # camera-space z is the stored depth
        keep = (cam_depth >= cfg.min_depth).all(axis=1)
        p = verts[faces]
        e0 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        e1 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        e2 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        keep &= np.maximum(np.maximum(e0, e1), e2) <= cfg.max_edge_len
        faces = faces[keep]

    return TriangleMesh(verts, colors, faces)


def transform_mesh(mesh, transform):
    """Apply a rigid transform (CameraPose reused as SE(3) element) to a mesh."""
    if not isinstance(transform, CameraPose):
        try:
            transform = CameraPose(transform[0], transform[1])
        except ValueError as e:
            raise InvalidTransformError(str(e)) from e
    return TriangleMesh(transform.apply(mesh.vertices), mesh.colors, mesh.faces)


def fuse_meshes(a, b):
    """Concatenate two meshes; b's face indices are offset by a's vertex count."""
    if a.n_vertices == 0:
        return b
    if b.n_vertices == 0:
        return a
    return TriangleMesh(
        np.concatenate([a.vertices, b.vertices]),
        np.concatenate([a.colors, b.colors]),
        np.concatenate([a.faces, b.faces + a.n_vertices]),
    )


def voxel_pool(mesh, voxel_size=0.02, anchor=None):
    """Merge vertices that share a cubic voxel cell into their centroid.

    Colors are averaged alongside positions; faces are reindexed and
    faces that collapse onto a repeated vertex are dropped. Idempotent
    up to reindexing. The optional anchor pose fixes the grid to a
    camera frame instead of world axes, so rigidly moving scene and
    anchor together moves the pooled mesh by the same rigid motion.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if mesh.n_vertices == 0:
        return mesh

    pts = mesh.vertices
    if anchor is not None:
        pts = (pts - anchor.translation) @ anchor.rotation
    cells = np.floor(pts / voxel_size).astype(np.int64)
    # stable bucketing: unique over lexicographically sorted cell triples
    _, inverse, counts = np.unique(
        cells, axis=0, return_inverse=True, return_counts=True
    )
    n_cells = len(counts)

    verts = np.zeros((n_cells, 3))
    colors = np.zeros((n_cells, 3))
    np.add.at(verts, inverse, mesh.vertices)
    np.add.at(colors, inverse, mesh.colors)
    verts /= counts[:, None]
    colors /= counts[:, None]

    faces = inverse[mesh.faces]
    if len(faces):
        ok = (
            (faces[:, 0] != faces[:, 1])
            & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2])
        )
        faces = faces[ok]

    return TriangleMesh(verts, colors, faces)
