"""Camera model and the image / mesh containers shared by every other module.

Conventions, fixed once:
  * extrinsics are camera-to-world; the camera looks along +Z, image x
    points right, image y points down
  * pixel coordinates are continuous with integer (u, v) at pixel centers
  * a pixel is valid iff its depth is > 0; invalid pixels carry rgb = 0
"""

import numpy as np

ORTHO_TOL = 1e-9


class BehindCameraError(ValueError):
    """Point projects to non-positive camera depth."""


class InvalidDepthError(ValueError):
    """Depth must be strictly positive to unproject."""


class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size."""

    def __init__(self, fx, fy, cx, cy, width, height):
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx < width) or not (0 <= cy < height):
            raise ValueError("principal point outside the image")
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)

    @property
    def K(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def __eq__(self, other):
        return isinstance(other, CameraIntrinsics) and (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
        )

    def __repr__(self):
        return (
            f"CameraIntrinsics(fx={self.fx}, fy={self.fy}, cx={self.cx}, "
            f"cy={self.cy}, width={self.width}, height={self.height})"
        )


class CameraPose:
    """Camera-to-world rigid pose: 3x3 rotation + translation in meters."""

    def __init__(self, rotation, translation):
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=ORTHO_TOL):
            raise ValueError("rotation determinant is not +1")
        self.rotation = R
        self.translation = t
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other):
        """Return self ∘ other (apply other first, then self)."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points):
        """Map points (..., 3) from camera frame to world."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def matrix(self):
        """4x4 homogeneous camera-to-world matrix."""
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __repr__(self):
        return f"CameraPose(t={self.translation.tolist()})"


class RgbdFrame:
    """H x W x 4 image: rgb in [0, 1] plus metric depth; depth 0 = invalid."""

    def __init__(self, pixels):
        px = np.asarray(pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 4:
            raise ValueError("pixels must have shape (H, W, 4)")
        rgb, d = px[..., :3], px[..., 3]
        if np.any(d < 0):
            raise ValueError("depth must be non-negative")
        if np.any(rgb < 0) or np.any(rgb > 1):
            raise ValueError("rgb must lie in [0, 1]")
        if np.any(rgb[d == 0] != 0):
            raise ValueError("invalid pixels (d = 0) must have rgb = 0")
        self.pixels = px
        self.pixels.setflags(write=False)

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros((height, width, 4)))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def rgb(self):
        return self.pixels[..., :3]

    @property
    def depth(self):
        return self.pixels[..., 3]

    @property
    def valid(self):
        """Boolean H x W visibility mask (depth > 0)."""
        return self.depth > 0


class TriangleMesh:
    """Vertices in world meters, per-vertex rgb colors, triangle faces."""

    def __init__(self, vertices, colors, faces):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        c = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(c) != len(v):
            raise ValueError("need one color per vertex")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if len(f) and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise ValueError("degenerate face repeats a vertex")
        self.vertices = v
        self.colors = c
        self.faces = f
        for a in (self.vertices, self.colors, self.faces):
            a.setflags(write=False)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), np.int64))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)


def project_point(p, intr, pose):
    """Project world point(s) into the camera; returns (u, v, z).

    Accepts a single 3-vector or an (N, 3) array. Raises BehindCameraError
    if any camera-space depth is <= 1e-9.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p_cam = (p.reshape(-1, 3) - pose.translation) @ pose.rotation
    z = p_cam[:, 2]
    if np.any(z <= 1e-9):
        raise BehindCameraError("point at or behind the camera plane")
    u = intr.fx * p_cam[:, 0] / z + intr.cx
    v = intr.fy * p_cam[:, 1] / z + intr.cy
    if single:
        return u[0], v[0], z[0]
    return u, v, z


def unproject_pixel(u, v, d, intr, pose):
    """Lift pixel(s) with depth d back to world space; inverse of project_point."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InvalidDepthError("depth must be > 0")
    single = u.ndim == 0
    p_cam = np.stack(
        [(u - intr.cx) / intr.fx * d, (v - intr.cy) / intr.fy * d, d * np.ones_like(u)],
        axis=-1,
    )
    p_world = pose.apply(p_cam.reshape(-1, 3))
    return p_world[0] if single else p_world
