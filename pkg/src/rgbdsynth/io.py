"""File formats and synthetic scene generation.

Formats, all bit-exact (no timestamps inside data files):
  * .rgbd   — magic 'RGBD', u32 LE version=1, u32 LE width, u32 LE height,
              then H*W*4 float32 LE interleaved (R, G, B, D), row-major
              from the top-left
  * scene.json — intrinsics + per-frame file path and 4x4 row-major
              camera-to-world extrinsic; a trajectory file is the same
              schema with the file paths omitted
  * .ply    — ASCII, colored vertices + faces
"""

import json
import os
import struct

import numpy as np

from .core import CameraIntrinsics, CameraPose, RgbdFrame, TriangleMesh
from .raster import rasterize

RGBD_MAGIC = b"RGBD"
RGBD_VERSION = 1


class MalformedFileError(ValueError):
    pass


def write_rgbd(frame, path):
    payload = frame.pixels.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(RGBD_MAGIC)
        f.write(struct.pack("<III", RGBD_VERSION, frame.width, frame.height))
        f.write(payload)


def read_rgbd(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != RGBD_MAGIC:
        raise MalformedFileError(f"{path}: bad magic")
    version, width, height = struct.unpack("<III", blob[4:16])
    if version != RGBD_VERSION:
        raise MalformedFileError(f"{path}: unsupported version {version}")
    expected = 16 + height * width * 16
    if len(blob) != expected:
        raise MalformedFileError(f"{path}: truncated ({len(blob)} of {expected} bytes)")
    px = np.frombuffer(blob[16:], dtype="<f4").reshape(height, width, 4)
    return RgbdFrame(px.astype(np.float64))


class SceneManifest:
    """Intrinsics plus a list of (file path or None, CameraPose)."""

    def __init__(self, intrinsics, frames):
        self.intrinsics = intrinsics
        self.frames = frames


def write_scene_manifest(manifest, path):
    doc = {
        "intrinsics": {
            "fx": manifest.intrinsics.fx,
            "fy": manifest.intrinsics.fy,
            "cx": manifest.intrinsics.cx,
            "cy": manifest.intrinsics.cy,
            "width": manifest.intrinsics.width,
            "height": manifest.intrinsics.height,
        },
        "frames": [
            {
                **({"file": file} if file is not None else {}),
                "extrinsic": [round(float(v), 17) for v in pose.matrix().flatten()],
            }
            for file, pose in manifest.frames
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_scene(path, load_frames=True):
    """Parse a scene manifest; returns (SceneManifest, list of RgbdFrame).

    Frames are loaded and validated against the intrinsics dimensions;
    trajectory-style manifests (no file fields) load no frames.
    """
    with open(path) as f:
        doc = json.load(f)
    ii = doc["intrinsics"]
    intr = CameraIntrinsics(ii["fx"], ii["fy"], ii["cx"], ii["cy"],
                            ii["width"], ii["height"])
    base = os.path.dirname(os.path.abspath(path))
    entries, frames = [], []
    for rec in doc["frames"]:
        M = np.array(rec["extrinsic"], dtype=np.float64).reshape(4, 4)
        R, t = M[:3, :3], M[:3, 3]
        if np.linalg.det(R) < 0:
            raise MalformedFileError("non-rigid extrinsic (det < 0)")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise MalformedFileError("non-rigid extrinsic (not orthonormal)")
        # re-orthonormalize so CameraPose's tight tolerance is met
        u, _, vt = np.linalg.svd(R)
        pose = CameraPose(u @ vt, t)
        file = rec.get("file")
        entries.append((file, pose))
        if file is not None and load_frames:
            frame = read_rgbd(os.path.join(base, file))
            if frame.width != intr.width or frame.height != intr.height:
                raise MalformedFileError(f"{file}: dim-mismatch with intrinsics")
            frames.append(frame)
    return SceneManifest(intr, entries), frames


def write_ply(mesh, path):
    """ASCII PLY with uchar-quantized vertex colors."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    rgb = np.rint(np.clip(mesh.colors, 0.0, 1.0) * 255).astype(int)
    for p, c in zip(mesh.vertices, rgb):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    for f3 in mesh.faces:
        lines.append(f"3 {f3[0]} {f3[1]} {f3[2]}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ── synthetic scenes ─────────────────────────────────────────────────────

class SyntheticSceneSpec:
    """Axis-aligned textured box room with an inward-looking camera ring."""

    def __init__(self, room=(4.0, 4.0, 2.5), pattern="checker",
                 n_cameras=12, ring_radius=1.0, ring_height=1.3,
                 look_at=None, cell=0.1):
        if min(room) <= 0 or n_cameras < 1 or cell <= 0:
            raise ValueError("degenerate scene spec")
        if pattern not in ("checker", "gradient", "stripes"):
            raise ValueError(f"unknown texture pattern {pattern!r}")
        self.room = tuple(float(v) for v in room)
        self.pattern = pattern
        self.n_cameras = int(n_cameras)
        self.ring_radius = float(ring_radius)
        self.ring_height = float(ring_height)
        self.look_at = look_at
        self.cell = float(cell)


def _texture(pattern, a, b, base):
    """Color for grid coordinates (a, b) in cells, tinted by base color."""
    if pattern == "checker":
        on = (a + b) % 2 == 0
    elif pattern == "stripes":
        on = a % 2 == 0
    else:  # gradient handled by caller scaling
        on = True
    shade = 0.9 if on else 0.35
    return np.clip(np.asarray(base) * shade, 0.0, 1.0)


def _wall_grid(origin, du, dv, nu, nv, base, pattern):
    """Tessellate a rectangle into nu x nv cells of two triangles each."""
    origin = np.asarray(origin, dtype=np.float64)
    du = np.asarray(du, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    verts, colors, faces = [], [], []
    for a in range(nu + 1):
        for b in range(nv + 1):
            verts.append(origin + a * du + b * dv)
            c = _texture(pattern, a, b, base)
            if pattern == "gradient":
                c = np.clip(np.asarray(base) * (0.25 + 0.7 * a / max(nu, 1)), 0, 1)
            colors.append(c)
    idx = lambda a, b: a * (nv + 1) + b
    for a in range(nu):
        for b in range(nv):
            faces.append((idx(a, b), idx(a + 1, b), idx(a, b + 1)))
            faces.append((idx(a + 1, b), idx(a + 1, b + 1), idx(a, b + 1)))
    return TriangleMesh(np.array(verts), np.array(colors), np.array(faces))


def make_room_mesh(spec):
    """Six textured walls of the box room, finely tessellated."""
    from .geometry import fuse_meshes

    W, D, H = spec.room
    c = spec.cell
    nx, ny, nz = max(int(round(W / c)), 1), max(int(round(D / c)), 1), \
        max(int(round(H / c)), 1)
    walls = [
        # floor (z=0) and ceiling (z=H)
        _wall_grid((0, 0, 0), (W / nx, 0, 0), (0, D / ny, 0), nx, ny,
                   (0.8, 0.7, 0.6), spec.pattern),
        _wall_grid((0, 0, H), (W / nx, 0, 0), (0, D / ny, 0), nx, ny,
                   (0.9, 0.9, 0.9), spec.pattern),
        # y = 0 and y = D walls
        _wall_grid((0, 0, 0), (W / nx, 0, 0), (0, 0, H / nz), nx, nz,
                   (0.7, 0.3, 0.3), spec.pattern),
        _wall_grid((0, D, 0), (W / nx, 0, 0), (0, 0, H / nz), nx, nz,
                   (0.3, 0.7, 0.3), spec.pattern),
        # x = 0 and x = W walls
        _wall_grid((0, 0, 0), (0, D / ny, 0), (0, 0, H / nz), ny, nz,
                   (0.3, 0.3, 0.7), spec.pattern),
        _wall_grid((W, 0, 0), (0, D / ny, 0), (0, 0, H / nz), ny, nz,
                   (0.7, 0.7, 0.2), spec.pattern),
    ]
    mesh = walls[0]
    for w in walls[1:]:
        mesh = fuse_meshes(mesh, w)
    return mesh


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose looking from eye toward target, image y down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, -up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.cross(fwd, (1.0, 0.0, 0.0))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    if np.linalg.det(R) < 0:
        right = -right
        R = np.stack([right, down, fwd], axis=1)
    return CameraPose(R, eye)


def gen_synthetic_scene(spec, intr, seed=0):
    """Build the GT room mesh and render a ring of RGBD frames from it.

    Returns (mesh, list of (RgbdFrame, CameraPose)). Frames are exactly
    consistent with the mesh by construction. The seed only perturbs
    camera placement jitter, never the room geometry.
    """
    mesh = make_room_mesh(spec)
    W, D, H = spec.room
    center = np.array([W / 2, D / 2, H / 2])
    target = np.asarray(spec.look_at, dtype=np.float64) \
        if spec.look_at is not None else center
    rng = np.random.Generator(np.random.Philox(seed))
    frames = []
    for i in range(spec.n_cameras):
        ang = 2 * np.pi * i / spec.n_cameras + rng.uniform(-0.02, 0.02)
        eye = center + np.array([
            spec.ring_radius * np.cos(ang),
            spec.ring_radius * np.sin(ang),
            spec.ring_height - H / 2,
        ])
        look = target + np.array([np.cos(ang), np.sin(ang), 0.0]) * (
            max(W, D)  # look outward at the walls
        )
        pose = look_at_pose(eye, look)
        frames.append((rasterize(mesh, intr, pose), pose))
    return mesh, frames
