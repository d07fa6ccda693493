"""Z-buffered perspective rasterization of colored triangle meshes.

Produces a partial RGBD frame whose valid pixels double as the visibility
mask: a pixel is valid iff some triangle covers its center at positive
camera depth. Coverage is decided at pixel centers with a top-left fill
rule; attributes are interpolated perspective-correctly. No backface
culling (scanned surfaces are seen from both sides).
"""

import numpy as np

from .core import RgbdFrame

# triangles with any vertex nearer than this are skipped instead of clipped;
# scene meshes are finely tessellated so the loss is confined to slivers
NEAR_PLANE = 1e-6


class RenderChunkConfig:
    """How many known frames build the temporary render mesh."""

    def __init__(self, chunk_size=7):
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        self.chunk_size = int(chunk_size)


def rasterize(mesh, intr, pose):
    """Render a mesh into an RGBD frame under the given camera.

    Pixels hit by no triangle come back invalid (rgb = 0, d = 0).
    """
    W, H = intr.width, intr.height
    out = np.zeros((H, W, 4))
    zbuf = np.full((H, W), np.inf)
    if mesh.n_faces == 0:
        return RgbdFrame(out)

    cam = (mesh.vertices - pose.translation) @ pose.rotation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy

    for f in mesh.faces:
        tz = z[f]
        if tz.min() <= NEAR_PLANE:
            continue
        _draw_triangle(out, zbuf, f, u[f], v[f], tz, mesh.colors[f], W, H)

    return RgbdFrame(out)


def _edge_vals(px, py, tu, tv, gid, j, k):
    """Edge function of directed edge j->k evaluated canonically.

    The same world edge shared by two triangles must yield bitwise-opposite
    values in each, or pixels exactly on the edge can be claimed by both
    triangles or neither. Evaluating in a canonical vertex-id order and
    negating (negation is exact) guarantees consistency.
    """
    flip = 1.0
    if gid[j] > gid[k]:
        j, k = k, j
        flip = -1.0
    ex = tv[j] - tv[k]
    ey = tu[k] - tu[j]
    val = (px - tu[j]) * ex + (py - tv[j]) * ey
    return flip * val, flip * ex, flip * ey


def _draw_triangle(out, zbuf, gid, tu, tv, tz, tc, W, H):
    area = (tu[1] - tu[0]) * (tv[2] - tv[0]) - (tu[2] - tu[0]) * (tv[1] - tv[0])
    if area == 0.0:
        return
    s = 1.0 if area > 0.0 else -1.0

    # bbox widened outward: a vertex 1 ulp past an integer must not evict
    # the pixel whose center sits exactly on it
    x0 = max(int(np.floor(tu.min())), 0)
    x1 = min(int(np.ceil(tu.max())), W - 1)
    y0 = max(int(np.floor(tv.min())), 0)
    y1 = min(int(np.ceil(tv.max())), H - 1)
    if x0 > x1 or y0 > y1:
        return

    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)

    w = np.empty((3,) + px.shape)
    inside = np.ones(px.shape, dtype=bool)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        val, ex, ey = _edge_vals(px, py, tu, tv, gid, j, k)
        val, ex, ey = s * val, s * ex, s * ey
        # top-left rule: a val == 0 pixel counts iff the inward normal
        # (ex, ey) points right, or straight down for horizontal edges
        top_left = (ex > 0) or (ex == 0 and ey > 0)
        inside &= (val > 0) | ((val == 0) & top_left)
        w[i] = val
    if not inside.any():
        return

    lam = w / w.sum(axis=0)
    inv_z = lam[0] / tz[0] + lam[1] / tz[1] + lam[2] / tz[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = 1.0 / inv_z
    closer = inside & (depth < zbuf[y0 : y1 + 1, x0 : x1 + 1]) & (depth > 0)
    if not closer.any():
        return

    rgb = np.zeros(px.shape + (3,))
    for i in range(3):
        rgb += (lam[i] / tz[i])[..., None] * tc[i]
    rgb *= depth[..., None]

    sub = out[y0 : y1 + 1, x0 : x1 + 1]
    sub[..., :3][closer] = np.clip(rgb[closer], 0.0, 1.0)
    sub[..., 3][closer] = depth[closer]
    zbuf[y0 : y1 + 1, x0 : x1 + 1][closer] = depth[closer]


def select_chunk(known_frames, target, cfg=None):
    """Pick the frames nearest the target camera center, up to the chunk size.

    known_frames is a list of (RgbdFrame, CameraPose). Ties break toward
    the lower frame index.
    """
    if not known_frames:
        raise ValueError("known_frames must be non-empty")
    if cfg is None:
        cfg = RenderChunkConfig()
    dists = [
        np.linalg.norm(pose.translation - target.translation)
        for _, pose in known_frames
    ]
    order = np.argsort(dists, kind="stable")
    return [known_frames[i] for i in order[: cfg.chunk_size]]
