"""Evaluation: PSNR, SSIM, depth MSE on frames; chamfer and completeness
on point samples drawn uniformly from mesh surfaces."""

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

PSNR_CAP = 99.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WIN = 7


class EmptyMaskError(ValueError):
    pass


def psnr(pred_rgb, gt_rgb, valid):
    """Peak signal-to-noise ratio in dB over valid pixels, peak 1.0.

    Identical images return the cap value 99.0.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyMaskError("no valid pixels")
    diff = np.asarray(pred_rgb, dtype=np.float64) - np.asarray(gt_rgb, dtype=np.float64)
    mse = float(np.mean(diff[valid] ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def ssim(pred_rgb, gt_rgb):
    """Mean SSIM with a 7x7 uniform window, L = 1, averaged over channels.

    Only windows fully inside the image contribute.
    """
    a = np.asarray(pred_rgb, dtype=np.float64)
    b = np.asarray(gt_rgb, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if h < SSIM_WIN or w < SSIM_WIN:
        raise ValueError("image smaller than the SSIM window")

    r = SSIM_WIN // 2
    crop = (slice(r, h - r), slice(r, w - r))
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx = uniform_filter(x, SSIM_WIN)[crop]
        my = uniform_filter(y, SSIM_WIN)[crop]
        mxx = uniform_filter(x * x, SSIM_WIN)[crop]
        myy = uniform_filter(y * y, SSIM_WIN)[crop]
        mxy = uniform_filter(x * y, SSIM_WIN)[crop]
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def depth_mse(pred_d, gt_d, valid):
    """Mean squared depth error in m^2 over jointly valid pixels."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyMaskError("no jointly valid pixels")
    diff = np.asarray(pred_d, dtype=np.float64) - np.asarray(gt_d, dtype=np.float64)
    return float(np.mean(diff[valid] ** 2))


class PointSample:
    """Points drawn from a mesh surface, with the seed that produced them."""

    def __init__(self, points, seed=None):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.seed = seed

    def __len__(self):
        return len(self.points)


def sample_points(mesh, count=10_000, seed=0):
    """Sample points uniformly on a mesh surface, area-weighted per face."""
    if count <= 0:
        raise ValueError("count must be positive")
    if mesh.n_faces == 0:
        raise ValueError("mesh has no faces")
    tri = mesh.vertices[mesh.faces]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
    )
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.Generator(np.random.Philox(seed))
    face_idx = rng.choice(len(areas), size=count, p=areas / total)
    # uniform barycentric via the square-root trick
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    t = tri[face_idx]
    pts = w0[:, None] * t[:, 0] + w1[:, None] * t[:, 1] + w2[:, None] * t[:, 2]
    return PointSample(pts, seed=seed)


def chamfer(a, b):
    """Symmetric chamfer distance in m^2: sum of both directed mean
    squared nearest-neighbor distances."""
    pa, pb = a.points, b.points
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("point samples must be non-empty")
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def completeness(gt, pred, threshold=0.1):
    """Fraction of gt points whose nearest pred point is within threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(gt.points) == 0 or len(pred.points) == 0:
        raise ValueError("point samples must be non-empty")
    d = cKDTree(pred.points).query(gt.points)[0]
    return float(np.mean(d <= threshold))
