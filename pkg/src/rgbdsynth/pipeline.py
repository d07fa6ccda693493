"""End-to-end incremental view inpainting.

Ingest posed RGBD frames and a camera trajectory, then per novel view:
render the current scene mesh, inpaint the missing RGBD pixels with the
diffusion sampler, back-project the completed frame and fuse it into the
mesh. Also houses the affine conversion between metric frames and the
normalized [-1, 1] diffusion space.
"""

import numpy as np

from .core import RgbdFrame
from .diffusion import SamplerConfig, inpaint_sample
from .geometry import BackprojectConfig, backproject_frame, fuse_meshes, voxel_pool
from .raster import RenderChunkConfig, rasterize, select_chunk

DEPTH_EPS = 1e-4


class NoObservationsError(ValueError):
    pass


class SynthesisConfig:
    """Per-run constants: sampler, back-projection, chunking, depth range."""

    def __init__(self, sampler=None, backproject=None, chunk=None,
                 depth_max=8.0, rng_seed=0):
        if depth_max <= 0:
            raise ValueError("depth_max must be positive")
        self.sampler = sampler or SamplerConfig()
        self.backproject = backproject or BackprojectConfig()
        self.chunk = chunk or RenderChunkConfig()
        self.depth_max = float(depth_max)
        self.rng_seed = int(rng_seed)


class Trajectory:
    """Ordered novel viewpoints sharing one set of intrinsics."""

    def __init__(self, poses, intrinsics):
        self.poses = list(poses)
        self.intrinsics = intrinsics

    def __len__(self):
        return len(self.poses)


def normalize_frame(frame, depth_max=8.0):
    """Map a metric frame into [-1, 1]^4; returns (x, mask).

    Invalid pixels become zeros in all four channels with mask 0.
    """
    if depth_max <= 0:
        raise ValueError("depth_max must be positive")
    mask = frame.valid.astype(np.float64)
    x = np.empty((frame.height, frame.width, 4))
    x[..., :3] = 2.0 * frame.rgb - 1.0
    x[..., 3] = 2.0 * np.clip(frame.depth, 0.0, depth_max) / depth_max - 1.0
    x *= mask[..., None]
    return x, mask


def denormalize_frame(x, depth_max=8.0):
    """Inverse of normalize_frame; clamps so every pixel comes back valid."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("non-finite normalized image")
    out = np.empty_like(x)
    out[..., :3] = np.clip((x[..., :3] + 1.0) / 2.0, 0.0, 1.0)
    out[..., 3] = np.clip((x[..., 3] + 1.0) / 2.0 * depth_max, DEPTH_EPS, depth_max)
    return RgbdFrame(out)


class SynthesisResult:
    """Final fused mesh plus the generated frames along the trajectory."""

    def __init__(self, mesh, generated):
        self.mesh = mesh
        self.generated = generated  # list of (RgbdFrame, CameraPose)


def synthesize(inputs, intr, traj, denoiser, sched, cfg=None):
    """Run the incremental render / inpaint / back-project / fuse loop.

    inputs is a list of (RgbdFrame, CameraPose). denoiser is a single
    denoiser or a list with one per trajectory view (used for oracle
    runs). Returns a SynthesisResult with the mesh after fusing every
    generated view. Deterministic given cfg.rng_seed.
    """
    if not inputs:
        raise NoObservationsError("need at least one input frame")
    if cfg is None:
        cfg = SynthesisConfig()
    for frame, _ in inputs:
        if frame.width != intr.width or frame.height != intr.height:
            raise ValueError("input frame does not match intrinsics")

    anchor = inputs[0][1]
    mesh = _pooled_fusion([f for f, _ in inputs], [p for _, p in inputs],
                          intr, cfg, anchor)
    known = list(inputs)
    generated = []

    for j, pose in enumerate(traj.poses):
        chunk = select_chunk(known, pose, cfg.chunk)
        chunk_mesh = _pooled_fusion([f for f, _ in chunk], [p for _, p in chunk],
                                    intr, cfg, anchor)
        partial = rasterize(chunk_mesh, intr, pose)
        x_hat, mask = normalize_frame(partial, cfg.depth_max)
        den_j = denoiser[j] if isinstance(denoiser, (list, tuple)) else denoiser
        x = inpaint_sample(den_j, x_hat, mask, sched, cfg.sampler,
                           rng_seed=cfg.rng_seed + j)
        frame = denormalize_frame(x, cfg.depth_max)
        generated.append((frame, pose))
        known.append((frame, pose))
        mesh = voxel_pool(
            fuse_meshes(mesh, backproject_frame(frame, intr, pose, cfg.backproject)),
            cfg.backproject.voxel_size,
            anchor,
        )

    return SynthesisResult(mesh, generated)


def _pooled_fusion(frames, poses, intr, cfg, anchor=None):
    # the pooling grid is anchored to a camera frame so the whole pipeline
    # commutes with rigid motions of inputs and trajectory
    if anchor is None:
        anchor = poses[0]
    mesh = None
    for frame, pose in zip(frames, poses):
        part = backproject_frame(frame, intr, pose, cfg.backproject)
        mesh = part if mesh is None else fuse_meshes(mesh, part)
    return voxel_pool(mesh, cfg.backproject.voxel_size, anchor)
