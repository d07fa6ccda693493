"""Incremental RGBD view inpainting: render, diffuse, back-project, fuse."""

from .core import (CameraIntrinsics, CameraPose, RgbdFrame, TriangleMesh,
                   project_point, unproject_pixel)
from .geometry import (BackprojectConfig, backproject_frame, fuse_meshes,
                       transform_mesh, voxel_pool)
from .raster import RenderChunkConfig, rasterize, select_chunk
from .diffusion import (NoiseSchedule, SamplerConfig, cfg_combine, ddim_step,
                        ddpm_step, forward_sample, inpaint_merge,
                        inpaint_sample, make_linear_schedule)
from .denoiser import (GaussianDenoiser, PointMassDenoiser, TinyNetDenoiser,
                       TinyNetParams, TrainConfig, analytic_gaussian,
                       analytic_point_mass, grad_check, load_params,
                       save_params, train)
from .pipeline import (SynthesisConfig, SynthesisResult, Trajectory,
                       denormalize_frame, normalize_frame, synthesize)
from .metrics import (chamfer, completeness, depth_mse, psnr, sample_points,
                      ssim)

__version__ = "0.1.0"
