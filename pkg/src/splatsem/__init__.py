"""Feed-forward Gaussian splatting with semantic features, in numpy.

Submodules
----------
geometry   cameras, projection, bilinear sampling
scene      Gaussian primitives and spherical harmonics
render     EWA projection and front-to-back compositing
warp       cross-view feature warping loss
voxel      semantic-aware voxel compaction
fusion     cross-attention fusion of geometry and semantic tokens
losses     training objective terms and evaluation metrics
synth      seeded synthetic scenes and fixtures
io         DMAP, FGSC, camera JSON and PPM formats
"""

from .errors import SplatSemError
from .geometry import CameraView, backproject, project_points
from .scene import GaussianPrimitive, GaussianScene
from .render import RenderOutput, project_gaussian_2d
from .warp import ViewBundle, warp_distance, warp_loss_total
from .voxel import VoxelTable, voxelize
from .fusion import FusionParams, fuse, fuse_backward
from .losses import LossWeights, miou, psnr, ssim, total_loss
from .synth import SynthConfig, generate, make_rng

__version__ = "0.1.0"

__all__ = [
    "SplatSemError", "CameraView", "backproject", "project_points", "GaussianPrimitive", "GaussianScene",
    "RenderOutput", "project_gaussian_2d", "ViewBundle", "warp_distance", "warp_loss_total",
    "VoxelTable", "voxelize", "FusionParams", "fuse", "fuse_backward", "LossWeights", "miou", "psnr", "ssim",
    "total_loss", "SynthConfig", "generate", "make_rng",
]
