"""egosim: desk-scale egocentric world-simulator pipeline.

Exact camera/rotation geometry, part-disentangled motion conditioning, joint
video + point-map latent diffusion, a synthetic ego-exo dataset pipeline with
reprojection filtering, and coarse-to-fine (LoRA then last-N-block) training.
"""

from . import codec, config, datapipe, diffusion, geom, kernels, motion, trainer
from .config import RunConfig
from .diffusion import WorldModel, make_schedule, sample
from .motion import MotionSequence, synth_motion

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "WorldModel",
    "MotionSequence",
    "codec",
    "config",
    "datapipe",
    "diffusion",
    "geom",
    "kernels",
    "make_schedule",
    "motion",
    "sample",
    "synth_motion",
    "trainer",
    "__version__",
]
