"""Neural 4D light fields: a ray is four numbers, a view is one MLP pass.

Train a small network mapping two-plane ray coordinates (u, v, s, t) to RGB
from a grid of posed images, regularized by spectral similarity to the
training views and by color consistency inside narrow ray bundles; then
render novel views, refocus synthetically, and score the results.
"""

from .embedding import EmbeddingMatrix, embed, embed_batch, embed_jacobian, make_embedding
from .errors import NelfError
from .geometry import (CameraPose, NormalizationBox, PlanePair, Ray, RayCoord4D, angle_between,
                       fourd_to_ray, pixel_ray, ray_to_4d)
from .losses import (BundleConfig, LossWeights, SpectrumRef, fft2d, fourier_sparsity_loss,
                     magnitude_spectrum, photometric_loss, ray_bundle_loss, sample_bundle,
                     total_loss)
from .metrics import EvalReport, evaluate, psnr, ssim
from .model import CheckpointBundle, LightFieldNetwork, load_checkpoint, save_checkpoint
from .network import (AdamState, MlpConfig, MlpParams, adam_step, backward, forward,
                      init_params, lr_schedule, param_count)
from .renderer import RefocusRequest, RenderRequest, RenderStats, refocus, render, \
    render_batched
from .trainer import (Seeds, TrainConfig, TrainingSet, build_training_set, desk_preset,
                      paper_preset, sample_virtual_camera, train, train_step)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
