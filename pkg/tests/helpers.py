"""Shared test utilities: independent oracles and tiny fixtures.

The naive DFT here is intentionally O(R^4): it is the reference the fast
transform is checked against, so it must not share any code with it.
"""

import numpy as np

from nelf.data import builtin_scene, generate_synthetic_dataset, rays_color_oracle
from nelf.geometry import NormalizationBox, PlanePair, coords_to_rays


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Textbook unnormalized 2D DFT, e^{-2 pi i} convention, O(R^4)."""
    x = np.asarray(x, dtype=np.complex128)
    r, c = x.shape
    j = np.arange(r)
    k = np.arange(c)
    wr = np.exp(-2j * np.pi * np.outer(j, j) / r)
    wc = np.exp(-2j * np.pi * np.outer(k, k) / c)
    return wr @ x @ wc


class OracleModel:
    """Analytic scene presented through the trained-model interface.

    predict_colors receives normalized 4D coordinates, so rendering code can
    be exercised with exact ground-truth colors and no trained weights.
    """

    def __init__(self, scene, planes: PlanePair, box: NormalizationBox):
        self.scene = scene
        self.planes = planes
        self.box = box

    def predict_colors(self, coords: np.ndarray) -> np.ndarray:
        origins, dirs = coords_to_rays(np.asarray(coords, dtype=np.float64),
                                       self.planes, self.box)
        return rays_color_oracle(self.scene, origins, dirs)


def make_checker_dataset(out_dir, rows=3, cols=3, size=16, spacing=0.3, focal=16.0):
    scene = builtin_scene("two-plane-checker")
    manifest = generate_synthetic_dataset(scene, rows, cols, size, size, spacing,
                                          focal, str(out_dir))
    return scene, manifest


def oracle_model(scene_name="two-plane-checker", z_uv=0.0,
                 box_lo=(-0.5, -0.5, -2.0, -2.0), box_hi=(0.5, 0.5, 2.0, 2.0)):
    scene = builtin_scene(scene_name)
    planes = PlanePair(z_uv=z_uv, z_st=scene.st_depth)
    box = NormalizationBox(np.array(box_lo, dtype=np.float64),
                           np.array(box_hi, dtype=np.float64))
    return OracleModel(scene, planes, box)
