"""Novel-view rendering and synthetic-aperture refocusing.

Rendering is direct evaluation: each pixel costs exactly one network query
(no marching, no accumulation), which is what makes inference time linear in
pixel count. RenderStats records the evaluation count so that property is
checkable structurally.

Any object with `predict_colors((N,4) normalized coords) -> (N,3)`, `box`,
and `planes` attributes can be rendered; tests exploit this by rendering the
analytic scene oracle through the same code path as trained networks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFocus, ConfigError
from .geometry import CameraPose, pixel_grid, ray_directions, rays_to_coords, unit
from .rng import DeterministicRng

REFOCUS_STREAM = 31

# Coordinates this far outside [-1,1] count as out-of-field.
_FIELD_TOL = 1e-9

DEFAULT_BATCH = 65536


@dataclass(frozen=True)
class RenderRequest:
    pose: CameraPose
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"render size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class RefocusRequest:
    pose: CameraPose
    focus_depth: float  # z of the virtual focal plane
    aperture_radius: float  # scene units, in the camera plane
    rays_per_pixel: int
    seed: int = 0

    def __post_init__(self):
        if self.rays_per_pixel < 1:
            raise ConfigError(f"rays_per_pixel must be >= 1, got {self.rays_per_pixel}")
        if self.aperture_radius < 0:
            raise ConfigError(f"aperture_radius must be >= 0, got {self.aperture_radius}")


@dataclass(eq=False)
class RenderStats:
    pixels: int
    evals: int
    wall_time: float
    out_of_field: int


def render_batched(model, coords: np.ndarray, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """Evaluate the model on (N, 4) coordinates in bounded-memory chunks."""
    coords = np.asarray(coords)
    if coords.shape[0] == 0:
        return np.zeros((0, 3))
    parts = [np.asarray(model.predict_colors(coords[at:at + batch_size]), dtype=np.float64)
             for at in range(0, coords.shape[0], batch_size)]
    return np.concatenate(parts)


def _pixel_coords(model, pose: CameraPose, px: np.ndarray, py: np.ndarray,
                  clamp: bool = False) -> tuple[np.ndarray, int]:
    """Normalized ray coordinates for pixel positions + out-of-field count."""
    dirs = ray_directions(pose, px, py).reshape(-1, 3)
    origins = np.broadcast_to(pose.position, dirs.shape)
    coords, ok = rays_to_coords(origins, dirs, model.planes, model.box, strict=False)
    outside = ~ok | np.any(np.abs(coords) > 1.0 + _FIELD_TOL, axis=-1)
    if clamp:
        coords = np.clip(coords, -1.0, 1.0)
    return coords, int(outside.sum())


def render(model, req: RenderRequest, clamp_coords: bool = False,
           batch_size: int = DEFAULT_BATCH) -> tuple[np.ndarray, RenderStats]:
    """One network evaluation per pixel; returns ((H, W, 3) image, stats).

    Out-of-field pixels (rays missing the normalization box) are rendered
    anyway - the embedding is defined everywhere - but counted in stats;
    clamp_coords instead snaps their coordinates to the box surface.
    """
    pose = req.pose
    if req.width != pose.width or req.height != pose.height:
        # Same field of view at the requested resolution.
        scale = req.width / pose.width
        pose = CameraPose(pose.position, pose.rotation, pose.focal_px * scale,
                          (req.width / 2.0, req.height / 2.0), req.width, req.height)
    start = time.perf_counter()
    px, py = pixel_grid(pose)
    coords, outside = _pixel_coords(model, pose, px, py, clamp=clamp_coords)
    colors = render_batched(model, coords, batch_size)
    img = colors.reshape(req.height, req.width, 3)
    wall = time.perf_counter() - start
    stats = RenderStats(pixels=req.width * req.height, evals=coords.shape[0],
                        wall_time=wall, out_of_field=outside)
    return img, stats


def concentric_disk_samples(n: int, seed: int) -> np.ndarray:
    """n stratified points on the unit disk (concentric square-to-disk map)."""
    grid = int(np.ceil(np.sqrt(n)))
    rng = DeterministicRng(seed, stream=REFOCUS_STREAM)
    jitter = rng.uniform(2 * grid * grid).reshape(2, grid, grid)
    cell = (np.arange(grid) + 0.0)[None, :]
    sx = ((cell + jitter[0]) / grid).reshape(-1)
    sy = ((np.arange(grid)[:, None] + jitter[1]) / grid).reshape(-1)
    # Map [0,1]^2 to the disk preserving stratification. The radius keeps the
    # sign of the dominant coordinate so all four quadrants are covered.
    a = 2.0 * sx - 1.0
    b = 2.0 * sy - 1.0
    r = np.where(np.abs(a) > np.abs(b), a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(np.abs(a) > np.abs(b),
                       (np.pi / 4.0) * (b / a),
                       (np.pi / 2.0) - (np.pi / 4.0) * (a / b))
    phi = np.where(r == 0, 0.0, phi)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    return pts[:n]


def refocus(model, req: RefocusRequest,
            batch_size: int = DEFAULT_BATCH) -> tuple[np.ndarray, RenderStats]:
    """Synthetic-aperture image focused on the plane z = focus_depth.

    Each pixel's central ray is intersected with the focal plane; colors are
    averaged over rays from stratified disk points in the camera plane, all
    aimed at that intersection. A zero aperture collapses to a single pinhole
    evaluation per pixel and reproduces render() exactly.
    """
    pose = req.pose
    if abs(req.focus_depth - pose.position[2]) < 1e-9:
        raise DegenerateFocus(f"focus depth {req.focus_depth} coincides with the camera plane")
    if req.aperture_radius == 0.0:
        img, stats = render(model, RenderRequest(pose, pose.width, pose.height),
                            batch_size=batch_size)
        return img, stats

    start = time.perf_counter()
    px, py = pixel_grid(pose)
    dirs = ray_directions(pose, px, py).reshape(-1, 3)
    t = (req.focus_depth - pose.position[2]) / dirs[:, 2]
    focus_points = pose.position + t[:, None] * dirs  # (N, 3)

    disk = concentric_disk_samples(req.rays_per_pixel, req.seed) * req.aperture_radius
    # Disk offsets live in the camera's x/y plane.
    offsets = disk @ pose.rotation[:, :2].T  # (K, 3)

    n = dirs.shape[0]
    acc = np.zeros((n, 3))
    outside = 0
    for k in range(req.rays_per_pixel):
        origin = pose.position + offsets[k]
        sample_dirs = unit(focus_points - origin)
        coords, ok = rays_to_coords(np.broadcast_to(origin, sample_dirs.shape), sample_dirs,
                                    model.planes, model.box, strict=False)
        outside += int((~ok | np.any(np.abs(coords) > 1.0 + _FIELD_TOL, axis=-1)).sum())
        acc += render_batched(model, coords, batch_size)
    img = (acc / req.rays_per_pixel).reshape(pose.height, pose.width, 3)
    wall = time.perf_counter() - start
    stats = RenderStats(pixels=n, evals=n * req.rays_per_pixel, wall_time=wall,
                        out_of_field=outside)
    return img, stats


def interpolate_poses(a: CameraPose, b: CameraPose, frames: int) -> list[CameraPose]:
    """Linear position + slerp orientation path from a to b, inclusive."""
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    if frames == 1:
        return [b]
    from scipy.spatial.transform import Rotation, Slerp
    key = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
    slerp = Slerp([0.0, 1.0], key)
    out = []
    for f in range(frames):
        s = f / (frames - 1)
        position = (1.0 - s) * a.position + s * b.position
        rot = slerp([s]).as_matrix()[0]
        out.append(CameraPose(position, rot, a.focal_px, a.principal_point,
                              a.width, a.height))
    return out
