"""Pinhole cameras, rays, and the two-plane 4D ray parameterization.

Conventions used throughout the package:

- World frame is right-handed. The canonical (identity-rotation) camera looks
  along +z; camera x points right, camera y points down the image rows.
- Pixel centers sit at (i + 0.5, j + 0.5).
- Both parameterization planes are perpendicular to the world z axis. A ray
  is identified by the (x, y) coordinates of its intersections with the two
  planes, normalized to [-1, 1] per axis by a NormalizationBox fitted to the
  training data.

Scalar operations (pixel_ray, ray_to_4d, ...) work on single rays; the
trainer and renderer use the vectorized *_batch functions, which are the
same math over (..., 3) / (..., 4) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParallelRay

Vec3 = np.ndarray  # shape (3,), float

PARALLEL_EPS = 1e-9


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=np.float64)


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(eq=False)
class CameraPose:
    """Pinhole camera: position + camera-to-world rotation + intrinsics."""

    position: Vec3
    rotation: np.ndarray  # 3x3 camera-to-world, columns are camera axes
    focal_px: float
    principal_point: tuple[float, float]
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if self.focal_px <= 0:
            raise ConfigError(f"focal_px must be > 0, got {self.focal_px}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"image dims must be positive, got {self.width}x{self.height}")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ConfigError(f"rotation not orthonormal (max |R^T R - I| = {err:.3g})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-9:
            raise ConfigError(f"rotation must have det +1, got {det!r}")

    @classmethod
    def identity(cls, position=(0.0, 0.0, 0.0), focal_px=100.0, width=100, height=100,
                 principal_point=None):
        """Axis-aligned camera looking along +z."""
        if principal_point is None:
            principal_point = (width / 2.0, height / 2.0)
        return cls(vec3(*position), np.eye(3), focal_px, principal_point, width, height)

    @classmethod
    def looking_along(cls, position: Vec3, direction: Vec3, focal_px: float,
                      width: int, height: int, principal_point=None):
        """Camera at `position` with optical axis `direction` and image y kept
        as close to world y as possible."""
        if principal_point is None:
            principal_point = (width / 2.0, height / 2.0)
        return cls(np.asarray(position, dtype=np.float64),
                   rotation_from_forward(direction),
                   focal_px, principal_point, width, height)


def rotation_from_forward(direction: np.ndarray) -> np.ndarray:
    """Right-handed camera-to-world rotation whose z column is `direction`."""
    z = unit(np.asarray(direction, dtype=np.float64))
    y_hint = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(y_hint, z)) > 1.0 - 1e-9:
        y_hint = np.array([0.0, 0.0, 1.0])
    x = unit(np.cross(y_hint, z))
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


@dataclass(eq=False)
class Ray:
    """Origin + unit direction."""

    origin: Vec3
    direction: Vec3

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-12:
            raise ConfigError(f"ray direction must be unit length, |d| = {n!r}")

    @classmethod
    def through(cls, origin, target) -> "Ray":
        """Ray from origin toward target (direction normalized here)."""
        origin = np.asarray(origin, dtype=np.float64)
        d = np.asarray(target, dtype=np.float64) - origin
        return cls(origin, unit(d))


@dataclass(frozen=True)
class PlanePair:
    """The two parameterization planes z = z_uv and z = z_st."""

    z_uv: float
    z_st: float

    def __post_init__(self):
        if self.z_uv == self.z_st:
            raise ConfigError(f"plane pair is degenerate: z_uv == z_st == {self.z_uv}")


@dataclass(frozen=True)
class RayCoord4D:
    """Normalized two-plane coordinate of one ray."""

    u: float
    v: float
    s: float
    t: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.s, self.t], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "RayCoord4D":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


_DEGENERATE_HALF = 1e-12


@dataclass(eq=False)
class NormalizationBox:
    """Affine map taking the training-ray intersection bounding box to [-1,1]^4.

    Axes with zero extent (e.g. u,v for a single training camera) map to 0
    and denormalize back to the box center.
    """

    lo: np.ndarray  # (4,) mins of (u, v, s, t) plane intersections
    hi: np.ndarray  # (4,) maxs

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(4)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(4)
        if np.any(self.hi < self.lo):
            raise ConfigError("normalization box has hi < lo")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @classmethod
    def identity(cls) -> "NormalizationBox":
        return cls(np.full(4, -1.0), np.full(4, 1.0))

    @classmethod
    def from_intersections(cls, uv_points: np.ndarray, st_points: np.ndarray) -> "NormalizationBox":
        uv = np.asarray(uv_points, dtype=np.float64).reshape(-1, 2)
        st = np.asarray(st_points, dtype=np.float64).reshape(-1, 2)
        lo = np.concatenate([uv.min(axis=0), st.min(axis=0)])
        hi = np.concatenate([uv.max(axis=0), st.max(axis=0)])
        return cls(lo, hi)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        half = self.half
        safe = np.where(half < _DEGENERATE_HALF, 1.0, half)
        out = (raw - self.center) / safe
        return np.where(half < _DEGENERATE_HALF, 0.0, out)

    def denormalize(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        return self.center + coords * self.half


def pixel_grid(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """(px, py) arrays of shape (H, W) at pixel centers."""
    px = np.arange(pose.width, dtype=np.float64) + 0.5
    py = np.arange(pose.height, dtype=np.float64) + 0.5
    return np.meshgrid(px, py, indexing="xy")


def ray_directions(pose: CameraPose, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """World-space unit directions through continuous pixel positions."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    cx, cy = pose.principal_point
    d = np.stack([(px - cx) / pose.focal_px,
                  (py - cy) / pose.focal_px,
                  np.ones_like(px)], axis=-1)
    d = d @ pose.rotation.T
    return unit(d)


def pixel_ray(pose: CameraPose, px: float, py: float) -> Ray:
    """The world ray through pixel (px, py); centers at integer + 0.5."""
    d = ray_directions(pose, np.float64(px), np.float64(py))
    return Ray(pose.position.copy(), d)


def intersect_plane_z(origins: np.ndarray, directions: np.ndarray, z: float) -> np.ndarray:
    """(x, y) where each ray meets the plane at height z. Assumes dz != 0."""
    t = (z - origins[..., 2]) / directions[..., 2]
    return origins[..., :2] + t[..., None] * directions[..., :2]


def rays_to_coords(origins: np.ndarray, directions: np.ndarray, planes: PlanePair,
                   box: NormalizationBox, strict: bool = True):
    """Two-plane coordinates of a batch of rays.

    Returns (coords, ok) where coords has trailing dim 4 and ok flags rays
    not parallel to the planes. With strict=True a parallel ray raises
    ParallelRay instead.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    ok = np.abs(directions[..., 2]) >= PARALLEL_EPS
    if strict and not np.all(ok):
        raise ParallelRay("ray direction has |dz| < 1e-9; cannot intersect the slabs")
    safe_dirs = np.where(ok[..., None], directions, np.array([0.0, 0.0, 1.0]))
    uv = intersect_plane_z(origins, safe_dirs, planes.z_uv)
    st = intersect_plane_z(origins, safe_dirs, planes.z_st)
    coords = box.normalize(np.concatenate([uv, st], axis=-1))
    return coords, ok


def coords_to_rays(coords: np.ndarray, planes: PlanePair,
                   box: NormalizationBox) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of rays_to_coords: origins on the uv-plane, unit directions."""
    raw = box.denormalize(np.asarray(coords, dtype=np.float64))
    p_uv = np.concatenate([raw[..., 0:2], np.full_like(raw[..., :1], planes.z_uv)], axis=-1)
    p_st = np.concatenate([raw[..., 2:4], np.full_like(raw[..., :1], planes.z_st)], axis=-1)
    return p_uv, unit(p_st - p_uv)


def ray_to_4d(ray: Ray, planes: PlanePair, box: NormalizationBox) -> RayCoord4D:
    """Two-plane coordinate of one ray (raises ParallelRay if degenerate)."""
    coords, _ = rays_to_coords(ray.origin, ray.direction, planes, box, strict=True)
    return RayCoord4D.from_array(coords)


def fourd_to_ray(coord: RayCoord4D, planes: PlanePair, box: NormalizationBox) -> Ray:
    """Ray through the two denormalized plane points of `coord`."""
    origins, dirs = coords_to_rays(coord.as_array(), planes, box)
    return Ray(origins, dirs)


def angle_between(r1: Ray, r2: Ray) -> float:
    """Angle between two rays' directions, in degrees, in [0, 180]."""
    c = float(np.clip(np.dot(r1.direction, r2.direction), -1.0, 1.0))
    return float(np.degrees(np.arccos(c)))
