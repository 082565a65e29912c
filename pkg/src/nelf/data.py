"""Dataset ingestion, synthetic light-field generation, and image I/O.

Dataset layout on disk:

    <dir>/manifest.json
    <dir>/images/view_{row:02d}_{col:02d}.png

Manifest schema, version 1 (JSON):

    {
      "version": 1,
      "layout": "grid" | "list",
      "grid": {"rows": R, "cols": C, "spacing": s, "z": z0},   # grid layout
      "camera": {"focal_px": f, "width": W, "height": H},
      "color_space": "linear" | "srgb-as-is",
      "st_depth": z,              # st parameterization plane (scene content)
      "uv_depth": z',             # optional uv plane; default: camera depth
      "views": [ {"row": r, "col": c, "image": "images/...",
                  "position": [x,y,z]?, "rotation": [[..]x3]?}, ... ]
    }

For grid layouts, camera positions default to a rectified rig on the plane
z = grid.z: position = ((c - (C-1)/2) * s, (r - (R-1)/2) * s, z0), identity
rotation (looking along +z); per-view keys override. Pixel values are used
as stored, in [0, 1] ("linear" and "srgb-as-is" differ only as a tag).

Synthetic scenes are stacks of textured axis-aligned planes queried by an
exact analytic oracle, so ground truth is known for every ray, including
rays of held-out views.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (ConfigError, InconsistentResolution, InvalidManifest, InvalidPose,
                     InvalidStride, MissingFile)
from .geometry import CameraPose, Ray, unit

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
VIEW_PATTERN = "images/view_{:02d}_{:02d}.png"


# ---------------------------------------------------------------------------
# Image buffers: float arrays (H, W, 3) in [0, 1]


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Write 8-bit PNG or binary PPM (P6), by extension."""
    path = str(path)
    raw = to_uint8(img)
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    if path.lower().endswith(".ppm"):
        h, w = raw.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(raw.tobytes())
    else:
        Image.fromarray(raw, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Read PNG/PPM to a float (H, W, 3) array in [0, 1] (value / 255)."""
    path = str(path)
    if not os.path.exists(path):
        raise MissingFile(f"image file not found: {path}")
    if path.lower().endswith(".ppm"):
        raw = _read_ppm(path)
    else:
        with Image.open(path) as im:
            raw = np.asarray(im.convert("RGB"))
    return from_uint8(raw)


def _read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, at = [], 0
    while len(fields) < 4:
        while at < len(blob) and blob[at:at + 1].isspace():
            at += 1
        if blob[at:at + 1] == b"#":
            while at < len(blob) and blob[at:at + 1] != b"\n":
                at += 1
            continue
        start = at
        while at < len(blob) and not blob[at:at + 1].isspace():
            at += 1
        fields.append(blob[start:at])
    at += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise InvalidManifest(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise InvalidManifest(f"{path}: only maxval 255 PPM supported, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=at, count=w * h * 3)
    if data.size != w * h * 3:
        raise InvalidManifest(f"{path}: truncated PPM payload")
    return data.reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# Manifests


@dataclass(eq=False)
class ViewRecord:
    row: int
    col: int
    image: str  # path relative to the dataset directory
    pose: CameraPose


@dataclass(eq=False)
class DatasetManifest:
    version: int
    layout: str  # "grid" or "list"
    grid_rows: int | None
    grid_cols: int | None
    spacing: float | None
    focal_px: float
    width: int
    height: int
    color_space: str
    st_depth: float
    views: list[ViewRecord]
    base_dir: str
    uv_depth: float | None = None  # None: uv plane at the mean camera depth

    def image_path(self, view: ViewRecord) -> str:
        return os.path.join(self.base_dir, view.image)

    def load_images(self) -> list[np.ndarray]:
        images = []
        for view in self.views:
            img = load_image(self.image_path(view))
            if img.shape[0] != self.height or img.shape[1] != self.width:
                raise InconsistentResolution(
                    f"{view.image}: got {img.shape[1]}x{img.shape[0]}, manifest says "
                    f"{self.width}x{self.height}")
            images.append(img)
        return images


def _grid_position(row: int, col: int, rows: int, cols: int, spacing: float,
                   z: float) -> np.ndarray:
    return np.array([(col - (cols - 1) / 2.0) * spacing,
                     (row - (rows - 1) / 2.0) * spacing, z], dtype=np.float64)


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a dataset manifest; errors carry key diagnostics."""
    path = str(path)
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(path):
        raise MissingFile(f"manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidManifest(f"{path}: invalid JSON ({exc})") from exc
    base_dir = os.path.dirname(os.path.abspath(path))

    def need(container, key, where):
        if key not in container:
            raise InvalidManifest(f"{path}: missing key '{where}{key}'")
        return container[key]

    if need(doc, "version", "") != MANIFEST_VERSION:
        raise InvalidManifest(f"{path}: unsupported manifest version {doc['version']}")
    layout = doc.get("layout", "grid")
    if layout not in ("grid", "list"):
        raise InvalidManifest(f"{path}: layout must be 'grid' or 'list', got {layout!r}")
    cam = need(doc, "camera", "")
    focal_px = float(need(cam, "focal_px", "camera."))
    width = int(need(cam, "width", "camera."))
    height = int(need(cam, "height", "camera."))
    color_space = doc.get("color_space", "linear")
    if color_space not in ("linear", "srgb-as-is"):
        raise InvalidManifest(f"{path}: unknown color_space {color_space!r}")
    st_depth = float(need(doc, "st_depth", ""))
    uv_depth = doc.get("uv_depth")
    if uv_depth is not None:
        uv_depth = float(uv_depth)
        if uv_depth == st_depth:
            raise InvalidManifest(f"{path}: uv_depth coincides with st_depth ({st_depth})")

    rows = cols = None
    spacing = None
    grid_z = 0.0
    if layout == "grid":
        grid = need(doc, "grid", "")
        rows = int(need(grid, "rows", "grid."))
        cols = int(need(grid, "cols", "grid."))
        spacing = float(need(grid, "spacing", "grid."))
        grid_z = float(grid.get("z", 0.0))
        if rows < 1 or cols < 1:
            raise InvalidManifest(f"{path}: grid dims must be positive ({rows}x{cols})")

    views_doc = need(doc, "views", "")
    if not isinstance(views_doc, list) or not views_doc:
        raise InvalidManifest(f"{path}: 'views' must be a non-empty list")
    if layout == "grid" and len(views_doc) != rows * cols:
        raise InvalidManifest(f"{path}: grid {rows}x{cols} declares {rows * cols} views "
                              f"but manifest lists {len(views_doc)}")
    views = []
    for i, v in enumerate(views_doc):
        where = f"views[{i}]."
        row = int(need(v, "row", where))
        col = int(need(v, "col", where))
        image = need(v, "image", where)
        if "position" in v:
            position = np.asarray(v["position"], dtype=np.float64)
            if position.shape != (3,) or not np.all(np.isfinite(position)):
                raise InvalidPose(f"{path}: {where}position must be 3 finite numbers")
        elif layout == "grid":
            position = _grid_position(row, col, rows, cols, spacing, grid_z)
        else:
            raise InvalidPose(f"{path}: {where}position required for list layout")
        rotation = np.asarray(v.get("rotation", np.eye(3)), dtype=np.float64)
        if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
            raise InvalidPose(f"{path}: {where}rotation must be a finite 3x3 matrix")
        try:
            pose = CameraPose(position, rotation, focal_px, (width / 2.0, height / 2.0),
                              width, height)
        except ConfigError as exc:
            raise InvalidPose(f"{path}: {where}{exc}") from exc
        img_path = os.path.join(base_dir, image)
        if not os.path.exists(img_path):
            raise MissingFile(f"{path}: {where}image not found: {img_path}")
        views.append(ViewRecord(row=row, col=col, image=image, pose=pose))
    return DatasetManifest(version=MANIFEST_VERSION, layout=layout, grid_rows=rows,
                           grid_cols=cols, spacing=spacing, focal_px=focal_px, width=width,
                           height=height, color_space=color_space, st_depth=st_depth,
                           views=views, base_dir=base_dir, uv_depth=uv_depth)


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "layout": manifest.layout,
        "camera": {"focal_px": manifest.focal_px, "width": manifest.width,
                   "height": manifest.height},
        "color_space": manifest.color_space,
        "st_depth": manifest.st_depth,
        "views": [],
    }
    if manifest.uv_depth is not None:
        doc["uv_depth"] = manifest.uv_depth
    if manifest.layout == "grid":
        doc["grid"] = {"rows": manifest.grid_rows, "cols": manifest.grid_cols,
                       "spacing": manifest.spacing, "z": float(manifest.views[0].pose.position[2])}
    for v in manifest.views:
        doc["views"].append({
            "row": v.row, "col": v.col, "image": v.image,
            "position": [float(x) for x in v.pose.position],
            "rotation": [[float(x) for x in row] for row in v.pose.rotation],
        })
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def subsample_grid(manifest: DatasetManifest,
                   stride: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Every-`stride` grid views for training, all remaining views for test.

    The split is a partition: disjoint and exhaustive.
    """
    if manifest.layout != "grid":
        raise InvalidStride("subsample_grid requires a grid-layout manifest")
    rows, cols = manifest.grid_rows, manifest.grid_cols
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if (rows - 1) % stride or (cols - 1) % stride:
        raise InvalidStride(f"stride {stride} does not evenly sample a {rows}x{cols} grid "
                            f"(need (dim-1) % stride == 0)")
    keep_rows = set(range(0, rows, stride))
    keep_cols = set(range(0, cols, stride))
    train_views = [v for v in manifest.views if v.row in keep_rows and v.col in keep_cols]
    test_views = [v for v in manifest.views if not (v.row in keep_rows and v.col in keep_cols)]
    train = dataclasses.replace(manifest, grid_rows=(rows - 1) // stride + 1,
                                grid_cols=(cols - 1) // stride + 1,
                                spacing=(manifest.spacing or 0.0) * stride, views=train_views)
    test = dataclasses.replace(manifest, layout="list", grid_rows=None, grid_cols=None,
                               spacing=None, views=test_views)
    return train, test


# ---------------------------------------------------------------------------
# Synthetic scenes


def rgb8(r: int, g: int, b: int) -> np.ndarray:
    """Color at exact 8-bit grid points, so PNG storage is lossless."""
    return np.array([r, g, b], dtype=np.float64) / 255.0


@dataclass(frozen=True)
class CheckerTexture:
    cell_size: float
    color_a: np.ndarray  # covers cells where floor(x/c)+floor(y/c) is even
    color_b: np.ndarray
    edge_width: float = 0.0  # smoothstep band (scene units) across cell borders

    def _axis_wave(self, x: np.ndarray) -> np.ndarray:
        """0 in even cells, 1 in odd cells, smoothed over edge_width."""
        p = x / self.cell_size
        q = p - np.floor(p)
        inside = np.minimum(q, 1.0 - q) * self.cell_size  # distance to border
        signed = np.where(np.floor(p) % 2 == 0, -inside, inside)
        tau = np.clip(signed / self.edge_width + 0.5, 0.0, 1.0)
        return tau * tau * (3.0 - 2.0 * tau)

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.edge_width <= 0.0:
            parity = (np.floor(x / self.cell_size) + np.floor(y / self.cell_size)) % 2
            return np.where(parity[..., None] == 0, self.color_a, self.color_b)
        mx, my = self._axis_wave(x), self._axis_wave(y)
        mix = mx * (1.0 - my) + my * (1.0 - mx)
        return self.color_a + mix[..., None] * (self.color_b - self.color_a)


@dataclass(frozen=True)
class SineTexture:
    freq_x: float  # cycles per scene unit
    freq_y: float
    phase: float
    color_lo: np.ndarray
    color_hi: np.ndarray

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        v = 0.5 * (1.0 + np.sin(2.0 * np.pi * (self.freq_x * x + self.freq_y * y) + self.phase))
        return self.color_lo + v[..., None] * (self.color_hi - self.color_lo)


@dataclass(frozen=True)
class ScenePlane:
    z: float
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    texture: CheckerTexture | SineTexture


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    planes: tuple[ScenePlane, ...]  # any order; the oracle depth-sorts hits
    background: np.ndarray
    st_depth: float  # suggested st-plane placement for this scene
    uv_depth: float | None = None  # suggested uv-plane placement (None: camera plane)

    def __post_init__(self):
        for p in self.planes:
            if p.x_range[1] <= p.x_range[0] or p.y_range[1] <= p.y_range[0]:
                raise ConfigError(f"scene {self.name}: plane at z={p.z} has empty extent")


def rays_color_oracle(scene: SyntheticScene, origins: np.ndarray,
                      directions: np.ndarray) -> np.ndarray:
    """Exact color of each ray: nearest textured-plane hit, else background."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    colors = np.broadcast_to(scene.background, origins.shape).copy()
    best_t = np.full(origins.shape[0], np.inf)
    for plane in scene.planes:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane.z - origins[:, 2]) / dz
        x = origins[:, 0] + t * dirs[:, 0]
        y = origins[:, 1] + t * dirs[:, 1]
        hit = (np.abs(dz) > 1e-12) & (t > 1e-9) & (t < best_t) \
            & (x >= plane.x_range[0]) & (x <= plane.x_range[1]) \
            & (y >= plane.y_range[0]) & (y <= plane.y_range[1])
        if np.any(hit):
            colors[hit] = plane.texture.sample(x[hit], y[hit])
            best_t[hit] = t[hit]
    return colors


def ray_color_oracle(scene: SyntheticScene, ray: Ray) -> np.ndarray:
    """Single-ray form of rays_color_oracle."""
    return rays_color_oracle(scene, ray.origin[None], ray.direction[None])[0]


def builtin_scene(name: str) -> SyntheticScene:
    """Named scenes used by tests and the CLI."""
    if name == "two-plane-checker":
        front = ScenePlane(z=3.0, x_range=(-1.2, 1.2), y_range=(-1.2, 1.2),
                           texture=CheckerTexture(0.4, rgb8(255, 255, 255), rgb8(153, 26, 26)))
        back = ScenePlane(z=6.0, x_range=(-4.0, 4.0), y_range=(-4.0, 4.0),
                          texture=CheckerTexture(0.8, rgb8(26, 77, 153), rgb8(230, 204, 51)))
        return SyntheticScene(name=name, planes=(front, back),
                              background=rgb8(128, 128, 128), st_depth=4.0,
                              uv_depth=2.5)
    if name == "sine-card":
        card = ScenePlane(z=4.0, x_range=(-2.0, 2.0), y_range=(-2.0, 2.0),
                          texture=SineTexture(1.25, 0.75, 0.0, rgb8(0, 0, 0),
                                              rgb8(255, 255, 255)))
        return SyntheticScene(name=name, planes=(card,), background=rgb8(26, 26, 26),
                              st_depth=4.0)
    raise ConfigError(f"unknown built-in scene {name!r} "
                      f"(available: two-plane-checker, sine-card)")


def _texture_from_spec(doc: dict, where: str):
    kind = doc.get("kind")
    if kind == "checker":
        return CheckerTexture(float(doc["cell_size"]), np.asarray(doc["color_a"], dtype=np.float64),
                              np.asarray(doc["color_b"], dtype=np.float64),
                              float(doc.get("edge_width", 0.0)))
    if kind == "sine":
        return SineTexture(float(doc["freq_x"]), float(doc["freq_y"]),
                           float(doc.get("phase", 0.0)),
                           np.asarray(doc["color_lo"], dtype=np.float64),
                           np.asarray(doc["color_hi"], dtype=np.float64))
    raise ConfigError(f"{where}: texture kind must be 'checker' or 'sine', got {kind!r}")


def load_scene_spec(path) -> SyntheticScene:
    """Scene description file: JSON with planes + textures (see README)."""
    with open(str(path), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    planes = []
    for i, p in enumerate(doc.get("planes", [])):
        planes.append(ScenePlane(z=float(p["z"]), x_range=tuple(p["x_range"]),
                                 y_range=tuple(p["y_range"]),
                                 texture=_texture_from_spec(p["texture"], f"planes[{i}]")))
    if not planes:
        raise ConfigError(f"{path}: scene has no planes")
    uv_depth = doc.get("uv_depth")
    return SyntheticScene(name=doc.get("name", os.path.basename(str(path))),
                          planes=tuple(planes),
                          background=np.asarray(doc.get("background", [0.5, 0.5, 0.5]),
                                                dtype=np.float64),
                          st_depth=float(doc.get("st_depth", planes[0].z)),
                          uv_depth=None if uv_depth is None else float(uv_depth))


def generate_synthetic_dataset(scene: SyntheticScene, rows: int, cols: int, width: int,
                               height: int, spacing: float, focal_px: float,
                               out_dir, grid_z: float = 0.0) -> DatasetManifest:
    """Render every grid view with the analytic oracle and write the dataset."""
    from .geometry import pixel_grid, ray_directions

    out_dir = str(out_dir)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    views = []
    for row in range(rows):
        for col in range(cols):
            position = _grid_position(row, col, rows, cols, spacing, grid_z)
            pose = CameraPose(position, np.eye(3), focal_px, (width / 2.0, height / 2.0),
                              width, height)
            px, py = pixel_grid(pose)
            dirs = ray_directions(pose, px, py).reshape(-1, 3)
            origins = np.broadcast_to(pose.position, dirs.shape)
            img = rays_color_oracle(scene, origins, dirs).reshape(height, width, 3)
            rel = VIEW_PATTERN.format(row, col)
            save_image(img, os.path.join(out_dir, rel))
            views.append(ViewRecord(row=row, col=col, image=rel, pose=pose))
    manifest = DatasetManifest(version=MANIFEST_VERSION, layout="grid", grid_rows=rows,
                               grid_cols=cols, spacing=spacing, focal_px=focal_px, width=width,
                               height=height, color_space="linear", st_depth=scene.st_depth,
                               views=views, base_dir=out_dir, uv_depth=scene.uv_depth)
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest
