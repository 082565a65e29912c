"""Training loop: ray batching, virtual cameras, loss assembly, checkpoints.

One training step combines three gradient paths through the same network:
a photometric batch drawn from an epoch permutation of all training rays, a
virtual R x R view whose magnitude spectrum is pulled toward the training
images, and bundles of perturbed rays whose colors are pulled toward their
center ray. All randomness flows from four named seeds through counter-based
streams, so sequential runs are bitwise reproducible and a checkpoint carries
everything needed to resume mid-run without divergence.
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetManifest, load_manifest
from .embedding import embed_batch, make_embedding
from .errors import CheckpointError, ConfigError, DatasetFormatError, NonFiniteLoss, ParallelRay
from .geometry import (CameraPose, NormalizationBox, PlanePair, intersect_plane_z, pixel_grid,
                       ray_directions, rays_to_coords, coords_to_rays, rotation_from_forward)
from .losses import (BundleConfig, LossWeights, SpectrumRef, fourier_sparsity_loss,
                     photometric_loss, ray_bundle_loss_batch, sample_bundles_batch, total_loss)
from .model import CheckpointBundle, LightFieldNetwork, checkpoint_path, load_checkpoint, \
    save_checkpoint
from .network import MlpConfig, MlpParams, backward, forward, init_adam_state, init_params, \
    lr_schedule, adam_step
from .rng import DeterministicRng

VIRTUAL_STREAM = 21
BUNDLE_STREAM = 22

LOG_HEADER = "iteration,lp,ls,lr,total,lr"


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    shuffle: int = 1
    virtual: int = 2
    bundles: int = 3


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32768
    iterations: int = 200000
    weights: LossWeights = field(default_factory=LossWeights)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    loss_resolution: int = 64
    bundle_rays: int = 1024
    base_lr: float = 1e-3
    lr_half_life: int = 20000
    sigma: float = 16.0
    num_frequencies: int = 256
    hidden_layers: int = 6
    hidden_width: int = 256
    seeds: Seeds = field(default_factory=Seeds)
    checkpoint_interval: int = 10000
    log_interval: int = 100
    preset: str = "paper"

    def __post_init__(self):
        for name in ("batch_size", "loss_resolution", "bundle_rays", "base_lr",
                     "lr_half_life", "sigma", "num_frequencies", "hidden_layers",
                     "hidden_width", "checkpoint_interval", "log_interval"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        r = self.loss_resolution
        if r & (r - 1):
            raise ConfigError(f"loss_resolution must be a power of two, got {r}")


def paper_preset(**overrides) -> TrainConfig:
    return dataclasses.replace(TrainConfig(), preset="paper", **overrides)


def desk_preset(**overrides) -> TrainConfig:
    """Small-scale configuration sized for CI on a few CPU cores.

    The loss weights and embedding bandwidth are re-tuned for 32x32 views
    and R=32 spectra; the full-scale preset's weights assume much larger
    images and would let the spectral term dominate the photometric one
    20:1 here.
    """
    base = TrainConfig(
        batch_size=4096,
        iterations=20000,
        loss_resolution=32,
        bundle_rays=256,
        base_lr=3e-3,
        lr_half_life=5000,
        sigma=2.0,
        num_frequencies=64,
        hidden_layers=4,
        hidden_width=128,
        weights=LossWeights(lambda_s=0.012, lambda_r=0.3),
        checkpoint_interval=5000,
        preset="desk",
    )
    return dataclasses.replace(base, **overrides)


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    doc["weights"] = LossWeights(**doc.get("weights", {}))
    doc["bundle"] = BundleConfig(**doc.get("bundle", {}))
    doc["seeds"] = Seeds(**doc.get("seeds", {}))
    return TrainConfig(**doc)


# ---------------------------------------------------------------------------
# Training set


@dataclass(eq=False)
class TrainingSet:
    manifest: DatasetManifest
    images: list
    poses: list
    coords: np.ndarray  # (N, 4) float32 normalized ray coordinates
    colors: np.ndarray  # (N, 3) float32
    refs: SpectrumRef
    box: NormalizationBox
    planes: PlanePair
    hull_equations: np.ndarray | None  # (F, 3) rows [nx, ny, b], unit normals

    @property
    def sample_count(self) -> int:
        return self.coords.shape[0]

    def camera_positions(self) -> np.ndarray:
        return np.stack([p.position for p in self.poses])


def _camera_hull(positions_xy: np.ndarray) -> np.ndarray | None:
    if positions_xy.shape[0] < 3:
        return None
    from scipy.spatial import ConvexHull, QhullError
    try:
        return ConvexHull(positions_xy).equations
    except QhullError:
        return None  # collinear or coincident rig; treated as zero-area hull


def hull_boundary_distance(equations: np.ndarray | None, point_xy: np.ndarray) -> float:
    """Distance from an interior point to the hull boundary (0 if degenerate)."""
    if equations is None:
        return 0.0
    signed = equations[:, :2] @ point_xy + equations[:, 2]
    return float(max(0.0, -signed.max()))


def build_training_set(source, config: TrainConfig) -> TrainingSet:
    """Turn every pixel of every training view into one (coord, color) sample."""
    manifest = source if isinstance(source, DatasetManifest) else load_manifest(source)
    images = manifest.load_images()
    poses = [v.pose for v in manifest.views]

    cam_z = float(np.mean([p.position[2] for p in poses]))
    z_uv = cam_z if manifest.uv_depth is None else manifest.uv_depth
    if manifest.st_depth == z_uv:
        raise DatasetFormatError(f"st_depth {manifest.st_depth} coincides with the uv plane")
    planes = PlanePair(z_uv=z_uv, z_st=manifest.st_depth)

    raw_parts, color_parts = [], []
    for view, pose, img in zip(manifest.views, poses, images):
        px, py = pixel_grid(pose)
        dirs = ray_directions(pose, px, py).reshape(-1, 3)
        if np.any(np.abs(dirs[:, 2]) < 1e-9):
            raise ParallelRay(f"view ({view.row},{view.col}) has rays parallel to the slabs")
        origins = np.broadcast_to(pose.position, dirs.shape)
        uv = intersect_plane_z(origins, dirs, planes.z_uv)
        st = intersect_plane_z(origins, dirs, planes.z_st)
        raw_parts.append(np.concatenate([uv, st], axis=1))
        color_parts.append(img.reshape(-1, 3))
    raw = np.concatenate(raw_parts)
    box = NormalizationBox(raw.min(axis=0), raw.max(axis=0))

    coords = box.normalize(raw).astype(np.float32)
    colors = np.concatenate(color_parts).astype(np.float32)
    refs = SpectrumRef.from_images(images, config.loss_resolution)
    hull = _camera_hull(np.stack([p.position[:2] for p in poses]))
    return TrainingSet(manifest=manifest, images=images, poses=poses, coords=coords,
                       colors=colors, refs=refs, box=box, planes=planes, hull_equations=hull)


# ---------------------------------------------------------------------------
# Virtual cameras


@dataclass(eq=False)
class VirtualCamera:
    pose: CameraPose
    hull_distance: float
    max_polar_deg: float
    polar_deg: float
    azimuth_deg: float


def sample_virtual_camera(ts: TrainingSet, rng: DeterministicRng,
                          view_size: int | None = None) -> VirtualCamera:
    """Camera inside the training rig's convex hull, looking near +z.

    Position is a uniform-Dirichlet convex combination of training camera
    positions; the viewing direction tilts away from +z by a polar angle
    uniform in [0, arctan(d/h)] where d is the distance to the hull boundary
    and h the distance to the st-plane.
    """
    positions = ts.camera_positions()
    m = positions.shape[0]
    # Dirichlet(1,...,1) via normalized exponentials.
    expo = -np.log1p(-rng.uniform(m))
    w = expo / expo.sum()
    position = w @ positions

    d = hull_boundary_distance(ts.hull_equations, position[:2])
    h = abs(ts.planes.z_st - position[2])
    max_polar = np.arctan2(d, h)
    polar = float(rng.uniform(1)[0] * max_polar)
    azimuth = float(rng.uniform(1)[0] * 2.0 * np.pi)
    direction = np.array([np.sin(polar) * np.cos(azimuth),
                          np.sin(polar) * np.sin(azimuth),
                          np.cos(polar)])
    size = view_size if view_size is not None else ts.refs.R
    focal = ts.manifest.focal_px * size / ts.manifest.width
    pose = CameraPose(position, rotation_from_forward(direction), focal,
                      (size / 2.0, size / 2.0), size, size)
    return VirtualCamera(pose=pose, hull_distance=d, max_polar_deg=float(np.degrees(max_polar)),
                         polar_deg=float(np.degrees(polar)),
                         azimuth_deg=float(np.degrees(azimuth)))


# ---------------------------------------------------------------------------
# Epoch-permutation batch sampling


class EpochSampler:
    """Uniform sampling without replacement, refreshed each epoch.

    The permutation for epoch e is regenerated on demand from (seed, e), so
    sampler state is just (epoch, cursor) and serializes to two integers.
    """

    def __init__(self, n: int, seed: int, epoch: int = 0, cursor: int = 0):
        if n < 1:
            raise ConfigError("cannot sample from an empty training set")
        self.n = n
        self.seed = seed
        self.epoch = epoch
        self.cursor = cursor
        self._perm = self._permutation(epoch)

    def _permutation(self, epoch: int) -> np.ndarray:
        keys = DeterministicRng(self.seed, stream=epoch).raw(self.n)
        return np.argsort(keys, kind="stable")

    def next(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            take = min(k, self.n - self.cursor)
            out.append(self._perm[self.cursor:self.cursor + take])
            self.cursor += take
            k -= take
            if self.cursor == self.n:
                self.epoch += 1
                self.cursor = 0
                self._perm = self._permutation(self.epoch)
        return np.concatenate(out)

    def get_state(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor}

    def set_state(self, state: dict) -> None:
        self.epoch = int(state["epoch"])
        self.cursor = int(state["cursor"])
        self._perm = self._permutation(self.epoch)


# ---------------------------------------------------------------------------
# Steps and the loop


@dataclass(frozen=True)
class StepReport:
    iteration: int
    lp: float
    ls: float
    lr: float  # ray-bundle loss value
    total: float
    lr_used: float  # learning rate applied this step

    def csv_row(self) -> str:
        return (f"{self.iteration},{self.lp:.8g},{self.ls:.8g},{self.lr:.8g},"
                f"{self.total:.8g},{self.lr_used:.8g}")


@dataclass(eq=False)
class TrainerState:
    config: TrainConfig
    ts: TrainingSet
    model: LightFieldNetwork
    adam: object
    sampler: EpochSampler
    rng_virtual: DeterministicRng
    rng_bundles: DeterministicRng
    iteration: int = 0


def init_trainer(config: TrainConfig, ts: TrainingSet) -> TrainerState:
    emb = make_embedding(config.sigma, config.num_frequencies, config.seeds.init)
    mlp_cfg = MlpConfig(input_dim=2 * config.num_frequencies,
                        hidden_layers=config.hidden_layers,
                        hidden_width=config.hidden_width, output_dim=3)
    params = init_params(mlp_cfg, config.seeds.init)
    model = LightFieldNetwork(embedding=emb, config=mlp_cfg, params=params,
                              box=ts.box, planes=ts.planes)
    return TrainerState(config=config, ts=ts, model=model,
                        adam=init_adam_state(params),
                        sampler=EpochSampler(ts.sample_count, config.seeds.shuffle),
                        rng_virtual=DeterministicRng(config.seeds.virtual, VIRTUAL_STREAM),
                        rng_bundles=DeterministicRng(config.seeds.bundles, BUNDLE_STREAM))


def _accumulate(total: MlpParams | None, extra: MlpParams) -> MlpParams:
    if total is None:
        return extra
    for t, e in zip(total.arrays(), extra.arrays()):
        t += e
    return total


def _predict_with_tape(model: LightFieldNetwork, coords: np.ndarray):
    emb = embed_batch(coords, model.embedding, dtype=model.params.dtype)
    return forward(model.params, emb)


def train_step(state: TrainerState, iteration: int) -> StepReport:
    cfg = state.config
    model = state.model
    ts = state.ts
    lam = cfg.weights
    grads = None

    # Photometric path over the epoch-permutation batch.
    idx = state.sampler.next(cfg.batch_size)
    pred, tape = _predict_with_tape(model, ts.coords[idx])
    lp, g_p = photometric_loss(pred, ts.colors[idx])
    g_param, _ = backward(model.params, tape, g_p)
    grads = _accumulate(grads, g_param)

    vcam = None
    if lam.lambda_s > 0 or lam.lambda_r > 0:
        vcam = sample_virtual_camera(ts, state.rng_virtual)

    # Spectral path: render the virtual view, match reference spectra.
    ls = 0.0
    if lam.lambda_s > 0:
        r = ts.refs.R
        px, py = pixel_grid(vcam.pose)
        dirs = ray_directions(vcam.pose, px, py).reshape(-1, 3)
        origins = np.broadcast_to(vcam.pose.position, dirs.shape)
        coords_v, _ = rays_to_coords(origins, dirs, ts.planes, ts.box)
        pred_v, tape_v = _predict_with_tape(model, coords_v)
        ls, g_img = fourier_sparsity_loss(pred_v.astype(np.float64).reshape(r, r, 3), ts.refs)
        g_param, _ = backward(model.params, tape_v, lam.lambda_s * g_img.reshape(-1, 3))
        grads = _accumulate(grads, g_param)

    # Bundle path: half the centers from the batch, half cast from the
    # virtual camera through uniform pixel positions.
    lr_val = 0.0
    if lam.lambda_r > 0:
        n_virt = cfg.bundle_rays // 2
        n_train = cfg.bundle_rays - n_virt
        o_train, d_train = coords_to_rays(ts.coords[idx[:n_train]].astype(np.float64),
                                          ts.planes, ts.box)
        u = state.rng_bundles.uniform(2 * n_virt)
        vpose = vcam.pose
        d_virt = ray_directions(vpose, u[:n_virt] * vpose.width, u[n_virt:] * vpose.height)
        o_virt = np.broadcast_to(vpose.position, d_virt.shape)
        origins = np.concatenate([o_train, o_virt])
        dirs = np.concatenate([d_train, d_virt])
        b_origins, b_dirs, w = sample_bundles_batch(origins, dirs, cfg.bundle,
                                                    state.rng_bundles)
        coords_c, _ = rays_to_coords(origins, dirs, ts.planes, ts.box)
        coords_b, _ = rays_to_coords(b_origins.reshape(-1, 3), b_dirs.reshape(-1, 3),
                                     ts.planes, ts.box)
        nb, t = cfg.bundle_rays, cfg.bundle.T
        pred_all, tape_all = _predict_with_tape(model, np.concatenate([coords_c, coords_b]))
        lr_val, g_c, g_b = ray_bundle_loss_batch(pred_all[:nb],
                                                 pred_all[nb:].reshape(nb, t, 3), w)
        g_out = np.concatenate([g_c, g_b.reshape(nb * t, 3)])
        g_param, _ = backward(model.params, tape_all, lam.lambda_r * g_out)
        grads = _accumulate(grads, g_param)

    total = total_loss(lp, ls, lr_val, lam)
    report = StepReport(iteration=iteration, lp=lp, ls=ls, lr=lr_val, total=total,
                        lr_used=lr_schedule(iteration, cfg.base_lr, cfg.lr_half_life))
    if not np.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss at iteration {iteration}: {report}")
    adam_step(model.params, grads, state.adam, report.lr_used)
    state.iteration = iteration + 1
    return report


def _rng_states(state: TrainerState) -> dict:
    return {"virtual": state.rng_virtual.get_state(),
            "bundles": state.rng_bundles.get_state(),
            "sampler": state.sampler.get_state()}


def _save(state: TrainerState, out_dir: str) -> str:
    meta = {"preset": state.config.preset, "config": config_to_dict(state.config)}
    path = checkpoint_path(out_dir, state.iteration)
    save_checkpoint(path, CheckpointBundle(model=state.model, iteration=state.iteration,
                                           meta=meta, adam=state.adam,
                                           rng_states=_rng_states(state)))
    return path


def resume_trainer(config: TrainConfig, ts: TrainingSet, ckpt_path) -> TrainerState:
    bundle = load_checkpoint(ckpt_path)
    if bundle.adam is None or bundle.rng_states is None:
        raise CheckpointError(f"{ckpt_path} lacks optimizer/rng state; cannot resume")
    saved_cfg = bundle.meta.get("config", {})
    for key in ("sigma", "num_frequencies", "hidden_layers", "hidden_width", "batch_size"):
        if key in saved_cfg and saved_cfg[key] != getattr(config, key):
            raise CheckpointError(f"checkpoint was trained with {key}={saved_cfg[key]}, "
                                  f"requested {getattr(config, key)}")
    model = bundle.model
    # The checkpointed frames are authoritative for the resumed model.
    state = TrainerState(config=config, ts=ts, model=model, adam=bundle.adam,
                         sampler=EpochSampler(ts.sample_count, config.seeds.shuffle),
                         rng_virtual=DeterministicRng(config.seeds.virtual, VIRTUAL_STREAM),
                         rng_bundles=DeterministicRng(config.seeds.bundles, BUNDLE_STREAM),
                         iteration=bundle.iteration)
    state.sampler.set_state(bundle.rng_states["sampler"])
    state.rng_virtual.set_state(bundle.rng_states["virtual"])
    state.rng_bundles.set_state(bundle.rng_states["bundles"])
    return state


def train(config: TrainConfig, source, out_dir, resume_from=None,
          progress=None) -> tuple[TrainerState, str]:
    """Run the loop to config.iterations; returns (state, final checkpoint path).

    `source` is a manifest path/directory or an already-loaded manifest;
    `resume_from` continues bit-identically from a saved checkpoint.
    """
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    ts = build_training_set(source, config)
    if resume_from is not None:
        state = resume_trainer(config, ts, resume_from)
    else:
        state = init_trainer(config, ts)

    log_path = os.path.join(out_dir, "train_log.csv")
    fresh_log = state.iteration == 0 or not os.path.exists(log_path)
    final_path = checkpoint_path(out_dir, config.iterations)
    last_wall = time.perf_counter()
    with open(log_path, "w" if fresh_log else "a", encoding="utf-8") as log:
        if fresh_log:
            log.write(LOG_HEADER + "\n")
        for iteration in range(state.iteration, config.iterations):
            report = train_step(state, iteration)
            if iteration % config.log_interval == 0 or iteration == config.iterations - 1:
                log.write(report.csv_row() + "\n")
                log.flush()
            if progress is not None and (time.perf_counter() - last_wall) > progress:
                print(f"iteration {iteration + 1}/{config.iterations} "
                      f"total {report.total:.4f}", flush=True)
                last_wall = time.perf_counter()
            if state.iteration % config.checkpoint_interval == 0 \
                    and state.iteration != config.iterations:
                _save(state, out_dir)
    final_path = _save(state, out_dir)
    return state, final_path
