"""The learned light-field function and its checkpoint serialization.

A LightFieldNetwork bundles the frozen embedding matrix, the MLP weights, the
coordinate normalization box, and the plane pair; predict_colors maps
normalized 4D ray coordinates straight to RGB.

Checkpoint container (single binary file, extension .nelf):

    magic "NELF" | version u32 LE | section*
    section = name_len u16 LE | name utf8 | payload_len u64 LE | payload

Sections, in this fixed order: embedding {sigma f64, L u32, seed u64, L*4
float32 row-major}, mlp_config {4 x u32}, mlp_params {W0, b0, W1, b1, ...
float32 row-major}, norm_box {lo[4], hi[4] f64}, plane_pair {z_uv, z_st f64},
train_meta {canonical JSON}, then optional adam and rng sections used for
bit-identical resume. All multi-byte values little-endian. Saving a loaded
checkpoint reproduces the original bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingMatrix, embed_batch
from .errors import CheckpointError
from .geometry import NormalizationBox, PlanePair
from .network import AdamState, MlpConfig, MlpParams, forward

MAGIC = b"NELF"
FORMAT_VERSION = 1

CHECKPOINT_PATTERN = "ckpt_{:07d}.nelf"


def checkpoint_path(directory, iteration: int) -> str:
    return os.path.join(str(directory), CHECKPOINT_PATTERN.format(iteration))


@dataclass(eq=False)
class LightFieldNetwork:
    """f(u, v, s, t) -> RGB: embedding, MLP, and the coordinate frames."""

    embedding: EmbeddingMatrix
    config: MlpConfig
    params: MlpParams
    box: NormalizationBox
    planes: PlanePair

    def predict_colors(self, coords: np.ndarray) -> np.ndarray:
        """Colors for (N, 4) normalized coordinates, in (0,1), shape (N, 3)."""
        emb = embed_batch(coords, self.embedding, dtype=self.params.dtype)
        colors, _ = forward(self.params, emb)
        return colors


@dataclass(eq=False)
class CheckpointBundle:
    """Everything a checkpoint holds: the model plus optional resume state."""

    model: LightFieldNetwork
    iteration: int
    meta: dict = field(default_factory=dict)
    adam: AdamState | None = None
    rng_states: dict | None = None


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_embedding(emb: EmbeddingMatrix) -> bytes:
    head = struct.pack("<dIQ", emb.sigma, emb.L, emb.seed & 0xFFFFFFFFFFFFFFFF)
    return head + np.ascontiguousarray(emb.B, dtype="<f4").tobytes()


def _unpack_embedding(payload: bytes) -> EmbeddingMatrix:
    sigma, L, seed = struct.unpack_from("<dIQ", payload, 0)
    body = np.frombuffer(payload, dtype="<f4", offset=20)
    if body.size != 4 * L:
        raise CheckpointError(f"embedding section has {body.size} values, expected {4 * L}")
    return EmbeddingMatrix(B=body.reshape(L, 4).astype(np.float64), sigma=sigma,
                           L=int(L), seed=int(seed))


def _pack_params(params: MlpParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays())


def _unpack_params(payload: bytes, config: MlpConfig) -> MlpParams:
    dims = config.layer_dims
    flat = np.frombuffer(payload, dtype="<f4")
    expected = sum(dims[k] * dims[k + 1] + dims[k + 1] for k in range(len(dims) - 1))
    if flat.size != expected:
        raise CheckpointError(f"mlp_params has {flat.size} values, expected {expected}")
    weights, biases, at = [], [], 0
    for k in range(len(dims) - 1):
        n = dims[k] * dims[k + 1]
        weights.append(flat[at:at + n].reshape(dims[k], dims[k + 1]).astype(np.float32))
        at += n
        biases.append(flat[at:at + dims[k + 1]].astype(np.float32))
        at += dims[k + 1]
    return MlpParams(weights, biases)


def _pack_adam(adam: AdamState) -> bytes:
    head = struct.pack("<Qddd", adam.step, adam.beta1, adam.beta2, adam.eps)
    chunks = [head]
    for group in (adam.m_w, adam.m_b, adam.v_w, adam.v_b):
        chunks.extend(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in group)
    return b"".join(chunks)


def _unpack_adam(payload: bytes, params: MlpParams) -> AdamState:
    step, beta1, beta2, eps = struct.unpack_from("<Qddd", payload, 0)
    flat = np.frombuffer(payload, dtype="<f4", offset=32)
    groups, at = [], 0
    for templates in (params.weights, params.biases, params.weights, params.biases):
        group = []
        for tmpl in templates:
            n = tmpl.size
            group.append(flat[at:at + n].reshape(tmpl.shape).astype(np.float32))
            at += n
        groups.append(group)
    if at != flat.size:
        raise CheckpointError("adam section size does not match the parameter shapes")
    return AdamState(m_w=groups[0], m_b=groups[1], v_w=groups[2], v_b=groups[3],
                     step=int(step), beta1=beta1, beta2=beta2, eps=eps)


def _sections_bytes(sections: list[tuple[str, bytes]]) -> bytes:
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, payload in sections:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    return b"".join(out)


def save_checkpoint(path, bundle: CheckpointBundle) -> None:
    """Serialize and atomically replace `path`."""
    model = bundle.model
    cfg = model.config
    meta = dict(bundle.meta)
    meta["iteration"] = bundle.iteration
    sections = [
        ("embedding", _pack_embedding(model.embedding)),
        ("mlp_config", struct.pack("<IIII", cfg.input_dim, cfg.hidden_layers,
                                   cfg.hidden_width, cfg.output_dim)),
        ("mlp_params", _pack_params(model.params)),
        ("norm_box", np.concatenate([model.box.lo, model.box.hi]).astype("<f8").tobytes()),
        ("plane_pair", struct.pack("<dd", model.planes.z_uv, model.planes.z_st)),
        ("train_meta", _canonical_json(meta)),
    ]
    if bundle.adam is not None:
        sections.append(("adam", _pack_adam(bundle.adam)))
    if bundle.rng_states is not None:
        sections.append(("rng", _canonical_json(bundle.rng_states)))
    blob = _sections_bytes(sections)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, str(path))


def _read_sections(blob: bytes) -> dict[str, bytes]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sections, at = {}, 8
    while at < len(blob):
        if at + 2 > len(blob):
            raise CheckpointError("truncated section header")
        (nlen,) = struct.unpack_from("<H", blob, at)
        at += 2
        name = blob[at:at + nlen].decode("utf-8")
        at += nlen
        if at + 8 > len(blob):
            raise CheckpointError(f"truncated section '{name}'")
        (plen,) = struct.unpack_from("<Q", blob, at)
        at += 8
        if at + plen > len(blob):
            raise CheckpointError(f"section '{name}' runs past end of file")
        sections[name] = blob[at:at + plen]
        at += plen
    return sections


def load_checkpoint(path) -> CheckpointBundle:
    try:
        with open(str(path), "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    sections = _read_sections(blob)
    required = ("embedding", "mlp_config", "mlp_params", "norm_box", "plane_pair", "train_meta")
    for name in required:
        if name not in sections:
            raise CheckpointError(f"checkpoint is missing the '{name}' section")
    emb = _unpack_embedding(sections["embedding"])
    cfg = MlpConfig(*struct.unpack("<IIII", sections["mlp_config"]))
    params = _unpack_params(sections["mlp_params"], cfg)
    box_vals = np.frombuffer(sections["norm_box"], dtype="<f8")
    if box_vals.size != 8:
        raise CheckpointError("norm_box section must hold 8 float64 values")
    box = NormalizationBox(box_vals[:4].copy(), box_vals[4:].copy())
    z_uv, z_st = struct.unpack("<dd", sections["plane_pair"])
    meta = json.loads(sections["train_meta"].decode("utf-8"))
    model = LightFieldNetwork(embedding=emb, config=cfg, params=params, box=box,
                              planes=PlanePair(z_uv, z_st))
    adam = _unpack_adam(sections["adam"], params) if "adam" in sections else None
    rng_states = json.loads(sections["rng"].decode("utf-8")) if "rng" in sections else None
    return CheckpointBundle(model=model, iteration=int(meta.get("iteration", 0)),
                            meta=meta, adam=adam, rng_states=rng_states)
