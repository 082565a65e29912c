"""Fully-connected ReLU network with manual reverse-mode gradients and Adam.

Layer layout: an MlpConfig with H hidden layers owns H+1 weight matrices.
weights[k] has shape (dims[k], dims[k+1]) where
dims = [input_dim, hidden_width * H, output_dim]; ReLU follows every layer
except the last, which is squashed by a sigmoid so colors land strictly in
(0, 1). Checkpoints store W0, b0, W1, b1, ... row-major in this order.

Training math runs in float32; tests instantiate float64 networks so
finite-difference checks measure algorithmic error, not roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidHyperparam, NonFiniteGradient, ShapeMismatch, StaleTape
from .rng import DeterministicRng

# Stream id for parameter initialization within a shared seed.
INIT_STREAM = 11

DEFAULT_HIDDEN_LAYERS = 6
DEFAULT_HIDDEN_WIDTH = 256


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    output_dim: int = 3

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim"):
            if getattr(self, name) < 1:
                raise InvalidHyperparam(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


@dataclass(eq=False)
class MlpParams:
    """Weights and biases; also used as the container for their gradients."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        """All parameter arrays, interleaved W0, b0, W1, b1, ..."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@dataclass(eq=False)
class TapeRecord:
    """Cached forward-pass state for one batch: inputs to every layer plus
    the (clipped) sigmoid outputs."""

    layer_inputs: list[np.ndarray]  # a_0 = batch, a_k = ReLU output of layer k-1
    outputs: np.ndarray


@dataclass(eq=False)
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def param_count(config: MlpConfig) -> int:
    dims = config.layer_dims
    return int(sum(dims[k] * dims[k + 1] + dims[k + 1] for k in range(len(dims) - 1)))


def init_params(config: MlpConfig, seed: int, dtype=np.float32) -> MlpParams:
    """He fan-in init for ReLU layers, Glorot uniform for the output layer,
    zero biases. Deterministic in seed."""
    rng = DeterministicRng(seed, stream=INIT_STREAM)
    dims = config.layer_dims
    weights, biases = [], []
    last = len(dims) - 2
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        if k < last:
            w = rng.normal(fan_in * fan_out, sigma=float(np.sqrt(2.0 / fan_in)))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = (2.0 * rng.uniform(fan_in * fan_out) - 1.0) * limit
        weights.append(w.reshape(fan_in, fan_out).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: MlpParams, embedded_batch: np.ndarray) -> tuple[np.ndarray, TapeRecord]:
    """Batch forward pass; returns colors strictly inside (0,1) plus the tape."""
    x = np.asarray(embedded_batch)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a 2D batch, got shape {x.shape}")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(
            f"batch has {x.shape[1]} features, network expects {params.weights[0].shape[0]}")
    x = x.astype(params.dtype, copy=False)
    layer_inputs = [x]
    a = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if k < last:
            a = np.maximum(z, 0)
            layer_inputs.append(a)
        else:
            a = _sigmoid(z)
    dt = params.dtype.type
    # Keep outputs strictly inside (0,1) even where f32 sigmoid saturates.
    y = np.clip(a, np.nextafter(dt(0), dt(1)), np.nextafter(dt(1), dt(0)))
    return y, TapeRecord(layer_inputs, y)


def backward(params: MlpParams, tape: TapeRecord,
             dL_doutput: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of the recorded forward pass.

    Returns (gradients shaped like params, dL/dinput for the batch).
    """
    dY = np.asarray(dL_doutput)
    if dY.shape != tape.outputs.shape:
        raise StaleTape(f"gradient shape {dY.shape} does not match tape outputs "
                        f"{tape.outputs.shape}")
    if len(tape.layer_inputs) != len(params.weights):
        raise StaleTape("tape depth does not match network depth")
    dY = dY.astype(params.dtype, copy=False)
    y = tape.outputs
    dz = dY * y * (1.0 - y)
    g_w = [None] * len(params.weights)
    g_b = [None] * len(params.biases)
    for k in range(len(params.weights) - 1, -1, -1):
        a_in = tape.layer_inputs[k]
        if a_in.shape[0] != dz.shape[0]:
            raise StaleTape("tape batch size does not match gradient batch size")
        g_w[k] = a_in.T @ dz
        g_b[k] = dz.sum(axis=0)
        da = dz @ params.weights[k].T
        if k > 0:
            dz = da * (a_in > 0)
    return MlpParams(g_w, g_b), da


def init_adam_state(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999,
                    eps: float = 1e-8) -> AdamState:
    zw = [np.zeros_like(w) for w in params.weights]
    zb = [np.zeros_like(b) for b in params.biases]
    return AdamState([z.copy() for z in zw], zw, [z.copy() for z in zb], zb,
                     step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState,
              lr: float) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction. Mutates params and state in place
    and returns them."""
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN/Inf; aborting the update")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(),
                          _interleave(state.m_w, state.m_b),
                          _interleave(state.v_w, state.v_b)):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _interleave(per_w: list[np.ndarray], per_b: list[np.ndarray]):
    for w, b in zip(per_w, per_b):
        yield w
        yield b


def lr_schedule(iteration: int, base_lr: float = 1e-3, half_life: int = 20000) -> float:
    """Stepwise halving: base_lr * 0.5 ** floor(iteration / half_life)."""
    if iteration < 0:
        raise InvalidHyperparam(f"iteration must be >= 0, got {iteration}")
    return base_lr * 0.5 ** (iteration // half_life)
