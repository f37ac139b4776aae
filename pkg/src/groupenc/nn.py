"""Small fully-connected networks with hand-written reverse passes.

Layers compute ``x @ W + b``; hidden layers use ReLU and the last layer is
linear. Parameters are kept in a flat list ``[W0, b0, W1, b1, ...]`` and
gradients use the same layout, which keeps the optimiser and checkpoint
code trivial.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError, StateError
from .tensor import SeededRng, as_matrix

ENCODER_HIDDEN = (32, 64, 128, 32)
DECODER_HIDDEN = (32, 128, 64, 32)
LOGVAR_CLAMP = 15.0

_CKPT_MAGIC = b"GENC"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = (self.input_dim, *self.hidden_sizes, self.output_dim)
        if any(int(s) < 1 for s in sizes):
            raise ConfigError(f"all layer sizes must be >= 1, got {sizes}")
        if self.hidden_activation != "relu" or self.output_activation != "linear":
            raise ConfigError("only relu hidden / linear output layers are supported")
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = (self.input_dim, *self.hidden_sizes, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class NetworkParams:
    """Weights, biases and Adam moments for one network.

    ``version`` is bumped on every in-place update so that stale forward
    tapes can be detected.
    """

    arrays: list[np.ndarray]
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    version: int = 0

    @classmethod
    def from_arrays(cls, arrays) -> "NetworkParams":
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        return cls(arrays, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    @property
    def weights(self) -> list[np.ndarray]:
        return self.arrays[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.arrays[1::2]

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [a.copy() for a in self.arrays],
            [a.copy() for a in self.m],
            [a.copy() for a in self.v],
            self.t,
            self.version,
        )

    def check(self, spec: NetworkSpec) -> None:
        expected = []
        for fan_in, fan_out in spec.layer_dims:
            expected += [(fan_in, fan_out), (fan_out,)]
        got = [a.shape for a in self.arrays]
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match spec {expected}")


@dataclass
class Tape:
    """Per-layer inputs and pre-activations cached by :func:`forward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    version: int = -1
    consumed: bool = False


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")


@dataclass
class LatentSample:
    mu: np.ndarray
    logvar: np.ndarray
    epsilon: np.ndarray
    z: np.ndarray


def init_params(spec: NetworkSpec, rng: SeededRng) -> NetworkParams:
    """He-normal weights for ReLU-fed layers, zero biases, zeroed Adam state.

    The final linear layer is scaled by ``1/fan_in`` instead of ``2/fan_in``.
    """
    arrays = []
    dims = spec.layer_dims
    for k, (fan_in, fan_out) in enumerate(dims):
        gain = 1.0 if k == len(dims) - 1 else 2.0
        std = np.sqrt(gain / fan_in)
        w = rng.generator.standard_normal((fan_in, fan_out)) * std
        arrays += [w, np.zeros(fan_out)]
    return NetworkParams.from_arrays(arrays)


def forward(spec: NetworkSpec, params: NetworkParams, batch) -> tuple[np.ndarray, Tape]:
    x = as_matrix(batch, "batch")
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"batch has {x.shape[1]} columns, network expects {spec.input_dim}")
    tape = Tape(version=params.version)
    n_layers = len(spec.layer_dims)
    h = x
    for k in range(n_layers):
        w, b = params.arrays[2 * k], params.arrays[2 * k + 1]
        pre = h @ w + b
        tape.inputs.append(h)
        tape.preacts.append(pre)
        h = np.maximum(pre, 0.0) if k < n_layers - 1 else pre
    return h, tape


def backward(spec: NetworkSpec, params: NetworkParams, tape: Tape | None, output_grad):
    """Reverse pass through the layers recorded in ``tape``.

    Returns
    -------
    param_grads : list of ndarray
        Same layout as ``params.arrays``.
    input_grad : ndarray
        Gradient with respect to the batch fed to :func:`forward`.
    """
    if tape is None or not tape.inputs:
        raise StateError("backward called without a forward tape")
    if tape.version != params.version:
        raise StateError("forward tape is stale: parameters changed since forward")
    g = np.asarray(output_grad, dtype=np.float64)
    n_layers = len(spec.layer_dims)
    if g.shape != tape.preacts[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {tape.preacts[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * n_layers)  # type: ignore[list-item]
    for k in reversed(range(n_layers)):
        if k < n_layers - 1:
            g = g * (tape.preacts[k] > 0)
        grads[2 * k] = tape.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.arrays[2 * k].T
    return grads, g


def split_heads(output: np.ndarray, latent_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Split an encoder output of width ``2*latent_dim`` into (mu, raw logvar)."""
    if output.shape[1] != 2 * latent_dim:
        raise ShapeError(f"encoder output width {output.shape[1]} != 2*{latent_dim}")
    return output[:, :latent_dim], output[:, latent_dim:]


def clamp_logvar(logvar: np.ndarray) -> np.ndarray:
    return np.clip(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)


def sample_latent(mu, logvar, rng: SeededRng | None = None, epsilon=None) -> LatentSample:
    """Reparameterised draw ``z = mu + exp(logvar/2) * eps``.

    ``logvar`` is clamped to [-15, 15] first. Pass ``epsilon`` to freeze the
    noise; otherwise it is drawn from ``rng``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = clamp_logvar(np.asarray(logvar, dtype=np.float64))
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if epsilon is None:
        if rng is None:
            raise ConfigError("either rng or epsilon must be given")
        epsilon = rng.generator.standard_normal(mu.shape)
    else:
        epsilon = np.asarray(epsilon, dtype=np.float64)
        if epsilon.shape != mu.shape:
            raise ShapeError(f"epsilon shape {epsilon.shape} != {mu.shape}")
    z = mu + np.exp(0.5 * logvar) * epsilon
    return LatentSample(mu=mu, logvar=logvar, epsilon=epsilon, z=z)


def kl_to_standard_normal(mu, logvar):
    """KL divergence from N(mu, exp(logvar)) to N(0, I).

    Summed over latent dimensions, averaged over rows.

    Returns
    -------
    loss : float
    grad_mu, grad_logvar : ndarray
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    n = mu.shape[0]
    var = np.exp(logvar)
    # expm1 form keeps small-logvar terms non-negative after rounding
    per_entry = 0.5 * (mu * mu + np.expm1(logvar) - logvar)
    loss = float(per_entry.sum() / n)
    return max(loss, 0.0), mu / n, 0.5 * (var - 1.0) / n


def mse_loss(reconstruction, target):
    rec = np.asarray(reconstruction, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if rec.shape != tgt.shape:
        raise ShapeError(f"reconstruction {rec.shape} and target {tgt.shape} differ")
    diff = rec - tgt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def adam_step(params: NetworkParams, param_grads, config: AdamConfig) -> NetworkParams:
    """One bias-corrected Adam update, applied in place.

    Raises
    ------
    NumericError
        If any gradient entry is NaN or infinite; parameters are untouched.
    """
    if len(param_grads) != len(params.arrays):
        raise ShapeError("gradient list does not match parameter list")
    for p, g in zip(params.arrays, param_grads):
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
    params.t += 1
    b1, b2 = config.beta1, config.beta2
    step = config.learning_rate / (1.0 - b1**params.t)
    bc2 = 1.0 - b2**params.t
    for p, g, m, v in zip(params.arrays, param_grads, params.m, params.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / bc2) + config.epsilon)
    params.version += 1
    return params


# -- checkpoint container ----------------------------------------------------


def dump_params(params: NetworkParams, spec: NetworkSpec) -> bytes:
    """Serialise parameters and Adam state into the ``GENC`` container."""
    params.check(spec)
    dims = spec.layer_dims
    buf = io.BytesIO()
    buf.write(struct.pack("<4sII", _CKPT_MAGIC, _CKPT_VERSION, len(dims)))
    for fan_in, fan_out in dims:
        buf.write(struct.pack("<II", fan_in, fan_out))
    for group in (params.arrays, params.m, params.v):
        for a in group:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    buf.write(struct.pack("<Q", params.t))
    return buf.getvalue()


def load_params(blob: bytes, spec: NetworkSpec | None = None) -> tuple[NetworkParams, list[tuple[int, int]]]:
    """Inverse of :func:`dump_params`; returns params and the stored layer dims."""
    view = memoryview(blob)
    head = struct.calcsize("<4sII")
    if len(view) < head:
        raise FormatError("network checkpoint truncated in header")
    magic, version, n_layers = struct.unpack_from("<4sII", view, 0)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_CKPT_MAGIC!r}")
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported network checkpoint version {version}")
    off = head
    dims = []
    for _ in range(n_layers):
        if off + 8 > len(view):
            raise FormatError("network checkpoint truncated in layer table")
        dims.append(struct.unpack_from("<II", view, off))
        off += 8
    if spec is not None and [tuple(d) for d in spec.layer_dims] != dims:
        raise FormatError(f"stored layer dims {dims} do not match {spec.layer_dims}")
    shapes = []
    for fan_in, fan_out in dims:
        shapes += [(fan_in, fan_out), (fan_out,)]
    groups = []
    for _ in range(3):
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            end = off + 8 * count
            if end > len(view):
                raise FormatError(f"network checkpoint truncated at offset {off}")
            arrays.append(np.frombuffer(view[off:end], dtype="<f8").astype(np.float64).reshape(shape))
            off = end
        groups.append(arrays)
    if off + 8 != len(view):
        raise FormatError("network checkpoint has unexpected trailing size")
    (t,) = struct.unpack_from("<Q", view, off)
    return NetworkParams(groups[0], groups[1], groups[2], int(t)), dims
