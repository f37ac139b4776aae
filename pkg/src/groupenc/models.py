"""GroupEnc and the baseline VAE: training steps, inference and checkpoints.

Both models share the variational encoder: a ReLU MLP whose linear output
of width ``2*latent_dim`` is split into the posterior mean and log-variance.
GroupEnc has no decoder and is trained on group loss + KL; the VAE adds a
decoder and is trained on MSE reconstruction + KL.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .group_loss import STRATEGIES, assign_groups, batch_group_loss_detailed
from .nn import (
    DECODER_HIDDEN,
    ENCODER_HIDDEN,
    LOGVAR_CLAMP,
    NetworkParams,
    NetworkSpec,
    backward,
    dump_params,
    forward,
    init_params,
    kl_to_standard_normal,
    load_params,
    mse_loss,
    sample_latent,
    split_heads,
)
from .tensor import SeededRng, as_matrix

MODEL_KINDS = ("groupenc", "vae")
# at 1.0 the KL term (summed over latent dims) dwarfs both the group loss
# (~1e-2) and the per-entry MSE, and the posterior collapses to the prior
DEFAULT_KL_WEIGHT = 0.001

_MODEL_MAGIC = b"GMDL"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    input_dim: int
    latent_dim: int = 2
    gamma: int | None = 4
    kl_weight: float = DEFAULT_KL_WEIGHT
    group_strategy: str = "headed"
    encoder_hidden: tuple[int, ...] = ENCODER_HIDDEN
    decoder_hidden: tuple[int, ...] = DECODER_HIDDEN

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if not 1 <= self.latent_dim < self.input_dim:
            raise ConfigError(f"latent_dim must satisfy 1 <= w < d, got w={self.latent_dim}, d={self.input_dim}")
        if self.kind == "groupenc":
            if self.gamma is None or self.gamma < 2:
                raise ConfigError("groupenc needs gamma >= 2")
            if self.group_strategy not in STRATEGIES:
                raise ConfigError(f"unknown group strategy {self.group_strategy!r}")
        else:
            object.__setattr__(self, "gamma", None)
        if not self.kl_weight >= 0:
            raise ConfigError("kl_weight must be >= 0")

    @property
    def encoder_spec(self) -> NetworkSpec:
        return NetworkSpec(self.input_dim, self.encoder_hidden, 2 * self.latent_dim)

    @property
    def decoder_spec(self) -> NetworkSpec | None:
        if self.kind != "vae":
            return None
        return NetworkSpec(self.latent_dim, self.decoder_hidden, self.input_dim)

    @property
    def min_batch(self) -> int:
        return self.gamma if self.kind == "groupenc" else 1

    def to_text(self) -> str:
        lines = [
            f"kind={self.kind}",
            f"input_dim={self.input_dim}",
            f"latent_dim={self.latent_dim}",
            f"gamma={'' if self.gamma is None else self.gamma}",
            f"kl_weight={self.kl_weight!r}",
            f"group_strategy={self.group_strategy}",
            f"encoder_hidden={','.join(map(str, self.encoder_hidden))}",
            f"decoder_hidden={','.join(map(str, self.decoder_hidden))}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ModelConfig":
        try:
            return cls(
                kind=kv["kind"],
                input_dim=int(kv["input_dim"]),
                latent_dim=int(kv["latent_dim"]),
                gamma=int(kv["gamma"]) if kv.get("gamma") else None,
                kl_weight=float(kv["kl_weight"]),
                group_strategy=kv.get("group_strategy", "headed"),
                encoder_hidden=tuple(int(s) for s in kv["encoder_hidden"].split(",")),
                decoder_hidden=tuple(int(s) for s in kv["decoder_hidden"].split(",")),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"invalid model header: {exc}") from exc


@dataclass
class ModelParams:
    encoder: NetworkParams
    decoder: NetworkParams | None = None

    def networks(self) -> list[NetworkParams]:
        return [self.encoder] if self.decoder is None else [self.encoder, self.decoder]

    def copy(self) -> "ModelParams":
        return ModelParams(self.encoder.copy(), None if self.decoder is None else self.decoder.copy())


@dataclass
class LossBreakdown:
    total: float
    primary_term: float
    kl_term: float
    degenerate_groups: int = 0


@dataclass
class ModelGrads:
    encoder: list[np.ndarray]
    decoder: list[np.ndarray] | None = None

    def networks(self) -> list[list[np.ndarray]]:
        return [self.encoder] if self.decoder is None else [self.encoder, self.decoder]


@dataclass
class StepTrace:
    """Intermediate values of one training step, kept for inspection."""

    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    epsilon: np.ndarray
    extra: dict = field(default_factory=dict)


def init_model(config: ModelConfig, rng: SeededRng) -> ModelParams:
    encoder = init_params(config.encoder_spec, rng.child("encoder"))
    decoder = None
    if config.decoder_spec is not None:
        decoder = init_params(config.decoder_spec, rng.child("decoder"))
    return ModelParams(encoder, decoder)


def _encode(config: ModelConfig, params: ModelParams, batch: np.ndarray):
    out, tape = forward(config.encoder_spec, params.encoder, batch)
    mu, raw_logvar = split_heads(out, config.latent_dim)
    return mu, raw_logvar, tape


def _latent_backward(config, params, tape, raw_logvar, sample, grad_z, kl_grads):
    """Chain d(total)/dz and the KL gradients back into encoder parameters."""
    kl_mu, kl_logvar = kl_grads
    beta = config.kl_weight
    grad_mu = grad_z + beta * kl_mu
    grad_logvar = grad_z * (0.5 * np.exp(0.5 * sample.logvar) * sample.epsilon) + beta * kl_logvar
    # clamp blocks the gradient outside [-15, 15]
    grad_logvar = np.where(np.abs(raw_logvar) <= LOGVAR_CLAMP, grad_logvar, 0.0)
    grad_out = np.concatenate([grad_mu, grad_logvar], axis=1)
    grads, _ = backward(config.encoder_spec, params.encoder, tape, grad_out)
    return grads


def _check_batch(config: ModelConfig, batch) -> np.ndarray:
    x = as_matrix(batch, "hd_batch")
    if x.shape[1] != config.input_dim:
        raise ShapeError(f"batch has {x.shape[1]} columns, model expects {config.input_dim}")
    if x.shape[0] < config.min_batch:
        raise ShapeError(f"batch of {x.shape[0]} rows is smaller than the minimum {config.min_batch}")
    return x


def groupenc_training_step(params: ModelParams, hd_batch, config: ModelConfig, rng: SeededRng | None = None,
                           *, noise_rng: SeededRng | None = None, group_rng: SeededRng | None = None,
                           epsilon=None, assignment=None, trace: bool = False):
    """Loss and exact parameter gradients for one GroupEnc batch.

    Noise and group assignment come from ``noise_rng`` / ``group_rng``
    (default: children of ``rng``); ``epsilon`` and ``assignment`` freeze
    them explicitly, which gradient checks rely on.

    Returns
    -------
    LossBreakdown, ModelGrads[, StepTrace]
    """
    if config.kind != "groupenc":
        raise ConfigError("groupenc_training_step needs a groupenc config")
    x = _check_batch(config, hd_batch)
    if assignment is None:
        group_rng = group_rng or rng.child("groups")
        assignment = assign_groups(x.shape[0], config.gamma, config.group_strategy, group_rng)
    mu, raw_logvar, tape = _encode(config, params, x)
    if epsilon is None:
        noise_rng = noise_rng or rng.child("noise")
    sample = sample_latent(mu, raw_logvar, noise_rng, epsilon=epsilon)

    group = batch_group_loss_detailed(x, sample.z, assignment)
    kl, kl_mu, kl_logvar = kl_to_standard_normal(sample.mu, sample.logvar)
    grads = _latent_backward(config, params, tape, raw_logvar, sample, group.grad, (kl_mu, kl_logvar))

    loss = LossBreakdown(
        total=group.loss + config.kl_weight * kl,
        primary_term=group.loss,
        kl_term=kl,
        degenerate_groups=group.degenerate_hd + group.degenerate_ld,
    )
    out = (loss, ModelGrads(grads))
    if trace:
        out += (StepTrace(sample.mu, sample.logvar, sample.z, sample.epsilon, {"assignment": assignment}),)
    return out


def vae_training_step(params: ModelParams, hd_batch, config: ModelConfig, rng: SeededRng | None = None,
                      *, noise_rng: SeededRng | None = None, epsilon=None, trace: bool = False):
    """Loss and exact gradients (encoder and decoder) for one VAE batch."""
    if config.kind != "vae":
        raise ConfigError("vae_training_step needs a vae config")
    x = _check_batch(config, hd_batch)
    mu, raw_logvar, enc_tape = _encode(config, params, x)
    if epsilon is None:
        noise_rng = noise_rng or rng.child("noise")
    sample = sample_latent(mu, raw_logvar, noise_rng, epsilon=epsilon)

    recon, dec_tape = forward(config.decoder_spec, params.decoder, sample.z)
    mse, grad_recon = mse_loss(recon, x)
    dec_grads, grad_z = backward(config.decoder_spec, params.decoder, dec_tape, grad_recon)
    kl, kl_mu, kl_logvar = kl_to_standard_normal(sample.mu, sample.logvar)
    enc_grads = _latent_backward(config, params, enc_tape, raw_logvar, sample, grad_z, (kl_mu, kl_logvar))

    loss = LossBreakdown(total=mse + config.kl_weight * kl, primary_term=mse, kl_term=kl)
    out = (loss, ModelGrads(enc_grads, dec_grads))
    if trace:
        out += (StepTrace(sample.mu, sample.logvar, sample.z, sample.epsilon, {"reconstruction": recon}),)
    return out


def training_step(params: ModelParams, hd_batch, config: ModelConfig, rng: SeededRng | None = None, **kwargs):
    if config.kind == "groupenc":
        return groupenc_training_step(params, hd_batch, config, rng, **kwargs)
    kwargs.pop("group_rng", None)
    return vae_training_step(params, hd_batch, config, rng, **kwargs)


def embed(params: ModelParams, data, config: ModelConfig) -> np.ndarray:
    """Posterior means for every row of ``data``; no sampling noise."""
    x = as_matrix(data, "data")
    if x.shape[1] != config.input_dim:
        raise ShapeError(f"data has {x.shape[1]} columns, model expects {config.input_dim}")
    mu, _, _ = _encode(config, params, x)
    return np.ascontiguousarray(mu)


# -- checkpoints -------------------------------------------------------------


def parse_kv_block(text: str) -> tuple[dict[str, str], list[str]]:
    """Parse ``key=value`` lines; repeated ``log`` keys are collected in order."""
    kv: dict[str, str] = {}
    log_rows: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"malformed header line {line!r}")
        key, value = line.split("=", 1)
        if key == "log":
            log_rows.append(value)
        else:
            kv[key] = value
    return kv, log_rows


def dump_model(config: ModelConfig, params: ModelParams, extra_text: str = "") -> bytes:
    text = (config.to_text() + extra_text).encode("utf-8")
    blobs = [dump_params(params.encoder, config.encoder_spec)]
    if config.decoder_spec is not None:
        blobs.append(dump_params(params.decoder, config.decoder_spec))
    buf = io.BytesIO()
    buf.write(struct.pack("<4sII", _MODEL_MAGIC, _MODEL_VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(blobs)))
    for blob in blobs:
        buf.write(struct.pack("<Q", len(blob)))
        buf.write(blob)
    return buf.getvalue()


def load_model(blob: bytes) -> tuple[ModelConfig, ModelParams, dict[str, str], list[str]]:
    """Inverse of :func:`dump_model`.

    Returns the config, parameters, remaining header keys and log rows.
    """
    view = memoryview(blob)
    head = struct.calcsize("<4sII")
    if len(view) < head:
        raise FormatError("model checkpoint truncated in header")
    magic, version, text_len = struct.unpack_from("<4sII", view, 0)
    if magic != _MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MODEL_MAGIC!r}")
    if version != _MODEL_VERSION:
        raise FormatError(f"unsupported model checkpoint version {version}")
    off = head
    try:
        text = bytes(view[off:off + text_len]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("model header is not valid UTF-8") from exc
    off += text_len
    kv, log_rows = parse_kv_block(text)
    config = ModelConfig.from_mapping(kv)
    if off + 4 > len(view):
        raise FormatError("model checkpoint truncated before network table")
    (n_nets,) = struct.unpack_from("<I", view, off)
    off += 4
    specs = [config.encoder_spec] + ([config.decoder_spec] if config.decoder_spec else [])
    if n_nets != len(specs):
        raise FormatError(f"checkpoint holds {n_nets} networks, config needs {len(specs)}")
    nets = []
    for spec in specs:
        if off + 8 > len(view):
            raise FormatError("model checkpoint truncated in network table")
        (size,) = struct.unpack_from("<Q", view, off)
        off += 8
        if off + size > len(view):
            raise FormatError("model checkpoint truncated inside a network")
        params, _ = load_params(bytes(view[off:off + size]), spec)
        nets.append(params)
        off += size
    if off != len(view):
        raise FormatError("model checkpoint has trailing bytes")
    params = ModelParams(nets[0], nets[1] if len(nets) > 1 else None)
    return config, params, kv, log_rows
