"""Variational autoencoder with a Gaussian encoder, SGVB loss and AEVB training.

The encoder is one fully connected network ``D -> hidden... -> 2J`` whose
last layer is split into the mean head (first J rows) and the log-variance
head (last J rows). The decoder maps ``J -> hidden... -> D`` through a
sigmoid output.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    TrainingError,
    TruncatedFileError,
    UnsupportedVersionError,
)

log = logging.getLogger(__name__)

LIKELIHOODS = ("gaussian_unit_variance", "bernoulli")
BERNOULLI_CLAMP = 1e-7
HIDDEN_ACTIVATION = "tanh"


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 4
    image_height: int = 16
    image_width: int = 16
    channels: int = 3
    encoder_hidden: tuple[int, ...] = (128,)
    decoder_hidden: tuple[int, ...] = (128,)
    likelihood: str = "gaussian_unit_variance"

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        for key in ("latent_dim", "image_height", "image_width", "channels"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        for key in ("encoder_hidden", "decoder_hidden"):
            if any(h < 1 for h in getattr(self, key)):
                raise ConfigError(key, "hidden sizes must be positive")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError("likelihood", f"must be one of {LIKELIHOODS}, got {self.likelihood!r}")

    @property
    def pixels(self) -> int:
        return self.image_height * self.image_width * self.channels

    @property
    def encoder_spec(self) -> nm.MlpSpec:
        sizes = (self.pixels, *self.encoder_hidden, 2 * self.latent_dim)
        return nm.MlpSpec(sizes, HIDDEN_ACTIVATION, "identity")

    @property
    def decoder_spec(self) -> nm.MlpSpec:
        sizes = (self.latent_dim, *self.decoder_hidden, self.pixels)
        return nm.MlpSpec(sizes, HIDDEN_ACTIVATION, "sigmoid")


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: list
    decoder: list

    def arrays(self) -> list[np.ndarray]:
        return list(self.encoder) + list(self.decoder)

    def with_arrays(self, arrays) -> "ModelParams":
        n = len(self.encoder)
        return ModelParams(self.config, list(arrays[:n]), list(arrays[n:]))

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    log_var: np.ndarray


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    rng = nm.Rng(nm.splitmix64(seed, 0))
    enc = nm.init_params(config.encoder_spec, rng)
    dec = nm.init_params(config.decoder_spec, rng)
    return ModelParams(config, enc, dec)


def zero_model(config: ModelConfig) -> ModelParams:
    return ModelParams(config, nm.zero_params(config.encoder_spec), nm.zero_params(config.decoder_spec))


def _as_pixels(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c = params.config
    if x.shape in ((c.pixels,), (c.image_height, c.image_width, c.channels)):
        return x.reshape(c.pixels)
    if x.ndim == 2 and x.shape[1] == c.pixels:
        return x
    d = c.pixels
    raise ConfigError("image", f"shape {x.shape} does not match {d} pixels")


def encode(params: ModelParams, x) -> GaussianPosterior:
    """Posterior parameters for one image (flat or HxWxC) or a batch of flat rows."""
    x = _as_pixels(params, x)
    out, _ = nm.mlp_forward(params.config.encoder_spec, params.encoder, x)
    j = params.config.latent_dim
    return GaussianPosterior(out[..., :j], out[..., j:])


def sample_latent(post: GaussianPosterior, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != np.shape(post.mu)[-1]:
        raise ConfigError("eps", f"length {eps.shape[-1]} != latent dim {np.shape(post.mu)[-1]}")
    return post.mu + np.exp(0.5 * post.log_var) * eps


def decode(params: ModelParams, z) -> np.ndarray:
    """Decoded flat image(s) with pixels in (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.config.latent_dim:
        raise ConfigError("z", f"length {z.shape[-1]} != latent dim {params.config.latent_dim}")
    out, _ = nm.mlp_forward(params.config.decoder_spec, params.decoder, z)
    return out


def decode_image(params: ModelParams, z) -> np.ndarray:
    c = params.config
    return decode(params, z).reshape(c.image_height, c.image_width, c.channels)


def kl_divergence(post: GaussianPosterior):
    """KL(q || N(0, I)) summed over the last axis."""
    mu, lv = np.asarray(post.mu), np.asarray(post.log_var)
    return -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv), axis=-1)


def recon_log_likelihood(x, x_hat, likelihood: str = "gaussian_unit_variance"):
    """log p(x | z) summed over the last axis."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ConfigError("image", f"shapes differ: {x.shape} vs {x_hat.shape}")
    if likelihood == "gaussian_unit_variance":
        d = x.shape[-1]
        r = x - x_hat
        return -0.5 * np.sum(r * r, axis=-1) - 0.5 * d * np.log(2.0 * np.pi)
    if likelihood == "bernoulli":
        p = np.clip(x_hat, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
        return np.sum(x * np.log(p) + (1.0 - x) * np.log(1.0 - p), axis=-1)
    raise ConfigError("likelihood", f"unknown likelihood {likelihood!r}")


def _recon_grad(x, x_hat, likelihood):
    """d(-log p(x|z)) / d x_hat."""
    if likelihood == "gaussian_unit_variance":
        return x_hat - x
    inside = (x_hat >= BERNOULLI_CLAMP) & (x_hat <= 1.0 - BERNOULLI_CLAMP)
    p = np.clip(x_hat, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
    return np.where(inside, -x / p + (1.0 - x) / (1.0 - p), 0.0)


def elbo_estimate(params: ModelParams, x, eps_samples) -> float:
    """SGVB estimate: analytic -KL plus the mean reconstruction term over the L samples."""
    x = _as_pixels(params, x)
    eps = np.atleast_2d(np.asarray(eps_samples, dtype=np.float64))
    post = encode(params, x)
    recon = recon_log_likelihood(
        np.broadcast_to(x, (len(eps), x.size)),
        decode(params, sample_latent(post, eps)),
        params.config.likelihood,
    )
    return float(-kl_divergence(post) + np.mean(recon))


def per_sample_losses(params: ModelParams, batch, eps) -> np.ndarray:
    """Negative ELBO per datapoint; ``eps`` has shape (B, L, J)."""
    batch = np.asarray(batch, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    post = encode(params, batch)
    b, l, j = eps.shape
    z = sample_latent(GaussianPosterior(post.mu[:, None, :], post.log_var[:, None, :]), eps)
    x_hat = decode(params, z.reshape(b * l, j))
    x_rep = np.repeat(batch, l, axis=0)
    recon = recon_log_likelihood(x_rep, x_hat, params.config.likelihood).reshape(b, l)
    return kl_divergence(post) - recon.mean(axis=1)


def loss_and_grads(params: ModelParams, batch, eps):
    """Mean negative ELBO over the batch and its exact gradient.

    ``batch`` is (B, D); ``eps`` is (B, L, J) standard-normal noise. The
    gradient is returned as a ``ModelParams`` holding derivative arrays.
    """
    cfg = params.config
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0 or batch.shape[1] != cfg.pixels:
        raise ConfigError("batch", f"expected nonempty (B, {cfg.pixels}) array, got {batch.shape}")
    eps = np.asarray(eps, dtype=np.float64)
    b, l, j = eps.shape
    if b != batch.shape[0] or j != cfg.latent_dim:
        raise ConfigError("eps", f"noise shape {eps.shape} incompatible with batch {batch.shape}")

    enc_spec, dec_spec = cfg.encoder_spec, cfg.decoder_spec
    enc_out, enc_cache = nm.mlp_forward(enc_spec, params.encoder, batch)
    mu, lv = enc_out[:, :j], enc_out[:, j:]
    sigma = np.exp(0.5 * lv)
    z = (mu[:, None, :] + sigma[:, None, :] * eps).reshape(b * l, j)
    x_hat, dec_cache = nm.mlp_forward(dec_spec, params.decoder, z)
    x_rep = np.repeat(batch, l, axis=0)

    recon = recon_log_likelihood(x_rep, x_hat, cfg.likelihood).reshape(b, l)
    kl = -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv), axis=1)
    losses = kl - recon.mean(axis=1)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise TrainingError(f"non-finite loss at sample {bad[0]}", sample=int(bad[0]))
    loss = float(losses.mean())

    # each recon term enters the mean loss with weight 1/(B L)
    d_xhat = _recon_grad(x_rep, x_hat, cfg.likelihood) / (b * l)
    dec_grads, dz = nm.mlp_backward(dec_spec, params.decoder, dec_cache, d_xhat)
    dz = dz.reshape(b, l, j)
    d_mu = dz.sum(axis=1) + mu / b
    d_lv = (dz * eps).sum(axis=1) * 0.5 * sigma + 0.5 * (np.exp(lv) - 1.0) / b
    enc_grads, _ = nm.mlp_backward(enc_spec, params.encoder, enc_cache, np.hstack([d_mu, d_lv]))
    return loss, ModelParams(cfg, enc_grads, dec_grads)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    epochs: int = 200
    mc_samples: int = 1
    seed: int = 1
    learning_rate: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples", f"must be >= 1, got {self.mc_samples}")
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be >= 0, got {self.epochs}")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay", f"must lie in (0, 1), got {self.decay}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", f"must be positive, got {self.epsilon}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate", f"must be >= 0, got {self.learning_rate}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    checksum: str = ""


def train(params: ModelParams, data, cfg: TrainConfig, callback=None):
    """AEVB: shuffled minibatches, reparameterized noise, RMSprop updates.

    ``data`` is an (N, D) array of flattened images. Returns the trained
    params and a ``TrainReport`` whose history holds the per-epoch mean loss.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("dataset", "training data must be a nonempty (N, D) array")
    if data.shape[1] != params.config.pixels:
        raise ConfigError("dataset", f"images have {data.shape[1]} pixels, model expects {params.config.pixels}")
    n, j = data.shape[0], params.config.latent_dim
    rng = nm.Rng(nm.splitmix64(cfg.seed, 1))
    state = nm.RmspropState.fresh(params.arrays(), cfg.decay, cfg.epsilon, cfg.learning_rate)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            eps = rng.normal(len(idx) * cfg.mc_samples * j).reshape(len(idx), cfg.mc_samples, j)
            try:
                loss, grads = loss_and_grads(params, data[idx], eps)
            except TrainingError as exc:
                raise TrainingError(
                    f"epoch {epoch} batch {bi}: {exc}", epoch=epoch, batch=bi, sample=exc.sample
                ) from exc
            new_arrays, state = nm.rmsprop_step(params.arrays(), grads.arrays(), state)
            params = params.with_arrays(new_arrays)
            total += loss * len(idx)
        report.history.append(total / n)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.6f", epoch, report.history[-1])
        if callback is not None:
            callback(epoch, report.history[-1])
    report.checksum = params.checksum()
    return params, report


# -- checkpoint file ------------------------------------------------------

CHECKPOINT_MAGIC = b"LNAVCKP1"
CHECKPOINT_VERSION = 1


def _layer_arrays(params: ModelParams):
    """Arrays in file order: trunk layers, mean head, log-var head, decoder."""
    j = params.config.latent_dim
    enc = params.encoder
    w_last, b_last = enc[-2], enc[-1]
    out = list(enc[:-2])
    out += [w_last[:j], b_last[:j], w_last[j:], b_last[j:]]
    out += list(params.decoder)
    return out


def save_checkpoint(params: ModelParams, path) -> None:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(params))


def checkpoint_bytes(params: ModelParams) -> bytes:
    c = params.config
    trunk = [c.pixels, *c.encoder_hidden]
    dec = [c.latent_dim, *c.decoder_hidden, c.pixels]
    header = CHECKPOINT_MAGIC + struct.pack(
        "<6I", CHECKPOINT_VERSION, c.latent_dim, c.image_height, c.image_width, c.channels,
        LIKELIHOODS.index(c.likelihood),
    )
    header += struct.pack(f"<I{len(trunk)}I", len(trunk), *trunk)
    header += struct.pack(f"<I{len(dec)}I", len(dec), *dec)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in _layer_arrays(params))
    return header + body


def load_checkpoint(path):
    """Returns ``(params, config)``."""
    return parse_checkpoint(Path(path).read_bytes())


def parse_checkpoint(data: bytes):
    def need(n):
        if len(data) < n:
            raise TruncatedFileError(n, len(data))

    need(8)
    if data[:8] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad magic {data[:8]!r}, expected {CHECKPOINT_MAGIC!r}")
    need(32)
    version, j, h, w, ch, lk = struct.unpack_from("<6I", data, 8)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    if lk >= len(LIKELIHOODS):
        raise FormatError(f"unknown likelihood code {lk}")
    pos = 32
    sizes = []
    for _ in range(2):
        need(pos + 4)
        (count,) = struct.unpack_from("<I", data, pos)
        need(pos + 4 + 4 * count)
        sizes.append(list(struct.unpack_from(f"<{count}I", data, pos + 4)))
        pos += 4 + 4 * count
    trunk, dec = sizes
    try:
        config = ModelConfig(j, h, w, ch, tuple(trunk[1:]), tuple(dec[1:-1]), LIKELIHOODS[lk])
    except ConfigError as exc:
        raise FormatError(f"invalid header: {exc}") from exc
    if not trunk or trunk[0] != config.pixels or len(dec) < 2 or dec[0] != j or dec[-1] != config.pixels:
        raise FormatError("layer sizes inconsistent with image dims and latent dim")

    template = _layer_arrays(zero_model(config))
    expected = pos + 8 * sum(a.size for a in template)
    need(expected)
    if len(data) > expected:
        raise FormatError(f"trailing bytes: expected {expected}, got {len(data)}")
    arrays = []
    for a in template:
        arrays.append(np.frombuffer(data, dtype="<f8", count=a.size, offset=pos).astype(np.float64).reshape(a.shape))
        pos += 8 * a.size
    n_trunk = len(trunk) - 1
    trunk_arrays = arrays[:2 * n_trunk]
    wm, bm, wl, bl = arrays[2 * n_trunk:2 * n_trunk + 4]
    encoder = trunk_arrays + [np.vstack([wm, wl]), np.concatenate([bm, bl])]
    decoder = arrays[2 * n_trunk + 4:]
    return ModelParams(config, encoder, decoder), config
