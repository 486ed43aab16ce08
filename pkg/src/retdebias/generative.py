"""Trainable latent-variable generative model: a deterministic autoencoder
with a diagonal-Gaussian prior fitted to the training encodings.

The decoder is the only image source for sampled latents, and decode is a
pure function, so every (latent, image) pair can be regenerated exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .errors import InvalidArgumentError
from .seeds import derive

PSEUDO_HEALTHY = "healthy"
PSEUDO_REFERABLE = "referable"
PSEUDO_LIGHTER = "lighter"
PSEUDO_DARKER = "darker"

GENERATIVE_MAGIC = b"DBFGPACK"
GENERATIVE_VERSION = 1


@dataclass
class GenerativeModel:
    encoder: nn.ModelParams  # image -> w, identity output
    decoder: nn.ModelParams  # w -> image, sigmoid output
    latent_dim: int
    prior_mean: np.ndarray
    prior_cov_diag: np.ndarray

    def __post_init__(self):
        self.prior_mean = np.asarray(self.prior_mean, dtype=np.float64)
        self.prior_cov_diag = np.asarray(self.prior_cov_diag, dtype=np.float64)
        if self.latent_dim < 1:
            raise InvalidArgumentError("latent_dim must be >= 1")
        if self.encoder.output_dim != self.latent_dim or self.decoder.input_dim != self.latent_dim:
            raise InvalidArgumentError("encoder/decoder latent dims do not match latent_dim")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise InvalidArgumentError("decode(encode(x)) would change shape")
        if self.prior_mean.shape != (self.latent_dim,) or self.prior_cov_diag.shape != (self.latent_dim,):
            raise InvalidArgumentError("prior vectors must have length latent_dim")
        if not (self.prior_cov_diag > 0).all():
            raise InvalidArgumentError("prior_cov_diag must be strictly positive")

    @property
    def image_dim(self) -> int:
        return self.decoder.output_dim


@dataclass
class LatentPair:
    w: np.ndarray
    image: np.ndarray  # 2-D grid, equal to decode(w) reshaped
    pseudo_dr: str | None = None  # healthy | referable, assigned by the DR classifier
    pseudo_ra: str | None = None  # lighter | darker, assigned by the appearance classifier


def encode(model: GenerativeModel, images: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(model.encoder, images)
    return out


def decode(model: GenerativeModel, w: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(model.decoder, w)
    return out


def train_generative(
    images: np.ndarray,
    latent_dim: int,
    config: nn.TrainConfig,
    hidden: int = 128,
) -> GenerativeModel:
    """Train the autoencoder on flattened images with mean-squared
    reconstruction loss, then fit the latent prior to the training encodings.

    The encoder is trained on mean-centered inputs (otherwise bias terms soak
    up the static scene and the latent path never learns the per-image
    signal); the centering is folded back into the first encoder layer so the
    returned model consumes raw images.
    """
    if latent_dim < 1:
        raise InvalidArgumentError("latent_dim must be >= 1")
    X = np.asarray(images, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError("training images must be a non-empty (n, d) array")
    d = X.shape[1]
    mu = X.mean(axis=0)
    Xc = X - mu
    encoder = nn.init_params(
        (d, hidden, latent_dim), ("relu", "identity"), derive(config.seed, "encoder"),
        config.weight_init_scale,
    )
    decoder = nn.init_params(
        (latent_dim, hidden, d), ("relu", "sigmoid"), derive(config.seed, "decoder"),
        config.weight_init_scale,
    )
    rng = np.random.Generator(np.random.PCG64(derive(config.seed, "shuffle")))
    n = X.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            w, enc_cache = nn.forward(encoder, Xc[idx])
            recon, dec_cache = nn.forward(decoder, w)
            derr = 2.0 * (recon - X[idx]) / recon.size
            dec_grads, dw = nn.backward(decoder, dec_cache, derr)
            enc_grads, _ = nn.backward(encoder, enc_cache, dw)
            for layer, (gw, gb) in zip(decoder.layers, dec_grads):
                layer.weights -= config.learning_rate * gw
                layer.bias -= config.learning_rate * gb
            for layer, (gw, gb) in zip(encoder.layers, enc_grads):
                layer.weights -= config.learning_rate * gw
                layer.bias -= config.learning_rate * gb
    first = encoder.layers[0]
    encoder.layers[0] = nn.Layer(
        first.weights, first.bias - first.weights @ mu, first.activation
    )
    # rotate the latent basis to the principal axes of the training encodings:
    # the diagonal prior then carries the full variance of each independent
    # direction instead of losing the correlated spread to off-diagonals
    codes, _ = nn.forward(encoder, X)
    centered = codes - codes.mean(axis=0)
    cov = centered.T @ centered / max(len(codes) - 1, 1)
    _, eigvecs = np.linalg.eigh(cov)
    rot = eigvecs.T  # rows are principal directions
    enc_out = encoder.layers[-1]
    encoder.layers[-1] = nn.Layer(rot @ enc_out.weights, rot @ enc_out.bias, enc_out.activation)
    dec_in = decoder.layers[0]
    decoder.layers[0] = nn.Layer(dec_in.weights @ rot.T, dec_in.bias, dec_in.activation)
    codes, _ = nn.forward(encoder, X)
    prior_mean = codes.mean(axis=0)
    prior_cov = np.maximum(codes.var(axis=0), 1e-12)
    return GenerativeModel(encoder, decoder, latent_dim, prior_mean, prior_cov)


def reconstruction_mse(model: GenerativeModel, images: np.ndarray) -> float:
    recon = decode(model, encode(model, images))
    return float(((recon - images) ** 2).mean())


def sample_pairs(model: GenerativeModel, n: int, seed: int) -> list[LatentPair]:
    """Draw latents from the fitted prior and decode them; deterministic in seed."""
    if n < 0:
        raise InvalidArgumentError("n must be >= 0")
    if n == 0:
        return []
    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.standard_normal((n, model.latent_dim)) * np.sqrt(model.prior_cov_diag) + model.prior_mean
    images = decode(model, w)
    side = int(round(np.sqrt(model.image_dim)))
    return [LatentPair(w[i].copy(), images[i].reshape(side, side).copy()) for i in range(n)]


def pseudo_label_pairs(
    pairs: list[LatentPair],
    b_dr_dls: nn.ModelParams,
    ra_dls: nn.ModelParams,
) -> list[LatentPair]:
    """Attach classifier-assigned labels: argmax of each image classifier.

    DR classifier class 1 = referable; appearance classifier class 1 = darker.
    """
    if not pairs:
        return []
    dim = pairs[0].image.size
    for clf, name in ((b_dr_dls, "DR classifier"), (ra_dls, "appearance classifier")):
        if clf.input_dim != dim:
            raise InvalidArgumentError(
                f"{name} input dim {clf.input_dim} does not match image size {dim}"
            )
    flat = np.stack([p.image.reshape(-1) for p in pairs])
    dr_idx = nn.predict_proba(b_dr_dls, flat).argmax(axis=1)
    ra_idx = nn.predict_proba(ra_dls, flat).argmax(axis=1)
    labeled = []
    for pair, di, ri in zip(pairs, dr_idx, ra_idx):
        labeled.append(
            replace(
                pair,
                pseudo_dr=PSEUDO_REFERABLE if di == 1 else PSEUDO_HEALTHY,
                pseudo_ra=PSEUDO_DARKER if ri == 1 else PSEUDO_LIGHTER,
            )
        )
    return labeled


# --- checkpoint container ----------------------------------------------
#
# magic "DBFGPACK", version u16, latent_dim u32, then two length-prefixed
# sections in the dense-model checkpoint format (encoder, decoder), then the
# prior mean and diagonal covariance as little-endian float64 vectors.


def generative_to_bytes(model: GenerativeModel) -> bytes:
    enc = nn.params_to_bytes(model.encoder)
    dec = nn.params_to_bytes(model.decoder)
    out = [
        GENERATIVE_MAGIC,
        struct.pack("<HI", GENERATIVE_VERSION, model.latent_dim),
        struct.pack("<Q", len(enc)),
        enc,
        struct.pack("<Q", len(dec)),
        dec,
        np.ascontiguousarray(model.prior_mean, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.prior_cov_diag, dtype="<f8").tobytes(),
    ]
    return b"".join(out)


def generative_from_bytes(data: bytes) -> GenerativeModel:
    if data[: len(GENERATIVE_MAGIC)] != GENERATIVE_MAGIC:
        raise InvalidArgumentError("bad generative checkpoint magic")
    offset = len(GENERATIVE_MAGIC)
    version, latent_dim = struct.unpack_from("<HI", data, offset)
    offset += 6
    if version != GENERATIVE_VERSION:
        raise InvalidArgumentError(f"unsupported generative checkpoint version {version}")
    (enc_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    encoder = nn.params_from_bytes(data[offset : offset + enc_len])
    offset += enc_len
    (dec_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    decoder = nn.params_from_bytes(data[offset : offset + dec_len])
    offset += dec_len
    mean = np.frombuffer(data, dtype="<f8", count=latent_dim, offset=offset).copy()
    offset += latent_dim * 8
    cov = np.frombuffer(data, dtype="<f8", count=latent_dim, offset=offset).copy()
    offset += latent_dim * 8
    if offset != len(data):
        raise InvalidArgumentError("trailing bytes in generative checkpoint")
    return GenerativeModel(encoder, decoder, latent_dim, mean, cov)


def save_generative(model: GenerativeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(generative_to_bytes(model))


def load_generative(path) -> GenerativeModel:
    with open(path, "rb") as fh:
        return generative_from_bytes(fh.read())
