"""Conditional VAE around the two encoders: recognition head, decoder, loss,
sampling-based prediction, training loop and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import PRED_LEN, Window
from .dynmap import build_stack
from .encoder import Encoder, EncoderConfig
from .nn import Linear, LstmCell, Module, Optimizer
from .ranking import PredictionSet, score_and_select


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    z_dim: int = 32
    recog_hidden: int = 64
    decoder_hidden: int = 64
    pred_len: int = PRED_LEN
    seed: int = 0


@dataclass
class LatentGaussian:
    """Diagonal Gaussian held as ``mu`` and ``log_sigma``."""

    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> Tensor:
        return ad.exp(self.log_sigma)


class DcenetModel(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        enc = cfg.encoder
        self.encoder_x = Encoder(enc, rng)
        # the future encoder sees the trajectory only
        y_cfg = EncoderConfig(**{**enc.__dict__, "use_dynamic_maps": False})
        self.encoder_y = Encoder(y_cfg, rng)
        self.recog_fc1 = Linear(2 * enc.fusion_dim, cfg.recog_hidden, rng)
        self.recog_fc2 = Linear(cfg.recog_hidden, cfg.recog_hidden, rng)
        self.recog_mu = Linear(cfg.recog_hidden, cfg.z_dim, rng)
        self.recog_log_sigma = Linear(cfg.recog_hidden, cfg.z_dim, rng)
        self.decoder = LstmCell(cfg.z_dim + enc.fusion_dim + 2, cfg.decoder_hidden, rng)
        self.decoder_out = Linear(cfg.decoder_hidden, 2, rng)

    @property
    def uses_maps(self) -> bool:
        return self.cfg.encoder.use_dynamic_maps


# ----------------------------------------------------------------------- batch


@dataclass
class Batch:
    """Stacked network inputs for a list of windows (leading axis = window)."""

    traj: np.ndarray  # B x T x 2 observed offsets
    maps: np.ndarray | None  # B x T x (H*W*3)
    last_pos: np.ndarray  # B x 2
    last_offset: np.ndarray  # B x 2
    future: np.ndarray | None = None  # B x T' x 2
    future_offsets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.traj)

    def take(self, idx) -> "Batch":
        pick = lambda a: None if a is None else a[idx]
        return Batch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))


def make_batch(windows, cfg: EncoderConfig | None = None, with_maps: bool = True) -> Batch:
    cfg = cfg or EncoderConfig()
    windows = list(windows)
    maps = None
    if with_maps and cfg.use_dynamic_maps:
        maps = np.stack([build_stack(w, cfg.map_config).flatten() for w in windows])
    has_future = all(w.future is not None for w in windows)
    return Batch(
        traj=np.stack([w.observed_offsets for w in windows]),
        maps=maps,
        last_pos=np.stack([w.last_pos for w in windows]),
        last_offset=np.stack([w.last_offset for w in windows]),
        future=np.stack([w.future for w in windows]) if has_future else None,
        future_offsets=np.stack([w.future_offsets() for w in windows]) if has_future else None,
    )


# ------------------------------------------------------------------ operations


def encode_observation(model: DcenetModel, batch: Batch) -> Tensor:
    return model.encoder_x(batch.traj, batch.maps if model.uses_maps else None)


def encode_future(model: DcenetModel, batch: Batch) -> Tensor:
    return model.encoder_y(batch.future_offsets)


def recognize(model: DcenetModel, enc_x: Tensor, enc_y: Tensor) -> LatentGaussian:
    h = ad.concat([enc_x, enc_y], axis=-1)
    h = ad.relu(model.recog_fc1(h))
    h = ad.relu(model.recog_fc2(h))
    return LatentGaussian(model.recog_mu(h), model.recog_log_sigma(h))


def reparameterize(g: LatentGaussian, eps) -> Tensor:
    """``z = mu + sigma * eps``."""
    return g.mu + g.sigma * ad.as_tensor(eps)


def kl_divergence(g: LatentGaussian) -> Tensor:
    """KL to the standard normal, summed over the last axis.

    ``0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma)``
    """
    sigma = g.sigma
    if np.any(sigma.data <= 0):
        raise ValueError("sigma must be strictly positive")
    terms = ad.square(g.mu) + ad.square(sigma) - 1.0 - 2.0 * g.log_sigma
    return 0.5 * ad.tsum(terms, axis=-1)


def kl_from_moments(mu, sigma) -> float:
    """Closed-form KL for plain arrays; rejects nonpositive sigma."""
    mu, sigma = np.asarray(mu, dtype=np.float64), np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return float(0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma)))


def decode(
    model: DcenetModel,
    z: Tensor,
    enc_x: Tensor,
    last_pos,
    last_offset,
    steps: int | None = None,
) -> Tensor:
    """Roll the decoder LSTM, returning absolute positions ``[..., steps, 2]``.

    Every step consumes ``[z, enc_x, previous offset]``; the first previous
    offset is the last observed one.
    """
    steps = model.cfg.pred_len if steps is None else steps
    if steps < 1:
        raise ValueError("decode needs steps >= 1")
    z, enc_x = ad.as_tensor(z), ad.as_tensor(enc_x)
    cond = ad.concat([z, enc_x], axis=-1)
    prev = ad.as_tensor(np.broadcast_to(np.asarray(last_offset, dtype=np.float64), cond.shape[:-1] + (2,)))
    h, c = model.decoder.initial_state(cond.shape[:-1])
    offsets = []
    for _ in range(steps):
        h, c = model.decoder(ad.concat([cond, prev], axis=-1), h, c)
        prev = model.decoder_out(h)
        offsets.append(prev)
    rel = ad.cumsum(ad.stack(offsets, axis=-2), axis=-2)
    origin = np.broadcast_to(np.asarray(last_pos, dtype=np.float64), cond.shape[:-1] + (2,))
    return rel + origin[..., None, :]


@dataclass
class LossTerms:
    total: Tensor
    recon: float
    kl: float


def loss(model: DcenetModel, batch: Batch, eps, kl_weight: float = 1.0) -> LossTerms:
    """Batch mean of ``sum_t ||Y_hat_t - Y_t||^2 + kl_weight * KL``.

    ``eps`` has shape ``B x z_dim``.
    """
    if batch.future is None:
        raise ValueError("loss needs windows with a future segment")
    enc_x = encode_observation(model, batch)
    enc_y = encode_future(model, batch)
    g = recognize(model, enc_x, enc_y)
    z = reparameterize(g, eps)
    pred = decode(model, z, enc_x, batch.last_pos, batch.last_offset, batch.future.shape[-2])
    recon = ad.tsum(ad.square(pred - batch.future), axis=(-2, -1))
    kl = kl_divergence(g)
    total = ad.mean(recon + kl_weight * kl)
    return LossTerms(total, float(recon.data.mean()), float(kl.data.mean()))


def window_loss(model: DcenetModel, window: Window, eps) -> Tensor:
    batch = make_batch([window], model.cfg.encoder)
    return loss(model, batch, np.asarray(eps, dtype=np.float64).reshape(1, -1)).total


# -------------------------------------------------------------------- predict


def _predict_encoded(model, enc_x: np.ndarray, last_pos, last_offset, n: int, rng) -> np.ndarray:
    eps = rng.standard_normal((n, model.cfg.z_dim))
    with ad.no_grad():
        tiled = np.broadcast_to(enc_x, (n,) + enc_x.shape)
        out = decode(model, Tensor(eps), Tensor(tiled), last_pos, last_offset)
    return out.data


def predict(model: DcenetModel, window: Window, n: int = 10, seed: int = 0) -> PredictionSet:
    """Sample ``n`` futures from the prior and rank them."""
    return predict_many(model, [window], n, seeds=[seed])[0]


def predict_many(model: DcenetModel, windows, n: int = 10, seeds=None, batch=None) -> list[PredictionSet]:
    """Per-window independent draws; window ``i`` uses ``seeds[i]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    windows = list(windows)
    if seeds is None:
        seeds = range(len(windows))
    batch = batch or make_batch(windows, model.cfg.encoder)
    with ad.no_grad():
        enc = encode_observation(model, batch).data
    out = []
    for i, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        trajs = _predict_encoded(model, enc[i], batch.last_pos[i], batch.last_offset[i], n, rng)
        if n == 1:
            out.append(PredictionSet(trajs, np.zeros(1), 0))
        else:
            out.append(score_and_select(trajs))
    return out


# ------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    kl_warmup: int = 0  # iterations of linear KL warm-up; 0 disables
    lr_decay: float = 1.0  # learning-rate factor reached at the last iteration
    seed: int = 0


def fit(
    model: DcenetModel,
    windows,
    cfg: TrainConfig = TrainConfig(),
    callback: Callable[[int, LossTerms], None] | None = None,
    batch: Batch | None = None,
) -> list[tuple[float, float, float]]:
    """Minibatch training; returns ``(recon, kl, total)`` per iteration."""
    batch = batch or make_batch(windows, model.cfg.encoder)
    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(model.parameters(), cfg.learning_rate, cfg.optimizer)
    n = len(batch)
    history = []
    order = rng.permutation(n)
    cursor = 0
    for it in range(cfg.iterations):
        if cfg.batch_size >= n:
            idx = np.arange(n)
        else:
            if cursor + cfg.batch_size > n:
                order, cursor = rng.permutation(n), 0
            idx = np.sort(order[cursor : cursor + cfg.batch_size])
            cursor += cfg.batch_size
        sub = batch.take(idx)
        eps = rng.standard_normal((len(idx), model.cfg.z_dim))
        w = 1.0 if cfg.kl_warmup <= 0 else min(1.0, (it + 1) / cfg.kl_warmup)
        opt.learning_rate = cfg.learning_rate * cfg.lr_decay ** (it / max(1, cfg.iterations - 1))
        opt.zero_grad()
        terms = loss(model, sub, eps, kl_weight=w)
        ad.backward(terms.total)
        opt.step()
        history.append((terms.recon, terms.kl, terms.recon + terms.kl))
        if callback is not None:
            callback(it, terms)
    return history


# ----------------------------------------------------------------- checkpoint

MAGIC = b"DCENET01"


def save_checkpoint(model: Module, path) -> None:
    """Write ``DCENET01`` then, per parameter in registration order:
    uint32 name length, UTF-8 name, uint32 rank, rank x uint32 dims and the
    values as little-endian float64 (C order).
    """
    out = bytearray(MAGIC)
    for name, p in model.named_parameters():
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape)
        out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class CheckpointError(ValueError):
    pass


def read_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: checkpoint version {buf[:8]!r} is not {MAGIC!r}")
    pos = 8
    params = {}
    while pos < len(buf):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + ln].decode()
        pos += ln
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * count
    return params


def load_checkpoint(model: Module, path) -> None:
    params = read_checkpoint(path)
    own = dict(model.named_parameters())
    if list(params) != list(own):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise CheckpointError(f"checkpoint does not match model (missing {missing}, unexpected {extra})")
    for name, value in params.items():
        if own[name].shape != value.shape:
            raise CheckpointError(f"{name}: shape {value.shape} != model {own[name].shape}")
        own[name].data[...] = value
