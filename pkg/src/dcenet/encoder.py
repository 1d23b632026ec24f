"""Two-branch spatial-temporal encoder.

Each branch embeds its per-step input (Conv1d -> ReLU -> Linear -> ReLU),
runs stacked self-attention and then an LSTM whose final hidden state is the
branch encoding.  The trajectory branch reads per-step offsets; the map branch
reads flattened dynamic maps.  A fully connected layer fuses the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionLayer, self_attention_encode
from .autodiff import Tensor
from .dynmap import MapConfig
from .nn import Conv1d, Linear, LstmCell, Module


@dataclass
class EncoderConfig:
    d_embed: int = 64
    d_k: int = 64
    heads: int = 2
    attention_layers: int = 2
    lstm_hidden: int = 64
    fusion_dim: int = 64
    use_dynamic_maps: bool = True
    position_encoding: str = "each"
    residual: bool = False
    kernel_size: int = 3
    map_config: MapConfig = MapConfig()

    def __post_init__(self):
        if self.heads < 1 or self.d_k % self.heads != 0:
            raise ValueError(f"heads={self.heads} must divide d_k={self.d_k}")
        if self.attention_layers < 1:
            raise ValueError("attention_layers must be >= 1")


class Embedding(Module):
    def __init__(self, in_channels: int, d_embed: int, rng: np.random.Generator, kernel_size: int = 3):
        self.conv = Conv1d(in_channels, d_embed, rng, kernel_size)
        self.fc = Linear(d_embed, d_embed, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return embed(self, x)


def embed(layer: Embedding, x: Tensor) -> Tensor:
    return ad.relu(layer.fc(ad.relu(layer.conv(x))))


class Branch(Module):
    def __init__(self, in_channels: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Embedding(in_channels, cfg.d_embed, rng, cfg.kernel_size)
        dims = [cfg.d_embed] + [cfg.d_k] * cfg.attention_layers
        self.attention = [
            AttentionLayer(dims[i], cfg.d_k, cfg.heads, rng, residual=cfg.residual and dims[i] == cfg.d_k)
            for i in range(cfg.attention_layers)
        ]
        self.lstm = LstmCell(cfg.d_k, cfg.lstm_hidden, rng)

    def __call__(self, x_seq: Tensor) -> Tensor:
        return encode_branch(self, x_seq)


def encode_branch(branch: Branch, x_seq) -> Tensor:
    """``[..., T, c]`` -> ``[..., lstm_hidden]`` (final LSTM hidden state)."""
    x_seq = ad.as_tensor(x_seq)
    if x_seq.shape[-2] < 1:
        raise ValueError("encode_branch needs at least one step")
    feats = self_attention_encode(branch.attention, branch.embedding(x_seq), branch.cfg.position_encoding)
    h, c = branch.lstm.initial_state(feats.shape[:-2])
    for t in range(feats.shape[-2]):
        h, c = branch.lstm(feats[..., t, :], h, c)
    return h


class Encoder(Module):
    """Trajectory branch, optional map branch and the fusion layer."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, traj_channels: int = 2):
        self.cfg = cfg
        self.traj_branch = Branch(traj_channels, cfg, rng)
        if cfg.use_dynamic_maps:
            self.map_branch = Branch(cfg.map_config.flat_size, cfg, rng)
            self.fusion = Linear(2 * cfg.lstm_hidden, cfg.fusion_dim, rng)
        else:
            self.map_branch = None
            self.fusion = Linear(cfg.lstm_hidden, cfg.fusion_dim, rng)

    def __call__(self, traj_seq, map_seq=None) -> Tensor:
        if self.map_branch is not None and map_seq is None:
            raise ValueError("encoder configured with dynamic maps but none were given")
        traj_enc = self.traj_branch(traj_seq)
        map_enc = self.map_branch(map_seq) if self.map_branch is not None else None
        return fuse(self, traj_enc, map_enc)


def fuse(encoder: Encoder, traj_enc: Tensor, map_enc: Tensor | None) -> Tensor:
    if (map_enc is not None) != encoder.cfg.use_dynamic_maps:
        raise ValueError(
            f"map encoding {'given' if map_enc is not None else 'missing'} "
            f"but use_dynamic_maps={encoder.cfg.use_dynamic_maps}"
        )
    joint = traj_enc if map_enc is None else ad.concat([traj_enc, map_enc], axis=-1)
    return ad.relu(encoder.fusion(joint))
