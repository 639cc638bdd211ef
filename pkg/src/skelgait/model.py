"""Full network: graph-conv backbone, pyramid mapping, normalized embedding, arcface head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import TrainConfig
from .gcn import Backbone
from .jrpm import PyramidMapping, build_pyramid
from .losses import ArcfaceHead
from .numerics import CheckpointError, Rng, load_checkpoint, save_checkpoint
from .skeleton import build_graph, build_layout


class GaitModel(nn.Module):
    def __init__(self, cfg: TrainConfig, num_classes: int, rng: Rng):
        super().__init__()
        layout = build_layout(cfg.layout)
        self.graph = build_graph(layout, cfg.alpha)
        self.backbone = Backbone(self.graph, rng, cfg.channels, cfg.strides, cfg.kt)
        self.spec = build_pyramid(layout, cfg.scales, cfg.pool_mode)
        frames_out = self.backbone.out_frames(cfg.frames)
        self.mapping = PyramidMapping(self.spec, self.backbone.out_channels, frames_out, rng, cfg.out_dim)
        self.head = ArcfaceHead(num_classes, cfg.out_dim * self.spec.num_strips, rng)

    @property
    def embedding_dim(self) -> int:
        return self.head.W.shape[1]

    def strips(self, x: torch.Tensor) -> torch.Tensor:
        """N x D_out x B strip features."""
        return self.mapping(self.backbone(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """N x (D_out * B) L2-normalized embeddings."""
        return F.normalize(self.strips(x).flatten(1), dim=1)


def save_model(model: GaitModel, path) -> None:
    save_checkpoint(path, model.state_dict())


def load_model(cfg: TrainConfig, path) -> GaitModel:
    tensors = load_checkpoint(path)
    if "head.W" not in tensors:
        raise CheckpointError(f"{path}: no arcface head record")
    model = GaitModel(cfg, int(tensors["head.W"].shape[0]), Rng(0))
    state = model.state_dict()
    missing = sorted(set(state) - set(tensors))
    unexpected = sorted(set(tensors) - set(state))
    if missing or unexpected:
        raise CheckpointError(f"{path}: checkpoint does not match config "
                              f"(missing {missing[:3]}, unexpected {unexpected[:3]})")
    for name, value in tensors.items():
        if tuple(value.shape) != tuple(state[name].shape):
            raise CheckpointError(f"{path}: {name} has shape {tuple(value.shape)}, "
                                  f"config expects {tuple(state[name].shape)}")
        state[name] = value.to(state[name].dtype)
    model.load_state_dict(state)
    return model
