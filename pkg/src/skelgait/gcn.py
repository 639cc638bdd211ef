"""Spatio-temporal graph convolution backbone.

Tensors are laid out N x C x T x V (batch, channels, frames, joints).
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import DTYPE, DimensionError, Rng
from .skeleton import PartitionedGraph

DEFAULT_CHANNELS = (64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 2, 1, 1, 2, 1, 1)
DEFAULT_KT = 9


def spatial_graph_conv(f_in: torch.Tensor, a_norm: torch.Tensor, weight: torch.Tensor,
                       mask: torch.Tensor) -> torch.Tensor:
    """``sum_k W_k (f_in x (A_k * M_k))``.

    a_norm, mask: K x V x V with ``[k, i, j]`` the weight of neighbour j at root i.
    weight: K x C_in x C_out.
    """
    v = f_in.shape[-1]
    if a_norm.shape[-1] != v or a_norm.shape[-2] != v:
        raise DimensionError(f"input has {v} joints but graph is {tuple(a_norm.shape[-2:])}")
    if weight.shape[1] != f_in.shape[1]:
        raise DimensionError(f"input has {f_in.shape[1]} channels, weight expects {weight.shape[1]}")
    adj = a_norm * mask
    # channel mix first keeps the K-fold intermediate at the smaller of C_in/C_out when C_out <= C_in
    if weight.shape[2] <= weight.shape[1]:
        h = torch.einsum("nctj,kcd->nkdtj", f_in, weight)
        return torch.einsum("nkdtj,kij->ndti", h, adj)
    h = torch.einsum("nctj,kij->nkcti", f_in, adj)
    return torch.einsum("nkcti,kcd->ndti", h, weight)


def temporal_conv(f: torch.Tensor, kernel: torch.Tensor, stride: int = 1) -> torch.Tensor:
    """Per-joint 1-D convolution along time; kernel is C_out x C_in x kt with kt odd."""
    kt = kernel.shape[-1]
    if kt % 2 != 1:
        raise DimensionError(f"temporal kernel width must be odd, got {kt}")
    if kernel.shape[1] != f.shape[1]:
        raise DimensionError(f"input has {f.shape[1]} channels, kernel expects {kernel.shape[1]}")
    return F.conv2d(f, kernel.unsqueeze(-1), stride=(stride, 1), padding=((kt - 1) // 2, 0))


def _bn(c: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(c, dtype=DTYPE)


class GcnBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, num_joints: int, rng: Rng, kt: int = DEFAULT_KT,
                 stride: int = 1, num_subsets: int = 3, residual: bool = True):
        super().__init__()
        if kt % 2 != 1:
            raise ValueError(f"kt must be odd, got {kt}")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.W = nn.Parameter(rng.uniform_tensor((num_subsets, c_in, c_out), 1 / math.sqrt(c_in * num_subsets)))
        self.M = nn.Parameter(torch.ones(num_subsets, num_joints, num_joints, dtype=DTYPE))
        self.K_t = nn.Parameter(rng.uniform_tensor((c_out, c_out, kt), 1 / math.sqrt(c_out * kt)))
        self.bn_spatial = _bn(c_out)
        self.bn_temporal = _bn(c_out)
        self.residual = residual
        self.project = None
        if residual and (c_in != c_out or stride != 1):
            self.project = nn.Parameter(rng.uniform_tensor((c_out, c_in), 1 / math.sqrt(c_in)))
            self.bn_project = _bn(c_out)

    def shortcut(self, x: torch.Tensor) -> torch.Tensor:
        if self.project is None:
            return x
        x = x[:, :, ::self.stride]
        return self.bn_project(torch.einsum("nctv,dc->ndtv", x, self.project))

    def forward(self, x: torch.Tensor, a_norm: torch.Tensor) -> torch.Tensor:
        y = F.relu(self.bn_spatial(spatial_graph_conv(x, a_norm, self.W, self.M)))
        y = self.bn_temporal(temporal_conv(y, self.K_t, self.stride))
        if self.residual:
            y = y + self.shortcut(x)
        return F.relu(y)


class Backbone(nn.Module):
    """Stack of GcnBlocks over a fixed partitioned graph."""

    def __init__(self, graph: PartitionedGraph, rng: Rng, channels: Sequence[int] = DEFAULT_CHANNELS,
                 strides: Sequence[int] | None = None, kt: int = DEFAULT_KT, in_channels: int = 2):
        super().__init__()
        channels = list(channels)
        strides = list(DEFAULT_STRIDES[:len(channels)] if strides is None else strides)
        if len(strides) != len(channels):
            raise ValueError(f"{len(channels)} channel entries but {len(strides)} strides")
        self.graph = graph
        self.register_buffer("a_norm", torch.as_tensor(graph.A_norm, dtype=DTYPE))
        v = graph.layout.joint_count
        blocks = []
        c_prev = in_channels
        for c, s in zip(channels, strides):
            blocks.append(GcnBlock(c_prev, c, v, rng, kt=kt, stride=s, num_subsets=graph.num_subsets))
            c_prev = c
        self.blocks = nn.ModuleList(blocks)
        self.channels, self.strides = channels, strides

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def out_frames(self, t: int) -> int:
        for s in self.strides:
            t = -(-t // s)
        return t

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.a_norm.shape[-1]:
            raise DimensionError(f"input has {x.shape[-1]} joints, graph has {self.a_norm.shape[-1]}")
        for block in self.blocks:
            x = block(x, self.a_norm)
        return x
