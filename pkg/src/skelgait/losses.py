"""Batch-hard triplet loss, additive-angular-margin softmax, and their weighted fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import Rng

COS_CLAMP = 1e-7


class BatchCompositionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionLossConfig:
    lam: float = 0.9
    triplet_margin: float = 0.2
    arcface_margin: float = 0.35
    arcface_scale: float = 30.0
    num_classes: int = 2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if min(self.triplet_margin, self.arcface_margin, self.arcface_scale) < 0:
            raise ValueError("margins and scale must be nonnegative")
        if self.num_classes < 2:
            raise ValueError("arcface needs at least 2 classes")


class ArcfaceHead(nn.Module):
    """Class-center weights; rows are L2-normalized on every use."""

    def __init__(self, num_classes: int, dim: int, rng: Rng):
        super().__init__()
        self.W = nn.Parameter(rng.uniform_tensor((num_classes, dim), 1 / math.sqrt(dim)))

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        """Cosines between normalized embeddings and class weights, N x num_classes."""
        return F.normalize(emb, dim=1) @ F.normalize(self.W, dim=1).T


def pairwise_distances(emb: torch.Tensor) -> torch.Tensor:
    # direct differences: exact zero diagonal and a zero (not NaN) gradient there
    return torch.cdist(emb, emb, compute_mode="donot_use_mm_for_euclid_dist")


def _check_batch(labels: torch.Tensor) -> None:
    uniq, counts = torch.unique(labels, return_counts=True)
    if uniq.numel() < 2:
        raise BatchCompositionError("batch-hard triplet loss needs at least two identities")
    if (counts < 2).any():
        lone = uniq[counts < 2].tolist()
        raise BatchCompositionError(f"identities {lone} have a single sample in the batch")


def hardest_pairs(dist: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Hardest positive (self excluded) and hardest negative distance for every anchor."""
    same = labels[:, None] == labels[None, :]
    self_mask = torch.eye(len(labels), dtype=torch.bool, device=dist.device)
    pos = dist.masked_fill(~same | self_mask, float("-inf")).amax(dim=1)
    neg = dist.masked_fill(same, float("inf")).amin(dim=1)
    return pos, neg


def batch_hard_triplet(emb: torch.Tensor, labels: torch.Tensor, margin: float = 0.2) -> torch.Tensor:
    _check_batch(labels)
    hp, hn = hardest_pairs(pairwise_distances(emb), labels)
    return F.relu(margin + hp - hn).mean()


def arcface_logits(cos: torch.Tensor, labels: torch.Tensor, margin: float, scale: float) -> torch.Tensor:
    cos = cos.clamp(-1 + COS_CLAMP, 1 - COS_CLAMP)
    theta = torch.acos(cos)
    target = F.one_hot(labels, cos.shape[1]).to(cos.dtype)
    return scale * torch.cos(theta + margin * target)


def arcface(emb: torch.Tensor, labels: torch.Tensor, head: ArcfaceHead, margin: float = 0.35,
            scale: float = 30.0) -> torch.Tensor:
    if head.num_classes < 2:
        raise ValueError("arcface needs at least 2 classes")
    if labels.numel() and int(labels.max()) >= head.num_classes:
        raise ValueError(f"label {int(labels.max())} out of range for {head.num_classes} classes")
    return F.cross_entropy(arcface_logits(head(emb), labels, margin, scale), labels)


def fusion_loss(emb: torch.Tensor, labels: torch.Tensor, head: ArcfaceHead, cfg: FusionLossConfig,
                return_parts: bool = False):
    """``lam * triplet + (1 - lam) * arcface``; with return_parts also the two components."""
    tri = batch_hard_triplet(emb, labels, cfg.triplet_margin)
    arc = arcface(emb, labels, head, cfg.arcface_margin, cfg.arcface_scale)
    total = cfg.lam * tri + (1.0 - cfg.lam) * arc
    if return_parts:
        return total, tri, arc
    return total

