"""PK-batched training of the fusion loss and embedding extraction."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import TrainConfig
from .datapipe import DatasetIndex, pk_sample, sample_frames, to_tensor
from .evalproto import EmbeddingSet
from .losses import FusionLossConfig, fusion_loss
from .model import GaitModel, save_model
from .numerics import Rng, make_optimizer, set_deterministic

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "total", "triplet", "arcface")


@dataclass
class TrainResult:
    model: GaitModel
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def totals(self) -> np.ndarray:
        return np.array([h[1] for h in self.history])


def train(cfg: TrainConfig, index: DatasetIndex, out_dir=None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Optimize the fusion loss; with ``out_dir`` also write loss.csv and checkpoints."""
    cfg.validate()
    set_deterministic(cfg.threads)
    if len(index.identities("train")) < cfg.P:
        raise ValueError(f"train split has {len(index.identities('train'))} identities, P={cfg.P}")
    rng = Rng(cfg.seed)
    model = GaitModel(cfg, index.num_classes, rng.spawn())
    sampler = rng.spawn()
    loss_cfg = FusionLossConfig(cfg.lam, cfg.triplet_margin, cfg.arcface_margin, cfg.arcface_scale,
                                max(index.num_classes, 2))
    opt = make_optimizer(model.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
    result = TrainResult(model)

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # line-buffered so an interrupted run still leaves a complete log
        fh = (out_dir / "loss.csv").open("w", newline="", buffering=1)
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
    try:
        model.train()
        for it in range(1, cfg.iterations + 1):
            batch, ids = pk_sample(index, cfg.P, cfg.K, sampler)
            x = to_tensor([sample_frames(index.load(e), cfg.frames, sampler) for e in batch])
            labels = torch.tensor([index.train_labels[i] for i in ids])
            opt.zero_grad(set_to_none=False)
            total, tri, arc = fusion_loss(model(x), labels, model.head, loss_cfg, return_parts=True)
            total.backward()
            opt.step()
            row = (it, total.item(), tri.item(), arc.item())
            result.history.append(row)
            if writer is not None:
                writer.writerow([it] + [repr(v) for v in row[1:]])
            if on_step is not None:
                on_step(it, row[1])
            if out_dir is not None and it % cfg.checkpoint_every == 0:
                path = out_dir / f"checkpoint_{it:06d}.bin"
                save_model(model, path)
                result.checkpoints.append(path)
            if it == 1 or it % 50 == 0:
                log.info("iter %d loss %.5f (triplet %.5f arcface %.5f)", *row)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        path = out_dir / "checkpoint_final.bin"
        save_model(model, path)
        result.checkpoints.append(path)
    return result


@torch.no_grad()
def embed(model: GaitModel, index: DatasetIndex, split: str, frames: int, seed: int = 0,
          batch_size: int = 16) -> EmbeddingSet:
    """Embeddings of every clip in ``split``; frame sampling is seeded by ``seed``."""
    model.eval()
    rng = Rng(seed)
    entries = index.split(split)
    out = []
    for start in range(0, len(entries), batch_size):
        chunk = entries[start:start + batch_size]
        x = to_tensor([sample_frames(index.load(e), frames, rng) for e in chunk])
        out.append(model(x).numpy())
    emb = np.concatenate(out) if out else np.zeros((0, model.embedding_dim))
    return EmbeddingSet(emb, [e.identity for e in entries], [e.view_deg for e in entries],
                        [e.condition for e in entries], [e.clip_id for e in entries])
