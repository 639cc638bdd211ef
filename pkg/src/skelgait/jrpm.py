"""Joint-relationship pyramid: multi-scale body-part strip pooling plus per-strip
linear maps into the embedding space."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .numerics import DTYPE, DimensionError, Rng
from .skeleton import ConfigurationError, JointLayout

POOL_MODES = ("learned_kernel", "mean_plus_max")
DEFAULT_SCALES = (1, 2, 3)

# Joint groups per scale, OpenPose-18 ordering:
# 0 nose, 1 neck, 2-4 right arm, 5-7 left arm, 8-10 right leg, 11-13 left leg, 14-17 eyes/ears.
OPENPOSE18_GROUPS = {
    1: [tuple(range(18))],
    2: [(0, 1, 2, 3, 4, 5, 6, 7, 14, 15, 16, 17), (8, 9, 10, 11, 12, 13)],
    3: [(5, 6, 7, 8, 9, 10), (2, 3, 4, 11, 12, 13), (0, 1, 14, 15, 16, 17)],
    4: [(0, 1, 14, 15, 16, 17), (2, 3, 4), (5, 6, 7), (8, 9, 10), (11, 12, 13)],
    5: [(2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (11, 12), (12, 13),
        (0, 14, 15, 16, 17), (1,), (2, 8), (5, 11)],
    6: [(j,) for j in range(18)],
}

# Same body-part semantics on the 16-joint Kinect layout:
# 0 hip center, 1 spine, 2 shoulder center, 3 head, 4-6 left arm, 7-9 right arm,
# 10-12 left leg, 13-15 right leg.
KINECT16_GROUPS = {
    1: [tuple(range(16))],
    2: [(1, 2, 3, 4, 5, 6, 7, 8, 9), (0, 10, 11, 12, 13, 14, 15)],
    3: [(4, 5, 6, 13, 14, 15), (7, 8, 9, 10, 11, 12), (0, 1, 2, 3)],
    4: [(0, 1, 2, 3), (7, 8, 9), (4, 5, 6), (13, 14, 15), (10, 11, 12)],
    5: [(7, 8), (8, 9), (4, 5), (5, 6), (13, 14), (14, 15), (10, 11), (11, 12),
        (2, 3), (0, 1), (7, 13), (4, 10)],
    6: [(j,) for j in range(16)],
}

GROUP_TABLES = {"openpose18": OPENPOSE18_GROUPS, "kinect2d16": KINECT16_GROUPS}


@dataclass(frozen=True)
class PyramidSpec:
    layout_name: str
    num_joints: int
    scales: tuple[int, ...]
    groups: dict  # scale -> list of joint tuples
    pool_mode: str = "learned_kernel"

    @property
    def strips(self) -> list[tuple[int, int, tuple[int, ...]]]:
        """(scale, group index, joints) for every strip, scale-major."""
        return [(s, g, joints) for s in self.scales for g, joints in enumerate(self.groups[s])]

    @property
    def num_strips(self) -> int:
        return sum(len(self.groups[s]) for s in self.scales)

    def to_config(self) -> dict[str, str]:
        out = {"pyramid.layout": self.layout_name,
               "pyramid.scales": ",".join(map(str, self.scales)),
               "pyramid.pool_mode": self.pool_mode}
        for s in self.scales:
            out[f"pyramid.groups.{s}"] = ";".join(",".join(map(str, g)) for g in self.groups[s])
        return out


def build_pyramid(layout: JointLayout, scales: Sequence[int] = DEFAULT_SCALES,
                  pool_mode: str = "learned_kernel") -> PyramidSpec:
    if layout.name not in GROUP_TABLES:
        raise ConfigurationError(f"no grouping tables for layout {layout.name!r}")
    if pool_mode not in POOL_MODES:
        raise ConfigurationError(f"pool_mode must be one of {POOL_MODES}, got {pool_mode!r}")
    scales = tuple(int(s) for s in scales)
    table = GROUP_TABLES[layout.name]
    bad = [s for s in scales if s not in table]
    if bad or not scales:
        raise ConfigurationError(f"scale indices must be a nonempty subset of 1..6, got {list(scales)}")
    return PyramidSpec(layout.name, layout.joint_count, scales,
                       {s: [tuple(g) for g in table[s]] for s in scales}, pool_mode)


def jrpp_pool(f_st: torch.Tensor, spec: PyramidSpec,
              kernels: Sequence[torch.Tensor] | None = None) -> torch.Tensor:
    """Pool each strip of ``f_st`` (N x C x T x V) to N x C; returns N x C x B.

    learned_kernel: contract the strip with its J x T kernel (shared over channels).
    mean_plus_max: mean plus max over (T, J).
    """
    v = f_st.shape[-1]
    pooled = []
    for b, (s, g, joints) in enumerate(spec.strips):
        if max(joints) >= v:
            raise DimensionError(f"strip ({s},{g}) references joint {max(joints)} but input has {v}")
        part = f_st[..., list(joints)]  # N x C x T x J
        if spec.pool_mode == "learned_kernel":
            k = kernels[b]
            if k.shape != (len(joints), part.shape[2]):
                raise DimensionError(
                    f"strip ({s},{g}) kernel is {tuple(k.shape)}, strip is J={len(joints)} x T={part.shape[2]}")
            pooled.append(torch.einsum("nctj,jt->nc", part, k))
        else:
            flat = part.flatten(2)
            pooled.append(flat.mean(-1) + flat.amax(-1))
    return torch.stack(pooled, dim=-1)


def map_strips(f_pp: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Per-strip linear map: N x C x B with weights B x C x D -> N x D x B."""
    if weights.shape[0] != f_pp.shape[-1] or weights.shape[1] != f_pp.shape[1]:
        raise DimensionError(
            f"strip maps {tuple(weights.shape)} do not fit pooled features {tuple(f_pp.shape)}")
    return torch.einsum("ncb,bcd->ndb", f_pp, weights)


class PyramidMapping(nn.Module):
    """Strip pooling kernels and the independent per-strip FC weights."""

    def __init__(self, spec: PyramidSpec, channels: int, frames: int, rng: Rng, out_dim: int = 512):
        super().__init__()
        self.spec = spec
        self.kernels = nn.ParameterList()
        if spec.pool_mode == "learned_kernel":
            for _, _, joints in spec.strips:
                j = len(joints)
                self.kernels.append(nn.Parameter(torch.full((j, frames), 1.0 / (j * frames), dtype=DTYPE)))
        self.fc = nn.Parameter(rng.uniform_tensor((spec.num_strips, channels, out_dim), 1 / math.sqrt(channels)))

    def forward(self, f_st: torch.Tensor) -> torch.Tensor:
        kernels = list(self.kernels) if self.spec.pool_mode == "learned_kernel" else None
        return map_strips(jrpp_pool(f_st, self.spec, kernels), self.fc)
