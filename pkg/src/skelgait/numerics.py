"""Dense float64 array plumbing: seeded RNG, checked matmul, finite-difference
gradient checks, the optimizer factory, and the parameter checkpoint format.

Tensors are ``torch.Tensor`` in double precision; autograd supplies the
backward pass and :func:`grad_check` holds it to account.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64

CHECKPOINT_MAGIC = b"SKGCKPT\x00"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or does not match the model."""


class Rng:
    """Seeded PCG64 stream; every random draw in the toolkit goes through one of these."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.gen.permutation(x)

    def spawn(self) -> "Rng":
        """Child stream seeded from this one (advances the parent)."""
        return Rng(int(self.gen.integers(0, 2**63 - 1)))

    def uniform_tensor(self, shape, bound: float) -> torch.Tensor:
        return torch.from_numpy(self.gen.uniform(-bound, bound, size=tuple(shape))).to(DTYPE)


def as_array(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def matmul(a, b) -> torch.Tensor:
    """Matrix product with batched leading dimensions.

    Raises DimensionError naming both shapes when the inner dimensions differ.
    """
    a, b = as_array(a), as_array(b)
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != (b.shape[-2] if b.dim() > 1 else b.shape[0]):
        raise DimensionError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    try:
        return torch.matmul(a, b)
    except RuntimeError as exc:
        raise DimensionError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}") from exc


def grad_check(
    op: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    epsilon: float = 1e-5,
    max_entries: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Compare autograd gradients of a scalar ``op(*inputs)`` to central differences.

    Returns max |analytic - numeric| / max(1, |analytic|) over every entry of
    every input. ``op`` is re-evaluated twice per entry, so keep it small; with
    ``max_entries`` a random subset (drawn from ``rng``) of each input is probed.
    Inputs are perturbed in place and restored.
    """
    inputs = list(inputs)
    for x in inputs:
        if x.dtype != DTYPE:
            raise ContractError("grad_check requires float64 inputs")
        if not torch.isfinite(x).all():
            raise ContractError("grad_check requires finite inputs")

    leaves = [x.detach().requires_grad_(True) if not x.requires_grad else x for x in inputs]
    out = op(*leaves)
    if out.numel() != 1:
        raise ContractError(f"grad_check needs a scalar output, got shape {tuple(out.shape)}")
    grads = torch.autograd.grad(out, leaves, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for x, g in zip(leaves, grads):
            g = torch.zeros_like(x) if g is None else g
            flat = x.view(-1)
            gflat = g.reshape(-1)
            idx = range(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = (rng or Rng(0)).choice(flat.numel(), size=max_entries, replace=False)
            for i in idx:
                i = int(i)
                orig = flat[i].item()
                flat[i] = orig + epsilon
                f_plus = op(*leaves).item()
                flat[i] = orig - epsilon
                f_minus = op(*leaves).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * epsilon)
                analytic = gflat[i].item()
                err = abs(analytic - numeric) / max(1.0, abs(analytic))
                worst = max(worst, err)
    return worst


def make_optimizer(params: Iterable[torch.nn.Parameter], lr: float = 1e-3,
                   betas: tuple[float, float] = (0.9, 0.999)) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=lr, betas=betas, weight_decay=0.0)


def set_deterministic(threads: int = 1) -> None:
    # CPU kernels are deterministic for a fixed thread count; one thread is the reference mode
    torch.set_num_threads(threads)


# -- checkpoints -------------------------------------------------------------
# layout: magic(8) version(u32) count(u32), then per record:
#   name_len(u32) name(utf8) ndim(u32) dims(u64 * ndim) values(f64 * prod(dims))
# all little-endian.

def save_checkpoint(path, tensors: "OrderedDict[str, torch.Tensor] | dict") -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, value in tensors.items():
            arr = value.detach().cpu().to(torch.float64).contiguous().numpy()
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> "OrderedDict[str, torch.Tensor]":
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out: OrderedDict[str, torch.Tensor] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            vals = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape)
            pos += 8 * n
            out[name] = torch.from_numpy(vals.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out
