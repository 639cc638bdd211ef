"""Dataset indexing, PK batch sampling, frame sampling and the synthetic walker."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .numerics import DTYPE, Rng
from .skeleton import (
    IngestionError,
    JointLayout,
    SkeletonSequence,
    build_layout,
    load_kinect_clip,
    load_openpose_clip,
    normalize_sequence,
    write_openpose_clip,
)

SPLITS = ("train", "gallery", "probe")


class SamplingError(ValueError):
    pass


class EmptyIndexError(IngestionError):
    pass


@dataclass(frozen=True)
class ClipEntry:
    source: str
    identity: int
    view_deg: int
    condition: str
    seq: int
    splits: tuple[str, ...]

    @property
    def clip_id(self) -> str:
        return f"{self.identity:03d}/{self.condition.lower()}-{self.seq:02d}/{self.view_deg:03d}"


@dataclass(frozen=True)
class Protocol:
    """How clips are assigned to train / gallery / probe.

    ``train_max_id``: identities up to this id are training-only (None = no split by id).
    Test identities contribute gallery clips (condition NM, ``gallery_seqs``) and
    probe clips (``probe_seqs`` per condition). With ``closed_set`` the train
    identities are also the test identities and only ``train_seqs`` are trained on.
    """

    name: str
    views: tuple[int, ...]
    gallery_seqs: tuple[int, ...]
    probe_seqs: dict
    train_max_id: int | None = None
    closed_set: bool = False
    train_seqs: tuple[int, ...] = ()

    def assign(self, identity: int, condition: str, seq: int) -> tuple[str, ...]:
        if self.closed_set:
            tags = []
            if condition == "NM" and seq in self.train_seqs:
                tags.append("train")
            if condition == "NM" and seq in self.gallery_seqs:
                tags.append("gallery")
            if seq in self.probe_seqs.get(condition, ()):
                tags.append("probe")
            return tuple(tags)
        if self.train_max_id is not None and identity <= self.train_max_id:
            return ("train",)
        if condition == "NM" and seq in self.gallery_seqs:
            return ("gallery",)
        if seq in self.probe_seqs.get(condition, ()):
            return ("probe",)
        return ()


CASIAB_VIEWS = tuple(range(0, 181, 18))
CASIAB = Protocol("casiab", CASIAB_VIEWS, gallery_seqs=(1, 2, 3, 4),
                  probe_seqs={"NM": (5, 6), "BG": (1, 2), "CL": (1, 2)}, train_max_id=62)
SYNTHETIC = Protocol("synthetic", (0, 54, 90, 180), gallery_seqs=(3,), probe_seqs={"NM": (4,)},
                     closed_set=True, train_seqs=(1, 2))
PROTOCOLS = {"casiab": CASIAB, "synthetic": SYNTHETIC}


class DatasetIndex:
    def __init__(self, entries: Sequence[ClipEntry], fmt: str, protocol_name: str,
                 layout: JointLayout | None = None):
        self.entries = list(entries)
        self.fmt = fmt
        self.protocol_name = protocol_name
        self.layout = layout or build_layout("kinect2d16" if fmt == "kinect_txt" else "openpose18")
        train_ids = sorted({e.identity for e in self.split("train")})
        self.train_labels = {ident: i for i, ident in enumerate(train_ids)}
        self._cache: dict[str, SkeletonSequence] = {}

    def __len__(self):
        return len(self.entries)

    @property
    def num_classes(self) -> int:
        return len(self.train_labels)

    def split(self, name: str) -> list[ClipEntry]:
        return [e for e in self.entries if name in e.splits]

    def identities(self, split: str = "train") -> list[int]:
        return sorted({e.identity for e in self.split(split)})

    def load(self, entry: ClipEntry) -> SkeletonSequence:
        """Normalized sequence for a clip, cached after the first read."""
        seq = self._cache.get(entry.source)
        if seq is None:
            labels = dict(identity=entry.identity, view_deg=entry.view_deg, condition=entry.condition)
            if self.fmt == "kinect_txt":
                raw = load_kinect_clip(entry.source, **labels)
            else:
                raw = load_openpose_clip(entry.source, self.layout, **labels)
            seq = normalize_sequence(raw)
            self._cache[entry.source] = seq
        return seq


_COND_RE = re.compile(r"^(nm|bg|cl)-(\d+)$", re.IGNORECASE)


def load_dataset(root, fmt: str = "openpose_json", protocol: str | Protocol = "casiab",
                 fold: int = 0, num_folds: int = 10, seed: int = 0) -> DatasetIndex:
    """Index a dataset directory.

    openpose_json: ``<root>/<subject>/<cond>-<seq>/<view>/frame_*.json``.
    kinect_txt: ``<root>/<subject>/<seq>.txt``; clips are dealt into ``num_folds``
    folds by a seeded shuffle, fold ``fold`` is the probe set and the rest are both
    train and gallery.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    if fmt == "kinect_txt":
        return _load_kinect(root, fold, num_folds, seed)
    if fmt != "openpose_json":
        raise IngestionError(f"unknown dataset format {fmt!r}")
    proto = PROTOCOLS[protocol] if isinstance(protocol, str) else protocol
    entries = []
    for subj in sorted(p for p in root.iterdir() if p.is_dir()):
        if not subj.name.isdigit():
            raise IngestionError(f"{subj}: subject directory must be numeric")
        ident = int(subj.name)
        for cond_dir in sorted(p for p in subj.iterdir() if p.is_dir()):
            m = _COND_RE.match(cond_dir.name)
            if not m:
                raise IngestionError(f"{cond_dir}: expected <condition>-<seq> directory name")
            cond, seq = m.group(1).upper(), int(m.group(2))
            for view_dir in sorted(p for p in cond_dir.iterdir() if p.is_dir()):
                if not view_dir.name.isdigit():
                    raise IngestionError(f"{view_dir}: view directory must be numeric degrees")
                splits = proto.assign(ident, cond, seq)
                entries.append(ClipEntry(str(view_dir), ident, int(view_dir.name), cond, seq, splits))
    if not entries:
        raise EmptyIndexError(f"{root}: no clips found")
    return DatasetIndex(entries, fmt, proto.name)


def _load_kinect(root: Path, fold: int, num_folds: int, seed: int) -> DatasetIndex:
    files = []
    for subj in sorted(p for p in root.iterdir() if p.is_dir()):
        if not subj.name.isdigit():
            raise IngestionError(f"{subj}: subject directory must be numeric")
        for i, f in enumerate(sorted(subj.glob("*.txt")), start=1):
            files.append((f, int(subj.name), i))
    if not files:
        raise EmptyIndexError(f"{root}: no clips found")
    if not 0 <= fold < num_folds:
        raise ValueError(f"fold {fold} outside 0..{num_folds - 1}")
    order = Rng(seed).permutation(len(files))
    fold_of = np.empty(len(files), dtype=int)
    fold_of[order] = np.arange(len(files)) % num_folds
    entries = []
    for (f, ident, seq), k in zip(files, fold_of):
        splits = ("probe",) if k == fold else ("train", "gallery")
        entries.append(ClipEntry(str(f), ident, 0, "NM", seq, splits))
    return DatasetIndex(entries, "kinect_txt", "kinectgait")


def pk_sample(index: DatasetIndex, P: int, K: int, rng: Rng, split: str = "train"):
    """P distinct identities, K clips each (with replacement only when an identity has < K)."""
    by_id: dict[int, list[ClipEntry]] = {}
    for e in index.split(split):
        by_id.setdefault(e.identity, []).append(e)
    ids = sorted(by_id)
    if len(ids) < P:
        raise SamplingError(f"need {P} identities for a PK batch, {split} split has {len(ids)}")
    chosen = [ids[i] for i in rng.choice(len(ids), size=P, replace=False)]
    batch, labels = [], []
    for ident in chosen:
        clips = by_id[ident]
        picks = rng.choice(len(clips), size=K, replace=len(clips) < K)
        batch.extend(clips[i] for i in picks)
        labels.extend([ident] * K)
    return batch, labels


def sample_frame_indices(num_frames: int, target: int, rng: Rng) -> np.ndarray:
    if num_frames >= target:
        return np.sort(rng.choice(num_frames, size=target, replace=False))
    return np.arange(target) % num_frames


def sample_frames(seq: SkeletonSequence, target: int = 120, rng: Rng | None = None) -> SkeletonSequence:
    """Order-preserving random subset of ``target`` frames, or cyclic tiling if shorter."""
    idx = sample_frame_indices(seq.num_frames, target, rng or Rng(0))
    return SkeletonSequence(seq.layout, seq.frames[idx], seq.confidence[idx], seq.identity,
                            seq.view_deg, seq.condition, dict(seq.meta, frame_indices=idx))


def to_tensor(seqs: Sequence[SkeletonSequence]) -> torch.Tensor:
    """Stack equal-length sequences as N x 2 x T x V."""
    arr = np.stack([s.frames for s in seqs]).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(DTYPE)


# -- synthetic walker --------------------------------------------------------

@dataclass(frozen=True)
class WalkerParams:
    identity_seed: int
    limb_lengths: tuple[float, float, float, float]  # upper arm, forearm, thigh, shin
    stride_frequency: float  # cycles per frame
    leg_phase: float
    leg_amplitude: float
    arm_amplitude: float
    knee_amplitude: float
    shoulder_half_width: float = 0.2
    hip_half_width: float = 0.12
    noise_sigma: float = 0.0
    arm_phase_offset: float = field(default=math.pi, init=False)

    @classmethod
    def from_seed(cls, identity_seed: int, noise_sigma: float = 0.0) -> "WalkerParams":
        r = Rng(identity_seed)
        u = lambda lo, hi: float(r.uniform(lo, hi))  # noqa: E731
        return cls(
            identity_seed=identity_seed,
            limb_lengths=(u(0.45, 0.7), u(0.4, 0.6), u(0.7, 1.0), u(0.65, 0.95)),
            stride_frequency=u(1 / 36, 1 / 20),
            leg_phase=u(0, 2 * math.pi),
            leg_amplitude=u(0.25, 0.55),
            arm_amplitude=u(0.15, 0.5),
            knee_amplitude=u(0.2, 0.9),
            shoulder_half_width=u(0.15, 0.28),
            hip_half_width=u(0.09, 0.16),
            noise_sigma=noise_sigma,
        )


def _walker_3d(p: WalkerParams, t: np.ndarray, start_phase: float) -> np.ndarray:
    """T x 18 x 3 stick figure (x forward, y up, z to the subject's right), mid-hip at origin."""
    la1, la2, ll1, ll2 = p.limb_lengths
    w = 2 * math.pi * p.stride_frequency * t + start_phase + p.leg_phase
    out = np.zeros((len(t), 18, 3))
    neck = np.array([0.0, 1.0, 0.0])
    head = {0: (0.1, 0.28, 0.0), 14: (0.08, 0.33, 0.04), 15: (0.08, 0.33, -0.04),
            16: (0.0, 0.31, 0.09), 17: (0.0, 0.31, -0.09)}
    out[:, 1] = neck
    for j, off in head.items():
        out[:, j] = neck + np.array(off)

    def limb(base, angle, bend, l1, l2):
        mid = base + l1 * np.stack([np.sin(angle), -np.cos(angle), np.zeros_like(angle)], -1)
        end = mid + l2 * np.stack([np.sin(angle + bend), -np.cos(angle + bend), np.zeros_like(angle)], -1)
        return mid, end

    for side, sign, phase in (("r", 1.0, 0.0), ("l", -1.0, math.pi)):
        shoulder = np.array([0.0, 1.0, sign * p.shoulder_half_width])
        hip = np.array([0.0, 0.0, sign * p.hip_half_width])
        leg_angle = p.leg_amplitude * np.sin(w + phase)
        knee_bend = -p.knee_amplitude * 0.5 * (1 - np.cos(w + phase))
        arm_angle = p.arm_amplitude * np.sin(w + phase + p.arm_phase_offset)
        elbow_bend = np.full_like(arm_angle, 0.15) + 0.5 * p.arm_amplitude * (1 + np.sin(w + phase + p.arm_phase_offset))
        s_i, e_i, w_i, h_i, k_i, a_i = (2, 3, 4, 8, 9, 10) if side == "r" else (5, 6, 7, 11, 12, 13)
        out[:, s_i] = shoulder
        out[:, h_i] = hip
        out[:, e_i], out[:, w_i] = limb(shoulder, arm_angle, elbow_bend, la1, la2)
        out[:, k_i], out[:, a_i] = limb(hip, leg_angle, knee_bend, ll1, ll2)
    return out


def synth_walker(params: WalkerParams, view_deg: float, T: int, rng: Rng,
                 identity: int = -1, condition: str = "NM") -> SkeletonSequence:
    """Project a sinusoidal 3D walker rotated by ``view_deg`` about the vertical axis."""
    start_phase = float(rng.uniform(0, 2 * math.pi))
    pts = _walker_3d(params, np.arange(T, dtype=np.float64), start_phase)
    th = math.radians(view_deg)
    x = pts[..., 0] * math.cos(th) + pts[..., 2] * math.sin(th)
    frames = np.stack([x, pts[..., 1]], axis=-1)
    if params.noise_sigma > 0:
        frames = frames + rng.normal(0.0, params.noise_sigma, size=frames.shape)
    return SkeletonSequence(build_layout("openpose18"), frames, np.ones(frames.shape[:2]),
                            identity=identity, view_deg=int(round(view_deg)), condition=condition)


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 8
    views: tuple[int, ...] = (0, 54, 90, 180)
    clips_per_identity: int = 4
    frames: int = 150
    noise_sigma: float = 0.01
    seed: int = 0

    def to_lines(self) -> list[str]:
        return [f"synth.identities = {self.identities}",
                f"synth.views = {','.join(map(str, self.views))}",
                f"synth.clips_per_identity = {self.clips_per_identity}",
                f"synth.frames = {self.frames}",
                f"synth.noise_sigma = {self.noise_sigma!r}",
                f"synth.seed = {self.seed}"]

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "SynthConfig":
        d = cls()
        get = lambda k, default: kv.get(f"synth.{k}", kv.get(k, default))  # noqa: E731
        views = get("views", None)
        return cls(
            identities=int(get("identities", d.identities)),
            views=tuple(int(v) for v in views.split(",")) if views else d.views,
            clips_per_identity=int(get("clips_per_identity", d.clips_per_identity)),
            frames=int(get("frames", d.frames)),
            noise_sigma=float(get("noise_sigma", d.noise_sigma)),
            seed=int(get("seed", d.seed)),
        )


def generate_synthetic(cfg: SynthConfig) -> list[tuple[ClipEntry, SkeletonSequence]]:
    """All clips of a synthetic dataset, fully determined by ``cfg.seed``."""
    master = Rng(cfg.seed)
    id_seeds = master.integers(0, 2**31 - 1, size=cfg.identities)
    out = []
    for ident in range(1, cfg.identities + 1):
        params = WalkerParams.from_seed(int(id_seeds[ident - 1]), cfg.noise_sigma)
        for seq_no in range(1, cfg.clips_per_identity + 1):
            for view in cfg.views:
                clip_rng = master.spawn()
                seq = synth_walker(params, view, cfg.frames, clip_rng, identity=ident)
                entry = ClipEntry("", ident, view, "NM", seq_no, ())
                out.append((entry, seq))
    return out


def write_synthetic(cfg: SynthConfig, out_dir) -> Path:
    """Write clips in the OpenPose directory layout plus ``manifest.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = cfg.to_lines() + [""]
    for entry, seq in generate_synthetic(cfg):
        rel = f"{entry.identity:03d}/nm-{entry.seq:02d}/{entry.view_deg:03d}"
        write_openpose_clip(seq, out_dir / rel)
        lines.append(f"{rel} identity={entry.identity} view={entry.view_deg} condition=NM "
                     f"seq={entry.seq} frames={seq.num_frames}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def synthetic_index(cfg: SynthConfig, protocol: Protocol = SYNTHETIC) -> DatasetIndex:
    """In-memory equivalent of ``load_dataset(write_synthetic(cfg) dir)`` without the disk round trip."""
    entries, cache = [], {}
    for entry, seq in generate_synthetic(cfg):
        src = f"synthetic:{entry.clip_id}"
        entries.append(ClipEntry(src, entry.identity, entry.view_deg, entry.condition, entry.seq,
                                 protocol.assign(entry.identity, entry.condition, entry.seq)))
        cache[src] = normalize_sequence(seq)
    index = DatasetIndex(entries, "openpose_json", protocol.name)
    index._cache.update(cache)
    return index
