"""Joint layouts, sequence normalization and the partitioned gait-graph adjacency."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CONDITIONS = ("NM", "BG", "CL", "UNKNOWN")
CONFIDENCE_THRESHOLD = 0.1
DEFAULT_ALPHA = 0.001


class ConfigurationError(ValueError):
    pass


class GraphError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class JointLayout:
    name: str
    joint_count: int
    bones: tuple[tuple[int, int], ...]
    center_joint: int
    joint_names: tuple[str, ...] = ()
    # joints whose midpoint ends the torso (root-to-hip distance is the scale unit)
    hip_joints: tuple[int, ...] = ()

    def __post_init__(self):
        v = self.joint_count
        if not 0 <= self.center_joint < v:
            raise ConfigurationError(f"{self.name}: center joint {self.center_joint} out of range")
        seen = set()
        for i, j in self.bones:
            if not (0 <= i < v and 0 <= j < v) or i == j:
                raise ConfigurationError(f"{self.name}: bad bone ({i}, {j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigurationError(f"{self.name}: duplicate bone {key}")
            seen.add(key)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.joint_count, self.joint_count))
        for i, j in self.bones:
            a[i, j] = a[j, i] = 1.0
        return a

    def hop_distances(self, source: int | None = None) -> np.ndarray:
        """BFS hop count from ``source`` (default: center joint); -1 if unreachable."""
        source = self.center_joint if source is None else source
        nbrs = [[] for _ in range(self.joint_count)]
        for i, j in self.bones:
            nbrs[i].append(j)
            nbrs[j].append(i)
        dist = np.full(self.joint_count, -1, dtype=int)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def is_connected(self) -> bool:
        return bool((self.hop_distances() >= 0).all())


OPENPOSE18_NAMES = (
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
)
OPENPOSE18_BONES = (
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (1, 8), (8, 9), (9, 10),
    (1, 11), (11, 12), (12, 13), (0, 1), (0, 14), (14, 16), (0, 15), (15, 17),
)

# Kinect v1 skeleton: 20 joints. Hands (7, 11) and feet (15, 19) are dropped.
KINECT20_NAMES = (
    "hip_center", "spine", "shoulder_center", "head", "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand", "l_hip", "l_knee", "l_ankle", "l_foot",
    "r_hip", "r_knee", "r_ankle", "r_foot",
)
KINECT20_KEEP = (0, 1, 2, 3, 4, 5, 6, 8, 9, 10, 12, 13, 14, 16, 17, 18)
KINECT16_BONES = (
    (0, 1), (1, 2), (2, 3), (2, 4), (4, 5), (5, 6), (2, 7), (7, 8), (8, 9),
    (0, 10), (10, 11), (11, 12), (0, 13), (13, 14), (14, 15),
)

LAYOUT_NAMES = ("openpose18", "kinect2d16")


def build_layout(name: str) -> JointLayout:
    if name == "openpose18":
        return JointLayout("openpose18", 18, OPENPOSE18_BONES, center_joint=1,
                           joint_names=OPENPOSE18_NAMES, hip_joints=(8, 11))
    if name == "kinect2d16":
        names = tuple(KINECT20_NAMES[i] for i in KINECT20_KEEP)
        # shoulder_center is index 2 after the drop; hip_center (0) ends the torso
        return JointLayout("kinect2d16", 16, KINECT16_BONES, center_joint=2,
                           joint_names=names, hip_joints=(0,))
    raise ConfigurationError(f"unknown layout {name!r}; supported: {', '.join(LAYOUT_NAMES)}")


@dataclass(frozen=True, eq=False)
class PartitionedGraph:
    """Root / centripetal / centrifugal adjacencies, stacked as ``A[k]`` (k = 0, 1, 2).

    ``A[k][i, j] = 1`` when joint j lies in subset k of root joint i.
    """

    layout: JointLayout
    A: np.ndarray
    A_norm: np.ndarray
    alpha: float

    @property
    def num_subsets(self) -> int:
        return self.A.shape[0]


def partition(layout: JointLayout) -> np.ndarray:
    """Split each joint's 1-hop neighbourhood by hop distance to the center joint.

    Returns a 3xVxV stack: identity, centripetal, centrifugal. A neighbour no
    farther from the center than the root (ties included) is centripetal.
    """
    hops = layout.hop_distances()
    if (hops < 0).any():
        missing = [int(i) for i in np.flatnonzero(hops < 0)]
        raise GraphError(f"{layout.name}: bone graph is disconnected (joints {missing})")
    v = layout.joint_count
    a = np.zeros((3, v, v))
    a[0] = np.eye(v)
    for i, j in layout.bones:
        for root, nbr in ((i, j), (j, i)):
            if hops[nbr] <= hops[root]:
                a[1, root, nbr] = 1.0
            else:
                a[2, root, nbr] = 1.0
    return a


def normalize_adjacency(a: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``L^-1/2 A L^-1/2`` with ``L = diag(row sums + alpha)``; works on stacks too."""
    a = np.asarray(a, dtype=np.float64)
    if (a < 0).any():
        raise ValueError("normalize_adjacency: adjacency has negative entries")
    deg = a.sum(axis=-1) + alpha
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[..., :, None] * a * inv_sqrt[..., None, :]


def build_graph(layout: JointLayout, alpha: float = DEFAULT_ALPHA) -> PartitionedGraph:
    a = partition(layout)
    return PartitionedGraph(layout, a, normalize_adjacency(a, alpha), alpha)


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    layout: JointLayout
    frames: np.ndarray  # T x V x 2
    confidence: np.ndarray  # T x V
    identity: int = -1
    view_deg: int = 0
    condition: str = "UNKNOWN"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[0] < 1 or f.shape[1:] != (self.layout.joint_count, 2):
            raise ValueError(
                f"frames must be T x {self.layout.joint_count} x 2, got {f.shape}")
        c = np.asarray(self.confidence, dtype=np.float64)
        if c.shape != f.shape[:2]:
            raise ValueError(f"confidence shape {c.shape} does not match frames {f.shape}")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "confidence", c)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _interpolate_missing(frames: np.ndarray, valid: np.ndarray, layout: JointLayout) -> np.ndarray:
    out = frames.copy()
    t = np.arange(frames.shape[0])
    for j in range(frames.shape[1]):
        ok = valid[:, j]
        if not ok.any():
            name = layout.joint_names[j] if layout.joint_names else str(j)
            raise DegenerateInputError(f"joint {j} ({name}) is not confidently detected in any frame")
        if ok.all():
            continue
        for d in range(2):
            # np.interp holds the end values outside the known range
            out[:, j, d] = np.interp(t, t[ok], frames[ok, j, d])
    return out


def torso_lengths(frames: np.ndarray, layout: JointLayout) -> np.ndarray:
    hips = frames[:, list(layout.hip_joints), :].mean(axis=1)
    return np.linalg.norm(frames[:, layout.center_joint, :] - hips, axis=-1)


def normalize_sequence(seq: SkeletonSequence) -> SkeletonSequence:
    """Fill low-confidence joints, put the root at the origin, scale to unit mean torso."""
    layout = seq.layout
    valid = seq.confidence >= CONFIDENCE_THRESHOLD
    if not valid[:, layout.center_joint].any():
        raise DegenerateInputError("root joint is not confidently detected in any frame")
    frames = _interpolate_missing(seq.frames, valid, layout)
    frames = frames - frames[:, layout.center_joint:layout.center_joint + 1, :]
    scale = torso_lengths(frames, layout).mean()
    if not scale > 0:
        raise DegenerateInputError("mean torso length is zero")
    frames = frames / scale
    conf = np.where(valid, seq.confidence, CONFIDENCE_THRESHOLD)
    return replace(seq, frames=frames, confidence=conf)


# -- file formats ------------------------------------------------------------

def load_openpose_clip(clip_dir, layout: JointLayout | None = None, **labels) -> SkeletonSequence:
    """Read a directory of per-frame OpenPose JSON files (``people[0]`` only).

    Frames with no detected person contribute zero-confidence joints.
    """
    layout = layout or build_layout("openpose18")
    clip_dir = Path(clip_dir)
    files = sorted(p for p in clip_dir.iterdir() if p.suffix == ".json")
    if not files:
        raise IngestionError(f"{clip_dir}: no frame files")
    v = layout.joint_count
    frames = np.zeros((len(files), v, 2))
    conf = np.zeros((len(files), v))
    for t, path in enumerate(files):
        try:
            doc = json.loads(path.read_text())
            people = doc.get("people", [])
            if not people:
                continue
            kp = np.asarray(people[0]["pose_keypoints_2d"], dtype=np.float64)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise IngestionError(f"{path}: cannot parse keypoints ({exc})") from exc
        if kp.size != 3 * v:
            raise IngestionError(f"{path}: expected {3 * v} keypoint values, got {kp.size}")
        kp = kp.reshape(v, 3)
        frames[t] = kp[:, :2]
        conf[t] = kp[:, 2]
    return SkeletonSequence(layout, frames, conf, **labels)


def write_openpose_clip(seq: SkeletonSequence, clip_dir) -> None:
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for t in range(seq.num_frames):
        kp = np.concatenate([seq.frames[t], seq.confidence[t][:, None]], axis=1).reshape(-1)
        doc = {"version": 1.3, "people": [{"pose_keypoints_2d": [float(x) for x in kp]}]}
        (clip_dir / f"frame_{t:05d}.json").write_text(json.dumps(doc))


def load_kinect_clip(path, **labels) -> SkeletonSequence:
    """Plain-text Kinect skeleton: one line per frame with 20 (x, y, z) triples."""
    path = Path(path)
    layout = build_layout("kinect2d16")
    rows = []
    try:
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            vals = np.asarray(line.replace(",", " ").split(), dtype=np.float64)
            if vals.size != 60:
                raise ValueError(f"expected 60 values per line, got {vals.size}")
            rows.append(vals.reshape(20, 3)[list(KINECT20_KEEP), :2])
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: no frames")
    frames = np.stack(rows)
    return SkeletonSequence(layout, frames, np.ones(frames.shape[:2]), **labels)
