"""Gallery/probe evaluation: rank-1 accuracy, cross-view matrices, gallery-size sweeps,
and the embedding/report file formats."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import Rng

EMBED_MAGIC = b"SKGEMB\x00\x00"
EMBED_VERSION = 1
CONDITION_CODES = {"NM": 0, "BG": 1, "CL": 2, "UNKNOWN": 3}
CODE_CONDITIONS = {v: k for k, v in CONDITION_CODES.items()}


class ProtocolError(ValueError):
    pass


@dataclass
class EmbeddingSet:
    embeddings: np.ndarray  # M x D
    labels: np.ndarray
    views: np.ndarray
    conditions: np.ndarray  # strings
    clip_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be M x D, got {self.embeddings.shape}")
        m = len(self.embeddings)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.views = np.asarray(self.views, dtype=np.int64)
        self.conditions = np.asarray(self.conditions, dtype=object)
        if not self.clip_ids:
            self.clip_ids = [f"clip{i}" for i in range(m)]
        for name in ("labels", "views", "conditions"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries for {m} embeddings")

    def __len__(self):
        return len(self.embeddings)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def subset(self, mask) -> "EmbeddingSet":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return EmbeddingSet(self.embeddings[idx], self.labels[idx], self.views[idx],
                            self.conditions[idx], [self.clip_ids[i] for i in idx])


def rank1(gallery: EmbeddingSet, probe: EmbeddingSet) -> float:
    """Fraction of probes whose nearest gallery embedding (Euclidean) has their label.

    Ties go to the lowest gallery index.
    """
    if len(gallery) == 0:
        raise ProtocolError("empty gallery")
    if len(probe) == 0:
        raise ProtocolError("empty probe set")
    if gallery.dim != probe.dim:
        raise ProtocolError(f"gallery dim {gallery.dim} != probe dim {probe.dim}")
    g, p = gallery.embeddings, probe.embeddings
    d2 = (p * p).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2 * p @ g.T
    nearest = np.argmin(d2, axis=1)
    return float(np.mean(gallery.labels[nearest] == probe.labels))


@dataclass
class ConditionReport:
    condition: str
    views: list[int]
    matrix: np.ndarray  # gallery view x probe view
    per_view: np.ndarray  # per probe view, mean over gallery views != probe view
    mean: float
    std: float


@dataclass
class CrossViewReport:
    views: list[int]
    conditions: dict[str, ConditionReport]
    warnings: list[str] = field(default_factory=list)


def _per_view_average(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    off = ~np.eye(n, dtype=bool)
    return np.array([matrix[:, p][off[:, p]].mean() for p in range(n)])


def cross_view_eval(gallery: EmbeddingSet, probe: EmbeddingSet, views: Sequence[int] | None = None,
                    conditions: Sequence[str] | None = None) -> CrossViewReport:
    """Rank-1 for every (gallery view, probe view) pair, per probe condition.

    Per-probe-view averages skip the identical-view cell; the summary is the mean
    and (population) std of those averages.
    """
    views = sorted(set(gallery.views.tolist()) | set(probe.views.tolist())) if views is None else list(views)
    if len(views) < 2:
        raise ProtocolError("cross-view evaluation needs at least two views")
    for v in views:
        if not (gallery.views == v).any():
            raise ProtocolError(f"no gallery clips at view {v}")
    warnings = []
    conds = list(conditions) if conditions is not None else sorted(set(probe.conditions.tolist()))
    out = {}
    for cond in conds:
        cmask = probe.conditions == cond
        if not cmask.any():
            warnings.append(f"warning: no probe clips for condition {cond}; omitted")
            continue
        n = len(views)
        mat = np.full((n, n), np.nan)
        for gi, gv in enumerate(views):
            g = gallery.subset(gallery.views == gv)
            for pi, pv in enumerate(views):
                pmask = cmask & (probe.views == pv)
                if not pmask.any():
                    raise ProtocolError(f"no {cond} probe clips at view {pv}")
                mat[gi, pi] = rank1(g, probe.subset(pmask))
        per_view = _per_view_average(mat)
        out[cond] = ConditionReport(cond, views, mat, per_view, float(per_view.mean()), float(per_view.std()))
    return CrossViewReport(views, out, warnings)


def gallery_size_sweep(gallery: EmbeddingSet, probe: EmbeddingSet, sizes: Sequence[int], trials: int,
                       rng: Rng) -> dict[int, float]:
    """Mean rank-1 when both sets are restricted to ``size`` randomly drawn identities."""
    ids = np.array(sorted(set(gallery.labels.tolist()) & set(probe.labels.tolist())))
    out = {}
    for size in sizes:
        if size > len(ids) or size < 1:
            raise ProtocolError(f"gallery size {size} outside 1..{len(ids)}")
        accs = []
        for _ in range(trials):
            chosen = ids[np.sort(rng.choice(len(ids), size=size, replace=False))]
            accs.append(rank1(gallery.subset(np.isin(gallery.labels, chosen)),
                              probe.subset(np.isin(probe.labels, chosen))))
        out[int(size)] = float(np.mean(accs))
    return out


# -- embedding files ---------------------------------------------------------
# magic(8) version(u32) count(u32) dim(u32), then per record:
#   id_len(u16) clip_id(utf8) identity(i32) view(i32) condition(u8) values(f32 * dim)
# little-endian.

def write_embeddings(path, emb: EmbeddingSet) -> None:
    with Path(path).open("wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<III", EMBED_VERSION, len(emb), emb.dim))
        vals = emb.embeddings.astype("<f4")
        for i in range(len(emb)):
            raw = emb.clip_ids[i].encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<iiB", int(emb.labels[i]), int(emb.views[i]),
                                 CONDITION_CODES[str(emb.conditions[i])]))
            fh.write(vals[i].tobytes())


def read_embeddings(path) -> EmbeddingSet:
    data = Path(path).read_bytes()
    if data[:8] != EMBED_MAGIC:
        raise ProtocolError(f"{path}: not an embedding file")
    version, count, dim = struct.unpack_from("<III", data, 8)
    if version != EMBED_VERSION:
        raise ProtocolError(f"{path}: unsupported embedding file version {version}")
    pos = 20
    ids, labels, views, conds = [], [], [], []
    emb = np.zeros((count, dim))
    for i in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        ids.append(data[pos:pos + n].decode("utf-8"))
        pos += n
        ident, view, code = struct.unpack_from("<iiB", data, pos)
        pos += 9
        emb[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += 4 * dim
        labels.append(ident)
        views.append(view)
        conds.append(CODE_CONDITIONS[code])
    return EmbeddingSet(emb, labels, views, conds, ids)


# -- reports -----------------------------------------------------------------

def write_matrix_csv(path, rep: ConditionReport) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gallery_view"] + [f"probe_{v}" for v in rep.views])
        for gv, row in zip(rep.views, rep.matrix):
            w.writerow([gv] + [repr(float(x)) for x in row])
        w.writerow(["mean_excl_identical"] + [repr(float(x)) for x in rep.per_view])
        w.writerow(["overall_mean", repr(rep.mean)])
        w.writerow(["std", repr(rep.std)])


def read_matrix_csv(path) -> tuple[np.ndarray, np.ndarray, float, float]:
    rows = list(csv.reader(Path(path).open()))
    body = rows[1:-3]
    matrix = np.array([[float(x) for x in r[1:]] for r in body])
    per_view = np.array([float(x) for x in rows[-3][1:]])
    return matrix, per_view, float(rows[-2][1]), float(rows[-1][1])


def format_table(report: CrossViewReport) -> str:
    """Aligned text: one row per condition, probe views as columns, percent accuracy."""
    views = report.views
    head = f"{'Probe':<8}" + "".join(f"{str(v) + 'deg':>9}" for v in views) + f"{'Mean':>9}{'Std':>8}"
    lines = ["Average rank-1 accuracy (%), identical-view cases excluded", head, "-" * len(head)]
    for cond, rep in report.conditions.items():
        cells = "".join(f"{100 * x:>9.1f}" for x in rep.per_view)
        lines.append(f"{cond:<8}{cells}{100 * rep.mean:>9.1f}{100 * rep.std:>8.2f}")
    lines.extend(report.warnings)
    return "\n".join(lines) + "\n"
