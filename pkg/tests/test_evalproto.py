import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelgait.evalproto import (
    EmbeddingSet,
    ProtocolError,
    cross_view_eval,
    format_table,
    gallery_size_sweep,
    rank1,
    read_embeddings,
    read_matrix_csv,
    write_embeddings,
    write_matrix_csv,
)
from skelgait.numerics import Rng


def eset(emb, labels, views=None, conds=None):
    n = len(labels)
    return EmbeddingSet(np.asarray(emb, dtype=float), labels,
                        views if views is not None else [0] * n,
                        conds if conds is not None else ["NM"] * n)


def nn_rank1_loop(g_emb, g_lab, p_emb, p_lab):
    correct = 0
    for pe, pl in zip(p_emb, p_lab):
        best, best_d = None, np.inf
        for ge, gl in zip(g_emb, g_lab):
            d = float(np.sum((pe - ge) ** 2))
            if d < best_d:
                best, best_d = gl, d
        correct += best == pl
    return correct / len(p_lab)


def toy_views(seed, views=(0, 90, 180), ids=4, noise=0.6, dim=5):
    """Gallery/probe with identity and view dependent offsets; imperfect by design."""
    r = np.random.default_rng(seed)
    centers = r.normal(size=(ids, dim))
    view_off = {v: r.normal(scale=0.7, size=dim) for v in views}
    g_rows, p_rows = [], []
    for i in range(ids):
        for v in views:
            for _ in range(2):
                g_rows.append((centers[i] + view_off[v] + r.normal(scale=noise, size=dim), i, v, "NM"))
            for cond in ("NM", "CL"):
                p_rows.append((centers[i] + view_off[v] + r.normal(scale=noise, size=dim), i, v, cond))
    mk = lambda rows: EmbeddingSet(np.array([r[0] for r in rows]), [r[1] for r in rows],  # noqa: E731
                                   [r[2] for r in rows], [r[3] for r in rows])
    return mk(g_rows), mk(p_rows)


# -- rank-1 ------------------------------------------------------------------

def test_rank1_self():
    e = eset(np.random.default_rng(0).normal(size=(6, 3)), [0, 1, 2, 3, 4, 5])
    assert rank1(e, e) == 1.0


def test_rank1_separated():
    g = eset([[0, 0], [10, 0]], [0, 1])
    p = eset([[1, 0], [9, 0], [0, 1]], [0, 1, 0])
    assert rank1(g, p) == 1.0


def test_rank1_tie_goes_to_lowest_index():
    g = eset([[1, 0], [-1, 0]], [7, 8])
    assert rank1(g, eset([[0, 0]], [7])) == 1.0
    assert rank1(g, eset([[0, 0]], [8])) == 0.0


def test_rank1_chance_level():
    accs = []
    for seed in range(50):
        r = np.random.default_rng(seed)
        g = eset(r.normal(size=(100, 8)), r.permutation(np.repeat(np.arange(10), 10)))
        p = eset(r.normal(size=(100, 8)), r.permutation(np.repeat(np.arange(10), 10)))
        accs.append(rank1(g, p))
    assert abs(np.mean(accs) - 0.1) <= 0.05


@pytest.mark.parametrize("seed", range(10))
def test_rank1_loop_oracle(seed):
    r = np.random.default_rng(seed)
    ge, pe = r.normal(size=(12, 4)), r.normal(size=(9, 4))
    gl, pl = r.integers(0, 4, 12), r.integers(0, 4, 9)
    assert rank1(eset(ge, gl), eset(pe, pl)) == nn_rank1_loop(ge, gl, pe, pl)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rank1_orthogonal_invariance(seed):
    r = np.random.default_rng(seed)
    ge, pe = r.normal(size=(15, 6)), r.normal(size=(10, 6))
    gl, pl = r.integers(0, 5, 15), r.integers(0, 5, 10)
    q, _ = np.linalg.qr(r.normal(size=(6, 6)))
    assert rank1(eset(ge, gl), eset(pe, pl)) == rank1(eset(ge @ q, gl), eset(pe @ q, pl))


def test_rank1_errors():
    g = eset(np.zeros((2, 3)), [0, 1])
    with pytest.raises(ProtocolError):
        rank1(eset(np.zeros((0, 3)), []), g)
    with pytest.raises(ProtocolError):
        rank1(g, eset(np.zeros((0, 3)), []))
    with pytest.raises(ProtocolError):
        rank1(g, eset(np.zeros((1, 4)), [0]))


# -- cross-view --------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_cross_view_matches_loop(seed):
    gallery, probe = toy_views(seed)
    report = cross_view_eval(gallery, probe, conditions=["NM", "CL"])
    views = [0, 90, 180]
    for cond in ("NM", "CL"):
        expect = np.zeros((3, 3))
        for gi, gv in enumerate(views):
            gm = gallery.views == gv
            for pi, pv in enumerate(views):
                pm = (probe.views == pv) & (probe.conditions == cond)
                expect[gi, pi] = nn_rank1_loop(gallery.embeddings[gm], gallery.labels[gm],
                                               probe.embeddings[pm], probe.labels[pm])
        rep = report.conditions[cond]
        assert np.array_equal(rep.matrix, expect)
        per_view = [np.mean([expect[g, p] for g in range(3) if g != p]) for p in range(3)]
        assert rep.per_view.tolist() == per_view
        assert rep.mean == np.mean(per_view) and rep.std == np.std(per_view)


def test_cross_view_excludes_identical_view():
    # identity-only embeddings at matching views, garbage across views: diagonal 1, rest chance
    gallery, probe = toy_views(0, noise=0.0)
    rep = cross_view_eval(gallery, probe, conditions=["NM"]).conditions["NM"]
    assert (np.diag(rep.matrix) == 1.0).all()
    off = rep.matrix[~np.eye(3, dtype=bool)].reshape(3, 2)
    # stored averages use only the off-diagonal cells of each probe column
    assert np.array_equal(rep.per_view, rep.matrix.sum(0) / 2 - np.diag(rep.matrix) / 2)
    assert off.size == 6


def test_cross_view_separable_is_perfect():
    emb = np.eye(4) * 10
    g = EmbeddingSet(np.tile(emb, (2, 1)), [0, 1, 2, 3] * 2, [0] * 4 + [90] * 4, ["NM"] * 8)
    rep = cross_view_eval(g, g).conditions["NM"]
    assert (rep.matrix == 1).all() and rep.std == 0 and rep.mean == 1


def test_cross_view_single_view_rejected():
    e = eset(np.eye(2), [0, 1])
    with pytest.raises(ProtocolError):
        cross_view_eval(e, e)


def test_cross_view_missing_gallery_view_named():
    gallery, probe = toy_views(1)
    with pytest.raises(ProtocolError, match="36"):
        cross_view_eval(gallery, probe, views=[0, 36, 90])


def test_cross_view_missing_condition_warns():
    gallery, probe = toy_views(1)
    report = cross_view_eval(gallery, probe, conditions=["NM", "BG"])
    assert list(report.conditions) == ["NM"]
    assert any("BG" in w for w in report.warnings)
    assert "BG" in format_table(report)


# -- gallery sweep -----------------------------------------------------------

def test_sweep_full_size_equals_rank1():
    gallery, probe = toy_views(2, ids=6)
    acc = gallery_size_sweep(gallery, probe, [6], 3, Rng(0))
    assert acc[6] == rank1(gallery, probe)


def test_sweep_size_one_is_perfect():
    gallery, probe = toy_views(2, ids=6)
    assert gallery_size_sweep(gallery, probe, [1], 5, Rng(0))[1] == 1.0


def test_sweep_trend_nonincreasing():
    sizes = [2, 4, 8, 16]
    curves = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        centers = r.normal(size=(16, 6))
        g = eset(centers + r.normal(scale=0.5, size=centers.shape), np.arange(16))
        p = eset(centers + r.normal(scale=0.5, size=centers.shape), np.arange(16))
        acc = gallery_size_sweep(g, p, sizes, 10, Rng(seed))
        curves.append([acc[s] for s in sizes])
    mean = np.mean(curves, axis=0)
    assert (np.diff(mean) <= 1e-12).all()


def test_sweep_too_large():
    gallery, probe = toy_views(2, ids=3)
    with pytest.raises(ProtocolError):
        gallery_size_sweep(gallery, probe, [4], 1, Rng(0))


# -- files -------------------------------------------------------------------

def test_embedding_file_round_trip(tmp_path):
    r = np.random.default_rng(0)
    e = EmbeddingSet(r.normal(size=(5, 7)).astype(np.float32), [1, 2, 3, 4, 5], [0, 18, 36, 54, 72],
                     ["NM", "BG", "CL", "NM", "BG"], [f"00{i}/nm-01/000" for i in range(5)])
    write_embeddings(tmp_path / "e.bin", e)
    back = read_embeddings(tmp_path / "e.bin")
    assert np.array_equal(back.embeddings, e.embeddings)
    assert back.labels.tolist() == e.labels.tolist() and back.views.tolist() == e.views.tolist()
    assert back.conditions.tolist() == e.conditions.tolist() and back.clip_ids == e.clip_ids
    assert (tmp_path / "e.bin").stat().st_size == 20 + 5 * (2 + 13 + 9 + 28)


def test_embedding_file_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage-garbage-garbage")
    with pytest.raises(ProtocolError):
        read_embeddings(tmp_path / "x.bin")


def test_matrix_csv_round_trip(tmp_path):
    gallery, probe = toy_views(4)
    rep = cross_view_eval(gallery, probe, conditions=["CL"]).conditions["CL"]
    write_matrix_csv(tmp_path / "m.csv", rep)
    matrix, per_view, mean, std = read_matrix_csv(tmp_path / "m.csv")
    assert np.array_equal(matrix, rep.matrix) and np.array_equal(per_view, rep.per_view)
    assert (mean, std) == (rep.mean, rep.std)
    off = ~np.eye(3, dtype=bool)
    recomputed = np.array([matrix[:, p][off[:, p]].mean() for p in range(3)])
    assert np.array_equal(recomputed, per_view) and recomputed.mean() == mean
