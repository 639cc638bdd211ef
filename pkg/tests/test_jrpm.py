import numpy as np
import pytest
import torch

from skelgait.jrpm import PyramidMapping, build_pyramid, jrpp_pool, map_strips
from skelgait.numerics import DTYPE, DimensionError, Rng, grad_check
from skelgait.skeleton import ConfigurationError, build_layout

ALL = (1, 2, 3, 4, 5, 6)


def T(x):
    return torch.as_tensor(x, dtype=DTYPE)


@pytest.mark.parametrize("layout_name,last", [("openpose18", 18), ("kinect2d16", 16)])
def test_group_counts_and_coverage(layout_name, last):
    layout = build_layout(layout_name)
    spec = build_pyramid(layout, ALL)
    assert [len(spec.groups[s]) for s in ALL] == [1, 2, 3, 5, 12, last]
    for s in ALL:
        covered = set().union(*map(set, spec.groups[s]))
        assert covered == set(range(layout.joint_count)), s
    assert spec.groups[6] == [(j,) for j in range(layout.joint_count)]


def test_strip_counts(openpose):
    assert build_pyramid(openpose).num_strips == 6
    assert build_pyramid(openpose, (1, 2, 3)).num_strips == 6
    assert build_pyramid(openpose, ALL).num_strips == 41
    assert build_pyramid(openpose, (1, 2, 6)).num_strips == 21


def test_whole_body_scale(openpose):
    spec = build_pyramid(openpose, (1,))
    assert spec.strips == [(1, 0, tuple(range(18)))]


def test_scale3_pairs_opposite_limbs(openpose):
    names = openpose.joint_names
    left_arm = {i for i, n in enumerate(names) if n.startswith("l_") and n[2:] in ("shoulder", "elbow", "wrist")}
    right_leg = {i for i, n in enumerate(names) if n.startswith("r_") and n[2:] in ("hip", "knee", "ankle")}
    groups = [set(g) for g in build_pyramid(openpose, (3,)).groups[3]]
    assert left_arm | right_leg in groups


def test_scale5_shares_elbows_and_knees(openpose):
    groups = build_pyramid(openpose, (5,)).groups[5]
    for joint in (3, 6, 9, 12):  # elbows and knees
        assert sum(joint in g for g in groups) == 2


def test_unknown_scale_rejected(openpose):
    with pytest.raises(ConfigurationError):
        build_pyramid(openpose, (1, 7))
    with pytest.raises(ConfigurationError):
        build_pyramid(openpose, ())
    with pytest.raises(ConfigurationError):
        build_pyramid(openpose, (1,), pool_mode="median")


def test_spec_serializes_groups(openpose):
    cfg = build_pyramid(openpose, (1, 3)).to_config()
    assert cfg["pyramid.scales"] == "1,3"
    assert cfg["pyramid.groups.3"] == "5,6,7,8,9,10;2,3,4,11,12,13;0,1,14,15,16,17"


def test_mean_plus_max_constant(openpose):
    spec = build_pyramid(openpose, ALL, "mean_plus_max")
    f = torch.full((2, 3, 4, 18), 1.75, dtype=DTYPE)
    out = jrpp_pool(f, spec)
    assert out.shape == (2, 3, 41)
    assert (out == 3.5).all()


def test_uniform_kernel_is_strip_mean(openpose):
    spec = build_pyramid(openpose, (1, 2, 3))
    f = T(np.random.default_rng(0).normal(size=(2, 3, 5, 18)))
    kernels = [torch.full((len(j), 5), 1 / (len(j) * 5), dtype=DTYPE) for _, _, j in spec.strips]
    out = jrpp_pool(f, spec, kernels)
    for b, (_, _, joints) in enumerate(spec.strips):
        ref = f[..., list(joints)].mean(dim=(2, 3))
        assert (out[..., b] - ref).abs().max() < 1e-14


def test_mean_plus_max_matches_loop(openpose):
    spec = build_pyramid(openpose, ALL, "mean_plus_max")
    f = np.random.default_rng(1).normal(size=(2, 3, 4, 18))
    out = jrpp_pool(T(f), spec).numpy()
    for b, (_, _, joints) in enumerate(spec.strips):
        for n in range(2):
            for c in range(3):
                vals = [f[n, c, t, j] for t in range(4) for j in joints]
                expect = sum(vals) / len(vals) + max(vals)
                assert abs(out[n, c, b] - expect) < 1e-15


def test_learned_kernel_matches_loop(openpose):
    spec = build_pyramid(openpose, (2, 5))
    r = np.random.default_rng(2)
    f = r.normal(size=(2, 3, 4, 18))
    kernels = [r.normal(size=(len(j), 4)) for _, _, j in spec.strips]
    out = jrpp_pool(T(f), spec, [T(k) for k in kernels]).numpy()
    for b, (_, _, joints) in enumerate(spec.strips):
        for n in range(2):
            for c in range(3):
                expect = sum(kernels[b][q, t] * f[n, c, t, j] for q, j in enumerate(joints) for t in range(4))
                assert abs(out[n, c, b] - expect) < 1e-13


@pytest.mark.parametrize("mode", ["learned_kernel", "mean_plus_max"])
def test_strip_locality(openpose, mode):
    spec = build_pyramid(openpose, ALL, mode)
    r = np.random.default_rng(3)
    f = T(r.normal(size=(2, 3, 4, 18)))
    kernels = [T(r.normal(size=(len(j), 4))) for _, _, j in spec.strips] if mode == "learned_kernel" else None
    full = jrpp_pool(f, spec, kernels)
    for b, (_, _, joints) in enumerate(spec.strips):
        g = torch.zeros_like(f)
        g[..., list(joints)] = f[..., list(joints)]
        assert torch.equal(jrpp_pool(g, spec, kernels)[..., b], full[..., b])


def test_pool_rejects_out_of_range_joint(openpose):
    spec = build_pyramid(openpose, (6,), "mean_plus_max")
    with pytest.raises(DimensionError):
        jrpp_pool(torch.zeros(1, 2, 3, 16, dtype=DTYPE), spec)


def test_map_strips_identity_and_zero():
    f = T(np.random.default_rng(4).normal(size=(3, 5, 4)))
    eye = torch.eye(5, dtype=DTYPE).expand(4, 5, 5)
    assert torch.equal(map_strips(f, eye), f)
    assert (map_strips(f, torch.zeros(4, 5, 7, dtype=DTYPE)) == 0).all()


def test_map_strips_permutation():
    r = np.random.default_rng(5)
    f, w = T(r.normal(size=(3, 4, 2))), T(r.normal(size=(2, 4, 6)))
    out = map_strips(f, w)
    swapped = map_strips(f[..., [1, 0]], w[[1, 0]])
    assert torch.equal(swapped, out[..., [1, 0]])
    # no sharing: strip 0 with strip 1's weights gives something else
    assert not torch.allclose(map_strips(f, w[[1, 1]])[..., 0], out[..., 0])


def test_map_strips_shape_error():
    with pytest.raises(DimensionError):
        map_strips(torch.zeros(2, 4, 3, dtype=DTYPE), torch.zeros(2, 4, 5, dtype=DTYPE))


def test_mapping_module_output(openpose):
    spec = build_pyramid(openpose)
    head = PyramidMapping(spec, channels=8, frames=5, rng=Rng(0), out_dim=512)
    out = head(torch.ones(2, 8, 5, 18, dtype=DTYPE))
    assert out.shape == (2, 512, 6)
    assert len(head.kernels) == 6 and head.fc.shape == (6, 8, 512)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mapping_gradients(openpose, seed):
    spec = build_pyramid(openpose, (1, 2, 3))
    head = PyramidMapping(spec, channels=3, frames=4, rng=Rng(seed), out_dim=2)
    with torch.no_grad():
        for k in head.kernels:
            k.add_(T(np.random.default_rng(seed).normal(size=k.shape)) * 0.1)
    f = T(np.random.default_rng(seed + 5).normal(size=(2, 3, 4, 18)))
    weights = T(np.random.default_rng(seed + 6).normal(size=(2, 2, 6)))

    def loss(x, *ps):
        return (head(x) * weights).sum()

    assert grad_check(loss, [f] + list(head.parameters())) <= 1e-4
