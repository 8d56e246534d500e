import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajfuse import numeric as nx
from trajfuse.fusion import (
    attention_mask,
    build_social_map,
    fuse,
    fuse_con,
    fuse_scnn,
    fuse_sp,
    init_con,
    init_mask_head,
    init_scnn,
    init_sp,
    uniform_mask,
)
from trajfuse.numeric import ParamStore, Tensor

from gradcheck import TOL, gradcheck

K = 11


def params(seed=0, random_bias=True):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    init_mask_head(s, rng, K)
    init_scnn(s, rng)
    init_sp(s, rng)
    init_con(s, rng, 8)
    if random_bias:
        for name, t in s.items():
            if name.endswith("bias"):
                t.data[:] = rng.normal(scale=0.2, size=t.shape)
        # empty cells make a conv1 pre-activation equal its bias; keep biases off the ReLU kink
        b1 = s["fusion.conv1.bias"].data
        b1[:] = np.sign(b1) * np.maximum(np.abs(b1), 0.05)
    return s


def random_map(rng, n=3):
    enc = Tensor(rng.normal(size=(1, n, 20)).astype(np.float32))
    cells = np.array([[[i * 3 % K, (i * 5 + 1) % K] for i in range(n)]])
    return build_social_map(enc, cells, np.ones((1, n), bool), K), enc, cells


class TestSocialMap:
    def test_empty(self):
        m = build_social_map(Tensor(np.zeros((1, 1, 20), np.float32)), np.zeros((1, 1, 2), int), np.zeros((1, 1), bool), K)
        assert m.shape == (1, K, K, 20) and not m.data.any()

    def test_scatter(self):
        v = np.arange(20, dtype=np.float32) + 1
        m = build_social_map(Tensor(v.reshape(1, 1, 20)), np.array([[[2, 3]]]), np.ones((1, 1), bool), K).data[0]
        np.testing.assert_array_equal(m[2, 3], v)
        m[2, 3] = 0
        assert not m.any()

    def test_conservation(self):
        rng = np.random.default_rng(0)
        m, enc, _ = random_map(rng, 5)
        np.testing.assert_allclose(m.data.sum(axis=(1, 2)), enc.data.sum(axis=1), rtol=1e-6)

    def test_duplicate_cell_rejected(self):
        with pytest.raises(ValueError, match="same cell"):
            build_social_map(Tensor(np.ones((1, 2, 20))), np.array([[[1, 1], [1, 1]]]), np.ones((1, 2), bool), K)

    def test_invalid_slots_ignored(self):
        enc = Tensor(np.ones((1, 2, 20), np.float32))
        m = build_social_map(enc, np.array([[[1, 1], [1, 1]]]), np.array([[True, False]]), K)
        assert m.data.sum() == 20


class TestAttentionMask:
    def test_zero_params_uniform(self):
        s = params()
        s["fusion.mask_fc.weight"].data[:] = 0
        s["fusion.mask_fc.bias"].data[:] = 0
        m = attention_mask(Tensor(np.random.default_rng(0).normal(size=(2, 20))), s, K).data
        np.testing.assert_allclose(m, 1 / 121, rtol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 30))
    def test_normalised_and_positive(self, seed, scale):
        rng = np.random.default_rng(seed)
        s = params(seed % 7)
        s["fusion.mask_fc.weight"].data *= scale
        m = attention_mask(Tensor(rng.normal(size=(3, 20)).astype(np.float32)), s, K).data
        assert m.shape == (3, K, K)
        np.testing.assert_allclose(m.sum(axis=(1, 2)), 1.0, atol=1e-5)
        assert np.all(m >= 0)

    def test_non_degenerate(self):
        rng = np.random.default_rng(1)
        m = attention_mask(Tensor(rng.normal(size=(2, 20)).astype(np.float32)), params(), K).data
        assert not np.allclose(m[0], m[1])


class TestSCNN:
    def test_shapes(self):
        m, _, _ = random_map(np.random.default_rng(0))
        out, feats = fuse_scnn(m, uniform_mask(1, K), params(), return_features=True)
        assert feats["conv1"].shape == (1, 6, 6, 64)
        assert feats["conv2"].shape == (1, 3, 3, 16)
        assert feats["pool"].shape == (1, 1, 1, 16)
        assert out.shape == (1, 20)

    def test_unbatched_input(self):
        m, _, _ = random_map(np.random.default_rng(0))
        s = params()
        a = fuse_scnn(m[0], uniform_mask(1, K)[0], s)
        b = fuse_scnn(m, uniform_mask(1, K), s)
        assert a.shape == (20,)
        np.testing.assert_array_equal(a.data, b.data[0])

    def test_zero_map_depends_only_on_biases(self):
        s = params(3)
        zero = Tensor(np.zeros((1, K, K, 20), np.float32))
        a = fuse_scnn(zero, uniform_mask(1, K), s).data
        b = fuse_scnn(zero, attention_mask(Tensor(np.ones((1, 20), np.float32)), s, K), s).data
        assert a.tobytes() == b.tobytes()
        # closed form: relu(b1) through conv2 at the centre, then max over the single pooled cell
        b1 = np.maximum(s["fusion.conv1.bias"].data, 0)
        ones = Tensor(np.broadcast_to(b1, (1, 6, 6, 64)).copy())
        a2 = nx.conv2d(ones, s["fusion.conv2.weight"], s["fusion.conv2.bias"], stride=2, padding=2).data
        pooled = a2[0, :2, :2].max(axis=(0, 1))
        ref = pooled @ s["fusion.embed_fc.weight"].data + s["fusion.embed_fc.bias"].data
        np.testing.assert_allclose(a[0], ref, rtol=1e-5, atol=1e-6)

    def test_uniform_mask_equals_hand_scaling(self):
        m, _, _ = random_map(np.random.default_rng(2))
        s = params()
        ones = Tensor(np.ones((1, K, K), np.float32))
        scaled = Tensor(m.data * np.float32(1 / 121))
        np.testing.assert_allclose(fuse_scnn(m, uniform_mask(1, K), s).data, fuse_scnn(scaled, ones, s).data,
                                   rtol=1e-6, atol=1e-7)

    def test_mask_shape_mismatch(self):
        m, _, _ = random_map(np.random.default_rng(2))
        with pytest.raises(ValueError):
            fuse_scnn(m, uniform_mask(1, 9), params())

    def test_locality_of_first_conv(self):
        s = params()
        enc = Tensor(np.random.default_rng(3).normal(size=(1, 1, 20)).astype(np.float32))
        valid = np.ones((1, 1), bool)
        feats = []
        for cell in ([[[0, 0]]], [[[10, 10]]]):
            m = build_social_map(enc, np.array(cell), valid, K)
            feats.append(fuse_scnn(m, uniform_mask(1, K), s, return_features=True)[1]["conv1"].data[0])
        diff = np.abs(feats[0] - feats[1]).max(axis=-1) > 0
        # cell 0 influences output rows/cols {0}; cell 10 influences {5}
        changed = set(zip(*np.nonzero(diff)))
        assert changed <= {(0, 0), (5, 5)} and changed


class TestSP:
    def test_zero_map_bias_only(self):
        s = params()
        out = fuse_sp(Tensor(np.zeros((1, K, K, 20), np.float32)), uniform_mask(1, K), s).data[0]
        np.testing.assert_array_equal(out, s["fusion_sp.embed_fc.bias"].data)

    def test_single_neighbor_weighting(self):
        s = params()
        v = np.random.default_rng(0).normal(size=20).astype(np.float32)
        m = build_social_map(Tensor(v.reshape(1, 1, 20)), np.array([[[4, 7]]]), np.ones((1, 1), bool), K)
        mask = np.full((1, K, K), 0.001, np.float32)
        mask[0, 4, 7] = 0.3
        _, feats = fuse_sp(m, Tensor(mask), s, return_features=True)
        np.testing.assert_allclose(feats["pooled"].data[0], np.float32(0.3) * v, rtol=1e-6)
        mask[0, 4, 7] = 0.0
        _, feats = fuse_sp(m, Tensor(mask), s, return_features=True)
        assert not feats["pooled"].data.any()

    def test_permuting_cells_with_mask(self):
        rng = np.random.default_rng(1)
        s = params()
        enc = Tensor(rng.normal(size=(1, 2, 20)).astype(np.float32))
        mask = rng.random((1, K, K)).astype(np.float32)
        m1 = build_social_map(enc, np.array([[[1, 2], [8, 9]]]), np.ones((1, 2), bool), K)
        m2 = build_social_map(enc, np.array([[[8, 9], [1, 2]]]), np.ones((1, 2), bool), K)
        mask2 = mask.copy()
        mask2[0, 1, 2], mask2[0, 8, 9] = mask[0, 8, 9], mask[0, 1, 2]
        np.testing.assert_allclose(fuse_sp(m1, Tensor(mask), s).data, fuse_sp(m2, Tensor(mask2), s).data, rtol=1e-6)

    def test_empty_scene_independent_of_mask(self):
        s = params()
        zero = Tensor(np.zeros((1, K, K, 20), np.float32))
        rand_mask = Tensor(np.random.default_rng(0).dirichlet(np.ones(121)).reshape(1, K, K).astype(np.float32))
        assert fuse_sp(zero, uniform_mask(1, K), s).data.tobytes() == fuse_sp(zero, rand_mask, s).data.tobytes()


class TestCON:
    def test_zero_neighbors_bias_only(self):
        s = params()
        out, dropped = fuse_con(Tensor(np.zeros((1, 1, 20))), np.zeros((1, 1), bool), np.zeros((1, 1)), s)
        np.testing.assert_array_equal(out.data[0], s["fusion_con.embed_fc.bias"].data)
        assert dropped == 0 and out.shape == (1, 20)

    def test_farthest_dropped(self):
        s = params()
        rng = np.random.default_rng(0)
        enc = rng.normal(size=(1, 10, 20)).astype(np.float32)
        dist = np.arange(10, dtype=float)[::-1].reshape(1, 10)
        out, dropped = fuse_con(Tensor(enc), np.ones((1, 10), bool), dist, s)
        assert dropped == 2
        nearest = enc[0, ::-1][:8].reshape(-1)
        ref = nearest @ s["fusion_con.embed_fc.weight"].data + s["fusion_con.embed_fc.bias"].data
        np.testing.assert_allclose(out.data[0], ref, rtol=1e-5, atol=1e-6)


class TestFuse:
    def test_concatenation(self):
        a = Tensor(np.arange(20, dtype=np.float32).reshape(1, 20))
        b = Tensor(-np.arange(20, dtype=np.float32).reshape(1, 20))
        out = fuse(a, b).data[0]
        assert out.shape == (40,)
        np.testing.assert_array_equal(out[:20], a.data[0])
        np.testing.assert_array_equal(out[20:], b.data[0])

    def test_wrong_dims(self):
        with pytest.raises(ValueError):
            fuse(Tensor(np.zeros((1, 19))), Tensor(np.zeros((1, 20))))


@pytest.mark.parametrize("seed", range(20))
def test_mask_and_embed_gradients(seed):
    """Gradient check through mask FC, both convs, pooling and the embed FC."""
    rng = np.random.default_rng(seed)
    s = params(seed)
    n = 4
    cells = np.array([[[r, c] for r, c in zip(rng.choice(K, n, replace=False), rng.integers(0, K, n))]])
    arrays = {name: t.data.astype(float) for name, t in s.items() if not name.startswith("fusion_")}
    arrays["enc"] = rng.normal(size=(1, n, 20))
    arrays["target"] = rng.normal(size=(1, 20))
    r = rng.normal(size=(1, 20))

    def loss(t):
        st_ = ParamStore.wrap({k: v for k, v in t.items() if k.startswith("fusion.")})
        m = build_social_map(t["enc"], cells, np.ones((1, n), bool), K)
        out = fuse_scnn(m, attention_mask(t["target"], st_, K), st_)
        return (out * Tensor(r.astype(out.dtype))).sum()

    errs = gradcheck(loss, arrays, max_probes=25, seed=seed)
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("seed", range(20))
def test_sp_and_con_gradients(seed):
    rng = np.random.default_rng(seed)
    s = params(seed)
    arrays = {name: t.data.astype(float) for name, t in s.items() if name.startswith("fusion_")}
    arrays["enc"] = rng.normal(size=(2, 5, 20))
    valid = rng.random((2, 5)) < 0.7
    dist = rng.random((2, 5))
    cells = np.array([[[i, i] for i in range(5)]] * 2)
    mask = Tensor(rng.dirichlet(np.ones(121), size=2).reshape(2, K, K))

    def loss(t):
        st_ = ParamStore.wrap({k: v for k, v in t.items() if k.startswith("fusion_")})
        sp = fuse_sp(build_social_map(t["enc"], cells, valid, K), Tensor(mask.data.astype(t["enc"].dtype)), st_)
        con, _ = fuse_con(t["enc"], valid, dist, st_, 8)
        return nx.square(sp).sum() + (con * 0.5).sum()

    errs = gradcheck(loss, arrays, max_probes=25, seed=seed)
    assert max(errs.values()) < TOL, errs
