import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsbias import gradcheck
from zsbias import losses as L
from zsbias.errors import InvalidArgumentError


def vol(values, shape):
    return np.asarray(values, dtype=float).reshape((1,) + shape)


def random_pair(seed, shape=(1, 8, 8, 8)):
    r = np.random.default_rng(seed)
    return r.uniform(0, 1, shape), r.uniform(0, 1, shape)


class TestSmoothness:
    def test_constant_is_zero(self):
        assert L.smoothness_loss(np.full((1, 4, 4, 4), 0.3)) == 0.0

    def test_two_voxel_example(self):
        # voxel 0: (0.5)^2, voxel 1: 0 (last slice) -> mean 0.125
        assert L.smoothness_loss(vol([0.0, 0.5], (2, 1, 1))) == pytest.approx(0.125, abs=1e-15)

    def test_brute_force(self, rng):
        m = rng.normal(size=(1, 3, 4, 2))
        total = 0.0
        _, D, H, W = m.shape
        for d in range(D):
            for h in range(H):
                for w in range(W):
                    s = 0.0
                    if d + 1 < D:
                        s += abs(m[0, d + 1, h, w] - m[0, d, h, w])
                    if h + 1 < H:
                        s += abs(m[0, d, h + 1, w] - m[0, d, h, w])
                    if w + 1 < W:
                        s += abs(m[0, d, h, w + 1] - m[0, d, h, w])
                    total += s * s
        assert L.smoothness_loss(m) == pytest.approx(total / m.size, rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**16), c=st.floats(-10, 10), shift=st.floats(-5, 5))
    def test_scaling_and_shift(self, seed, c, shift):
        m = np.random.default_rng(seed).normal(size=(1, 4, 3, 5))
        base = L.smoothness_loss(m)
        assert L.smoothness_loss(c * m) == pytest.approx(c * c * base, rel=1e-9, abs=1e-12)
        assert L.smoothness_loss(m + shift) == pytest.approx(base, rel=1e-9, abs=1e-12)


class TestSpatialConsistency:
    def test_identical_is_zero(self, rng):
        y = rng.uniform(0, 1, (1, 8, 8, 8))
        assert L.spatial_consistency_loss(y, y) == 0.0

    def test_global_shift_invariance(self, rng):
        y = rng.uniform(0, 1, (1, 8, 8, 8))
        assert L.spatial_consistency_loss(y + 0.25, y) == pytest.approx(0.0, abs=1e-24)

    def test_two_block_example(self):
        y = vol([0.2, 0.6], (2, 1, 1))
        hc = vol([0.2, 0.8], (2, 1, 1))
        assert L.spatial_consistency_loss(hc, y, region=1) == pytest.approx(0.04, abs=1e-15)

    def test_pooling_feeds_the_pairs(self):
        y = np.concatenate([np.full((1, 2, 2, 2), 0.2), np.full((1, 2, 2, 2), 0.6)], axis=1)
        hc = np.concatenate([np.full((1, 2, 2, 2), 0.2), np.full((1, 2, 2, 2), 0.8)], axis=1)
        assert L.spatial_consistency_loss(hc, y, region=2) == pytest.approx(0.04, abs=1e-15)

    @pytest.mark.parametrize("nb,count", [(6, 3), (18, 9), (26, 13)])
    def test_neighborhood_sizes(self, nb, count):
        offs = L.half_offsets(nb)
        assert len(offs) == count
        assert len(set(offs) | {tuple(-o for o in off) for off in offs}) == nb

    def test_unknown_neighborhood(self):
        with pytest.raises(InvalidArgumentError):
            L.half_offsets(8)

    @pytest.mark.parametrize("nb", [6, 18, 26])
    def test_grid_symmetries(self, nb):
        hc, y = random_pair(3)
        base = L.spatial_consistency_loss(hc, y, 2, nb)
        for f in (lambda a: a[:, ::-1], lambda a: a[:, :, :, ::-1], lambda a: a.transpose(0, 2, 1, 3)):
            assert L.spatial_consistency_loss(f(hc), f(y), 2, nb) == pytest.approx(base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            L.spatial_consistency_loss(np.zeros((1, 4, 4, 4)), np.zeros((1, 4, 4, 2)))


class TestExposure:
    def test_matching_target(self):
        assert L.exposure_loss(np.full((1, 8, 8, 8), 0.6), 8, 0.6) == pytest.approx(0.0, abs=1e-30)

    def test_single_block(self):
        assert L.exposure_loss(np.full((1, 8, 8, 8), 0.1), 8, 0.6) == pytest.approx(0.25, abs=1e-15)

    def test_block_mean_not_voxelwise(self):
        hc = np.zeros((1, 2, 1, 1))
        hc[0, 1] = 1.2
        assert L.exposure_loss(hc, 2, 0.6) == pytest.approx(0.0, abs=1e-30)


class TestPrior:
    def test_exact_reconstruction(self, rng):
        x = rng.uniform(0.1, 1, (1, 4, 4, 4))
        assert L.prior_loss(0.5 * x, x, np.full_like(x, 0.5)) == 0.0

    def test_half_bias_example(self):
        s = (1, 4, 4, 4)
        assert L.prior_loss(np.full(s, 0.5), np.full(s, 1.0), np.full(s, 0.5)) == 0.0

    def test_fidelity_example(self):
        s = (1, 4, 4, 4)
        assert L.prior_loss(np.full(s, 0.5), np.full(s, 0.5), np.full(s, 0.5)) == pytest.approx(0.25)


class TestTotal:
    def test_composed_zero_case(self):
        s = (1, 8, 8, 8)
        w = L.LossWeights()
        y = np.full(s, w.exposure_target)
        b = L.total_loss(y, y, np.zeros(s), np.ones(s), w)
        # block means of 512 copies of E can differ from E by an ulp
        assert all(v == pytest.approx(0.0, abs=1e-30) for v in b.to_dict().values())

    def test_total_is_weighted_sum(self, rng):
        w = L.LossWeights(w_smo_alpha=7.0, w_smo_bias=3.0, w_spa=2.0, w_exp=0.5, w_fidelity=1.5)
        s = (1, 8, 8, 8)
        b = L.total_loss(rng.uniform(0, 1, s), rng.uniform(0, 1, s), rng.uniform(-1, 1, s), rng.uniform(0, 1, s), w)
        manual = (w.w_smo_alpha * b.smo_alpha + w.w_spa * b.spa + w.w_exp * b.exp
                  + w.w_fidelity * b.fidelity + w.w_smo_bias * b.smo_bias)
        assert b.total == pytest.approx(manual, rel=1e-12)

    def test_defaults(self):
        w = L.LossWeights()
        assert (w.w_smo_alpha, w.w_smo_bias, w.w_spa, w.w_exp, w.w_fidelity) == (1600, 1600, 1, 1, 1)
        assert (w.exposure_target, w.spa_region, w.exp_region, w.neighborhood) == (0.6, 4, 8, 6)

    @pytest.mark.parametrize("kw", [dict(w_spa=-1), dict(exposure_target=1.0), dict(spa_region=0), dict(neighborhood=8)])
    def test_weight_validation(self, kw):
        with pytest.raises(InvalidArgumentError):
            L.LossWeights(**kw)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_all_terms_non_negative(self, seed):
        r = np.random.default_rng(seed)
        s = (1, 5, 6, 7)
        b = L.total_loss(r.uniform(0, 1, s), r.uniform(0, 1, s), r.uniform(-1, 1, s), r.uniform(0, 1, s))
        assert all(v >= 0 for v in b.to_dict().values())

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_wrt_alpha_map(self, seed):
        result = gradcheck.check_total_loss_alpha(np.random.default_rng(seed))
        assert result.max_rel_error < 1e-4
        assert result.skipped < 0.1 * result.checked


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("op", ["hc_iterate", "smoothness_loss", "spatial_consistency_loss", "exposure_loss", "prior_loss"])
def test_gradient_check_losses(op, seed):
    result = gradcheck.CHECKS[op](np.random.default_rng(seed), 4 + seed)
    assert result.max_rel_error < 1e-4, result
    assert result.skipped < 0.1 * result.checked
