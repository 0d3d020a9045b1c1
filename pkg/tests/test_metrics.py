import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndec.images import ImageBuffer
from ndec.metrics import (RetrievalReport, UndefinedVarianceError, pixcorr, rsa_heatmap,
                          saliency_topography, ssim, topk_retrieval, true_ranks)
from ndec.tensor import ContractError, Tensor, matmul

from .conftest import unit_rows


def chance_top1(rng, trials, G=200, d=16):
    hits = 0
    g = unit_rows(rng, G, d)
    for _ in range(trials):
        q = unit_rows(rng, 1, d)
        hits += int(true_ranks(q @ g.T, [rng.integers(G)])[0] == 0)
    return hits / trials


class TestRetrieval:
    def test_hand_ranking(self):
        # true items land at ranks 1, 2 and 7 (1-based)
        g = np.eye(8)
        q = np.zeros((3, 8))
        sims = [np.linspace(1.0, 0.3, 8) for _ in range(3)]
        for i, (s, r) in enumerate(zip(sims, (0, 1, 6))):
            q[i] = s
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        rep = topk_retrieval(q, g, [0, 1, 6])
        assert rep.top1 == pytest.approx(1 / 3)
        assert rep.top5 == pytest.approx(2 / 3)
        assert rep.n_queries == 3 and rep.n_gallery == 8

    def test_small_gallery_rejected(self, rng):
        with pytest.raises(ContractError):
            topk_retrieval(unit_rows(rng, 2, 4), unit_rows(rng, 4, 4), [0, 1])

    def test_unnormalised_rejected(self, rng):
        with pytest.raises(ContractError):
            topk_retrieval(2 * unit_rows(rng, 2, 4), unit_rows(rng, 6, 4), [0, 1])

    def test_bad_index_rejected(self, rng):
        with pytest.raises(ContractError):
            topk_retrieval(unit_rows(rng, 2, 4), unit_rows(rng, 6, 4), [0, 6])

    def test_ties_go_to_lower_index(self):
        sims = np.array([[0.5, 0.5, 0.5]])
        assert list(true_ranks(sims, [0])) == [0]
        assert list(true_ranks(sims, [2])) == [2]

    def test_top1_above_top5_is_a_contract_violation(self):
        with pytest.raises(ContractError):
            RetrievalReport(0.6, 0.5, 10, 10)

    def test_per_class_counts(self, rng):
        g = unit_rows(rng, 6, 8)
        rep = topk_retrieval(g[[0, 0, 3]], g, [0, 0, 3], labels=[0, 0, 3])
        assert rep.per_class == {"0": {"n": 2, "top1_hits": 2, "top5_hits": 2},
                                 "3": {"n": 1, "top1_hits": 1, "top5_hits": 1}}

    def test_chance_level(self):
        p = chance_top1(np.random.default_rng(0), 2000)
        assert abs(p - 1 / 200) < 3 * np.sqrt(0.005 * 0.995 / 2000)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    q, g = unit_rows(rng, 7, 6), unit_rows(rng, 9, 6)
    idx = rng.integers(9, size=7)
    R, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    a, b = topk_retrieval(q, g, idx), topk_retrieval(q @ R, g @ R, idx)
    assert (a.top1, a.top5) == (b.top1, b.top5)


class TestRSA:
    def test_orthonormal_is_identity(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        np.testing.assert_allclose(rsa_heatmap(Q[:6]).matrix, np.eye(6), atol=1e-6)

    def test_block_structure(self, rng):
        a, b = unit_rows(rng, 1, 5)[0], unit_rows(rng, 1, 5)[0]
        emb = np.stack([a, b, a, b])
        m = rsa_heatmap(emb, order=[0, 2, 1, 3])
        np.testing.assert_allclose(m.matrix[:2, :2], 1.0, atol=1e-12)
        np.testing.assert_allclose(m.matrix[2:, 2:], 1.0, atol=1e-12)

    def test_symmetric_bounded(self, rng):
        m = rsa_heatmap(rng.standard_normal((8, 3))).matrix
        np.testing.assert_array_equal(m, m.T)
        assert np.all(np.abs(m) <= 1.0)

    def test_zero_row(self, rng):
        e = rng.standard_normal((3, 4))
        e[1] = 0
        with pytest.raises(ContractError):
            rsa_heatmap(e)

    def test_bad_order(self, rng):
        with pytest.raises(ContractError):
            rsa_heatmap(rng.standard_normal((3, 4)), order=[0, 0, 1])


class TestSaliency:
    def test_linear_surrogate(self, rng):
        C, T, d = 5, 6, 3
        W = rng.standard_normal((C * T, d))
        enc = lambda x: matmul(x.reshape(1, C * T), Tensor(W))  # noqa: E731
        ep = rng.standard_normal((C, T))
        target = (ep.reshape(-1) @ W)  # cos is maximal, so take a different target
        target = target + rng.standard_normal(d)
        topo = saliency_topography(ep, enc, target)
        # gradient of cos(xW, t) w.r.t. x is (W g) for some g, so the channel score
        # equals the mean |W g| over that channel's time steps
        f = ep.reshape(-1) @ W
        n = np.linalg.norm(f)
        tu = target / np.linalg.norm(target)
        g = tu / n - (f @ tu) * f / n ** 3
        ref = np.abs((W @ g).reshape(C, T)).mean(axis=1)
        np.testing.assert_allclose(topo.scores, ref / ref.max(), rtol=1e-8)
        assert not topo.degenerate

    def test_scale_invariant_ranking(self, rng):
        W = rng.standard_normal((20, 3))
        enc = lambda x: matmul(x.reshape(1, 20), Tensor(W))  # noqa: E731
        ep, t = rng.standard_normal((4, 5)), rng.standard_normal(3)
        a = saliency_topography(ep, enc, t).scores
        b = saliency_topography(3.0 * ep, enc, t).scores
        np.testing.assert_allclose(a, b, rtol=1e-8)

    def test_degenerate(self, rng):
        enc = lambda x: Tensor(np.ones((1, 3)))  # noqa: E731
        topo = saliency_topography(rng.standard_normal((4, 5)), enc, np.ones(3))
        assert topo.degenerate and not topo.scores.any()

    def test_zero_target(self, rng):
        with pytest.raises(ContractError):
            saliency_topography(rng.standard_normal((4, 5)), lambda x: x, np.zeros(3))


class TestPixCorr:
    def test_self_and_inverse(self, rng):
        a = rng.random((16, 16))
        assert pixcorr(ImageBuffer(a), ImageBuffer(a)) == pytest.approx(1.0)
        assert pixcorr(ImageBuffer(a), ImageBuffer(1 - a)) == pytest.approx(-1.0)

    def test_affine_invariance(self, rng):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        ref = pixcorr(ImageBuffer(a), ImageBuffer(b))
        assert pixcorr(ImageBuffer(0.5 * a + 0.2), ImageBuffer(b)) == pytest.approx(ref, abs=1e-12)

    def test_constant_image(self, rng):
        with pytest.raises(UndefinedVarianceError):
            pixcorr(ImageBuffer(np.full((8, 8), 0.3)), ImageBuffer(rng.random((8, 8))))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractError):
            pixcorr(ImageBuffer(rng.random((8, 8))), ImageBuffer(rng.random((8, 9))))


class TestSSIM:
    def test_self_is_one(self, rng):
        a = ImageBuffer(rng.random((32, 32, 3)))
        assert ssim(a, a) == 1.0

    def test_noise(self, rng):
        a, b = ImageBuffer(rng.random((64, 64))), ImageBuffer(rng.random((64, 64)))
        assert abs(ssim(a, b)) < 0.1

    def test_brightness_shift_between(self, rng):
        y, x = np.mgrid[0:64, 0:64] / 63.0
        px = 0.4 * (np.sin(6 * x) * np.cos(4 * y) + 1) + 0.05
        a = ImageBuffer(px)
        shifted = ImageBuffer(np.clip(px + 0.2, 0, 1))
        noise = ImageBuffer(rng.random((64, 64)))
        s = ssim(a, shifted)
        assert ssim(a, noise) < s < 1.0

    def test_too_small(self, rng):
        a = ImageBuffer(rng.random((6, 6)))
        with pytest.raises(ContractError):
            ssim(a, a)
