"""Contrastive objectives against brute-force oracles and exact identities."""

import numpy as np
import pytest

from cyclecontrast import losses as L
from cyclecontrast import tensor as T
from cyclecontrast.errors import ContractError, ParameterError
from cyclecontrast.rng import make_rng

from oracles import cycle_oracle, infonce_oracle, snn_oracle

# frozen 40-digit evaluations at temperature 0.07
TAIL = 6.248745604778486e-07          # exp(-1/t) / (1 + exp(-1/t))
LOG1P_TAIL = 6.248747557120382e-07    # log(1 + exp(-1/t))

CFG = L.LossConfig()


def unit64(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def random_instance(seed, n_max=8, d_max=16, m_max=64):
    rng = make_rng(seed, 0x4F52)
    n = int(rng.integers(1, n_max + 1))
    d = int(rng.integers(2, d_max + 1))
    m = int(rng.integers(0, m_max + 1))
    return (
        unit64(rng, n, d),
        unit64(rng, n, d),
        unit64(rng, m, d),
    )


class TestIntraImage:
    def test_no_negatives_is_zero(self):
        rng = make_rng(0)
        q = T.Tensor(unit64(rng, 3, 5))
        out = L.intra_image_loss(q, unit64(rng, 3, 5), np.zeros((0, 5)), CFG)
        assert float(out.data) == 0.0

    def test_aligned_pair_one_orthogonal_negative(self):
        q = T.Tensor(np.array([[1.0, 0.0]]))
        k = np.array([[1.0, 0.0]])
        neg = np.array([[0.0, 1.0]])
        out = L.intra_image_loss(q, k, neg, CFG)
        assert float(out.data) == pytest.approx(LOG1P_TAIL, rel=1e-6)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_oracle(self, seed):
        q, k, negs = random_instance(seed)
        out = L.intra_image_loss(T.Tensor(q), k, negs, CFG)
        assert float(out.data) == pytest.approx(
            infonce_oracle(q, k, negs, CFG.temperature), abs=1e-5
        )

    def test_non_unit_rows_rejected(self):
        q = T.Tensor(np.array([[1.0, 1.0]]))  # norm sqrt(2)
        with pytest.raises(ContractError, match="q_i"):
            L.intra_image_loss(q, np.array([[1.0, 0.0]]), np.zeros((1, 2)), CFG)


class TestIntraVideo:
    def test_same_view_reduces_to_intra_image(self):
        rng = make_rng(4)
        q = unit64(rng, 5, 7)
        k = unit64(rng, 5, 7)
        negs = unit64(rng, 12, 7)
        video = L.intra_video_loss(T.Tensor(q), k, negs, CFG)
        image = L.intra_image_loss(T.Tensor(q), k, negs, CFG)
        assert float(video.data) == float(image.data)

    def test_no_negatives_is_zero(self):
        rng = make_rng(1)
        q = T.Tensor(unit64(rng, 2, 4))
        out = L.intra_video_loss(q, unit64(rng, 2, 4), np.zeros((0, 4)), CFG)
        assert float(out.data) == 0.0

    @pytest.mark.parametrize("seed", range(25, 50))
    def test_matches_oracle(self, seed):
        q, k, negs = random_instance(seed)
        out = L.intra_video_loss(T.Tensor(q), k, negs, CFG)
        assert float(out.data) == pytest.approx(
            infonce_oracle(q, k, negs, CFG.temperature), abs=1e-5
        )


class TestSoftNearestNeighbor:
    def test_single_neighbor_returned_verbatim(self):
        rng = make_rng(2)
        q = T.Tensor(unit64(rng, 4, 6))
        u = unit64(rng, 1, 6)
        res = L.soft_nearest_neighbor(q, u, CFG)
        np.testing.assert_allclose(res.q_hat.data, np.repeat(u, 4, axis=0), atol=1e-12)
        np.testing.assert_allclose(res.alpha.data, 1.0, atol=1e-12)

    def test_equal_similarities_give_column_mean(self):
        # all neighbors share the same dot product with the query
        q = T.Tensor(np.array([[1.0, 0.0, 0.0]]))
        c, s = 0.5, np.sqrt(1 - 0.25)
        u = np.array([[c, s, 0.0], [c, -s, 0.0], [c, 0.0, s], [c, 0.0, -s]])
        res = L.soft_nearest_neighbor(q, u, CFG)
        np.testing.assert_allclose(res.q_hat.data, u.mean(axis=0)[None, :], atol=1e-9)

    def test_two_neighbor_tail_weights(self):
        q = T.Tensor(np.array([[1.0, 0.0]]))
        u = np.array([[1.0, 0.0], [0.0, 1.0]])
        res = L.soft_nearest_neighbor(q, u, CFG)
        np.testing.assert_allclose(
            res.alpha.data, [[1.0 - TAIL, TAIL]], rtol=1e-6, atol=1e-13
        )
        np.testing.assert_allclose(
            res.q_hat.data, [[1.0 - TAIL, TAIL]], rtol=1e-6, atol=1e-13
        )

    def test_empty_neighbors_rejected(self):
        q = T.Tensor(np.array([[1.0, 0.0]]))
        with pytest.raises(ParameterError):
            L.soft_nearest_neighbor(q, np.zeros((0, 2)), CFG)

    @pytest.mark.parametrize("seed", range(50, 70))
    def test_matches_oracle(self, seed):
        rng = make_rng(seed)
        n, d, m = 5, 9, 17
        q = unit64(rng, n, d)
        u = unit64(rng, m, d)
        res = L.soft_nearest_neighbor(T.Tensor(q), u, CFG)
        alphas, q_hats = snn_oracle(q, u, CFG.temperature)
        np.testing.assert_allclose(res.alpha.data, alphas, atol=1e-9)
        np.testing.assert_allclose(res.q_hat.data, q_hats, atol=1e-9)
        # convexity: weights sum to one, reconstruction stays inside the ball
        np.testing.assert_allclose(res.alpha.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(np.linalg.norm(res.q_hat.data, axis=1) <= 1.0 + 1e-6)

    def test_selected_subset_matches_shared_path(self):
        rng = make_rng(71)
        q = unit64(rng, 3, 6)
        u = unit64(rng, 8, 6)
        full = L.soft_nearest_neighbor(T.Tensor(q), u, CFG)
        selected = np.tile(np.arange(8), (3, 1))
        gathered = L.soft_nearest_neighbor(T.Tensor(q), u, CFG, selected=selected)
        np.testing.assert_allclose(gathered.q_hat.data, full.q_hat.data, atol=1e-9)

    def test_gradients_reach_query_only(self):
        rng = make_rng(72)
        q = T.Tensor(unit64(rng, 3, 6), requires_grad=True)
        u = unit64(rng, 8, 6)
        with T.Tape() as tape:
            res = L.soft_nearest_neighbor(q, u, CFG)
            out = T.sum_all(res.q_hat)
        tape.backward(out)
        assert q.grad is not None and np.any(q.grad != 0)


class TestCycleLoss:
    def test_empty_negatives_is_zero(self):
        rng = make_rng(5)
        q_hat = T.Tensor(rng.standard_normal((3, 4)))
        out = L.cycle_loss(q_hat, unit64(rng, 3, 4), np.zeros((0, 4)), CFG)
        assert float(out.data) == 0.0

    def test_neighbor_equals_key_reduces_to_intra_value(self):
        # U = {k_j}: the reconstruction is k_j itself, so the loss equals
        # the aligned-pair value with one orthogonal negative
        k = np.array([[1.0, 0.0]])
        q = T.Tensor(np.array([[0.8, 0.6]]))
        snn = L.soft_nearest_neighbor(q, k, CFG)
        out = L.cycle_loss(snn.q_hat, k, np.array([[0.0, 1.0]]), CFG)
        assert float(out.data) == pytest.approx(LOG1P_TAIL, rel=1e-6)

    @pytest.mark.parametrize("seed", range(70, 95))
    def test_matches_oracle(self, seed):
        rng = make_rng(seed, 0xCC)
        n, d = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        m = int(rng.integers(1, 33))
        r = int(rng.integers(1, 33))
        q = unit64(rng, n, d)
        u = unit64(rng, m, d)
        k = unit64(rng, n, d)
        negs = unit64(rng, r, d)
        snn = L.soft_nearest_neighbor(T.Tensor(q), u, CFG)
        out = L.cycle_loss(snn.q_hat, k, negs, CFG)
        _, q_hats = snn_oracle(q, u, CFG.temperature)
        assert float(out.data) == pytest.approx(
            cycle_oracle(q_hats, k, negs, CFG.temperature), abs=1e-5
        )

    def test_per_row_extra_negatives_match_oracle(self):
        rng = make_rng(101)
        n, d, r, e = 4, 6, 5, 3
        q_hat = rng.standard_normal((n, d))
        k = unit64(rng, n, d)
        negs = unit64(rng, r, d)
        extra = np.stack([unit64(rng, e, d) for _ in range(n)])
        out = L.cycle_loss(T.Tensor(q_hat), k, negs, CFG, extra_negatives=extra)
        assert float(out.data) == pytest.approx(
            cycle_oracle(q_hat, k, negs, CFG.temperature, extra_negatives=extra),
            abs=1e-5,
        )

    def test_equation_and_pseudocode_variants_coincide_when_sets_match(self):
        # the literal-denominator variant uses the neighbor set as negatives;
        # when the remainder happens to equal the neighbor set the two
        # configurations are the same computation
        rng = make_rng(103)
        u = unit64(rng, 9, 5)
        q_hat = rng.standard_normal((3, 5))
        k = unit64(rng, 3, 5)
        literal = L.cycle_loss(T.Tensor(q_hat), k, u, L.LossConfig(backward_negatives="neighbor_set"))
        pseudocode = L.cycle_loss(T.Tensor(q_hat), k, u.copy(), CFG)
        assert float(literal.data) == float(pseudocode.data)

    def test_monotone_in_positive_similarity(self):
        k = np.array([[1.0, 0.0, 0.0]])
        negs = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        values = []
        for sim in np.linspace(-0.9, 0.9, 13):
            q_hat = np.array([[sim, np.sqrt(1 - sim**2), 0.0]])
            out = L.cycle_loss(T.Tensor(q_hat), k, negs, CFG)
            values.append(float(out.data))
        assert all(a > b for a, b in zip(values, values[1:]))


class TestCombinedLoss:
    def test_lambda_zero_equals_intra_video(self):
        rng = make_rng(6)
        q, k, negs = unit64(rng, 4, 8), unit64(rng, 4, 8), unit64(rng, 10, 8)
        cfg = L.LossConfig(lam=0.0)
        intra = L.intra_video_loss(T.Tensor(q), k, negs, cfg)
        snn = L.soft_nearest_neighbor(T.Tensor(q), unit64(rng, 6, 8), cfg)
        cyc = L.cycle_loss(snn.q_hat, k, negs, cfg)
        total = L.combined_loss(intra, cyc, None, cfg)
        assert float(total.data) == float(intra.data)

    def test_weighting_arithmetic(self):
        one = T.Tensor(np.float64(1.0))
        total = L.combined_loss(one, T.Tensor(np.float64(1.0)), None, CFG)
        assert float(total.data) == pytest.approx(1.1, abs=1e-12)

    def test_default_balance_is_point_one(self):
        assert L.LossConfig().lam == 0.1

    def test_intra_image_term_weighted(self):
        cfg = L.LossConfig(intra_image_weight=0.5)
        one = T.Tensor(np.float64(1.0))
        total = L.combined_loss(one, None, T.Tensor(np.float64(2.0)), cfg)
        assert float(total.data) == pytest.approx(2.0, abs=1e-12)

    def test_needs_at_least_one_part(self):
        with pytest.raises(ParameterError):
            L.combined_loss(None, None, None, CFG)


class TestDegeneracyProbe:
    @pytest.mark.parametrize("seed", range(50))
    def test_single_self_view_collapses_to_intra_video(self, seed):
        rng = make_rng(seed, 0xDE)
        n, d = int(rng.integers(1, 7)), int(rng.integers(2, 13))
        m = int(rng.integers(1, 25))
        q = unit64(rng, n, d)
        k_pp = unit64(rng, n, d)
        k_j = unit64(rng, n, d)
        negs = unit64(rng, m, d)
        cycle_val, intra_val = L.degeneracy_probe(T.Tensor(q), k_pp, k_j, negs, CFG)
        assert cycle_val == pytest.approx(intra_val, abs=1e-6)

    def test_self_view_dominates_mixing_weights(self):
        # one self view at similarity >= 0.9 plus one orthogonal neighbor:
        # nearly all weight lands on the self view
        q = np.array([[1.0, 0.0, 0.0]])
        k_pp = np.array([[0.9, np.sqrt(1 - 0.81), 0.0]])
        other = np.array([[0.0, 0.0, 1.0]])
        res = L.soft_nearest_neighbor(
            T.Tensor(q), np.vstack([k_pp, other]), CFG
        )
        assert res.alpha.data[0, 0] >= 0.999


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_all_losses_through_normalization(self, seed):
        from cyclecontrast.checks import gradcheck_losses

        worst = gradcheck_losses(seed=seed, trials=3)
        assert max(worst.values()) <= 1e-4
