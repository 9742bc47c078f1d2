"""Loss, training loop, threshold estimation, and evaluation metrics."""

import numpy as np
import pytest

from perceptmetric import train_eval as te
from perceptmetric.data import Triplet
from perceptmetric.errors import ConfigurationError, DataError
from perceptmetric.models import init_model


def brute_force_threshold(margins, is_hm):
    """Plain re-scan of every candidate threshold, applying the tie-breaks."""
    vals = sorted(set(abs(m) for m in margins))
    cands = [0.0]
    for a, b in zip(vals[:-1], vals[1:]):
        cands.append(0.5 * (a + b))
    cands.append(np.nextafter(vals[-1], np.inf))
    hm = [m for m, h in zip(margins, is_hm) if h]
    lm = [abs(m) for m, h in zip(margins, is_hm) if not h]
    best = None
    for xi in cands:
        f_h = sum(m >= xi for m in hm) / len(hm)
        f_l = sum(m < xi for m in lm) / len(lm)
        key = (abs(f_h - f_l), -(f_h + f_l), xi)
        if best is None or key < best[0]:
            best = (key, xi, f_h, f_l)
    return best[1], best[2], best[3]


class _FixedMarginModel:
    """Test double: embeds 1-d 'features' as themselves (euclidean)."""

    def embed(self, X):
        return np.atleast_2d(np.asarray(X, dtype=np.float64))


def margin_setup(hm_margins, lm_margins):
    """Construct 1-d features/triplets whose margins are exactly as given.

    Feature layout per triplet: base at 0, near at |near_d|, far at
    near_d + margin. Uses a fresh coordinate block per triplet.
    """
    feats = []
    trips = []
    for m, cls in [(m, "HM") for m in hm_margins] + [(m, "LM") for m in lm_margins]:
        base = len(feats)
        near_d = 1.0
        feats.extend([[0.0], [near_d], [near_d + m]])
        trips.append(Triplet(base, base + 1, base + 2, cls))
    return np.asarray(feats), trips


class TestRho:
    def test_near_equals_far_gives_zero(self):
        model = init_model("euclidean", 3)
        x = np.array([1.0, 2.0, 3.0])
        assert te.rho(model, x, x + 1, x + 1) == 0.0

    def test_euclidean_arithmetic(self):
        model = init_model("euclidean", 1)
        assert te.rho(model, [0.0], [1.0], [2.0]) == pytest.approx(3.0)

    def test_matches_two_distance_calls(self):
        model = init_model("perceptnet", 32, seed=0)
        rng = np.random.default_rng(0)
        b, n, f = rng.standard_normal((3, 32))
        want = model.distance(b, f) ** 2 - model.distance(b, n) ** 2
        assert te.rho(model, b, n, f) == pytest.approx(want, abs=1e-10)


class TestLossTerms:
    def test_hm_at_zero_rho_is_one(self):
        assert te.hm_loss_term(0.0) == pytest.approx(1.0)

    def test_lm_at_zero_rho_is_zero(self):
        assert te.lm_loss_term(0.0) == pytest.approx(0.0)

    def test_hm_at_ln2_is_half(self):
        assert te.hm_loss_term(np.log(2.0)) == pytest.approx(0.5)

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(1)
        rho = rng.standard_normal(10_000) * 5
        hm = te.hm_loss_term(rho)
        lm = te.lm_loss_term(rho)
        assert np.all(hm > 0)
        assert np.all((lm >= 0) & (lm < 1))
        order = np.argsort(rho)
        assert np.all(np.diff(hm[order]) <= 0)  # decreasing in rho
        order_abs = np.argsort(np.abs(rho))
        assert np.all(np.diff(lm[order_abs]) >= 0)  # increasing in |rho|
        # HM loss below 1 exactly when rho > 0
        np.testing.assert_array_equal(hm < 1, rho > 0)

    def test_batch_loss_mixes_terms(self):
        feats, trips = margin_setup([0.5], [0.25])
        model = init_model("euclidean", 1)
        # margins are distances; rho uses squared distances
        d2 = lambda a, b: (a - b) ** 2
        rho_hm = d2(0.0, 1.5) - d2(0.0, 1.0)
        rho_lm = d2(0.0, 1.25) - d2(0.0, 1.0)
        want = 0.5 * (np.exp(-rho_hm) + (1 - np.exp(-abs(rho_lm))))
        assert te.triplet_loss(model, trips, feats) == pytest.approx(want)


class TestTrain:
    def _toy(self, seed=0):
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((12, 6))
        trips = [Triplet(0, 1, 2, "HM"), Triplet(3, 4, 5, "HM"),
                 Triplet(6, 7, 8, "LM"), Triplet(9, 10, 11, "LM"),
                 Triplet(1, 0, 3, "HM"), Triplet(2, 5, 7, "LM"),
                 Triplet(4, 8, 0, "HM"), Triplet(10, 2, 6, "LM"),
                 Triplet(5, 9, 1, "HM"), Triplet(7, 11, 3, "LM"),
                 Triplet(8, 6, 10, "HM"), Triplet(11, 4, 9, "LM"),
                 Triplet(0, 5, 10, "HM"), Triplet(3, 8, 1, "LM"),
                 Triplet(6, 2, 9, "HM"), Triplet(9, 7, 4, "LM"),
                 Triplet(2, 10, 5, "HM"), Triplet(5, 3, 11, "LM"),
                 Triplet(7, 0, 8, "HM"), Triplet(10, 6, 2, "LM")]
        return feats, trips

    def test_loss_decreases_on_toy_set(self):
        feats, trips = self._toy()
        cfg = te.TrainConfig(epochs=30, batch_size=8, seed=0,
                             model_kind="mahalanobis")
        model = init_model("mahalanobis", 6, seed=0)
        _, history = te.train(model, trips, feats, cfg)
        assert history[-1] < history[0]

    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigurationError, match="epochs"):
            te.TrainConfig(epochs=0).validate()

    def test_identical_config_identical_history(self):
        feats, trips = self._toy()
        cfg = te.TrainConfig(epochs=5, batch_size=8, seed=3,
                             model_kind="perceptnet")
        h1 = te.train(init_model("perceptnet", 6, seed=3), trips, feats, cfg)[1]
        h2 = te.train(init_model("perceptnet", 6, seed=3), trips, feats, cfg)[1]
        assert h1 == h2

    def test_euclidean_training_is_noop(self):
        feats, trips = self._toy()
        cfg = te.TrainConfig(epochs=5, model_kind="euclidean")
        model, history = te.train(init_model("euclidean", 6), trips, feats, cfg)
        assert history == []

    def test_out_of_range_reference_rejected(self):
        feats, _ = self._toy()
        cfg = te.TrainConfig(epochs=1, model_kind="mahalanobis")
        with pytest.raises(DataError, match="outside"):
            te.train(init_model("mahalanobis", 6), [Triplet(0, 1, 99, "HM")],
                     feats, cfg)


class TestEstimateThreshold:
    def test_separable_case_tie_breaks_to_smallest(self):
        feats, trips = margin_setup([1.0, 1.0, 1.0], [0.0, 0.0])
        est = te.estimate_threshold(_FixedMarginModel(), trips, feats)
        assert est.f_hm == 1.0 and est.f_lm == 1.0
        # candidates are 0, the midpoint 0.5, and just-above-max; the
        # smallest achieving f_H = f_L = 1 is the midpoint
        assert est.xi_phi == pytest.approx(0.5)

    def test_crossed_margins_balance_fractions(self):
        feats, trips = margin_setup([0.2], [0.8])
        est = te.estimate_threshold(_FixedMarginModel(), trips, feats)
        margins, is_hm = te.triplet_margins(_FixedMarginModel(), trips, feats)
        xi0, fh0, fl0 = brute_force_threshold(margins.tolist(), is_hm.tolist())
        assert est.xi_phi == pytest.approx(xi0)
        assert (est.f_hm, est.f_lm) == (fh0, fl0)

    def test_identical_margins_case(self):
        feats, trips = margin_setup([0.5], [0.5])
        est = te.estimate_threshold(_FixedMarginModel(), trips, feats)
        margins, is_hm = te.triplet_margins(_FixedMarginModel(), trips, feats)
        xi0, fh0, fl0 = brute_force_threshold(margins.tolist(), is_hm.tolist())
        assert est.xi_phi == pytest.approx(xi0)
        assert abs(est.f_hm - est.f_lm) == pytest.approx(abs(fh0 - fl0))

    def test_agrees_with_brute_force_on_random_sets(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n_hm = int(rng.integers(1, 60))
            n_lm = int(rng.integers(1, 60))
            hm = rng.standard_normal(n_hm) * rng.uniform(0.5, 2)
            lm = rng.standard_normal(n_lm) * rng.uniform(0.1, 1)
            feats, trips = margin_setup(hm.tolist(), lm.tolist())
            est = te.estimate_threshold(_FixedMarginModel(), trips, feats)
            margins, is_hm = te.triplet_margins(_FixedMarginModel(), trips, feats)
            xi0, fh0, fl0 = brute_force_threshold(margins.tolist(), is_hm.tolist())
            assert est.xi_phi == pytest.approx(xi0), (hm, lm)
            assert est.f_hm == pytest.approx(fh0)
            assert est.f_lm == pytest.approx(fl0)

    def test_single_class_rejected(self):
        feats, trips = margin_setup([1.0, 0.5], [])
        with pytest.raises(DataError, match="both"):
            te.estimate_threshold(_FixedMarginModel(), trips, feats)


class TestTga:
    def test_perfect_separation(self):
        feats, trips = margin_setup([1.0, 0.9], [0.1, 0.0])
        rep = te.tga(_FixedMarginModel(), trips, feats, 0.5)
        assert rep.tga_total == 1.0

    def test_threshold_above_all_margins(self):
        feats, trips = margin_setup([1.0, 0.9], [0.1, 0.0])
        rep = te.tga(_FixedMarginModel(), trips, feats, 100.0)
        assert rep.tga_hm == 0.0 and rep.tga_lm == 1.0

    def test_zero_threshold_reduces_to_ordering(self):
        feats, trips = margin_setup([0.7, -0.2, 0.4], [0.3, 0.1])
        rep = te.tga(_FixedMarginModel(), trips, feats, 0.0)
        assert rep.tga_hm == pytest.approx(2 / 3)  # orderings with margin >= 0
        assert rep.tga_lm == 0.0
        assert rep.ordering_accuracy == pytest.approx(2 / 3)

    def test_empty_test_set_rejected(self):
        with pytest.raises(DataError, match="non-empty"):
            te.tga(_FixedMarginModel(), [], np.zeros((0, 1)), 0.1)


class TestThresholdSweep:
    def test_endpoints(self):
        feats, trips = margin_setup([0.6, 0.4, -0.3], [0.2, 0.05, 0.5])
        recall, acc, xi = te.threshold_sweep(_FixedMarginModel(), trips, feats)
        assert recall[0] == 0.0
        assert acc[0] == pytest.approx((2 / 3) * 0.5)  # half of HM ordering rate
        assert recall[-1] == 1.0
        assert np.all(np.diff(recall) >= 0)
        assert np.all(np.diff(xi) > 0)

    def test_matches_exhaustive_recomputation(self):
        rng = np.random.default_rng(6)
        feats, trips = margin_setup(rng.standard_normal(25).tolist(),
                                    (rng.standard_normal(20) * 0.3).tolist())
        recall, acc, xi = te.threshold_sweep(_FixedMarginModel(), trips, feats)
        margins, is_hm = te.triplet_margins(_FixedMarginModel(), trips, feats)
        hm, lm = margins[is_hm], np.abs(margins[~is_hm])
        for r, a, x in zip(recall, acc, xi):
            f_l = float((lm < x).mean())
            f_h = float((hm >= x).mean())
            assert r == pytest.approx(f_l)
            want = (f_h * len(hm) + f_l * len(lm)) / (len(hm) + len(lm))
            assert a == pytest.approx(want)

    def test_accuracy_at_recall_interpolation(self):
        grid = np.array([0.0, 0.5, 1.0])
        out = te.sweep_accuracy_at([0.0, 0.5, 1.0], [0.4, 0.8, 0.6], grid)
        np.testing.assert_allclose(out, [0.4, 0.8, 0.6])


class TestPairwise:
    def test_perfectly_ordered_scores_auc_one(self):
        scores = np.array([0.1, 0.2, 0.3, 2.0, 2.5, 3.0])
        labels = np.array([False, False, False, True, True, True])
        _, _, auc = te.pr_curve(scores, labels)
        assert auc == pytest.approx(1.0)

    def test_random_scores_balanced_labels_near_half(self):
        rng = np.random.default_rng(7)
        scores = rng.standard_normal(1000)
        labels = np.arange(1000) % 2 == 0
        _, _, auc = te.pr_curve(scores, labels)
        assert abs(auc - 0.5) < 0.1

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(0.1, 5, 300)
        labels = rng.uniform(size=300) < 0.4
        _, _, a1 = te.pr_curve(scores, labels)
        _, _, a2 = te.pr_curve(np.log(scores), labels)
        _, _, a3 = te.pr_curve(scores**3, labels)
        assert a1 == pytest.approx(a2, abs=1e-12)
        assert a1 == pytest.approx(a3, abs=1e-12)

    def test_single_class_labels_rejected(self):
        X = np.random.default_rng(9).standard_normal((5, 3))
        with pytest.raises(DataError, match="single class"):
            te.pairwise_eval(init_model("euclidean", 3), X, np.ones(10, dtype=bool))

    def test_labels_from_gt_matrix(self):
        D = np.array([[0.0, 0.7, 0.2],
                      [0.7, 0.0, 0.9],
                      [0.2, 0.9, 0.0]])
        labels = te.pairwise_labels_from_gt(D, 0.5)
        np.testing.assert_array_equal(labels, [True, False, True])


class TestSimilarityMatrix:
    def test_symmetric_and_normalized(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((20, 6))
        class_ids = np.repeat(np.arange(4), 5)
        model = init_model("euclidean", 6)
        sim, classes = te.similarity_matrix(model, X, class_ids)
        np.testing.assert_allclose(sim, sim.T, atol=1e-12)
        assert sim.min() == 0.0 and sim.max() == 1.0
        assert list(classes) == [0, 1, 2, 3]

    def test_identical_features_zero_diagonal_blocks(self):
        X = np.repeat(np.arange(3, dtype=float)[:, None], 4, axis=0)
        class_ids = np.repeat(np.arange(3), 4)
        model = init_model("euclidean", 1)
        sim, _ = te.similarity_matrix(model, X, class_ids)
        np.testing.assert_allclose(np.diag(sim), 0.0, atol=1e-12)

    def test_spearman_tracks_ground_truth_on_synthetic(self):
        rng = np.random.default_rng(11)
        centers = rng.standard_normal((5, 8)) * 3
        X = np.vstack([c + 0.05 * rng.standard_normal((6, 8)) for c in centers])
        class_ids = np.repeat(np.arange(5), 6)
        model = init_model("euclidean", 8)
        sim, _ = te.similarity_matrix(model, X, class_ids)
        gt = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        rho = te.spearman_upper(sim, gt)
        assert rho > 0.95

    def test_spearman_helper_on_exact_ranks(self):
        a = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
        assert te.spearman_upper(a, 2 * a + 1) == pytest.approx(1.0)
        flipped = a.max() - a
        np.fill_diagonal(flipped, 0)
        assert te.spearman_upper(a, flipped) == pytest.approx(-1.0)
