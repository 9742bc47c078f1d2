"""Acceptance gate: one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale training
criteria take a few minutes each; the whole gate is ~10 minutes. The
optional full-scale criterion needs a locally supplied texture dataset
(see test_criterion_10 docstring) and is skipped otherwise.
"""

import json
import os
import time

import numpy as np
import pytest

from perceptmetric import cli, data as dt, features as ft, train_eval as te
from perceptmetric.data import Triplet
from perceptmetric.models import PerceptNet, init_model
from perceptmetric.train_eval import _triplet_arrays, batch_loss_tensor

DESK_N = 100
DESK_DIM = 8
DESK_COUNTS = (2000, 2000)  # HM/LM per side
DESK_EPOCHS = 200
DESK_SEED = 0


def _report(num, name, ok, detail=""):
    print(f"\n[criterion {num}] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def desk_dataset(gt_kind, seed=DESK_SEED):
    X = dt.gen_synthetic_signals(DESK_N, DESK_DIM, seed)
    metric = (dt.mahalanobis_gt(DESK_DIM, seed + 100) if gt_kind == "mahalanobis"
              else dt.cayley_klein_gt(DESK_DIM, seed + 100))
    D = metric.distance_matrix(X)
    xi = dt.training_threshold_synthetic(D, seed + 200)
    idx = np.arange(DESK_N)
    train = dt.sample_triplets(idx, D, xi, *DESK_COUNTS, seed + 1)
    test = dt.sample_triplets(idx, D, xi, *DESK_COUNTS, seed + 2,
                              exclusion={t.key() for t in train})
    return X, D, xi, train, test


def fit(kind, X, train, seed=DESK_SEED, weight_decay=0.0, epochs=DESK_EPOCHS):
    cfg = te.TrainConfig(epochs=epochs, batch_size=128, learning_rate=0.001,
                         weight_decay=weight_decay, seed=seed, model_kind=kind)
    model = init_model(kind, X.shape[1], seed=seed)
    return te.train(model, train, X, cfg)[0]


def tga_at_estimated_threshold(model, train, test, X):
    est = te.estimate_threshold(model, train, X)
    return te.tga(model, test, X, est.xi_phi).tga_total


@pytest.fixture(scope="module")
def maha_bundle():
    """Desk-scale linear ground truth; the overparameterized embedding
    network needs the weight decay documented in the decisions ledger."""
    X, D, xi, train, test = desk_dataset("mahalanobis")
    t0 = time.time()
    models = {
        "perceptnet": fit("perceptnet", X, train, weight_decay=3e-3),
        "mahalanobis": fit("mahalanobis", X, train, weight_decay=3e-3),
        "euclidean": init_model("euclidean", DESK_DIM),
    }
    return {"X": X, "D": D, "train": train, "test": test,
            "models": models, "elapsed": time.time() - t0}


@pytest.fixture(scope="module")
def ck_bundle():
    X, D, xi, train, test = desk_dataset("cayley-klein")
    t0 = time.time()
    models = {
        "perceptnet": fit("perceptnet", X, train),
        "mahalanobis": fit("mahalanobis", X, train),
        "euclidean": init_model("euclidean", DESK_DIM),
    }
    hm_only_train = dt.sample_triplets(
        np.arange(DESK_N), D, xi, sum(DESK_COUNTS), 0, DESK_SEED + 3,
        exclusion={t.key() for t in test})
    models["perceptnet-hm-only"] = fit("perceptnet", X, hm_only_train)
    return {"X": X, "D": D, "train": train, "test": test,
            "models": models, "elapsed": time.time() - t0}


class TestCriterion1GradientCorrectness:
    @staticmethod
    def _rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-4)

    def test_finite_differences_full_network(self):
        t0 = time.time()
        h = 1e-6  # narrow enough that ReLU/maxpool kinks are rarely straddled
        worst = 0.0
        kinks = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            net = PerceptNet(32, seed=seed)  # standard-width schedule
            feats = rng.standard_normal((6, 32))
            trips = [Triplet(0, 1, 2, "HM"), Triplet(3, 4, 5, "LM")]
            rows, is_hm = _triplet_arrays(trips)

            loss = batch_loss_tensor(net, feats, rows, is_hm)
            loss.backward()
            analytic = {k: p.grad.copy() for k, p in net.parameters().items()}

            def loss_val():
                return float(batch_loss_tensor(net, feats, rows, is_hm).data)

            mid = loss_val()
            for name, p in net.parameters().items():
                flat = p.data.ravel()
                picks = rng.choice(flat.size, size=min(12, flat.size),
                                   replace=False)
                for i in picks:
                    old = flat[i]
                    flat[i] = old + h
                    up = loss_val()
                    flat[i] = old - h
                    dn = loss_val()
                    flat[i] = old
                    a = analytic[name].ravel()[i]
                    err = self._rel(a, (up - dn) / (2 * h))
                    if err > 1e-4 and self._rel((up - mid) / h,
                                                (mid - dn) / h) > 1e-3:
                        # central differences straddle a ReLU/maxpool kink
                        # (one-sided slopes disagree); re-estimate with a
                        # second-order one-sided stencil on the smooth side.
                        kinks += 1
                        flat[i] = old + 2 * h
                        up2 = loss_val()
                        flat[i] = old - 2 * h
                        dn2 = loss_val()
                        flat[i] = old
                        d_plus = (-3 * mid + 4 * up - up2) / (2 * h)
                        d_minus = (3 * mid - 4 * dn + dn2) / (2 * h)
                        smooth_plus = self._rel(d_plus, (up - mid) / h)
                        smooth_minus = self._rel(d_minus, (mid - dn) / h)
                        est = d_plus if smooth_plus < smooth_minus else d_minus
                        err = self._rel(a, est)
                    worst = max(worst, err)
        elapsed = time.time() - t0
        ok = worst <= 1e-4 and elapsed < 60
        _report(1, "gradient correctness", ok,
                f"worst rel err {worst:.2e} over 10 seeds "
                f"({kinks} kink-straddling components), {elapsed:.1f}s")


class TestCriterion2MahalanobisRecovery:
    def test_desk_scale_recovery(self, maha_bundle):
        b = maha_bundle
        tga_m = tga_at_estimated_threshold(b["models"]["mahalanobis"],
                                           b["train"], b["test"], b["X"])
        tga_p = tga_at_estimated_threshold(b["models"]["perceptnet"],
                                           b["train"], b["test"], b["X"])
        ok = tga_m >= 0.90 and tga_p >= 0.85 and b["elapsed"] < 600
        _report(2, "synthetic Mahalanobis recovery", ok,
                f"mahalanobis TGA {tga_m:.3f} (>=0.90), perceptnet TGA "
                f"{tga_p:.3f} (>=0.85), train {b['elapsed']:.0f}s")


class TestCriterion3CayleyKlein:
    def test_nonlinear_advantage(self, ck_bundle):
        b = ck_bundle
        tga = {k: tga_at_estimated_threshold(m, b["train"], b["test"], b["X"])
               for k, m in b["models"].items() if k != "perceptnet-hm-only"}
        gap_m = tga["perceptnet"] - tga["mahalanobis"]
        gap_e = tga["perceptnet"] - tga["euclidean"]
        ok = gap_m >= 0.05 and gap_e >= 0.05 and b["elapsed"] < 600
        _report(3, "synthetic Cayley-Klein advantage", ok,
                f"perceptnet {tga['perceptnet']:.3f} vs mahalanobis "
                f"{tga['mahalanobis']:.3f} (+{gap_m:.3f}) and euclidean "
                f"{tga['euclidean']:.3f} (+{gap_e:.3f}), train {b['elapsed']:.0f}s")


class TestCriterion4LowMarginValue:
    def test_full_training_dominates_hm_only_sweep(self, ck_bundle):
        b = ck_bundle
        r_full, a_full, _ = te.threshold_sweep(b["models"]["perceptnet"],
                                               b["test"], b["X"])
        r_hm, a_hm, _ = te.threshold_sweep(b["models"]["perceptnet-hm-only"],
                                           b["test"], b["X"])
        grid = np.linspace(0.05, 0.95, 19)
        af = te.sweep_accuracy_at(r_full, a_full, grid)
        ah = te.sweep_accuracy_at(r_hm, a_hm, grid)
        wins = int((af >= ah).sum())
        ok = wins > len(grid) // 2
        _report(4, "low-margin training value", ok,
                f"full >= HM-only at {wins}/{len(grid)} matched recall points")


class TestCriterion5PairwiseAucOrdering:
    def test_auc_ordering(self, ck_bundle):
        b = ck_bundle
        iu, ju = np.triu_indices(DESK_N, 1)
        pair_d = b["D"][iu, ju]
        labels = pair_d >= np.median(pair_d)  # confusion-style: distinguishable
        aucs = {}
        for name in ("perceptnet", "mahalanobis", "euclidean"):
            _, _, aucs[name] = te.pairwise_eval(b["models"][name], b["X"], labels)
        ok = (aucs["perceptnet"] > aucs["mahalanobis"]
              and aucs["perceptnet"] > aucs["euclidean"])
        _report(5, "pairwise AUC ordering", ok,
                f"perceptnet {aucs['perceptnet']:.3f} > mahalanobis "
                f"{aucs['mahalanobis']:.3f}, euclidean {aucs['euclidean']:.3f}")


class TestCriterion6ThresholdExactness:
    @staticmethod
    def brute_force(margins, is_hm):
        vals = np.unique(np.abs(margins))
        cands = np.concatenate([[0.0], 0.5 * (vals[:-1] + vals[1:]),
                                [np.nextafter(vals[-1], np.inf)]])
        hm = margins[is_hm]
        lm = np.abs(margins[~is_hm])
        best = None
        for xi in cands:  # plain per-candidate re-scan
            f_h = float((hm >= xi).mean())
            f_l = float((lm < xi).mean())
            key = (abs(f_h - f_l), -(f_h + f_l), xi)
            if best is None or key < best[0]:
                best = (key, xi, f_h, f_l)
        return best[1], best[2], best[3]

    def test_estimator_matches_brute_force_100_sets(self):
        rng = np.random.default_rng(123)
        mismatches = 0
        for _ in range(100):
            n = int(rng.integers(2, 1000))
            n_hm = int(rng.integers(1, n))
            n_lm = n - n_hm
            if n_lm < 1:
                n_hm, n_lm = n - 1, 1
            margins = np.concatenate([
                rng.standard_normal(n_hm) * rng.uniform(0.2, 2.0),
                rng.standard_normal(n_lm) * rng.uniform(0.05, 1.0),
            ])
            # quantize sometimes, to exercise heavy ties
            if rng.uniform() < 0.3:
                margins = np.round(margins, 1)
            is_hm = np.zeros(n, dtype=bool)
            is_hm[:n_hm] = True
            cands = te._candidate_thresholds(margins)
            f_hm, f_lm = te._fractions_at(margins[is_hm],
                                          np.abs(margins[~is_hm]), cands)
            order = np.lexsort((cands, -(f_hm + f_lm), np.abs(f_hm - f_lm)))
            got = (cands[order[0]], f_hm[order[0]], f_lm[order[0]])
            want = self.brute_force(margins, is_hm)
            if not (got[0] == want[0] and got[1] == want[1] and got[2] == want[2]):
                mismatches += 1
        _report(6, "threshold estimator exactness", mismatches == 0,
                f"{100 - mismatches}/100 random sets agree exactly")


class TestCriterion7LossBounds:
    def test_bounds_and_monotonicity_100k(self):
        rng = np.random.default_rng(7)
        rho = np.concatenate([rng.standard_normal(50_000) * 10,
                              rng.uniform(-1e-6, 1e-6, 25_000),
                              rng.standard_normal(25_000) * 100])
        hm = te.hm_loss_term(rho)
        lm = te.lm_loss_term(rho)
        ok = bool(np.all(hm > 0) and np.all(np.isfinite(hm))
                  and np.all((lm >= 0) & (lm < 1)))
        order = np.argsort(rho, kind="stable")
        ok = ok and bool(np.all(np.diff(hm[order]) <= 0))
        order_abs = np.argsort(np.abs(rho), kind="stable")
        ok = ok and bool(np.all(np.diff(lm[order_abs]) >= 0))
        ok = ok and bool(np.array_equal(hm < 1, rho > 0))
        _report(7, "loss bound property suite", ok,
                f"{rho.size} rho values: HM in (0,inf) decreasing, "
                f"LM in [0,1) increasing in |rho|")


class TestCriterion8CqfbOracle:
    def test_filter_bank_and_dft321(self):
        from test_features import cqfb_oracle

        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(100):
            spectrum = np.abs(rng.standard_normal(int(rng.integers(64, 1200))))
            worst = max(worst, float(np.max(np.abs(
                ft.cqfb(spectrum) - cqfb_oracle(spectrum)))))
        perm_exact = True
        for seed in range(5):
            samples = np.random.default_rng(seed).standard_normal((3, 300))
            base = ft.dft321(ft.SignalRecord(samples, 100.0, 0, 0))
            for perm in ([1, 2, 0], [2, 0, 1], [0, 2, 1], [1, 0, 2], [2, 1, 0]):
                other = ft.dft321(ft.SignalRecord(samples[perm], 100.0, 0, 0))
                perm_exact = perm_exact and bool(np.array_equal(base, other))
        ok = worst <= 1e-9 and perm_exact
        _report(8, "CQFB oracle equivalence", ok,
                f"max |bank - oracle| {worst:.2e} over 100 spectra; "
                f"axis permutation exact: {perm_exact}")


class TestCriterion9Reproducibility:
    def test_cmd_experiment_identical_tga(self, tmp_path):
        vals = []
        for sub in ("run1", "run2"):
            out = tmp_path / sub
            code = cli.main([
                "experiment", "--dataset", "synthetic", "--kind", "cayley-klein",
                "--n", "40", "--dim", "6", "--model", "perceptnet",
                "--epochs", "5", "--folds", "2", "--seed", "21",
                "--n-hm-train", "150", "--n-lm-train", "150",
                "--n-hm-test", "80", "--n-lm-test", "80",
                "--out", str(out),
            ])
            assert code == 0
            doc = json.loads((out / "summary.json").read_text())
            vals.append([f["tga_total"] for f in doc["per_fold"]])
        ok = vals[0] == vals[1]
        _report(9, "end-to-end reproducibility", ok,
                f"fold TGAs {vals[0]} == {vals[1]}")


TEXTURE_ENV = "PERCEPTMETRIC_TEXTURE_DIR"


@pytest.mark.skipif(TEXTURE_ENV not in os.environ,
                    reason=f"optional: set {TEXTURE_ENV} to a directory holding "
                           "features.csv and confusion.csv for the texture corpus")
class TestCriterion10FullScaleOptional:
    """Full-scale texture run, only with the externally licensed dataset.

    Expects $PERCEPTMETRIC_TEXTURE_DIR/{features.csv,confusion.csv} where
    features.csv holds one 32-d row per signal (108 classes x 10 signals)
    and confusion.csv the 108x108 distinguishability fractions. Runs all
    three protocols at paper scale; the bar applies to held-out-triplets.
    """

    def test_protocols_at_full_scale(self, tmp_path):
        base = os.environ[TEXTURE_ENV]
        results = {}
        for protocol in ("held-out-triplets", "held-out-samples",
                         "held-out-classes"):
            out = tmp_path / protocol
            code = cli.main([
                "experiment", "--dataset", "files",
                "--features", os.path.join(base, "features.csv"),
                "--confusion", os.path.join(base, "confusion.csv"),
                "--protocol", protocol, "--model", "perceptnet",
                "--epochs", "1000", "--folds", "5", "--seed", "0",
                "--out", str(out),
            ])
            assert code == 0
            doc = json.loads((out / "summary.json").read_text())
            results[protocol] = doc["summary"]["tga_total"]["mean"]
        ok = abs(results["held-out-triplets"] - 0.84) <= 0.05
        _report(10, "full-scale texture protocols", ok,
                f"TGA: {results}")
