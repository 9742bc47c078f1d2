"""Dual-margin triplet loss, training loop, threshold estimation, and the
evaluation suite (TGA, threshold sweeps, pairwise PR/AUC, similarity
matrices, multi-fold experiments).

Per triplet the loss is exp(-rho) for high-margin and 1 - exp(-|rho|) for
low-margin, where rho is the difference of squared embedding distances
d^2(base, far) - d^2(base, near); batches reduce by mean. An optional
flag switches rho to unsquared distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import HM, SplitSpec, make_split, sample_triplets
from .errors import ConfigurationError, DataError, TrainingError
from .models import init_model

# -- configuration -----------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 128
    learning_rate: float = 0.001
    weight_decay: float = 0.0
    seed: int = 0
    model_kind: str = "perceptnet"
    squared_margins: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError(
                f"weight_decay must be >= 0, got {self.weight_decay}"
            )
        return self


@dataclass
class ThresholdEstimate:
    xi_phi: float
    f_hm: float  # fraction of correctly classified HM training triplets
    f_lm: float  # fraction of correctly classified LM training triplets


@dataclass
class EvalReport:
    tga_total: float = 0.0
    tga_hm: float = 0.0
    tga_lm: float = 0.0
    ordering_accuracy: float = 0.0
    xi_phi: float = 0.0
    sweep_recall: list = field(default_factory=list)
    sweep_accuracy: list = field(default_factory=list)
    sweep_xi: list = field(default_factory=list)
    pr_precision: list = field(default_factory=list)
    pr_recall: list = field(default_factory=list)
    auc: float | None = None
    similarity: list | None = None
    similarity_classes: list | None = None
    similarity_spearman: float | None = None
    fold: int | None = None

    def to_dict(self):
        out = {
            "tga_total": self.tga_total,
            "tga_hm": self.tga_hm,
            "tga_lm": self.tga_lm,
            "ordering_accuracy": self.ordering_accuracy,
            "xi_phi": self.xi_phi,
            "sweep": {
                "lm_recall": list(self.sweep_recall),
                "accuracy": list(self.sweep_accuracy),
                "xi": list(self.sweep_xi),
            },
        }
        if self.auc is not None:
            out["pairwise"] = {
                "precision": list(self.pr_precision),
                "recall": list(self.pr_recall),
                "auc": self.auc,
            }
        if self.similarity is not None:
            out["similarity"] = {
                "matrix": self.similarity,
                "classes": self.similarity_classes,
                "spearman_vs_ground_truth": self.similarity_spearman,
            }
        if self.fold is not None:
            out["fold"] = self.fold
        return out


# -- loss ---------------------------------------------------------------------


def hm_loss_term(rho_values):
    """Per-triplet high-margin loss exp(-rho); in (0, inf), decreasing in rho.

    The exponent is clamped to +/-700 so the term stays strictly positive
    and finite over the whole float64 range.
    """
    exponent = np.clip(-np.asarray(rho_values, dtype=np.float64), -700.0, 700.0)
    return np.exp(exponent)


def lm_loss_term(rho_values):
    """Per-triplet low-margin loss 1 - exp(-|rho|); in [0, 1), increasing in |rho|.

    For |rho| above ~36.7 the exact value is closer to 1 than float64 can
    represent; the term saturates at the largest double below 1.
    """
    val = 1.0 - np.exp(-np.abs(np.asarray(rho_values, dtype=np.float64)))
    return np.minimum(val, np.nextafter(1.0, 0.0))


def _triplet_arrays(triplets):
    rows = np.array([(t.base, t.near, t.far) for t in triplets], dtype=np.int64)
    is_hm = np.array([t.margin_class == HM for t in triplets], dtype=np.float64)
    return rows, is_hm


def batch_loss_tensor(model, features, rows, is_hm, squared=True):
    """Build the loss graph for one batch of triplet index rows."""
    uniq, inv = np.unique(rows.ravel(), return_inverse=True)
    inv = inv.reshape(rows.shape)
    emb = model.embed_tensor(ad.Tensor(features[uniq]))
    eb = ad.index_rows(emb, inv[:, 0])
    en = ad.index_rows(emb, inv[:, 1])
    ef = ad.index_rows(emb, inv[:, 2])
    d2n = ad.sum_along(ad.square(ad.sub(eb, en)), axis=1)
    d2f = ad.sum_along(ad.square(ad.sub(eb, ef)), axis=1)
    if squared:
        rho_t = ad.sub(d2f, d2n)
    else:
        rho_t = ad.sub(ad.sqrt(d2f), ad.sqrt(d2n))
    hm_term = ad.exp(-rho_t)
    ones = ad.Tensor(np.ones_like(is_hm))
    lm_term = ad.sub(ones, ad.exp(-ad.absval(rho_t)))
    mix = ad.add(ad.mul(hm_term, is_hm), ad.mul(lm_term, 1.0 - is_hm))
    return ad.mean(mix)


def rho(model, base, near, far, squared=True):
    """Difference of (squared) embedding distances for one triplet."""
    eb = model.embed(np.asarray(base, dtype=np.float64))
    en = model.embed(np.asarray(near, dtype=np.float64))
    ef = model.embed(np.asarray(far, dtype=np.float64))
    dn = float(np.sum((eb - en) ** 2))
    df = float(np.sum((eb - ef) ** 2))
    if squared:
        return df - dn
    return float(np.sqrt(df) - np.sqrt(dn))


def triplet_loss(model, triplets, features, squared=True):
    """Mean dual-margin loss of a triplet batch (no gradients)."""
    if not triplets:
        raise DataError("triplet_loss needs a non-empty batch")
    rows, is_hm = _triplet_arrays(triplets)
    return float(batch_loss_tensor(model, features, rows, is_hm, squared).data)


# -- training ------------------------------------------------------------------


def train(model, triplets, features, config):
    """Seeded mini-batch training; returns (model, per-epoch mean losses)."""
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    params = model.parameters()
    if not params:
        return model, []  # the fixed euclidean baseline has nothing to fit
    if not triplets:
        raise DataError("training needs a non-empty triplet set")
    rows, is_hm = _triplet_arrays(triplets)
    if rows.max() >= features.shape[0]:
        raise DataError(
            f"triplet references index {rows.max()} outside the feature "
            f"table of {features.shape[0]} signals"
        )
    opt = ad.Adam(params, lr=config.learning_rate,
                  weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n = len(triplets)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            loss = batch_loss_tensor(model, features, rows[sel], is_hm[sel],
                                     config.squared_margins)
            val = float(loss.data)
            if not np.isfinite(val):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += val * len(sel)
        history.append(total / n)
    return model, history


# -- margins and thresholds ------------------------------------------------


def triplet_margins(model, triplets, features):
    """Unsquared distance margins d(base, far) - d(base, near), per triplet."""
    features = np.asarray(features, dtype=np.float64)
    rows, is_hm = _triplet_arrays(triplets)
    uniq, inv = np.unique(rows.ravel(), return_inverse=True)
    inv = inv.reshape(rows.shape)
    emb = model.embed(features[uniq])
    dn = np.linalg.norm(emb[inv[:, 0]] - emb[inv[:, 1]], axis=1)
    df = np.linalg.norm(emb[inv[:, 0]] - emb[inv[:, 2]], axis=1)
    return df - dn, is_hm.astype(bool)


def _candidate_thresholds(margins):
    """0, midpoints between consecutive distinct |margin| values, above-max."""
    vals = np.unique(np.abs(margins))
    mids = 0.5 * (vals[:-1] + vals[1:])
    top = np.nextafter(vals[-1], np.inf)
    return np.concatenate([[0.0], mids, [top]])


def _fractions_at(hm_margins, lm_abs, candidates):
    hm_sorted = np.sort(hm_margins)
    lm_sorted = np.sort(lm_abs)
    n_hm, n_lm = len(hm_sorted), len(lm_sorted)
    f_hm = (n_hm - np.searchsorted(hm_sorted, candidates, side="left")) / n_hm
    f_lm = np.searchsorted(lm_sorted, candidates, side="left") / n_lm
    return f_hm, f_lm


def estimate_threshold(model, triplets, features):
    """Pick xi_phi minimizing |f_H - f_L| over the candidate sweep.

    f_H counts HM training triplets with correctly-signed margin >= xi;
    f_L counts LM training triplets with |margin| < xi. Ties prefer
    larger f_H + f_L, then smaller xi.
    """
    margins, is_hm = triplet_margins(model, triplets, features)
    if not is_hm.any() or is_hm.all():
        raise DataError("threshold estimation needs both HM and LM triplets")
    cands = _candidate_thresholds(margins)
    f_hm, f_lm = _fractions_at(margins[is_hm], np.abs(margins[~is_hm]), cands)
    order = np.lexsort((cands, -(f_hm + f_lm), np.abs(f_hm - f_lm)))
    best = order[0]
    return ThresholdEstimate(float(cands[best]), float(f_hm[best]), float(f_lm[best]))


# -- evaluation ---------------------------------------------------------------


def tga(model, triplets, features, xi_phi):
    """Triplet generalization accuracy at threshold xi_phi.

    An HM triplet is satisfied iff its margin >= xi_phi (correct ordering
    included); an LM triplet iff |margin| < xi_phi. Ordering-only accuracy
    of HM triplets is reported separately.
    """
    if not triplets:
        raise DataError("tga needs a non-empty test set")
    if xi_phi < 0:
        raise ConfigurationError(f"xi_phi must be >= 0, got {xi_phi}")
    margins, is_hm = triplet_margins(model, triplets, features)
    hm_sat = margins[is_hm] >= xi_phi
    lm_sat = np.abs(margins[~is_hm]) < xi_phi
    n = len(margins)
    report = EvalReport(
        tga_total=float((hm_sat.sum() + lm_sat.sum()) / n),
        tga_hm=float(hm_sat.mean()) if is_hm.any() else 0.0,
        tga_lm=float(lm_sat.mean()) if (~is_hm).any() else 0.0,
        ordering_accuracy=float((margins[is_hm] >= 0).mean()) if is_hm.any() else 0.0,
        xi_phi=float(xi_phi),
    )
    return report


def threshold_sweep(model, triplets, features):
    """Accuracy over the full threshold range, indexed by LM recall.

    Returns (lm_recall, total_accuracy, xi) arrays with xi ascending, so
    recall runs 0 -> 1 monotonically.
    """
    margins, is_hm = triplet_margins(model, triplets, features)
    if not is_hm.any() or is_hm.all():
        raise DataError("threshold sweep needs both HM and LM triplets")
    cands = _candidate_thresholds(margins)
    f_hm, f_lm = _fractions_at(margins[is_hm], np.abs(margins[~is_hm]), cands)
    n_hm, n_lm = int(is_hm.sum()), int((~is_hm).sum())
    total = (f_hm * n_hm + f_lm * n_lm) / (n_hm + n_lm)
    return f_lm, total, cands


def sweep_accuracy_at(recall, accuracy, grid):
    """Interpolate a sweep's total accuracy at given LM recall levels."""
    recall = np.asarray(recall, dtype=np.float64)
    accuracy = np.asarray(accuracy, dtype=np.float64)
    # np.interp needs strictly increasing x; keep the best accuracy per recall.
    order = np.lexsort((-accuracy, recall))
    r, a = recall[order], accuracy[order]
    keep = np.concatenate([[True], np.diff(r) > 0])
    return np.interp(grid, r[keep], a[keep])


def pairwise_labels_from_gt(gt_matrix, threshold=0.5):
    """Boolean distinguishability labels for pairs i<j of test signals."""
    D = np.asarray(gt_matrix, dtype=np.float64)
    iu, ju = np.triu_indices(D.shape[0], 1)
    return D[iu, ju] >= threshold


def pairwise_eval(model, signals, labels):
    """Precision/recall over all distance thresholds for classifying pairs
    as distinguishable (predicted distance >= threshold), plus trapezoidal
    AUC over the recall axis."""
    X = np.asarray(signals, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    iu, ju = np.triu_indices(X.shape[0], 1)
    if labels.shape[0] != len(iu):
        raise DataError(
            f"expected {len(iu)} pair labels for {X.shape[0]} signals, "
            f"got {labels.shape[0]}"
        )
    if labels.all() or not labels.any():
        raise DataError("pairwise ground truth has a single class")
    emb = model.embed(X)
    dist = np.linalg.norm(emb[iu] - emb[ju], axis=1)
    return pr_curve(dist, labels)


def pr_curve(scores, labels):
    """PR curve for 'positive iff score >= threshold' over all cut points.

    The sweep stops once recall reaches 1 (thresholds below the lowest
    positive score only dilute precision at full recall).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    thresholds = np.unique(scores)
    thresholds = thresholds[thresholds >= scores[labels].min()]
    thresholds = np.concatenate([thresholds, [np.nextafter(scores.max(), np.inf)]])
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    pos_cum = np.cumsum(labels[order][::-1])[::-1]  # positives with score >= rank
    first_ge = np.searchsorted(sorted_scores, thresholds, side="left")
    tp = np.where(first_ge < len(scores), pos_cum[np.minimum(first_ge, len(scores) - 1)], 0)
    predicted = len(scores) - first_ge
    p_total = labels.sum()
    recall = tp / p_total
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    order_r = np.argsort(recall, kind="stable")
    auc = float(np.trapezoid(precision[order_r], recall[order_r]))
    return precision, recall, auc


def similarity_matrix(model, signals, class_ids):
    """Class x class mean pairwise distance, min-max normalized.

    Diagonal entries average within-class pairs (0 for single-sample
    classes). Classes with no test signals are omitted with a warning.
    """
    import warnings

    X = np.asarray(signals, dtype=np.float64)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    classes = np.unique(class_ids)
    emb = model.embed(X)
    k = len(classes)
    sums = np.zeros((k, k))
    members = [np.flatnonzero(class_ids == c) for c in classes]
    empty = [int(c) for c, mem in zip(classes, members) if len(mem) == 0]
    if empty:
        warnings.warn(f"classes without test signals omitted: {empty}")
    for a in range(k):
        for b in range(a, k):
            ea, eb = emb[members[a]], emb[members[b]]
            d = np.linalg.norm(ea[:, None, :] - eb[None, :, :], axis=2)
            if a == b:
                iu, ju = np.triu_indices(len(members[a]), 1)
                vals = d[iu, ju]
                mean = float(vals.mean()) if vals.size else 0.0
            else:
                mean = float(d.mean())
            sums[a, b] = sums[b, a] = mean
    lo, hi = sums.min(), sums.max()
    norm = (sums - lo) / (hi - lo) if hi > lo else np.zeros_like(sums)
    return norm, classes


def spearman_upper(a, b):
    """Spearman rank correlation of the upper triangles of two matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iu, ju = np.triu_indices(a.shape[0], 1)
    ra = _average_ranks(a[iu, ju])
    rb = _average_ranks(b[iu, ju])
    return float(np.corrcoef(ra, rb)[0, 1])


def _average_ranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    ranks[order] = np.arange(len(x), dtype=np.float64)
    # average ranks over ties
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


# -- experiments ---------------------------------------------------------------


def run_experiment(features, class_ids, gt_matrix, xi_star, protocol,
                   train_config, counts=(10_000, 10_000, 10_000, 10_000),
                   folds=5, hm_only=False, xi_zero=False, size_sweep=None,
                   pair_labels_threshold=None, with_similarity=False,
                   normalize=False):
    """Train and evaluate over seeded folds; aggregates mean and stddev.

    Ablation hooks: hm_only retrains on double the HM count with no LM
    triplets; xi_zero re-samples training triplets with xi* forced to 0;
    size_sweep trains one model per training-subset size.
    """
    from .features import normalize_features

    features = np.asarray(features, dtype=np.float64)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    n_hm_tr, n_lm_tr, n_hm_te, n_lm_te = counts
    fold_seeds = [int(s) for s in np.random.SeedSequence(train_config.seed).generate_state(max(folds, 1))]
    fold_reports = []
    size_reports = {int(s): [] for s in (size_sweep or [])}

    for fold in range(folds):
        fold_seed = fold_seeds[fold]
        spec = SplitSpec(protocol, fold_seed, n_hm_tr, n_lm_tr, n_hm_te, n_lm_te)
        split = make_split(class_ids, gt_matrix, xi_star, spec)
        train_triplets = split.train_triplets
        if hm_only or xi_zero:
            excl = ({t.key() for t in split.test_triplets}
                    if protocol == "held-out-triplets" else frozenset())
            xi_train = 0.0 if xi_zero else xi_star
            train_triplets = sample_triplets(
                split.train_indices, gt_matrix, xi_train,
                n_hm_tr + n_lm_tr, 0, fold_seed + 1, exclusion=excl,
            )

        feats = features
        if normalize:
            _, stats = normalize_features(features[split.train_indices])
            feats, _ = normalize_features(features, stats)

        cfg = TrainConfig(
            epochs=train_config.epochs, batch_size=train_config.batch_size,
            learning_rate=train_config.learning_rate,
            weight_decay=train_config.weight_decay, seed=fold_seed,
            model_kind=train_config.model_kind,
            squared_margins=train_config.squared_margins,
        )
        model = init_model(cfg.model_kind, feats.shape[1], seed=fold_seed)
        model, history = train(model, train_triplets, feats, cfg)
        report = evaluate(model, train_triplets, split.test_triplets, feats,
                          test_indices=split.test_indices, class_ids=class_ids,
                          gt_matrix=gt_matrix, hm_only=hm_only,
                          pair_labels_threshold=pair_labels_threshold,
                          with_similarity=with_similarity)
        report.fold = fold
        fold_reports.append((report, history))

        for size in size_reports:
            rng = np.random.default_rng(fold_seed + 2)
            sub = [train_triplets[i]
                   for i in sorted(rng.permutation(len(train_triplets))[:size])]
            sub_model = init_model(cfg.model_kind, feats.shape[1], seed=fold_seed)
            sub_model, _ = train(sub_model, sub, feats, cfg)
            size_reports[size].append(
                evaluate(sub_model, sub, split.test_triplets, feats,
                         hm_only=hm_only))

    out = {
        "protocol": protocol,
        "model_kind": train_config.model_kind,
        "folds": folds,
        "per_fold": [r.to_dict() for r, _ in fold_reports],
        "loss_history": [h for _, h in fold_reports],
        "summary": _aggregate([r for r, _ in fold_reports]),
    }
    if size_sweep:
        out["size_sweep"] = {
            str(size): _aggregate(reports)
            for size, reports in size_reports.items()
        }
    return out


def evaluate(model, train_triplets, test_triplets, features, test_indices=None,
             class_ids=None, gt_matrix=None, hm_only=False,
             pair_labels_threshold=None, with_similarity=False):
    """Threshold + TGA + sweep (plus optional pairwise / similarity)."""
    report = EvalReport()
    if hm_only:
        # No LM training triplets: no learnable threshold, sweep only.
        recall, acc, xi = threshold_sweep(model, test_triplets, features)
    else:
        est = estimate_threshold(model, train_triplets, features)
        report = tga(model, test_triplets, features, est.xi_phi)
        recall, acc, xi = threshold_sweep(model, test_triplets, features)
    report.sweep_recall = recall.tolist()
    report.sweep_accuracy = acc.tolist()
    report.sweep_xi = xi.tolist()
    if pair_labels_threshold is not None:
        sub_gt = gt_matrix[np.ix_(test_indices, test_indices)]
        labels = pairwise_labels_from_gt(sub_gt, pair_labels_threshold)
        precision, recall_p, auc = pairwise_eval(model, features[test_indices], labels)
        report.pr_precision = precision.tolist()
        report.pr_recall = recall_p.tolist()
        report.auc = auc
    if with_similarity:
        sim, classes = similarity_matrix(model, features[test_indices],
                                         class_ids[test_indices])
        report.similarity = sim.tolist()
        report.similarity_classes = classes.tolist()
        sub_gt = gt_matrix[np.ix_(test_indices, test_indices)]
        gt_sim, _ = _class_mean_matrix(sub_gt, class_ids[test_indices])
        report.similarity_spearman = spearman_upper(sim, gt_sim)
    return report


def _class_mean_matrix(D, class_ids):
    classes = np.unique(class_ids)
    k = len(classes)
    out = np.zeros((k, k))
    members = [np.flatnonzero(class_ids == c) for c in classes]
    for a in range(k):
        for b in range(a, k):
            blockd = D[np.ix_(members[a], members[b])]
            if a == b:
                iu, ju = np.triu_indices(len(members[a]), 1)
                vals = blockd[iu, ju]
                mean = float(vals.mean()) if vals.size else 0.0
            else:
                mean = float(blockd.mean())
            out[a, b] = out[b, a] = mean
    return out, classes


def _aggregate(reports):
    keys = ("tga_total", "tga_hm", "tga_lm", "ordering_accuracy", "xi_phi")
    summary = {}
    for key in keys:
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    aucs = [r.auc for r in reports if r.auc is not None]
    if aucs:
        a = np.asarray(aucs)
        summary["auc"] = {"mean": float(a.mean()), "std": float(a.std())}
    return summary
