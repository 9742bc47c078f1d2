"""Ground-truth distances, margins, triplet datasets, and split protocols.

All triplet machinery works on integer signal indices against a
precomputed ground-truth distance matrix. A triplet (base, near, far)
is high-margin (HM) when d(base, far) - d(base, near) >= xi_star (stored
pre-ordered so the inequality holds), and low-margin (LM) when the
absolute difference is strictly below xi_star.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InputError

HM = "HM"
LM = "LM"

# Full enumeration of the triplet space is used below this many ordered
# triples; beyond it, rejection sampling with a seen-set.
_ENUMERATE_LIMIT = 4_000_000


@dataclass(frozen=True)
class Triplet:
    base: int
    near: int
    far: int
    margin_class: str  # HM or LM; LM stores (near, far) as (min, max)

    def key(self):
        """Identity of the underlying comparison, orientation-free."""
        lo, hi = (self.near, self.far) if self.near < self.far else (self.far, self.near)
        return (self.base, lo, hi)


@dataclass
class ConfusionMatrix:
    """Class-level distinguishability fractions, symmetric, in [0, 1]."""

    entries: np.ndarray

    @property
    def size(self):
        return self.entries.shape[0]


def normalize_confusion(raw):
    """Symmetrize by averaging mirror entries, then min-max map onto [0, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise InputError(f"confusion matrix must be square, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InputError("confusion matrix has non-finite entries")
    if np.max(np.abs(raw - raw.T)) > 1e-9 + 1e-9 * np.max(np.abs(raw)):
        raise InputError("confusion matrix is not symmetric within 1e-9")
    sym = 0.5 * (raw + raw.T)
    lo, hi = sym.min(), sym.max()
    if hi <= lo:
        raise DataError("constant confusion matrix carries no distance information")
    return ConfusionMatrix((sym - lo) / (hi - lo))


# -- ground-truth metrics ----------------------------------------------------


class GroundTruth:
    """A ground-truth distance over signals, with an optional margin xi*."""

    kind = None

    def __init__(self):
        self.xi_star = None

    def distance_matrix(self, signals):
        raise NotImplementedError


def _pairwise_euclidean(Z):
    m = Z.shape[0]
    D = np.empty((m, m))
    block = max(1, 2**22 // max(1, m * Z.shape[1]))
    for s in range(0, m, block):
        e = min(m, s + block)
        D[s:e] = np.linalg.norm(Z[s:e, None, :] - Z[None, :, :], axis=2)
    np.fill_diagonal(D, 0.0)
    return D


class MahalanobisGroundTruth(GroundTruth):
    """d(x, y) = sqrt((x-y)^T M (x-y)) with M = A^T A."""

    kind = "mahalanobis"

    def __init__(self, factor):
        super().__init__()
        self.factor = np.asarray(factor, dtype=np.float64)
        self.M = self.factor.T @ self.factor

    def distance(self, x, y):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        return float(np.sqrt(d @ self.M @ d))

    def distance_matrix(self, signals):
        X = np.asarray(signals, dtype=np.float64)
        return _pairwise_euclidean(X @ self.factor.T)


class CayleyKleinGroundTruth(GroundTruth):
    """Elliptic projective distance from a symmetric positive-definite form.

    With homogeneous lift xh = (x, 1):
    d(x, y) = arccos(|xh^T Psi yh| / sqrt((xh^T Psi xh)(yh^T Psi yh))).
    """

    kind = "cayley-klein"

    def __init__(self, psi):
        super().__init__()
        self.psi = np.asarray(psi, dtype=np.float64)

    def _lift(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def distance(self, x, y):
        xh, yh = self._lift(x)[0], self._lift(y)[0]
        num = abs(xh @ self.psi @ yh)
        den = np.sqrt((xh @ self.psi @ xh) * (yh @ self.psi @ yh))
        return float(np.arccos(np.clip(num / den, 0.0, 1.0)))

    def distance_matrix(self, signals):
        Xh = self._lift(signals)
        G = Xh @ self.psi @ Xh.T
        d = np.diag(G)
        cosv = np.abs(G) / np.sqrt(np.outer(d, d))
        D = np.arccos(np.clip(cosv, 0.0, 1.0))
        np.fill_diagonal(D, 0.0)
        return D


class ConfusionGroundTruth(GroundTruth):
    """Class-pair distances: d between two signals depends only on classes."""

    kind = "confusion"

    def __init__(self, confusion):
        super().__init__()
        self.confusion = confusion

    def distance_matrix(self, signals):
        class_ids = np.asarray(signals, dtype=np.int64)
        if class_ids.ndim != 1:
            raise InputError("confusion ground truth takes a 1-D class_id array")
        if class_ids.min() < 0 or class_ids.max() >= self.confusion.size:
            raise InputError("class_id outside the confusion matrix range")
        return self.confusion.entries[class_ids[:, None], class_ids[None, :]]


def mahalanobis_gt(dim, seed):
    """Random PSD Mahalanobis metric: M = A^T A, A standard normal."""
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    return MahalanobisGroundTruth(rng.standard_normal((dim, dim)))


def cayley_klein_gt(dim, seed):
    """Random elliptic Cayley-Klein metric; Psi = B^T B + 0.1 I is PD."""
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((dim + 1, dim + 1))
    return CayleyKleinGroundTruth(B.T @ B + 0.1 * np.eye(dim + 1))


def gen_synthetic_signals(n, dim, seed):
    """n i.i.d. standard-normal signal vectors of length dim."""
    if n < 3:
        raise DataError(f"need at least 3 signals, got {n}")
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    return np.random.default_rng(seed).standard_normal((n, dim))


# -- margins and xi* ---------------------------------------------------------


def max_triplet_margin(D):
    """Max over ordered triplets (i, j, k) of D[i, k] - D[i, j], exactly.

    Per base row the maximum is (row max - row min) over off-diagonal
    entries; when positive it is attained at distinct j, k.
    """
    D = np.asarray(D, dtype=np.float64)
    m = D.shape[0]
    if m < 3:
        raise DataError(f"need at least 3 signals, got {m}")
    off = ~np.eye(m, dtype=bool)
    row_max = np.where(off, D, -np.inf).max(axis=1)
    row_min = np.where(off, D, np.inf).min(axis=1)
    return float((row_max - row_min).max())


def compute_xi_star(D, fraction=0.1):
    """xi* = fraction of the maximum margin over all ordered triplets."""
    margin = max_triplet_margin(D)
    if margin <= 0:
        raise DataError("degenerate metric: all pairwise distances equal")
    return fraction * margin


def training_threshold_synthetic(D, seed, n_probe=100_000):
    """Random threshold drawn between the 25th and 75th percentile of
    |margin| over a random triplet sample; both triplet classes stay
    non-empty by construction."""
    D = np.asarray(D, dtype=np.float64)
    m = D.shape[0]
    if m < 3:
        raise DataError(f"need at least 3 signals, got {m}")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, m, size=(n_probe, 3))
    i, j, k = draws[:, 0], draws[:, 1], draws[:, 2]
    ok = (i != j) & (i != k) & (j != k)
    margins = np.abs(D[i[ok], k[ok]] - D[i[ok], j[ok]])
    lo, hi = np.percentile(margins, [25.0, 75.0])
    if hi <= 0 or hi <= lo:
        raise DataError("degenerate metric: margin distribution has no spread")
    xi = float(rng.uniform(lo, hi))
    if xi <= 0 or not (margins >= xi).any() or not (margins < xi).any():
        raise DataError("threshold draw left a triplet class empty")
    return xi


# -- triplet classification and sampling -------------------------------------


def classify_triplet(i, j, k, D, xi_star):
    """Label one triplet; HM output is ordered so far is truly farther."""
    if i == j or i == k or j == k:
        raise DataError(f"triplet references must be distinct, got ({i},{j},{k})")
    margin = D[i, k] - D[i, j]
    if margin >= xi_star:
        return Triplet(i, j, k, HM)
    if margin <= -xi_star:
        return Triplet(i, k, j, HM)
    return Triplet(i, min(j, k), max(j, k), LM)


def _enumerate_candidates(idx, D, xi_star):
    """All unique triplets over idx, as (base, second, third, is_hm) arrays."""
    m = len(idx)
    Ds = D[np.ix_(idx, idx)]
    J, K = np.triu_indices(m, 1)
    margins = Ds[:, K] - Ds[:, J]  # (m, P)
    rows = np.arange(m)[:, None]
    valid = (J[None, :] != rows) & (K[None, :] != rows)
    is_hm = np.abs(margins) >= xi_star

    r, c = np.nonzero(valid & is_hm)
    pos = margins[r, c] >= 0
    near = np.where(pos, J[c], K[c])
    far = np.where(pos, K[c], J[c])
    hm = np.stack([idx[r], idx[near], idx[far]], axis=1)

    r2, c2 = np.nonzero(valid & ~is_hm)
    lm = np.stack([idx[r2], idx[J[c2]], idx[K[c2]]], axis=1)
    return hm, lm


def sample_triplets(indices, D, xi_star, n_hm, n_lm, seed, exclusion=frozenset()):
    """Sample exactly n_hm HM and n_lm LM unique triplets over the given
    signal indices, uniformly without replacement, disjoint from exclusion.

    exclusion holds (base, near, far) keys as produced by Triplet.key().
    Raises DataError with available counts when a class is exhausted.
    """
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    m = len(idx)
    if m < 3:
        raise DataError(f"need at least 3 signals to form triplets, got {m}")
    if n_hm < 0 or n_lm < 0:
        raise DataError("triplet counts must be non-negative")
    rng = np.random.default_rng(seed)
    excl = {t.key() if isinstance(t, Triplet) else tuple(t) for t in exclusion}

    if m * (m - 1) * (m - 2) <= _ENUMERATE_LIMIT:
        hm_rows, lm_rows = _enumerate_candidates(idx, D, xi_star)
        out = []
        for rows_arr, cls, want in ((hm_rows, HM, n_hm), (lm_rows, LM, n_lm)):
            if excl:
                keep = [r for r in range(len(rows_arr))
                        if (rows_arr[r, 0], min(rows_arr[r, 1], rows_arr[r, 2]),
                            max(rows_arr[r, 1], rows_arr[r, 2])) not in excl]
                rows_arr = rows_arr[keep]
            if len(rows_arr) < want:
                raise DataError(
                    f"requested {want} {cls} triplets but only {len(rows_arr)} "
                    f"are available"
                )
            pick = rng.permutation(len(rows_arr))[:want]
            pick.sort()
            out.extend(Triplet(int(b), int(nn), int(ff), cls)
                       for b, nn, ff in rows_arr[pick])
        return out

    return _sample_by_rejection(idx, D, xi_star, n_hm, n_lm, rng, excl)


def _sample_by_rejection(idx, D, xi_star, n_hm, n_lm, rng, excl):
    m = len(idx)
    seen = set(excl)
    hm_out, lm_out = [], []
    total_draws = 0
    max_draws = max(500_000, 400 * (n_hm + n_lm))
    while len(hm_out) < n_hm or len(lm_out) < n_lm:
        if total_draws > max_draws:
            raise DataError(
                f"triplet sampling exhausted after {total_draws} draws: "
                f"found {len(hm_out)}/{n_hm} HM and {len(lm_out)}/{n_lm} LM"
            )
        batch = max(4 * (n_hm - len(hm_out) + n_lm - len(lm_out)), 10_000)
        draws = rng.integers(0, m, size=(batch, 3))
        total_draws += batch
        i, j, k = draws[:, 0], draws[:, 1], draws[:, 2]
        ok = (i != j) & (i != k) & (j != k)
        gi, gj, gk = idx[i[ok]], idx[j[ok]], idx[k[ok]]
        margins = D[gi, gk] - D[gi, gj]
        for b, jj, kk, mg in zip(gi, gj, gk, margins):
            if mg >= xi_star:
                near, far, cls = int(jj), int(kk), HM
            elif mg <= -xi_star:
                near, far, cls = int(kk), int(jj), HM
            else:
                near, far, cls = int(min(jj, kk)), int(max(jj, kk)), LM
            if cls == HM and len(hm_out) >= n_hm:
                continue
            if cls == LM and len(lm_out) >= n_lm:
                continue
            key = (int(b), min(near, far), max(near, far))
            if key in seen:
                continue
            seen.add(key)
            (hm_out if cls == HM else lm_out).append(Triplet(int(b), near, far, cls))
    return hm_out + lm_out


# -- split protocols ----------------------------------------------------------


PROTOCOLS = ("held-out-triplets", "held-out-samples", "held-out-classes")


@dataclass
class SplitSpec:
    protocol: str
    fold_seed: int
    n_hm_train: int = 10_000
    n_lm_train: int = 10_000
    n_hm_test: int = 10_000
    n_lm_test: int = 10_000
    train_sample_fraction: float = 0.8  # held-out-samples
    holdout_class_fraction: float = 0.2  # held-out-classes


@dataclass
class Split:
    train_triplets: list
    test_triplets: list
    train_indices: np.ndarray
    test_indices: np.ndarray


def make_split(class_ids, D, xi_star, spec):
    """Build one train/test split under the requested protocol."""
    if spec.protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {spec.protocol!r}; expected {PROTOCOLS}")
    class_ids = np.asarray(class_ids, dtype=np.int64)
    m = class_ids.shape[0]
    ss = np.random.SeedSequence(spec.fold_seed)
    seed_signals, seed_train, seed_test = (int(s) for s in ss.generate_state(3))

    if spec.protocol == "held-out-triplets":
        all_idx = np.arange(m)
        train = sample_triplets(all_idx, D, xi_star,
                                spec.n_hm_train, spec.n_lm_train, seed_train)
        test = sample_triplets(all_idx, D, xi_star,
                               spec.n_hm_test, spec.n_lm_test, seed_test,
                               exclusion={t.key() for t in train})
        return Split(train, test, all_idx, all_idx.copy())

    rng = np.random.default_rng(seed_signals)
    if spec.protocol == "held-out-samples":
        train_parts, test_parts = [], []
        for c in np.unique(class_ids):
            members = np.flatnonzero(class_ids == c)
            perm = rng.permutation(members)
            n_train = int(round(spec.train_sample_fraction * len(members)))
            n_train = min(max(n_train, 1), max(len(members) - 1, 1))
            train_parts.append(perm[:n_train])
            test_parts.append(perm[n_train:])
        train_idx = np.sort(np.concatenate(train_parts))
        test_idx = np.sort(np.concatenate(test_parts)) if any(
            len(p) for p in test_parts) else np.empty(0, dtype=np.int64)
    else:  # held-out-classes
        classes = np.unique(class_ids)
        n_hold = max(1, int(round(spec.holdout_class_fraction * len(classes))))
        if n_hold >= len(classes):
            raise DataError(
                f"cannot hold out {n_hold} of {len(classes)} classes"
            )
        held = rng.choice(classes, size=n_hold, replace=False)
        test_mask = np.isin(class_ids, held)
        train_idx = np.flatnonzero(~test_mask)
        test_idx = np.flatnonzero(test_mask)

    if len(test_idx) < 3:
        raise DataError(
            f"protocol {spec.protocol} left only {len(test_idx)} test signals"
        )
    train = sample_triplets(train_idx, D, xi_star,
                            spec.n_hm_train, spec.n_lm_train, seed_train)
    test = sample_triplets(test_idx, D, xi_star,
                           spec.n_hm_test, spec.n_lm_test, seed_test)
    return Split(train, test, train_idx, test_idx)


def verify_triplets(triplets, D, xi_star):
    """Recheck every triplet's margin condition; raises DataError on violation."""
    for t in triplets:
        margin = D[t.base, t.far] - D[t.base, t.near]
        if t.margin_class == HM:
            if margin < xi_star:
                raise DataError(f"HM triplet {t} has margin {margin} < {xi_star}")
        elif abs(margin) >= xi_star:
            raise DataError(f"LM triplet {t} has |margin| {abs(margin)} >= {xi_star}")


# -- file formats -------------------------------------------------------------


def read_confusion_csv(path):
    """Size header line, then size x size comma-separated rows."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            size = int(next(reader)[0])
        except (StopIteration, ValueError, IndexError):
            raise InputError(f"{path}: expected an integer size header") from None
        rows = [row for row in reader if row]
    if len(rows) != size or any(len(r) != size for r in rows):
        raise InputError(f"{path}: expected {size}x{size} entries")
    return np.asarray(rows, dtype=np.float64)


def write_confusion_csv(matrix, path):
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([matrix.shape[0]])
        for row in matrix:
            writer.writerow([repr(v) for v in row.tolist()])


def write_triplets_csv(triplets, class_ids, sample_indices, path):
    """Serialize triplets by signal identity (class, sample index)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["base_class", "base_idx", "near_class", "near_idx",
                         "far_class", "far_idx", "margin_class"])
        for t in triplets:
            writer.writerow([
                class_ids[t.base], sample_indices[t.base],
                class_ids[t.near], sample_indices[t.near],
                class_ids[t.far], sample_indices[t.far],
                t.margin_class,
            ])


def read_triplets_csv(path, class_ids, sample_indices):
    """Read a triplet CSV back into index-based Triplets."""
    lookup = {(int(c), int(s)): i
              for i, (c, s) in enumerate(zip(class_ids, sample_indices))}
    triplets = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "base_class":
            raise InputError(f"{path}: unexpected triplet CSV header")
        for row in reader:
            if not row:
                continue
            try:
                b = lookup[(int(row[0]), int(row[1]))]
                nn = lookup[(int(row[2]), int(row[3]))]
                ff = lookup[(int(row[4]), int(row[5]))]
                cls = row[6]
            except (KeyError, ValueError, IndexError) as exc:
                raise InputError(f"{path}: bad triplet row {row}: {exc}") from None
            if cls not in (HM, LM):
                raise InputError(f"{path}: bad margin class {cls!r}")
            triplets.append(Triplet(b, nn, ff, cls))
    return triplets
