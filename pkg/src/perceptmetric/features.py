"""Spectral features for 3-axis acceleration traces.

The pipeline reduces the three per-axis spectra to a single magnitude
spectrum (energy-preserving across axes), then summarizes it with a
32-band filter bank whose band widths grow geometrically (ratio 1.8)
and whose bands are weighted by overlapping Gaussian windows.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

N_BANDS = 32
BAND_RATIO = 1.8
GAUSS_SIGMA = 20.0  # in spectrum-sample units
MIN_SPECTRUM_LEN = 64


@dataclass
class SignalRecord:
    """One 3-axis acceleration trace with dataset identity."""

    samples: np.ndarray  # (3, N)
    sample_rate: float
    class_id: int
    sample_index: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 3:
            raise InputError(
                f"signal ({self.class_id},{self.sample_index}) must be (3, N); "
                f"got {self.samples.shape}"
            )
        if self.samples.shape[1] < 2:
            raise InputError(
                f"signal ({self.class_id},{self.sample_index}) too short: "
                f"N={self.samples.shape[1]}"
            )


@dataclass
class FeatureVector:
    values: np.ndarray  # (32,), non-negative
    class_id: int = -1
    sample_index: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (N_BANDS,):
            raise InputError(f"feature vector must have {N_BANDS} entries")


@dataclass
class FeatureStats:
    """Per-dimension standardization statistics (training data only)."""

    mean: np.ndarray
    std: np.ndarray
    flat_dims: list = field(default_factory=list)


def _next_pow2(n):
    p = 1
    while p < n:
        p *= 2
    return p


def dft321(signal, pad_to_pow2=True):
    """Combine per-axis spectra into one magnitude spectrum.

    Per frequency bin, output = sqrt(|X|^2 + |Y|^2 + |Z|^2), which keeps
    the total spectral energy of the three axes. The trace is zero-padded
    to the next power of two before the DFT (so the output has
    floor(P/2)+1 bins for padded length P).
    """
    if isinstance(signal, SignalRecord):
        samples = signal.samples
        label = f"({signal.class_id},{signal.sample_index})"
    else:
        samples = np.asarray(signal, dtype=np.float64)
        label = "<array>"
    if samples.ndim != 2 or samples.shape[0] != 3:
        raise InputError(f"dft321 needs a (3, N) array for signal {label}")
    if not np.all(np.isfinite(samples)):
        raise InputError(f"non-finite samples in signal {label}")
    n = samples.shape[1]
    if n < 2:
        raise InputError(f"signal {label} too short for a spectrum (N={n})")
    length = _next_pow2(n) if pad_to_pow2 else n
    spectra = np.fft.rfft(samples, n=length, axis=1)
    # Summing the three squared magnitudes in sorted order makes the result
    # exactly invariant under axis permutation.
    power = np.sort(np.abs(spectra) ** 2, axis=0)
    return np.sqrt(power.sum(axis=0))


def band_edges(spectrum_len, n_bands=N_BANDS, ratio=BAND_RATIO):
    """Band edges with widths w, w*r, ..., w*r^(n-1) tiling [0, spectrum_len].

    The first width solves w * (r^n - 1) / (r - 1) = spectrum_len.
    """
    w0 = spectrum_len * (ratio - 1.0) / (ratio**n_bands - 1.0)
    widths = w0 * ratio ** np.arange(n_bands)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    return edges


def _band_windows(spectrum_len, n_bands=N_BANDS, ratio=BAND_RATIO, sigma=GAUSS_SIGMA):
    """Per band: (index range, Gaussian weights) truncated at +/- 3 sigma."""
    edges = band_edges(spectrum_len, n_bands, ratio)
    centers = 0.5 * (edges[:-1] + edges[1:])
    windows = []
    for c in centers:
        lo = max(0, int(np.ceil(c - 3.0 * sigma)))
        hi = min(spectrum_len - 1, int(np.floor(c + 3.0 * sigma)))
        idx = np.arange(lo, hi + 1)
        w = np.exp(-0.5 * ((idx - c) / sigma) ** 2)
        windows.append((idx, w))
    return windows


def cqfb(spectrum):
    """32-band filter-bank energies of a magnitude spectrum.

    Each band is a Gaussian-weighted sum of spectrum magnitudes centered
    on the band; adjacent bands overlap through the Gaussian tails.
    Entries are ordered by increasing frequency.
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.ndim != 1:
        raise InputError(f"cqfb expects a 1-D spectrum, got shape {spectrum.shape}")
    if spectrum.shape[0] < MIN_SPECTRUM_LEN:
        raise InputError(
            f"spectrum of length {spectrum.shape[0]} too short for the "
            f"filter bank; need at least {MIN_SPECTRUM_LEN} bins"
        )
    if not np.all(np.isfinite(spectrum)):
        raise InputError("non-finite values in spectrum")
    out = np.empty(N_BANDS)
    for b, (idx, w) in enumerate(_band_windows(spectrum.shape[0])):
        out[b] = float(w @ spectrum[idx])
    return out


def extract_features(signal):
    """SignalRecord -> FeatureVector through dft321 + cqfb."""
    values = cqfb(dft321(signal))
    return FeatureVector(values, signal.class_id, signal.sample_index)


def normalize_features(features, stats=None):
    """Z-score each dimension; returns (normalized array, stats).

    features may be an (m, d) array or a list of FeatureVector. When
    stats are given (test time) they are applied as-is; they must come
    from training data. Dimensions with zero variance get unit standard
    deviation and a warning.
    """
    if isinstance(features, (list, tuple)) and features \
            and isinstance(features[0], FeatureVector):
        features = np.stack([fv.values for fv in features])
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if stats is None:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        flat = np.flatnonzero(std == 0.0)
        if flat.size:
            warnings.warn(
                f"zero variance in feature dimensions {flat.tolist()}; using 1.0"
            )
            std = std.copy()
            std[flat] = 1.0
        stats = FeatureStats(mean=mean, std=std, flat_dims=flat.tolist())
    return (X - stats.mean) / stats.std, stats


# -- dataset rates and resampling ------------------------------------------


def modal_rate(rates):
    vals, counts = np.unique(np.asarray(rates, dtype=np.float64), return_counts=True)
    return float(vals[np.argmax(counts)])


def resample_signal(record, target_rate):
    """Linear-interpolate a trace onto a uniform grid at target_rate."""
    if record.sample_rate == target_rate:
        return record
    n = record.samples.shape[1]
    duration = (n - 1) / record.sample_rate
    m = int(np.floor(duration * target_rate)) + 1  # grid stays inside the trace
    t_old = np.arange(n) / record.sample_rate
    t_new = np.arange(m) / target_rate
    res = np.vstack([np.interp(t_new, t_old, ax) for ax in record.samples])
    return SignalRecord(res, target_rate, record.class_id, record.sample_index)


# -- file I/O ---------------------------------------------------------------


def read_signal_csv(path, sample_rate=None, class_id=-1, sample_index=-1):
    """Read one `t,ax,ay,az` CSV; the rate comes from the t column unless given."""
    try:
        raw = np.genfromtxt(path, delimiter=",", names=True)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read signal file {path}: {exc}") from None
    for col in ("t", "ax", "ay", "az"):
        if raw.dtype.names is None or col not in raw.dtype.names:
            raise InputError(f"{path}: missing column {col!r} (header t,ax,ay,az)")
    samples = np.vstack([raw["ax"], raw["ay"], raw["az"]])
    if sample_rate is None:
        dt = np.diff(raw["t"])
        if dt.size == 0 or np.any(dt <= 0):
            raise InputError(f"{path}: cannot infer sample rate from t column")
        sample_rate = 1.0 / float(np.median(dt))
    return SignalRecord(samples, sample_rate, class_id, sample_index)


def read_manifest(path):
    """Manifest JSON: list of {path, class_id, sample_index, sample_rate}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(entries, list):
        raise InputError(f"manifest {path} must be a JSON list")
    return entries


def load_signals(manifest_path, base_dir=None):
    """Load every signal in a manifest, resampled to the modal rate."""
    import os

    entries = read_manifest(manifest_path)
    records = []
    errors = []
    for e in entries:
        try:
            p = e["path"]
            if base_dir is not None and not os.path.isabs(p):
                p = os.path.join(base_dir, p)
            records.append(read_signal_csv(
                p, sample_rate=e.get("sample_rate"),
                class_id=int(e["class_id"]), sample_index=int(e["sample_index"]),
            ))
        except (KeyError, InputError) as exc:
            errors.append(f"{e.get('path', '<missing path>')}: {exc}")
    if errors:
        raise InputError("failed to load signals:\n  " + "\n  ".join(errors))
    if not records:
        return []
    seen = {}
    for r in records:
        key = (r.class_id, r.sample_index)
        if key in seen:
            raise InputError(f"duplicate signal identity {key} in manifest")
        seen[key] = r
    target = modal_rate([r.sample_rate for r in records])
    return [resample_signal(r, target) for r in records]


def write_features_csv(features, path):
    """One row per signal: class_id,sample_index,f0..f31."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "sample_index"] + [f"f{i}" for i in range(N_BANDS)])
        for fv in features:
            writer.writerow([fv.class_id, fv.sample_index]
                            + [repr(v) for v in fv.values.tolist()])


def read_features_csv(path):
    """Returns (X (m,32), class_ids (m,), sample_indices (m,))."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        want = ["class_id", "sample_index"] + [f"f{i}" for i in range(N_BANDS)]
        if header != want:
            raise InputError(f"{path}: unexpected feature CSV header")
        rows = list(reader)
    if not rows:
        return (np.empty((0, N_BANDS)), np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64))
    arr = np.asarray(rows, dtype=np.float64)
    return (arr[:, 2:], arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64))
