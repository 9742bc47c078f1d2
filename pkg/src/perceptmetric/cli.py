"""Command-line pipelines: features, synth, triplets, train, eval, experiment.

Every command takes --config (JSON) plus flags; flags win over the file.
Each run writes a run.json capturing the resolved config, its hash, the
seed, and the toolkit version, so artifacts are reproducible byte for
byte given the same config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, data as dt, features as ft, models as md, train_eval as te
from .errors import InputError, PerceptMetricError


def config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _provenance(resolved, seed):
    return {"seed": seed, "config_hash": config_hash(resolved),
            "version": __version__}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_run_manifest(out_dir, command, resolved, seed):
    _write_json(os.path.join(out_dir, "run.json"), {
        "command": command,
        "config": resolved,
        "provenance": _provenance(resolved, seed),
    })


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"config {path} must be a JSON object")
    return doc


def _resolve(args, keys):
    """File config overlaid by explicit command-line flags."""
    conf = _load_config_file(getattr(args, "config", None))
    out = {}
    for key in keys:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in conf:
            out[key] = conf[key]
    return out


# -- vector CSV shared by synthetic signals and feature tables --------------


def write_vectors_csv(X, class_ids, sample_indices, path, prefix="f"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "sample_index"]
                        + [f"{prefix}{i}" for i in range(X.shape[1])])
        for cid, sid, row in zip(class_ids, sample_indices, X):
            writer.writerow([int(cid), int(sid)] + [repr(v) for v in row.tolist()])


def read_vectors_csv(path):
    """Reads feature CSVs (f0..) and synthetic signal CSVs (x0..) alike."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["class_id", "sample_index"]:
            raise InputError(f"{path}: expected class_id,sample_index,... header")
        rows = list(reader)
    if not rows:
        return (np.empty((0, len(header) - 2)), np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64))
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, 2:], arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)


def _write_curve_csv(path, columns, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


# -- ground-truth bundle -----------------------------------------------------


def _save_ground_truth(path, metric, xi_star):
    doc = {"kind": metric.kind, "xi_star": xi_star}
    if metric.kind == "mahalanobis":
        doc["factor"] = metric.factor.tolist()
    elif metric.kind == "cayley-klein":
        doc["psi"] = metric.psi.tolist()
    _write_json(path, doc)


def load_ground_truth(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from None
    kind = doc.get("kind")
    if kind == "mahalanobis":
        metric = dt.MahalanobisGroundTruth(np.asarray(doc["factor"]))
    elif kind == "cayley-klein":
        metric = dt.CayleyKleinGroundTruth(np.asarray(doc["psi"]))
    else:
        raise InputError(f"{path}: unknown ground-truth kind {kind!r}")
    metric.xi_star = doc.get("xi_star")
    return metric


# -- subcommands ---------------------------------------------------------------


def cmd_features(args):
    resolved = _resolve(args, ["manifest", "out", "base_dir"])
    manifest = resolved.get("manifest")
    out = resolved.get("out", "features.csv")
    if manifest is None:
        raise InputError("features: --manifest is required")
    out_dir = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    records = ft.load_signals(manifest, base_dir=resolved.get("base_dir"))
    if not records:
        print("warning: empty manifest, writing header-only output",
              file=sys.stderr)
    fvs = [ft.extract_features(r) for r in records]
    ft.write_features_csv(fvs, out)
    _write_run_manifest(out_dir, "features", resolved, seed=0)
    print(f"wrote {len(fvs)} feature rows to {out}")
    return 0


def cmd_synth(args):
    keys = ["kind", "n", "dim", "seed", "out", "n_hm_train", "n_lm_train",
            "n_hm_test", "n_lm_test"]
    resolved = _resolve(args, keys)
    kind = resolved.get("kind")
    if kind not in ("mahalanobis", "cayley-klein"):
        raise InputError(f"synth: kind must be mahalanobis or cayley-klein, got {kind!r}")
    n = int(resolved.get("n", 100))
    dim = int(resolved.get("dim", 8))
    seed = int(resolved.get("seed", 0))
    counts = tuple(int(resolved.get(k, 10_000)) for k in
                   ("n_hm_train", "n_lm_train", "n_hm_test", "n_lm_test"))
    out = resolved.get("out", "synth-out")
    os.makedirs(out, exist_ok=True)

    X = dt.gen_synthetic_signals(n, dim, seed)
    metric = (dt.mahalanobis_gt(dim, seed + 100) if kind == "mahalanobis"
              else dt.cayley_klein_gt(dim, seed + 100))
    D = metric.distance_matrix(X)
    xi = dt.training_threshold_synthetic(D, seed + 200)
    metric.xi_star = xi

    class_ids = np.arange(n)
    sample_indices = np.zeros(n, dtype=np.int64)
    train = dt.sample_triplets(class_ids, D, xi, counts[0], counts[1], seed + 1)
    test = dt.sample_triplets(class_ids, D, xi, counts[2], counts[3], seed + 2,
                              exclusion={t.key() for t in train})

    write_vectors_csv(X, class_ids, sample_indices,
                      os.path.join(out, "signals.csv"), prefix="x")
    _save_ground_truth(os.path.join(out, "ground_truth.json"), metric, xi)
    dt.write_triplets_csv(train, class_ids, sample_indices,
                          os.path.join(out, "train_triplets.csv"))
    dt.write_triplets_csv(test, class_ids, sample_indices,
                          os.path.join(out, "test_triplets.csv"))
    _write_json(os.path.join(out, "dataset.json"), {
        "kind": kind, "n": n, "dim": dim, "xi_star": xi,
        "counts": {"train": counts[:2], "test": counts[2:]},
        "files": {"signals": "signals.csv", "ground_truth": "ground_truth.json",
                  "train_triplets": "train_triplets.csv",
                  "test_triplets": "test_triplets.csv"},
        "provenance": _provenance(resolved, seed),
    })
    _write_run_manifest(out, "synth", resolved, seed)
    print(f"synthetic {kind} dataset in {out}: {n}x{dim}, xi*={xi:.6g}, "
          f"{len(train)} train / {len(test)} test triplets")
    return 0


def cmd_triplets(args):
    keys = ["confusion", "features", "protocol", "seed", "out",
            "n_hm_train", "n_lm_train", "n_hm_test", "n_lm_test"]
    resolved = _resolve(args, keys)
    for req in ("confusion", "features", "protocol"):
        if resolved.get(req) is None:
            raise InputError(f"triplets: --{req} is required")
    seed = int(resolved.get("seed", 0))
    out = resolved.get("out", "triplets-out")
    os.makedirs(out, exist_ok=True)

    raw = dt.read_confusion_csv(resolved["confusion"])
    conf = dt.normalize_confusion(raw)
    X, class_ids, sample_indices = read_vectors_csv(resolved["features"])
    if class_ids.size and class_ids.max() >= conf.size:
        raise InputError(
            f"features reference class {class_ids.max()} but the confusion "
            f"matrix has only {conf.size} classes"
        )
    gt = dt.ConfusionGroundTruth(conf)
    D = gt.distance_matrix(class_ids)
    xi = dt.compute_xi_star(D)
    spec = dt.SplitSpec(
        resolved["protocol"], seed,
        int(resolved.get("n_hm_train", 10_000)),
        int(resolved.get("n_lm_train", 10_000)),
        int(resolved.get("n_hm_test", 10_000)),
        int(resolved.get("n_lm_test", 10_000)),
    )
    split = dt.make_split(class_ids, D, xi, spec)

    dt.write_triplets_csv(split.train_triplets, class_ids, sample_indices,
                          os.path.join(out, "train_triplets.csv"))
    dt.write_triplets_csv(split.test_triplets, class_ids, sample_indices,
                          os.path.join(out, "test_triplets.csv"))
    _write_json(os.path.join(out, "split.json"), {
        "protocol": spec.protocol, "fold_seed": seed, "xi_star": xi,
        "counts": {"train": [spec.n_hm_train, spec.n_lm_train],
                   "test": [spec.n_hm_test, spec.n_lm_test]},
        "train_signals": [[int(class_ids[i]), int(sample_indices[i])]
                          for i in split.train_indices],
        "test_signals": [[int(class_ids[i]), int(sample_indices[i])]
                         for i in split.test_indices],
        "files": {"train_triplets": "train_triplets.csv",
                  "test_triplets": "test_triplets.csv"},
        "provenance": _provenance(resolved, seed),
    })
    _write_run_manifest(out, "triplets", resolved, seed)
    print(f"{spec.protocol} split in {out}: {len(split.train_triplets)} train / "
          f"{len(split.test_triplets)} test triplets")
    return 0


def _train_config_from(resolved, seed):
    return te.TrainConfig(
        epochs=int(resolved.get("epochs", 1000)),
        batch_size=int(resolved.get("batch_size", 128)),
        learning_rate=float(resolved.get("learning_rate", 0.001)),
        weight_decay=float(resolved.get("weight_decay", 0.0)),
        seed=seed,
        model_kind=resolved.get("model", "perceptnet"),
        squared_margins=bool(resolved.get("squared_margins", True)),
    ).validate()


def cmd_train(args):
    keys = ["features", "triplets", "model", "epochs", "batch_size",
            "learning_rate", "weight_decay", "squared_margins", "seed",
            "out", "normalize"]
    resolved = _resolve(args, keys)
    for req in ("features", "triplets"):
        if resolved.get(req) is None:
            raise InputError(f"train: --{req} is required")
    seed = int(resolved.get("seed", 0))
    out = resolved.get("out", "train-out")
    os.makedirs(out, exist_ok=True)

    X, class_ids, sample_indices = read_vectors_csv(resolved["features"])
    triplets = dt.read_triplets_csv(resolved["triplets"], class_ids, sample_indices)
    stats = None
    if resolved.get("normalize"):
        X, stats = ft.normalize_features(X)
    cfg = _train_config_from(resolved, seed)
    model = md.init_model(cfg.model_kind, X.shape[1], seed=seed)
    model, history = te.train(model, triplets, X, cfg)

    md.save_model(model, os.path.join(out, "model.json"))
    _write_curve_csv(os.path.join(out, "loss_history.csv"),
                     [list(range(1, len(history) + 1)), history],
                     ["epoch", "mean_loss"])
    classes = {t.margin_class for t in triplets}
    threshold_doc = {"provenance": _provenance(resolved, seed)}
    if classes == {"HM", "LM"}:
        est = te.estimate_threshold(model, triplets, X)
        threshold_doc.update({"xi_phi": est.xi_phi, "f_hm": est.f_hm,
                              "f_lm": est.f_lm})
    else:
        threshold_doc.update({"xi_phi": None,
                              "note": "single-margin-class training set; "
                                      "no learnable threshold"})
        print("warning: training set has one margin class; threshold skipped",
              file=sys.stderr)
    _write_json(os.path.join(out, "threshold.json"), threshold_doc)
    if stats is not None:
        _write_json(os.path.join(out, "feature_stats.json"),
                    {"mean": stats.mean.tolist(), "std": stats.std.tolist()})
    _write_run_manifest(out, "train", resolved, seed)
    final = history[-1] if history else float("nan")
    print(f"trained {cfg.model_kind} for {cfg.epochs} epochs "
          f"(final loss {final:.6g}); artifacts in {out}")
    return 0


def cmd_eval(args):
    keys = ["model", "features", "triplets", "threshold", "xi", "out",
            "pairs", "confusion", "ground_truth", "pair_threshold",
            "similarity", "feature_stats"]
    resolved = _resolve(args, keys)
    for req in ("model", "features"):
        if resolved.get(req) is None:
            raise InputError(f"eval: --{req} is required")
    out = resolved.get("out", "eval-out")
    os.makedirs(out, exist_ok=True)

    model = md.load_model(resolved["model"])
    X, class_ids, sample_indices = read_vectors_csv(resolved["features"])
    if X.shape[1] != model.input_dim:
        raise InputError(
            f"model expects input dimension {model.input_dim} but the feature "
            f"table has {X.shape[1]}"
        )
    if resolved.get("feature_stats"):
        with open(resolved["feature_stats"], "r", encoding="utf-8") as fh:
            sdoc = json.load(fh)
        stats = ft.FeatureStats(np.asarray(sdoc["mean"]), np.asarray(sdoc["std"]))
        X, _ = ft.normalize_features(X, stats)

    report = te.EvalReport()
    seed = int(resolved.get("seed", 0) or 0)
    wrote = []
    if resolved.get("triplets"):
        triplets = dt.read_triplets_csv(resolved["triplets"], class_ids,
                                        sample_indices)
        xi_phi = resolved.get("xi")
        if xi_phi is None and resolved.get("threshold"):
            with open(resolved["threshold"], "r", encoding="utf-8") as fh:
                xi_phi = json.load(fh).get("xi_phi")
        if xi_phi is not None:
            report = te.tga(model, triplets, X, float(xi_phi))
        recall, acc, xi = te.threshold_sweep(model, triplets, X)
        report.sweep_recall = recall.tolist()
        report.sweep_accuracy = acc.tolist()
        report.sweep_xi = xi.tolist()
        _write_curve_csv(os.path.join(out, "sweep.csv"),
                         [recall, acc, xi], ["lm_recall", "accuracy", "xi"])
        wrote.append("sweep.csv")

    if resolved.get("pairs"):
        if resolved.get("confusion"):
            conf = dt.normalize_confusion(dt.read_confusion_csv(resolved["confusion"]))
            gt_matrix = dt.ConfusionGroundTruth(conf).distance_matrix(class_ids)
        elif resolved.get("ground_truth"):
            metric = load_ground_truth(resolved["ground_truth"])
            gt_matrix = metric.distance_matrix(X)
        else:
            raise InputError("eval --pairs needs --confusion or --ground-truth")
        labels = te.pairwise_labels_from_gt(
            gt_matrix, float(resolved.get("pair_threshold", 0.5)))
        precision, recall_p, auc = te.pairwise_eval(model, X, labels)
        report.pr_precision = precision.tolist()
        report.pr_recall = recall_p.tolist()
        report.auc = auc
        _write_curve_csv(os.path.join(out, "pr_curve.csv"),
                         [recall_p, precision], ["recall", "precision"])
        wrote.append("pr_curve.csv")

    if resolved.get("similarity"):
        sim, classes = te.similarity_matrix(model, X, class_ids)
        report.similarity = sim.tolist()
        report.similarity_classes = classes.tolist()
        with open(os.path.join(out, "similarity.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + [str(c) for c in classes])
            for c, row in zip(classes, sim):
                writer.writerow([str(c)] + [repr(float(v)) for v in row])
        wrote.append("similarity.csv")

    doc = report.to_dict()
    doc["provenance"] = _provenance(resolved, seed)
    _write_json(os.path.join(out, "report.json"), doc)
    _write_run_manifest(out, "eval", resolved, seed)
    print(f"eval report in {out} ({', '.join(['report.json'] + wrote)})")
    return 0


def cmd_experiment(args):
    keys = ["dataset", "kind", "n", "dim", "features", "confusion", "protocol",
            "model", "epochs", "batch_size", "learning_rate", "weight_decay",
            "squared_margins", "seed", "out", "folds", "hm_only", "xi_zero",
            "size_sweep", "n_hm_train", "n_lm_train", "n_hm_test", "n_lm_test",
            "pairs", "pair_threshold", "similarity", "normalize"]
    resolved = _resolve(args, keys)
    seed = int(resolved.get("seed", 0))
    folds = int(resolved.get("folds", 5))
    out_base = resolved.get("out")
    if out_base:
        run_dir = out_base
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = os.path.join("runs", f"{stamp}-{config_hash(resolved)}")
    os.makedirs(run_dir, exist_ok=True)

    dataset = resolved.get("dataset", "synthetic")
    if dataset == "synthetic":
        kind = resolved.get("kind", "mahalanobis")
        n = int(resolved.get("n", 100))
        dim = int(resolved.get("dim", 8))
        X = dt.gen_synthetic_signals(n, dim, seed)
        metric = (dt.mahalanobis_gt(dim, seed + 100) if kind == "mahalanobis"
                  else dt.cayley_klein_gt(dim, seed + 100))
        gt_matrix = metric.distance_matrix(X)
        xi = dt.training_threshold_synthetic(gt_matrix, seed + 200)
        class_ids = np.arange(n)
        normalize = False
        protocol = resolved.get("protocol", "held-out-triplets")
    elif dataset == "files":
        for req in ("features", "confusion"):
            if resolved.get(req) is None:
                raise InputError(f"experiment: --{req} is required for dataset=files")
        X, class_ids, _ = read_vectors_csv(resolved["features"])
        conf = dt.normalize_confusion(dt.read_confusion_csv(resolved["confusion"]))
        gt_matrix = dt.ConfusionGroundTruth(conf).distance_matrix(class_ids)
        xi = dt.compute_xi_star(gt_matrix)
        normalize = bool(resolved.get("normalize", True))
        protocol = resolved.get("protocol", "held-out-triplets")
    else:
        raise InputError(f"experiment: dataset must be synthetic or files, got {dataset!r}")

    counts = tuple(int(resolved.get(k, 10_000)) for k in
                   ("n_hm_train", "n_lm_train", "n_hm_test", "n_lm_test"))
    cfg = _train_config_from(resolved, seed)
    size_sweep = resolved.get("size_sweep")
    if isinstance(size_sweep, str):
        size_sweep = [int(s) for s in size_sweep.split(",") if s]
    result = te.run_experiment(
        X, class_ids, gt_matrix, xi, protocol, cfg, counts=counts, folds=folds,
        hm_only=bool(resolved.get("hm_only")),
        xi_zero=bool(resolved.get("xi_zero")),
        size_sweep=size_sweep,
        pair_labels_threshold=(float(resolved.get("pair_threshold", 0.5))
                               if resolved.get("pairs") else None),
        with_similarity=bool(resolved.get("similarity")),
        normalize=normalize,
    )
    result["xi_star"] = xi
    result["provenance"] = _provenance(resolved, seed)
    loss_hist = result.pop("loss_history")
    _write_json(os.path.join(run_dir, "summary.json"), result)
    for fold, (per_fold, hist) in enumerate(zip(result["per_fold"], loss_hist)):
        fold_dir = os.path.join(run_dir, f"fold{fold}")
        os.makedirs(fold_dir, exist_ok=True)
        _write_json(os.path.join(fold_dir, "report.json"), per_fold)
        if hist:
            _write_curve_csv(os.path.join(fold_dir, "loss_history.csv"),
                             [list(range(1, len(hist) + 1)), hist],
                             ["epoch", "mean_loss"])
        if per_fold.get("sweep", {}).get("lm_recall"):
            sweep = per_fold["sweep"]
            _write_curve_csv(os.path.join(fold_dir, "sweep.csv"),
                             [sweep["lm_recall"], sweep["accuracy"], sweep["xi"]],
                             ["lm_recall", "accuracy", "xi"])
    _write_run_manifest(run_dir, "experiment", resolved, seed)
    s = result["summary"]
    print(f"experiment ({protocol}, {cfg.model_kind}, {folds} folds) in {run_dir}: "
          f"tga_total = {s['tga_total']['mean']:.4f} +/- {s['tga_total']['std']:.4f}")
    return 0


# -- argument parsing ----------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory or file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="perceptmetric",
        description="Perceptual metric learning from triplet comparisons",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract filter-bank features")
    _add_common(p)
    p.add_argument("--manifest", help="signals manifest JSON")
    p.add_argument("--base-dir", dest="base_dir")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic metric dataset")
    _add_common(p)
    p.add_argument("--kind", choices=["mahalanobis", "cayley-klein"])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    for k in ("n-hm-train", "n-lm-train", "n-hm-test", "n-lm-test"):
        p.add_argument(f"--{k}", dest=k.replace("-", "_"), type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("triplets", help="build split triplet files from a confusion matrix")
    _add_common(p)
    p.add_argument("--confusion")
    p.add_argument("--features")
    p.add_argument("--protocol", choices=list(dt.PROTOCOLS))
    for k in ("n-hm-train", "n-lm-train", "n-hm-test", "n-lm-test"):
        p.add_argument(f"--{k}", dest=k.replace("-", "_"), type=int, default=None)
    p.set_defaults(func=cmd_triplets)

    p = sub.add_parser("train", help="train a distance model")
    _add_common(p)
    p.add_argument("--features")
    p.add_argument("--triplets", help="training triplet CSV")
    p.add_argument("--model", choices=list(md.MODEL_KINDS), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--normalize", action="store_const", const=True, default=None,
                   help="z-score features with stats from this training set")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--features")
    p.add_argument("--triplets", help="test triplet CSV")
    p.add_argument("--threshold", help="threshold.json from train")
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--pairs", action="store_const", const=True, default=None)
    p.add_argument("--confusion")
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--pair-threshold", dest="pair_threshold", type=float, default=None)
    p.add_argument("--similarity", action="store_const", const=True, default=None)
    p.add_argument("--feature-stats", dest="feature_stats")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="multi-fold train/eval pipeline")
    _add_common(p)
    p.add_argument("--dataset", choices=["synthetic", "files"], default=None)
    p.add_argument("--kind", choices=["mahalanobis", "cayley-klein"], default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--features")
    p.add_argument("--confusion")
    p.add_argument("--protocol", choices=list(dt.PROTOCOLS), default=None)
    p.add_argument("--model", choices=list(md.MODEL_KINDS), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--hm-only", dest="hm_only", action="store_const", const=True,
                   default=None)
    p.add_argument("--xi-zero", dest="xi_zero", action="store_const", const=True,
                   default=None)
    p.add_argument("--size-sweep", dest="size_sweep", default=None,
                   help="comma-separated training set sizes")
    for k in ("n-hm-train", "n-lm-train", "n-hm-test", "n-lm-test"):
        p.add_argument(f"--{k}", dest=k.replace("-", "_"), type=int, default=None)
    p.add_argument("--pairs", action="store_const", const=True, default=None)
    p.add_argument("--pair-threshold", dest="pair_threshold", type=float, default=None)
    p.add_argument("--similarity", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PerceptMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
