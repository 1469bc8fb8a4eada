"""Supervisory classifiers (kNN, CART tree, Gaussian NB), SMOTE, ensembles and metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT = "arprotect-model"
MODEL_VERSION = 1
Z95 = 1.96

PHASE_SETS = ("a", "b", "c", "ab", "bc", "ca", "abc")
TASK_LABELS = {
    "detection": ("no_fault", "fault"),
    "region": ("internal", "external_forward", "external_reverse"),
    "location": tuple(str(i) for i in range(1, 9)),
    "phase": PHASE_SETS,
    "faulttype": ("ag", "bg", "cg", "ab", "bc", "ca", "abg", "bcg", "cag", "abcg"),
}
KINDS = ("knn", "decision_tree", "gaussian_nb")


class ClassifyError(ValueError):
    pass


class SchemaMismatchError(ClassifyError):
    pass


def schema_hash(feature_names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(feature_names).encode()).hexdigest()[:16]


def region_of(location: int) -> str:
    if location in (4, 5):
        return "internal"
    if location in (1, 2, 3):
        return "external_reverse"
    if location in (6, 7, 8):
        return "external_forward"
    raise ClassifyError(f"unknown location {location}")


def phase_set_of(fault_type: str) -> str:
    letters = "".join(ch for ch in fault_type if ch in "abc")
    return {"cab": "ca", "ac": "ca"}.get(letters, letters)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if self.task not in TASK_LABELS:
            raise ClassifyError(f"unknown task {self.task!r}")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=object).astype(str)
        self.feature_names = tuple(self.feature_names)
        if self.X.shape[0] != self.y.shape[0]:
            raise ClassifyError("X and y row counts differ")
        if self.X.shape[1] != len(self.feature_names):
            raise ClassifyError("feature_names does not match X columns")
        unknown = set(self.y.tolist()) - set(self.labels)
        if unknown:
            raise ClassifyError(f"labels {sorted(unknown)} not in task {self.task}")

    @property
    def labels(self) -> tuple[str, ...]:
        return TASK_LABELS[self.task]

    @property
    def y_index(self) -> np.ndarray:
        lut = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([lut[v] for v in self.y], dtype=int)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.task, self.feature_names)

    def counts(self) -> dict:
        labs, cnt = np.unique(self.y, return_counts=True)
        return dict(zip(labs.tolist(), cnt.tolist()))


@dataclass
class TrainedModel:
    kind: str
    task: str
    labels: tuple[str, ...]
    feature_names: tuple[str, ...]
    params: dict
    schema: str = ""

    def __post_init__(self):
        if not self.schema:
            self.schema = schema_hash(self.feature_names)


# ---------------------------------------------------------------- kNN

def _train_knn(d: Dataset, hyper: dict) -> dict:
    k = int(hyper.get("k", 5))
    if k < 1:
        raise ClassifyError("k must be >= 1")
    mean = d.X.mean(axis=0)
    std = d.X.std(axis=0)
    std[std == 0.0] = 1.0
    if not hyper.get("standardize", True):
        mean, std = np.zeros_like(mean), np.ones_like(std)
    return {"k": k, "mean": mean, "std": std, "X": (d.X - mean) / std, "y": d.y_index}


def _proba_knn(p: dict, X: np.ndarray, n_labels: int) -> np.ndarray:
    Z = (X - p["mean"]) / p["std"]
    train = p["X"]
    k = min(p["k"], train.shape[0])
    d2 = (np.sum(Z ** 2, axis=1)[:, None] - 2.0 * Z @ train.T + np.sum(train ** 2, axis=1)[None, :])
    d2 = np.maximum(d2, 0.0)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = p["y"][nn]
    out = np.zeros((X.shape[0], n_labels))
    for j in range(k):
        out[np.arange(X.shape[0]), votes[:, j]] += 1.0
    return out / k


# ---------------------------------------------------------------- CART

def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / tot[..., None]
    return np.where(tot > 0, 1.0 - np.sum(p ** 2, axis=-1), 0.0)


def _best_split(X, y, n_labels, min_leaf):
    n, n_feat = X.shape
    parent = _gini_from_counts(np.bincount(y, minlength=n_labels).astype(float))
    best = (parent - 1e-12, -1, 0.0)
    onehot = np.eye(n_labels)[y]
    for j in range(n_feat):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = left[-1] + onehot[order[-1]] - left if n > 1 else left
        nl = np.arange(1, n)
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        imp = (nl * _gini_from_counts(left) + (n - nl) * _gini_from_counts(right)) / n
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best[0]:
            best = (float(imp[i]), j, float(xs[i]))
    return best[1], best[2]


def _train_tree(d: Dataset, hyper: dict) -> dict:
    max_depth = int(hyper.get("max_depth", 12))
    min_leaf = int(hyper.get("min_leaf", 2))
    n_labels = len(d.labels)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(d.y_index[idx], minlength=n_labels).astype(float))
        return len(feature) - 1

    yi = d.y_index
    root = new_node(np.arange(d.X.shape[0]))
    stack = [(root, np.arange(d.X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = yi[idx]
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.all(ys == ys[0]):
            continue
        j, thr = _best_split(d.X[idx], ys, n_labels, min_leaf)
        if j < 0:
            continue
        mask = d.X[idx, j] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = j, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return {"feature": np.array(feature), "threshold": np.array(threshold),
            "left": np.array(left), "right": np.array(right), "value": np.stack(value)}


def _proba_tree(p: dict, X: np.ndarray, n_labels: int) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=int)
    feat, thr, left, right = p["feature"], p["threshold"], p["left"], p["right"]
    active = feat[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        f = feat[node[rows]]
        go_left = X[rows, f] <= thr[node[rows]]
        node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
        active = feat[node] >= 0
    counts = p["value"][node]
    return counts / counts.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- Gaussian NB

def _train_nb(d: Dataset, hyper: dict) -> dict:
    n_labels = len(d.labels)
    yi = d.y_index
    n_feat = d.X.shape[1]
    means = np.zeros((n_labels, n_feat))
    var = np.ones((n_labels, n_feat))
    prior = np.zeros(n_labels)
    max_var = float(np.max(d.X.var(axis=0))) if d.X.size else 0.0
    floor = 1e-9 * max_var if max_var > 0.0 else 1e-9
    for c in range(n_labels):
        rows = d.X[yi == c]
        if rows.shape[0] == 0:
            continue
        prior[c] = rows.shape[0] / d.X.shape[0]
        means[c] = rows.mean(axis=0)
        var[c] = np.maximum(rows.var(axis=0), floor)
    return {"mean": means, "var": var, "prior": prior}


def _proba_nb(p: dict, X: np.ndarray, n_labels: int) -> np.ndarray:
    present = p["prior"] > 0.0
    ll = np.full((X.shape[0], n_labels), -np.inf)
    for c in np.flatnonzero(present):
        m, v = p["mean"][c], p["var"][c]
        ll[:, c] = (math.log(p["prior"][c]) - 0.5 * np.sum(np.log(2.0 * math.pi * v))
                    - 0.5 * np.sum((X - m) ** 2 / v, axis=1))
    ll -= ll.max(axis=1, keepdims=True)
    prob = np.exp(ll)
    return prob / prob.sum(axis=1, keepdims=True)


_TRAIN = {"knn": _train_knn, "decision_tree": _train_tree, "gaussian_nb": _train_nb}
_PROBA = {"knn": _proba_knn, "decision_tree": _proba_tree, "gaussian_nb": _proba_nb}


def train(kind: str, d: Dataset, hyper: dict | None = None) -> TrainedModel:
    """Fit one classifier.

    kNN: Euclidean on standardized columns, default k=5, distance ties go to
    the lower training row. Tree: CART with Gini, max_depth 12, min_leaf 2,
    splits ``x <= threshold`` at observed values. NB: per-class Gaussians with
    variances floored at 1e-9 times the largest feature variance.
    """
    if kind not in _TRAIN:
        raise ClassifyError(f"unknown classifier kind {kind!r}")
    counts = d.counts()
    if len(counts) < 2:
        raise ClassifyError("training needs at least two classes")
    if min(counts.values()) < 5:
        raise ClassifyError(f"every class needs >= 5 rows, got {counts}")
    params = _TRAIN[kind](d, dict(hyper or {}))
    return TrainedModel(kind, d.task, d.labels, d.feature_names, params)


def _check_schema(m: TrainedModel, X, feature_names):
    if schema_hash(tuple(feature_names)) != m.schema:
        raise SchemaMismatchError(f"feature schema does not match model ({m.schema})")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(m.feature_names):
        raise SchemaMismatchError("column count does not match model")
    return X


def predict_proba(m: TrainedModel, X, feature_names) -> np.ndarray:
    X = _check_schema(m, X, feature_names)
    return _PROBA[m.kind](m.params, X, len(m.labels))


def predict(m: TrainedModel, X, feature_names) -> np.ndarray:
    return np.asarray(m.labels)[np.argmax(predict_proba(m, X, feature_names), axis=1)]


def ensemble_proba(models: Sequence[TrainedModel], X, feature_names) -> np.ndarray:
    """Average class probabilities over models (all sharing one label set)."""
    if not models:
        raise ClassifyError("empty model list")
    labels = models[0].labels
    if any(m.labels != labels for m in models):
        raise ClassifyError("models disagree on the label set")
    return sum(predict_proba(m, X, feature_names) for m in models) / len(models)


def ensemble_predict(models, X, feature_names) -> np.ndarray:
    return np.asarray(models[0].labels)[np.argmax(ensemble_proba(models, X, feature_names), axis=1)]


def bootstrap_indices(y, seed) -> np.ndarray:
    """Class-stratified bootstrap sample (with replacement), sorted."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    out = []
    for lab in sorted(set(y.tolist())):
        rows = np.flatnonzero(y == lab)
        out.append(rng.choice(rows, size=rows.size, replace=True))
    return np.sort(np.concatenate(out))


def train_ensemble(kinds: Sequence[str], d: Dataset, seed: int = 0, bootstrap: bool = True,
                   hyper: dict | None = None) -> list[TrainedModel]:
    """Train one model per entry of ``kinds``; member q sees bootstrap seed ``seed + q``."""
    hyper = hyper or {}
    models = []
    for q, kind in enumerate(kinds):
        data = d.subset(bootstrap_indices(d.y, seed + q)) if bootstrap else d
        models.append(train(kind, data, hyper.get(kind)))
    return models


# ---------------------------------------------------------------- SMOTE

def smote(d: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Oversample every class below the majority count by neighbour interpolation.

    A synthetic row is x + u (x_nn - x) with x a random class member, x_nn one
    of its k nearest same-class neighbours and u ~ U(0, 1). Original rows come
    first, unchanged.
    """
    rng = np.random.default_rng(seed)
    counts = d.counts()
    target = max(counts.values())
    new_x, new_y = [d.X], [d.y]
    for lab in d.labels:
        if lab not in counts or counts[lab] == target:
            continue
        rows = d.X[d.y == lab]
        if rows.shape[0] < k + 1:
            raise ClassifyError(f"class {lab!r} has {rows.shape[0]} rows; SMOTE with k={k} needs {k + 1}")
        dist = np.sum((rows[:, None, :] - rows[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(dist, np.inf)
        nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
        n_new = target - rows.shape[0]
        base = rng.integers(0, rows.shape[0], n_new)
        pick = nn[base, rng.integers(0, k, n_new)]
        u = rng.random(n_new)[:, None]
        new_x.append(rows[base] + u * (rows[pick] - rows[base]))
        new_y.append(np.full(n_new, lab, dtype=object))
    return Dataset(np.vstack(new_x), np.concatenate(new_y), d.task, d.feature_names)


# ---------------------------------------------------------------- evaluation

def wald_ci(eta: float, n: int, z: float = Z95) -> tuple[float, float]:
    """eta -/+ z sqrt(eta (1 - eta) / n)."""
    half = z * math.sqrt(max(eta * (1.0 - eta), 0.0) / n)
    return eta - half, eta + half


@dataclass
class EvalReport:
    task: str
    labels: tuple[str, ...]
    accuracy: float
    ci: tuple[float, float]
    confusion: np.ndarray
    n: int
    recall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "labels": list(self.labels),
            "n": self.n,
            "accuracy": self.accuracy,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "confusion": self.confusion.astype(int).tolist(),
            "recall": {k: v for k, v in self.recall.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_confusion_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + list(self.labels))
            for lab, row in zip(self.labels, self.confusion.astype(int)):
                w.writerow([lab] + row.tolist())


def report_from_predictions(task: str, y_true, y_pred, z: float = Z95) -> EvalReport:
    labels = TASK_LABELS[task]
    lut = {lab: i for i, lab in enumerate(labels)}
    y_true = [str(v) for v in y_true]
    y_pred = [str(v) for v in y_pred]
    if not y_true:
        raise ClassifyError("empty test set")
    conf = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(y_true, y_pred):
        conf[lut[t], lut[p]] += 1
    n = len(y_true)
    eta = float(np.trace(conf)) / n
    recall = {}
    for i, lab in enumerate(labels):
        support = int(conf[i].sum())
        recall[lab] = float(conf[i, i] / support) if support else None
    return EvalReport(task, labels, eta, wald_ci(eta, n, z), conf, n, recall)


def evaluate(model, test: Dataset) -> EvalReport:
    """Accuracy (confusion trace / total), Wald 95% CI and confusion matrix."""
    models = list(model) if isinstance(model, (list, tuple)) else [model]
    pred = ensemble_predict(models, test.X, test.feature_names)
    return report_from_predictions(test.task, test.y, pred)


def stratified_split(strata, test_fraction: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-stratum seeded shuffle; round(n * test_fraction) rows of each go to test."""
    rng = np.random.default_rng(seed)
    strata = np.asarray(strata, dtype=object).astype(str)
    train_idx, test_idx = [], []
    for s in sorted(set(strata.tolist())):
        rows = np.flatnonzero(strata == s)
        rows = rows[rng.permutation(rows.size)]
        n_test = int(round(rows.size * test_fraction))
        test_idx.append(rows[:n_test])
        train_idx.append(rows[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


# ---------------------------------------------------------------- model files

def _encode(v):
    if isinstance(v, np.ndarray):
        return {"__array__": v.tolist(), "dtype": str(v.dtype)}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _decode(v):
    if isinstance(v, dict) and "__array__" in v:
        return np.asarray(v["__array__"], dtype=v["dtype"])
    return v


def dumps_model(m: TrainedModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": m.kind,
        "task": m.task,
        "labels": list(m.labels),
        "feature_names": list(m.feature_names),
        "schema": m.schema,
        "params": {k: _encode(v) for k, v in sorted(m.params.items())},
    }
    return json.dumps(doc, sort_keys=True)


def loads_model(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ClassifyError("not an arprotect model file")
    if doc.get("version") != MODEL_VERSION:
        raise ClassifyError(f"unsupported model version {doc.get('version')}")
    m = TrainedModel(doc["kind"], doc["task"], tuple(doc["labels"]), tuple(doc["feature_names"]),
                     {k: _decode(v) for k, v in doc["params"].items()}, doc["schema"])
    if schema_hash(m.feature_names) != m.schema:
        raise ClassifyError("model file schema hash does not match its feature names")
    return m


def save_model(m: TrainedModel, path) -> None:
    Path(path).write_text(dumps_model(m))


def load_model(path) -> TrainedModel:
    return loads_model(Path(path).read_text())
