"""Trunk-state and object-weight classification.

0.3 s sliding windows (30 samples at 100 Hz) are summarized per channel by
eight statistics, z-scored, and classified by a random forest of Gini CART
trees grown here from scratch.  Outputs are smoothed by a dwell-time filter.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .controller import TrunkState, WeightClass
from .errors import DomainError, SchemaError, TrainingError
from .synth import IMU_CHANNELS, SENSOR_CHANNELS

WINDOW = 30
STATS = ["mean", "std", "min", "max", "start", "end", "slope", "delta_mean"]
MODE_CHANNELS = {"state": IMU_CHANNELS, "weight": SENSOR_CHANNELS}
MODE_LABEL = {"state": "label_state", "weight": "label_weight"}
MODE_CLASSES = {
    "state": [s.value for s in TrunkState],
    "weight": [w.value for w in WeightClass],
}
FORMAT = "bsdsim-forest"


def feature_names(mode: str) -> list[str]:
    return [f"{ch}_{stat}" for ch in MODE_CHANNELS[mode] for stat in STATS]


def _window_stats(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Statistics of windows ``x`` with shape (n_windows, n_channels, W).

    ``t`` has shape (n_windows, W).  Returns (n_windows, n_channels * 8),
    channel-major.
    """
    half = x.shape[-1] // 2
    tc = t - t.mean(axis=-1, keepdims=True)
    mean = x.mean(axis=-1)
    slope = np.einsum("nw,ncw->nc", tc, x - mean[..., None]) / np.sum(tc * tc, axis=-1)[:, None]
    feats = np.stack([
        mean,
        x.std(axis=-1),
        x.min(axis=-1),
        x.max(axis=-1),
        x[..., 0],
        x[..., -1],
        slope,
        x[..., half:].mean(axis=-1) - x[..., :half].mean(axis=-1),
    ], axis=-1)
    return feats.reshape(len(x), -1)


def extract_features(window, mode: str) -> np.ndarray:
    """Feature vector of one 30-sample window (frame table or SensorFrame list)."""
    if mode not in MODE_CHANNELS:
        raise ValueError(f"mode must be 'state' or 'weight', got {mode!r}")
    if not isinstance(window, pd.DataFrame):
        from .synth import table_from_frames
        window = table_from_frames(list(window))
    if len(window) != WINDOW:
        raise DomainError(f"window must hold exactly {WINDOW} frames, got {len(window)}")
    t = window["t"].to_numpy(dtype=float)
    if np.any(np.diff(t) <= 0):
        raise DomainError("window frames are not time-ordered")
    x = window[MODE_CHANNELS[mode]].to_numpy(dtype=float).T
    return _window_stats(t[None, :], x[None, :, :])[0]


def window_features(trace: pd.DataFrame, mode: str, stride: int = 1):
    """Features for every complete window ending at sample 29, 29+stride, ...

    Returns ``(X, end_index)``.
    """
    t = trace["t"].to_numpy(dtype=float)
    x = trace[MODE_CHANNELS[mode]].to_numpy(dtype=float)
    if len(t) < WINDOW:
        return np.empty((0, len(MODE_CHANNELS[mode]) * len(STATS))), np.empty(0, int)
    tw = sliding_window_view(t, WINDOW)[::stride]
    xw = sliding_window_view(x, WINDOW, axis=0)[::stride]  # (n, C, W)
    ends = np.arange(WINDOW - 1, len(t))[::stride]
    return _window_stats(tw, xw), ends


def training_set(trials, mode: str, stride: int = 1):
    """Stack windows from several trials; labels are taken at each window's last sample."""
    Xs, ys = [], []
    col = MODE_LABEL[mode]
    for tr in trials:
        X, ends = window_features(tr, mode, stride)
        Xs.append(X)
        ys.append(tr[col].to_numpy()[ends])
    return np.vstack(Xs), np.concatenate(ys)


# --- trees -------------------------------------------------------------------

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    features_per_split: int | str = "sqrt"
    seed: int = 42

    def n_features(self, d: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(np.sqrt(d)))
        return max(1, min(d, int(self.features_per_split)))


@dataclass
class Tree:
    """Flat node arrays; ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) class distribution

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            internal = self.left[node] >= 0
            if not internal.any():
                return node
            r, nd = rows[internal], node[internal]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[internal] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def _best_split(X, y_onehot, feats, min_leaf):
    """Lowest weighted Gini split over candidate features; None if no valid split."""
    n = len(X)
    xs = X[:, feats]  # (n, m)
    order = np.argsort(xs, axis=0, kind="stable")
    xs_sorted = np.take_along_axis(xs, order, axis=0)
    counts = np.cumsum(y_onehot[order], axis=0)  # (n, m, K) left counts after row i
    total = counts[-1]
    left = counts[:-1]
    right = total[None] - left
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    gini_left = n_left - np.sum(left * left, axis=-1) / n_left
    gini_right = n_right - np.sum(right * right, axis=-1) / n_right
    score = gini_left + gini_right  # n * weighted impurity
    valid = (xs_sorted[1:] > xs_sorted[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score.T))  # feature-major tie order
    j, i = divmod(flat, n - 1)
    thr = 0.5 * (xs_sorted[i, j] + xs_sorted[i + 1, j])
    if not xs_sorted[i, j] < thr <= xs_sorted[i + 1, j]:
        thr = xs_sorted[i, j]
    return int(feats[j]), float(thr), float(score[i, j])


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams,
              rng: np.random.Generator) -> Tree:
    d = X.shape[1]
    m = params.n_features(d)
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = onehot[idx].sum(axis=0)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(value) - 1

    root = new_node(np.arange(len(X)))
    stack = [(root, np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        dist = value[node]
        if depth >= params.max_depth or len(idx) < 2 * params.min_leaf or dist.max() == 1.0:
            continue
        feats = rng.choice(d, size=m, replace=False)
        split = _best_split(X[idx], onehot[idx], feats, params.min_leaf)
        if split is None:
            continue
        f, thr, score = split
        parent = len(idx) - np.sum(onehot[idx].sum(axis=0) ** 2) / len(idx)
        if score >= parent - 1e-12:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )


@dataclass
class ForestModel:
    trees: list[Tree]
    mean: np.ndarray
    std: np.ndarray
    classes: list[str]
    params: ForestParams = field(default_factory=ForestParams)
    mode: str | None = None

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def _normalize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DomainError(f"feature vector has {X.shape[1]} values, model expects {self.n_features}")
        return (X - self.mean) / self.std

    def predict_proba(self, X) -> np.ndarray:
        Z = self._normalize(X)
        votes = np.zeros((len(Z), len(self.classes)))
        rows = np.arange(len(Z))
        for tree in self.trees:
            votes[rows, tree.predict(Z)] += 1.0
        return votes / len(self.trees)

    def predict_many(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return np.asarray(self.classes, dtype=object)[np.argmax(proba, axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": 1,
            "mode": self.mode,
            "classes": list(self.classes),
            "feature_names": feature_names(self.mode) if self.mode else None,
            "normalization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != FORMAT:
            raise SchemaError(f"not a {FORMAT} file")
        model = cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            mean=np.asarray(d["normalization"]["mean"], dtype=float),
            std=np.asarray(d["normalization"]["std"], dtype=float),
            classes=list(d["classes"]),
            params=ForestParams(**d["params"]),
            mode=d.get("mode"),
        )
        for tree in model.trees:
            internal = tree.left >= 0
            if np.any(tree.feature[internal] >= model.n_features) or np.any(tree.feature[internal] < 0):
                raise SchemaError("tree references a feature index outside the model")
        if len(model.std) != model.n_features:
            raise SchemaError("normalization vectors differ in length")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ForestModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: malformed model file ({exc})") from None


def train_forest(X, y, params: ForestParams | None = None, classes=None,
                 mode: str | None = None) -> ForestModel:
    """Bootstrap-aggregated Gini trees on z-scored features.

    Rows are put in a canonical order before sampling, so the fitted model
    depends only on the set of (features, label) rows and the seed.
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=object)
    if len(X) == 0:
        raise TrainingError("empty dataset")
    if not np.all(np.isfinite(X)):
        raise TrainingError("non-finite feature values")
    present = sorted(set(y.tolist()))
    if len(present) < 2:
        raise TrainingError(f"need at least two classes, got {present}")
    if classes is None:
        classes = MODE_CLASSES.get(mode) or present
    classes = list(classes)
    unknown = set(present) - set(classes)
    if unknown:
        raise TrainingError(f"labels {sorted(unknown)} not in class list")
    y_int = np.array([classes.index(v) for v in y], dtype=np.int64)

    order = np.lexsort(np.column_stack([X, y_int]).T[::-1])
    X, y_int = X[order], y_int[order]

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std

    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    trees = []
    n = len(Z)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = np.sort(rng.integers(0, n, n))
        trees.append(grow_tree(Z[boot], y_int[boot], len(classes), params, rng))
    return ForestModel(trees, mean, std, classes, params, mode)


def predict(model: ForestModel, fv) -> tuple[str, np.ndarray]:
    """Majority vote for one feature vector; ties go to the lowest class index."""
    fv = np.asarray(fv, dtype=float)
    if fv.ndim != 1:
        raise DomainError("predict takes a single feature vector")
    proba = model.predict_proba(fv[None, :])[0]
    return model.classes[int(np.argmax(proba))], proba


# --- smoothing and evaluation ------------------------------------------------

class DwellFilter:
    """Commit to a new label only after ``dwell`` consecutive raw agreements."""

    def __init__(self, dwell: int = 10):
        if dwell < 1:
            raise DomainError("dwell must be at least 1")
        self.dwell = dwell
        self.output = None
        self._candidate = None
        self._count = 0

    def __call__(self, label):
        if self.output is None:
            self.output = label
            return label
        if label == self.output:
            self._candidate, self._count = None, 0
            return self.output
        if label == self._candidate:
            self._count += 1
        else:
            self._candidate, self._count = label, 1
        if self._count >= self.dwell:
            self.output = label
            self._candidate, self._count = None, 0
        return self.output


def dwell_filter(raw, dwell: int = 10) -> list:
    f = DwellFilter(dwell)
    return [f(label) for label in raw]


def classify_trace(model: ForestModel, trace: pd.DataFrame, mode: str | None = None,
                   dwell: int | None = None):
    """Per-sample labels for a trace, starting at the first full window.

    Returns ``(end_index, labels)``; ``labels`` are dwell-filtered when
    ``dwell`` is given.
    """
    mode = mode or model.mode
    X, ends = window_features(trace, mode)
    labels = list(model.predict_many(X)) if len(X) else []
    if dwell is not None:
        labels = dwell_filter(labels, dwell)
    return ends, np.asarray(labels, dtype=object)


@dataclass
class AccuracyReport:
    accuracy: float
    confusion: pd.DataFrame  # rows: true, columns: predicted
    recall: dict
    n: int

    def summary(self) -> str:
        lines = [f"accuracy {100 * self.accuracy:.2f}% over {self.n} samples"]
        for cls, r in self.recall.items():
            lines.append(f"  recall {cls:<10} {'n/a' if np.isnan(r) else f'{100 * r:.2f}%'}")
        return "\n".join(lines)


def accuracy_report(true, pred, classes) -> AccuracyReport:
    true = np.asarray(true, dtype=object)
    pred = np.asarray(pred, dtype=object)
    if len(true) == 0:
        raise DomainError("no labeled samples to evaluate")
    cm = pd.DataFrame(0, index=list(classes), columns=list(classes))
    for a, b in zip(true, pred):
        cm.loc[a, b] += 1
    recall = {}
    for c in classes:
        row = cm.loc[c].sum()
        recall[c] = float(cm.loc[c, c] / row) if row else float("nan")
    return AccuracyReport(float(np.mean(true == pred)), cm, recall, len(true))


def evaluate(model: ForestModel, traces, mode: str | None = None, dwell: int = 10) -> AccuracyReport:
    """Dwell-filtered per-sample accuracy over one or more labeled traces."""
    mode = mode or model.mode
    if isinstance(traces, pd.DataFrame):
        traces = [traces]
    col = MODE_LABEL[mode]
    true, pred = [], []
    for tr in traces:
        if col not in tr.columns:
            raise DomainError(f"trace has no {col} column")
        ends, labels = classify_trace(model, tr, mode, dwell)
        true.extend(tr[col].to_numpy()[ends])
        pred.extend(labels)
    return accuracy_report(true, pred, model.classes)
