"""The five feature-based detector families on sparse TF-IDF vectors.

All training is deterministic given (seed, data order): randomness flows
through numpy Generators seeded from the spec seed with fixed stream ids,
so two trainings with the same inputs produce identical learned state.

Families and their fixed algorithms:
  LR  - L2-regularized logistic loss, full-batch gradient descent with a
        backtracking (Armijo) step, tol on the gradient inf-norm.
  NB  - multinomial Naive Bayes consuming nonnegative TF-IDF weights as
        pseudo-counts, Laplace smoothing.
  RF  - bagged CART trees, Gini impurity, sqrt(d) feature candidates per
        split, per-tree seeds derived by a counter scheme.
  SVM - linear hinge loss optimized by Pegasos-style seeded stochastic
        subgradient descent with averaged weights (bias folded into the
        regularized update).
  MLP - one hidden ReLU layer, sigmoid output, cross-entropy, seeded
        uniform init scaled by 1/sqrt(fan-in), mini-batch SGD.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import TrainingError

FAMILIES = ("LR", "NB", "RF", "SVM", "MLP")

FORMAT_VERSION = 1

_DEFAULTS = {
    "LR": {"regularization": 1e-4, "tol": 1e-6, "max_epochs": 1000},
    "NB": {"alpha": 1.0},
    "RF": {"n_trees": 100, "max_depth": 40, "min_samples_split": 2},
    "SVM": {"regularization": 1e-4, "epochs": 10},
    # step 0.5: with 1/sqrt(fan-in) init on ~25k-dim unit-norm rows the
    # first-layer activations start microscopic, and smaller fixed steps
    # verifiably fail to leave the plateau within the epoch budget
    "MLP": {"hidden_units": 100, "batch_size": 64, "learning_rate": 0.5, "epochs": 20},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    seed: int = 0
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise TrainingError(f"unknown model family {self.family!r}")
        unknown = set(self.hyperparameters) - set(_DEFAULTS[self.family])
        if unknown:
            raise TrainingError(f"{self.family}: unknown hyperparameters {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**_DEFAULTS[self.family], **self.hyperparameters}


@dataclass
class TrainedModel:
    spec: ModelSpec
    feature_dimension: int
    training_fingerprint: dict
    state: dict

    def save(self, path) -> None:
        meta = json.dumps({
            "format_version": FORMAT_VERSION,
            "family": self.spec.family,
            "seed": self.spec.seed,
            "hyperparameters": self.spec.hyperparameters,
            "feature_dimension": self.feature_dimension,
            "training_fingerprint": self.training_fingerprint,
        })
        np.savez(path, __meta__=np.array(meta), **self.state)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        archive = np.load(path, allow_pickle=False)
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise TrainingError(
                f"model artifact version {meta.get('format_version')!r} unsupported"
            )
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
        return cls(
            spec=ModelSpec(meta["family"], meta["seed"], meta["hyperparameters"]),
            feature_dimension=meta["feature_dimension"],
            training_fingerprint=meta["training_fingerprint"],
            state=state,
        )


def _as_csr(vectors) -> sp.csr_matrix:
    if sp.issparse(vectors):
        return vectors.tocsr()
    if not vectors:
        raise TrainingError("no vectors given")
    dims = {v.dimension for v in vectors}
    if len(dims) != 1:
        raise TrainingError(f"mixed vector dimensions {sorted(dims)}")
    dim = dims.pop()
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for v in vectors:
        indices.extend(np.asarray(v.indices).tolist())
        data.extend(np.asarray(v.values).tolist())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(vectors), dim),
    )


def _as_binary(labels) -> np.ndarray:
    y = np.zeros(len(labels), dtype=np.float64)
    for i, label in enumerate(labels):
        if label == "phishing":
            y[i] = 1.0
        elif label != "benign":
            raise TrainingError(f"label {label!r} is not phishing/benign")
    return y


# --------------------------------------------------------------------------
# Logistic regression
# --------------------------------------------------------------------------

def _logloss(z: np.ndarray, y: np.ndarray) -> float:
    # mean(log(1+e^z) - y*z), stable for large |z|
    return float(np.mean(np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z))) - y * z))


def _train_lr(X, y, hp, _seed):
    lam, tol, max_epochs = hp["regularization"], hp["tol"], hp["max_epochs"]
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0

    def objective(wv, bv):
        return _logloss(X @ wv + bv, y) + 0.5 * lam * float(wv @ wv)

    f = objective(w, b)
    step = 1.0
    for _ in range(max_epochs):
        p = expit(X @ w + b)
        gw = X.T @ (p - y) / n + lam * w
        gb = float(np.mean(p - y))
        gnorm_inf = max(float(np.max(np.abs(gw))) if d else 0.0, abs(gb))
        if gnorm_inf < tol:
            break
        g2 = float(gw @ gw) + gb * gb
        step = min(step * 2.0, 1e6)
        for _ in range(60):
            w_new = w - step * gw
            b_new = b - step * gb
            f_new = objective(w_new, b_new)
            if f_new <= f - 1e-4 * step * g2:
                break
            step *= 0.5
        else:
            break  # no productive step left at float precision
        w, b, f = w_new, b_new, f_new
    return {"w": w, "b": np.float64(b)}


def _score_lr(state, X):
    return expit(X @ state["w"] + float(state["b"]))


# --------------------------------------------------------------------------
# Naive Bayes
# --------------------------------------------------------------------------

def _train_nb(X, y, hp, _seed):
    alpha = hp["alpha"]
    n, d = X.shape
    log_prior = np.zeros(2)
    log_theta = np.zeros((2, d))
    for c in (0, 1):
        mask = y == c
        log_prior[c] = math.log(mask.sum() / n)
        totals = np.asarray(X[mask].sum(axis=0)).ravel()
        log_theta[c] = np.log(totals + alpha) - math.log(totals.sum() + alpha * d)
    return {"log_prior": log_prior, "log_theta": log_theta}


def _nb_log_joint(state, X):
    return X @ state["log_theta"].T + state["log_prior"]


def _score_nb(state, X):
    joint = _nb_log_joint(state, X)
    return expit(joint[:, 1] - joint[:, 0])


def predict_log_proba(model: TrainedModel, vectors) -> np.ndarray:
    """Per-class log posteriors, columns [benign, phishing]. NB only."""
    if model.spec.family != "NB":
        raise TrainingError("log posteriors are only exposed for NB")
    X = _check_dimension(model, _as_csr(vectors))
    joint = _nb_log_joint(model.state, X)
    # normalize: log p(c|x) = joint_c - logsumexp(joint)
    mx = joint.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(joint - mx).sum(axis=1, keepdims=True))
    return joint - lse


# --------------------------------------------------------------------------
# Random forest
# --------------------------------------------------------------------------

class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1


def _weighted_gini(nl, pl, n, n_pos):
    nr = n - nl
    pr = n_pos - pl
    gini_l = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
    gini_r = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
    return (nl * gini_l + nr * gini_r) / n


def _node_best_split(Xc, feats, rows, pos_of_row, y_node):
    """Gini split search over the candidate features of one node.

    TF-IDF features are nonnegative, so within a column the node's zeros
    form one sorted block; only the gathered nonzeros need sorting. Cuts
    are the zero/nonzero boundary plus boundaries between distinct
    nonzero values, all evaluated vectorized across the candidates.
    Returns (local_col, threshold, entry_rows, entry_vals) or None.
    """
    starts = Xc.indptr[feats]
    counts = Xc.indptr[feats + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return None
    cum = np.cumsum(counts)
    idx = np.arange(total) + np.repeat(starts - np.concatenate(([0], cum[:-1])), counts)
    keep = pos_of_row[Xc.indices[idx]]
    mask = keep >= 0
    if not mask.any():
        return None
    rpos = keep[mask]
    vals = Xc.data[idx][mask]
    cols = np.repeat(np.arange(len(feats)), counts)[mask]
    order = np.lexsort((vals, cols))
    vals, cols, rpos = vals[order], cols[order], rpos[order]
    yv = y_node[rpos]
    n = len(y_node)
    n_pos = float(y_node.sum())
    m = len(vals)

    seg_is_start = np.empty(m, dtype=bool)
    seg_is_start[0] = True
    seg_is_start[1:] = cols[1:] != cols[:-1]
    seg_starts = np.flatnonzero(seg_is_start)
    seg_ends = np.append(seg_starts[1:], m)
    seg_sizes = seg_ends - seg_starts
    cs = np.cumsum(yv)
    seg_offset = np.where(seg_starts > 0, cs[seg_starts - 1], 0.0)
    prefix_pos = cs - np.repeat(seg_offset, seg_sizes)      # inclusive, within segment
    seg_pos = prefix_pos[seg_ends - 1]
    zeros = n - seg_sizes                                   # zero-valued node rows per column
    zero_pos = n_pos - seg_pos

    with np.errstate(invalid="ignore", divide="ignore"):
        # cut between the zero block and the smallest nonzero
        z_gini = np.where(zeros > 0,
                          _weighted_gini(zeros.astype(float), zero_pos, n, n_pos),
                          np.inf)
        # cuts between consecutive distinct nonzeros of one column
        within = np.arange(m) + 1 < np.repeat(seg_ends, seg_sizes)
        distinct = np.empty(m, dtype=bool)
        distinct[:-1] = vals[1:] > vals[:-1]
        distinct[-1] = False
        nl = np.repeat(zeros, seg_sizes) + (np.arange(m) - np.repeat(seg_starts, seg_sizes)) + 1.0
        pl = np.repeat(zero_pos, seg_sizes) + prefix_pos
        gini = _weighted_gini(nl, pl, n, n_pos)
        gini[~(within & distinct)] = np.inf

    combined = np.concatenate([z_gini, gini])
    best = int(np.argmin(combined))
    if not np.isfinite(combined[best]):
        return None
    if best < len(seg_starts):
        local_col = int(cols[seg_starts[best]])
        threshold = float(vals[seg_starts[best]]) / 2.0
    else:
        j = best - len(seg_starts)
        local_col = int(cols[j])
        threshold = (float(vals[j]) + float(vals[j + 1])) / 2.0
    chosen = cols == local_col
    return local_col, threshold, rpos[chosen], vals[chosen]


def _build_tree(Xc, y, rng, n_features, hp) -> _Tree:
    n = Xc.shape[0]
    k = min(n_features, max(1, int(math.sqrt(n_features))))
    tree = _Tree()
    pos_of_row = np.full(n, -1, dtype=np.int64)
    root = tree.add_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        y_node = y[rows]
        n_pos = float(y_node.sum())
        tree.value[node] = n_pos / len(rows)
        if (
            depth >= hp["max_depth"]
            or len(rows) < hp["min_samples_split"]
            or n_pos == 0.0
            or n_pos == float(len(rows))
        ):
            continue
        feats = rng.choice(n_features, size=k, replace=False)
        pos_of_row[rows] = np.arange(len(rows))
        split = _node_best_split(Xc, feats, rows, pos_of_row, y_node)
        pos_of_row[rows] = -1
        if split is None:
            continue
        local_col, threshold, entry_rows, entry_vals = split
        # zeros sit below any positive threshold, so rows default to the left
        go_left = np.ones(len(rows), dtype=bool)
        go_left[entry_rows] = entry_vals <= threshold
        tree.feature[node] = int(feats[local_col])
        tree.threshold[node] = threshold
        left = tree.add_node()
        right = tree.add_node()
        tree.left[node] = left
        tree.right[node] = right
        stack.append((right, rows[~go_left], depth + 1))
        stack.append((left, rows[go_left], depth + 1))
    return tree


def _train_rf(X, y, hp, seed):
    if X.nnz and X.data.min() < 0:
        raise TrainingError("RF expects nonnegative features (TF-IDF weights)")
    n, d = X.shape
    trees = []
    for t in range(hp["n_trees"]):
        rng = np.random.default_rng([seed, t])  # fixed counter scheme
        rows = rng.integers(0, n, size=n)
        boot = X[rows].tocsc()
        trees.append(_build_tree(boot, y[rows], rng, d, hp))
    # pack the forest into flat arrays (offsets delimit trees)
    offsets = [0]
    feature, threshold, left, right, value = [], [], [], [], []
    for tree in trees:
        feature.extend(tree.feature)
        threshold.extend(tree.threshold)
        left.extend(tree.left)
        right.extend(tree.right)
        value.extend(tree.value)
        offsets.append(len(feature))
    return {
        "offsets": np.asarray(offsets, dtype=np.int64),
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value),
    }


def _tree_votes(state, start, end, X) -> np.ndarray:
    feature = state["feature"][start:end]
    threshold = state["threshold"][start:end]
    left = state["left"][start:end]
    right = state["right"][start:end]
    value = state["value"][start:end]
    used = np.unique(feature[feature >= 0])
    col_of = np.zeros(int(feature.max()) + 2 if len(used) else 1, dtype=np.int64)
    col_of[used] = np.arange(len(used))
    dense = np.asarray(X[:, used].todense()) if len(used) else np.zeros((X.shape[0], 0))
    cur = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        f = feature[cur]
        internal = f >= 0
        if not internal.any():
            break
        rows = np.nonzero(internal)[0]
        x = dense[rows, col_of[f[rows]]]
        go_left = x <= threshold[cur[rows]]
        cur[rows] = np.where(go_left, left[cur[rows]], right[cur[rows]])
    return (value[cur] > 0.5).astype(np.float64)


def _score_rf(state, X):
    offsets = state["offsets"]
    votes = np.zeros(X.shape[0])
    for t in range(len(offsets) - 1):
        votes += _tree_votes(state, offsets[t], offsets[t + 1], X)
    return votes / (len(offsets) - 1)


# --------------------------------------------------------------------------
# Linear SVM (Pegasos with averaging)
# --------------------------------------------------------------------------

def _train_svm(X, y, hp, seed):
    lam, epochs = hp["regularization"], hp["epochs"]
    n, d = X.shape
    rng = np.random.default_rng([seed, 1])
    ysign = np.where(y == 1.0, 1.0, -1.0)
    w = np.zeros(d)
    b = 0.0
    wsum = np.zeros(d)
    bsum = 0.0
    radius = 1.0 / math.sqrt(lam)
    t = 0
    indptr, indices, data = X.indptr, X.indices, X.data
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            cols = indices[indptr[i]:indptr[i + 1]]
            vals = data[indptr[i]:indptr[i + 1]]
            margin = ysign[i] * (float(w[cols] @ vals) + b)
            decay = 1.0 - eta * lam
            w *= decay
            b *= decay
            if margin < 1.0:
                w[cols] += eta * ysign[i] * vals
                b += eta * ysign[i]
                # decay keeps w inside the ball, so only an additive
                # update can push it out
                norm = math.sqrt(float(w @ w) + b * b)
                if norm > radius:
                    scale = radius / norm
                    w *= scale
                    b *= scale
            wsum += w
            bsum += b
    return {"w": wsum / t, "b": np.float64(bsum / t)}


def _score_svm(state, X):
    # squashed margin; the decision rule stays sign-of-margin
    return expit(X @ state["w"] + float(state["b"]))


# --------------------------------------------------------------------------
# Multi-layer perceptron
# --------------------------------------------------------------------------

def _train_mlp(X, y, hp, seed):
    h, batch, lr, epochs = (hp["hidden_units"], hp["batch_size"],
                            hp["learning_rate"], hp["epochs"])
    n, d = X.shape
    rng = np.random.default_rng([seed, 2])
    w1 = rng.uniform(-1.0, 1.0, size=(d, h)) / math.sqrt(d)
    b1 = np.zeros(h)
    w2 = rng.uniform(-1.0, 1.0, size=h) / math.sqrt(h)
    b2 = 0.0
    for _ in range(epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, batch):
            rows = perm[lo:lo + batch]
            xb = X[rows]
            yb = y[rows]
            z1 = xb @ w1 + b1
            a1 = np.maximum(z1, 0.0)
            p = expit(a1 @ w2 + b2)
            g2 = (p - yb) / len(rows)
            gw2 = a1.T @ g2
            gz1 = np.outer(g2, w2) * (z1 > 0)
            # update only the feature rows active in this batch
            active = np.unique(xb.indices)
            if len(active):
                sub = sp.csr_matrix(
                    (xb.data, np.searchsorted(active, xb.indices), xb.indptr),
                    shape=(len(rows), len(active)),
                )
                w1[active] -= lr * (sub.T @ gz1)
            b1 -= lr * gz1.sum(axis=0)
            w2 -= lr * gw2
            b2 -= lr * float(g2.sum())
    return {"w1": w1, "b1": b1, "w2": w2, "b2": np.float64(b2)}


def _score_mlp(state, X):
    a1 = np.maximum(X @ state["w1"] + state["b1"], 0.0)
    return expit(a1 @ state["w2"] + float(state["b2"]))


# --------------------------------------------------------------------------
# Public surface
# --------------------------------------------------------------------------

_TRAINERS = {"LR": _train_lr, "NB": _train_nb, "RF": _train_rf,
             "SVM": _train_svm, "MLP": _train_mlp}
_SCORERS = {"LR": _score_lr, "NB": _score_nb, "RF": _score_rf,
            "SVM": _score_svm, "MLP": _score_mlp}


def train(spec: ModelSpec, vectors, labels, fingerprint: dict | None = None) -> TrainedModel:
    """Train one detector; deterministic given (spec.seed, data order)."""
    X = _as_csr(vectors)
    if X.shape[0] != len(labels):
        raise TrainingError(f"{X.shape[0]} vectors but {len(labels)} labels")
    if X.shape[0] < 2:
        raise TrainingError("need at least 2 training vectors")
    y = _as_binary(labels)
    if y.min() == y.max():
        raise TrainingError("training set contains a single class")
    state = _TRAINERS[spec.family](X, y, spec.resolved(), spec.seed)
    return TrainedModel(
        spec=spec,
        feature_dimension=X.shape[1],
        training_fingerprint=fingerprint or {},
        state=state,
    )


def _check_dimension(model: TrainedModel, X: sp.csr_matrix) -> sp.csr_matrix:
    if X.shape[1] != model.feature_dimension:
        raise TrainingError(
            f"vector dimension {X.shape[1]} != model dimension {model.feature_dimension}"
        )
    return X


def predict_scores(model: TrainedModel, vectors) -> np.ndarray:
    """Scores in [0, 1]; higher means more phishing-like."""
    X = _check_dimension(model, _as_csr(vectors))
    return np.asarray(_SCORERS[model.spec.family](model.state, X), dtype=np.float64)


def predict(model: TrainedModel, vectors) -> list[str]:
    """Labels. Threshold 0.5 inclusive for LR/NB/MLP; SVM by sign of the
    margin (score 0.5 boundary); RF majority vote with ties to benign."""
    scores = predict_scores(model, vectors)
    if model.spec.family == "RF":
        phishy = scores > 0.5
    else:
        phishy = scores >= 0.5
    return ["phishing" if flag else "benign" for flag in phishy]
