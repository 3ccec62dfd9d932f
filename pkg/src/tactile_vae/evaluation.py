"""Raw-vs-latent benchmarks: least squares, regression trees, softmax classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .nn import OptimizerState, init_mlp, mlp_forward, backprop_grads, forward_trace, optimizer_step
from .sim import ATTRIBUTES, CURVATURE_CLASSES, Dataset
from .vae import VaeModel, encode


@dataclass
class RegressionRow:
    method: str
    space: str
    attribute: str
    mae: float
    rmse: float
    rank_deficient: bool = False

    def as_dict(self) -> dict:
        return {"method": self.method, "space": self.space, "attribute": self.attribute,
                "mae": self.mae, "rmse": self.rmse}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels: Sequence[str] = CURVATURE_CLASSES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def as_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.astype(int).tolist(),
                "accuracy": self.accuracy}


def _errors(pred: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    r = pred - y
    return float(np.mean(np.abs(r))), float(np.sqrt(np.mean(r * r)))


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


@dataclass
class LinearFit:
    weights: np.ndarray  # last entry is the intercept
    rank_deficient: bool

    def predict(self, X) -> np.ndarray:
        return _augment(np.atleast_2d(X)) @ self.weights


def fit_linear(X, y) -> LinearFit:
    """Least squares with an intercept column; minimum-norm if rank deficient."""
    A = _augment(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(A) < A.shape[1]:
        rank_def = True
    else:
        rank_def = False
    w, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    return LinearFit(w, rank_def or rank < A.shape[1])


def linear_regression(X_train, y_train, X_test, y_test, space: str = "raw", attribute: str = ""):
    fit = fit_linear(X_train, y_train)
    mae, rmse = _errors(fit.predict(X_test), np.asarray(y_test, dtype=np.float64))
    return fit, RegressionRow("linear", space, attribute, mae, rmse, fit.rank_deficient)


# --- regression trees -------------------------------------------------------

@dataclass
class TreeNode:
    value: float
    n: int
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class DecisionTree:
    root: TreeNode
    max_depth: Optional[int]
    min_leaf: int

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(len(X))
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.value
                continue
            go_left = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def n_leaves(self) -> int:
        count, stack = 0, [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                count += 1
            else:
                stack += [node.left, node.right]
        return count


def best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Greedy CART split minimising the summed squared deviation of both children.

    Returns ``(feature, threshold, sse)`` or ``None`` when no valid split exists.
    Thresholds sit halfway between adjacent distinct sorted values.
    """
    n = len(y)
    best = None
    total = y.sum()
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys * ys)[:-1]
        n_left = np.arange(1, n)
        n_right = n - n_left
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        # SSE = sum y^2 - (sum y)^2 / n on both sides; sum y^2 is constant overall
        score = -(csum**2 / n_left + (total - csum) ** 2 / n_right)
        score = np.where(valid, score, np.inf)
        k = int(np.argmin(score))
        if best is None or score[k] < best[2] - 1e-12 * max(1.0, abs(best[2])):
            best = (j, 0.5 * (xs[k] + xs[k + 1]), float(score[k]))
    if best is None:
        return None
    j, thr, score = best
    sse = float(np.sum(y * y) + score)
    return j, thr, sse


def fit_tree(X, y, max_depth: Optional[int] = 12, min_leaf: int = 5) -> DecisionTree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("cannot grow a tree on zero samples")
    min_leaf = max(1, int(min_leaf))

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        ys = y[idx]
        node = TreeNode(float(ys.mean()), len(idx))
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            return node
        if np.all(ys == ys[0]):
            return node
        split = best_split(X[idx], ys, min_leaf)
        if split is None:
            return node
        node.feature, node.threshold, _ = split
        go_left = X[idx, node.feature] <= node.threshold
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return DecisionTree(grow(np.arange(len(y)), 0), max_depth, min_leaf)


def decision_tree_regression(X_train, y_train, X_test, y_test, max_depth=12, min_leaf=5,
                             space: str = "raw", attribute: str = ""):
    tree = fit_tree(X_train, y_train, max_depth, min_leaf)
    mae, rmse = _errors(tree.predict(X_test), np.asarray(y_test, dtype=np.float64))
    return tree, RegressionRow("tree", space, attribute, mae, rmse)


# --- softmax classification -------------------------------------------------

@dataclass
class SoftmaxClassifier:
    weights: np.ndarray  # (features + 1, K), last row is the bias
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int
    converged: bool

    def probabilities(self, X) -> np.ndarray:
        A = _augment((np.atleast_2d(X) - self.mean) / self.scale)
        return softmax(A @ self.weights)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.probabilities(X), axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def fit_softmax(X, labels, n_classes: Optional[int] = None, step: float = 0.1, tol: float = 1e-6,
                ridge: float = 1e-6, max_iter: int = 5000) -> SoftmaxClassifier:
    """Multinomial logistic regression by full-batch gradient descent on the
    mean cross-entropy plus ``ridge/2 * |W|^2`` (bias not penalised).

    Features are standardized internally. The step is capped at ``1/L`` where
    ``L`` bounds the gradient's Lipschitz constant, so descent cannot diverge.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = int(n_classes if n_classes is not None else labels.max() + 1)
    if K < 2:
        raise ValueError("need at least two classes")
    missing = sorted(set(range(K)) - set(np.unique(labels).tolist()))
    if missing:
        raise ValueError(f"classes {missing} have no training samples")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    A = _augment((X - mean) / scale)
    n = len(A)
    Y = np.zeros((n, K))
    Y[np.arange(n), labels] = 1.0
    lipschitz = 0.5 * np.linalg.norm(A, 2) ** 2 / n + ridge
    lr = min(step, 1.0 / lipschitz)
    penal = np.ones((A.shape[1], 1))
    penal[-1] = 0.0

    W = np.zeros((A.shape[1], K))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        G = A.T @ (softmax(A @ W) - Y) / n + ridge * penal * W
        if np.linalg.norm(G) < tol:
            converged = True
            break
        W -= lr * G
    return SoftmaxClassifier(W, mean, scale, it, converged)


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(true), np.asarray(pred)), 1)
    return counts


def linear_classification(X_train, labels_train, X_test, labels_test, n_classes: Optional[int] = None,
                          class_labels: Optional[Sequence[str]] = None, **kw):
    K = int(n_classes if n_classes is not None else max(np.max(labels_train), np.max(labels_test)) + 1)
    clf = fit_softmax(X_train, labels_train, K, **kw)
    cm = confusion_matrix(labels_test, clf.predict(X_test), K)
    return clf, ConfusionMatrix(cm, tuple(class_labels) if class_labels else tuple(str(k) for k in range(K)))


# --- optional MLP regression ------------------------------------------------

def mlp_regression(X_train, y_train, X_test, y_test, hidden: int = 64, epochs: int = 100,
                   batch_size: int = 64, step_rate: float = 0.001, seed: int = 0,
                   space: str = "raw", attribute: str = ""):
    """One-hidden-layer rectifier network trained with rmsprop on MSE."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    mean, scale = X_train.mean(0), X_train.std(0)
    scale[scale < 1e-12] = 1.0
    y_mean, y_scale = y_train.mean(), y_train.std() or 1.0
    rng = np.random.default_rng(seed)
    net = init_mlp([X_train.shape[1], hidden, 1], "rectifier", rng)
    params = net.named_arrays()
    state = OptimizerState("rmsprop", step_rate)
    Xs = (X_train - mean) / scale
    ys = ((y_train - y_mean) / y_scale)[:, None]
    for _ in range(epochs):
        order = rng.permutation(len(Xs))
        for start in range(0, len(Xs), batch_size):
            idx = order[start:start + batch_size]
            trace = forward_trace(net, Xs[idx])
            g_out = 2 * (trace[-1][2] - ys[idx]) / len(idx)
            optimizer_step(params, backprop_grads(net, Xs[idx], g_out, trace=trace).named_arrays(), state)
    pred = mlp_forward(net, (np.asarray(X_test) - mean) / scale)[:, 0] * y_scale + y_mean
    mae, rmse = _errors(pred, np.asarray(y_test, dtype=np.float64))
    return net, RegressionRow("mlp", space, attribute, mae, rmse)


# --- full comparison --------------------------------------------------------

def split_indices(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


@dataclass
class ComparisonReport:
    rows: List[RegressionRow] = field(default_factory=list)
    confusion: Dict[str, ConfusionMatrix] = field(default_factory=dict)
    train_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None
    split_seed: int = 0

    def mae(self, method: str, space: str, attribute: str) -> float:
        for r in self.rows:
            if (r.method, r.space, r.attribute) == (method, space, attribute):
                return r.mae
        raise KeyError((method, space, attribute))

    def attributes(self) -> List[str]:
        return list(dict.fromkeys(r.attribute for r in self.rows))

    def as_dict(self) -> dict:
        return {
            "split_seed": self.split_seed,
            "regression": [r.as_dict() for r in self.rows],
            "confusion": {k: v.as_dict() for k, v in self.confusion.items()},
        }


def dataset_attributes(ds: Dataset) -> List[str]:
    """Attributes that vary in the dataset, in the fixed order force, pitch, roll, shore."""
    return [a for a in ATTRIBUTES if np.ptp(ds.labels(a)) > 0]


def raw_features(frames: np.ndarray, train_idx: np.ndarray) -> np.ndarray:
    mean = frames[train_idx].mean(axis=0)
    scale = frames[train_idx].std(axis=0)
    scale[scale < 1e-12] = 1.0
    return (frames - mean) / scale


def compare_raw_vs_latent(ds: Dataset, model: Optional[VaeModel], methods: Sequence[str] = ("linear", "tree"),
                          split_seed: int = 0, attributes: Optional[Sequence[str]] = None,
                          tree_depth: int = 12, tree_min_leaf: int = 5, latent_features=None,
                          classify: Optional[bool] = None) -> ComparisonReport:
    """Evaluate every (method, feature space, attribute) on one shared 80/20 split.

    ``latent_features`` overrides the VAE encoding (an ``(n, k)`` array or a
    callable on raw frames); passing ``model=None`` without it is an error.
    """
    if latent_features is None:
        if model is None:
            raise ValueError("need a VAE model or explicit latent features")
        if model.taxel_width != ds.n_taxels:
            raise ValueError(f"model expects {model.taxel_width} taxels, dataset has {ds.n_taxels}")
        latent = encode(model, ds.frames).mean
    elif callable(latent_features):
        latent = np.asarray(latent_features(ds.frames), dtype=np.float64)
    else:
        latent = np.asarray(latent_features, dtype=np.float64)
    if len(latent) != len(ds):
        raise ValueError("latent features and dataset differ in length")

    tr, te = split_indices(len(ds), split_seed)
    spaces = {"raw": raw_features(ds.frames, tr), "latent": latent}
    attrs = list(attributes) if attributes is not None else dataset_attributes(ds)
    report = ComparisonReport(train_idx=tr, test_idx=te, split_seed=split_seed)
    fns = {"linear": linear_regression, "tree": decision_tree_regression, "mlp": mlp_regression}
    for method in methods:
        for space, F in spaces.items():
            for attr in attrs:
                y = ds.labels(attr)
                kw = dict(max_depth=tree_depth, min_leaf=tree_min_leaf) if method == "tree" else {}
                _, row = fns[method](F[tr], y[tr], F[te], y[te], space=space, attribute=attr, **kw)
                report.rows.append(row)

    if classify if classify is not None else ds.kind == "C":
        y = ds.labels("curvature")
        for space, F in spaces.items():
            _, cm = linear_classification(F[tr], y[tr], F[te], y[te], len(CURVATURE_CLASSES), CURVATURE_CLASSES)
            report.confusion[space] = cm
    return report
