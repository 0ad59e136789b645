"""
Comparison models - momentum MLP, one-vs-rest linear SVM and a CART regression tree

All three take the same prepared windows as the CNN, fit min-max bounds on
their training split and store them with the model.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DegenerateTarget
from app.core.features import apply_minmax, fit_minmax
from app.core.neuralnet import (
    Dense,
    Flatten,
    Network,
    ReLU,
    ScoringModel,
    Sigmoid,
    TrainingTrace,
    predicted_classes,
    sgd_momentum_step,
    train_network,
)
from app.models.dataset import Dataset, NormalizationParams
from app.models.records import CLASS_VALUES
from app.utils.logger import get_logger

logger = get_logger(__name__)


# ---------------------------------------------------------------------------
# Backpropagation MLP
# ---------------------------------------------------------------------------

def build_mlp_network(input_width: int, hidden_width: int) -> Network:
    return Network([Flatten(), Dense(input_width, hidden_width), ReLU(), Dense(hidden_width, 1), Sigmoid()])


@dataclass
class MlpModel(ScoringModel):
    network: Network
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams
    timesteps: int
    hidden_width: int
    kind = "mlp"

    def predict_matrix(self, X):
        return self.network.forward(X)


def train_bp_mlp(
    train_dataset: Dataset,
    learning_rate: float = 0.01,
    momentum: float = 0.9,
    epochs: int = 100,
    seed: int = 0,
    hidden_width: int = 32,
) -> Tuple[MlpModel, TrainingTrace]:
    """Full-batch momentum gradient descent on MSE over the flattened windows"""
    timesteps = train_dataset.X.shape[1]
    network = build_mlp_network(timesteps * len(train_dataset.feature_names), hidden_width)
    network.init_params(seed)
    norm = fit_minmax(train_dataset)
    X = apply_minmax(train_dataset, norm).X
    velocity = {}

    def update(params, grads):
        sgd_momentum_step(params, grads, velocity, learning_rate, momentum)

    logger.info(f"Training MLP on {len(train_dataset)} windows ({epochs} epochs, lr={learning_rate}, momentum={momentum})")
    trace = train_network(network, X, train_dataset.labels, epochs, update, len(train_dataset), seed + 1, "MLP")
    return MlpModel(network, train_dataset.feature_names, norm, timesteps, hidden_width), trace


# ---------------------------------------------------------------------------
# One-vs-rest linear SVM
# ---------------------------------------------------------------------------

def _augment(X: np.ndarray) -> np.ndarray:
    flat = X.reshape(X.shape[0], -1)
    return np.hstack([flat, np.ones((flat.shape[0], 1))])


def hinge_objective(w: np.ndarray, Xa: np.ndarray, y: np.ndarray, lam: float) -> float:
    """lam/2 * |w|^2 + mean hinge loss; the bias (last entry) is not regularized"""
    margins = y * (Xa @ w)
    return float(0.5 * lam * (w[:-1] @ w[:-1]) + np.mean(np.maximum(0.0, 1.0 - margins)))


@dataclass
class SvmModel(ScoringModel):
    """Rows of `weights` are the classifiers for 0, 0.5, 1; the last column is the bias"""

    weights: np.ndarray
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams
    timesteps: int
    lam: float
    objective: List[List[float]] = field(default_factory=list)
    kind = "svm"

    def margins(self, X: np.ndarray) -> np.ndarray:
        return _augment(X) @ self.weights.T

    def predict_matrix(self, X):
        return predicted_classes(self.margins(X))

    def class_score_matrix(self, dataset: Dataset) -> np.ndarray:
        """Margins min-max scaled to [0, 1] over the whole evaluation set"""
        m = self.margins(self.scaled(dataset))
        lo, hi = m.min(), m.max()
        if hi == lo:
            return np.zeros_like(m)
        return (m - lo) / (hi - lo)

    def objective_frame(self) -> pd.DataFrame:
        epochs = len(self.objective[0]) if self.objective else 0
        frame = pd.DataFrame({"epoch": np.arange(1, epochs + 1)})
        for c, values in zip(CLASS_VALUES, self.objective):
            frame[f"objective_{c}"] = values
        return frame


def _train_binary_svm(Xa: np.ndarray, y: np.ndarray, lam: float, epochs: int) -> Tuple[np.ndarray, List[float]]:
    """
    Full-batch subgradient descent with step 1/(lam*t), one step per epoch

    Subgradient steps do not decrease the objective monotonically, so the best
    iterate is kept and the history holds the best objective reached so far.
    """
    n, d = Xa.shape
    w = np.zeros(d)
    best_w, best = w.copy(), hinge_objective(w, Xa, y, lam)
    history = []
    for t in range(1, epochs + 1):
        active = y * (Xa @ w) < 1.0
        grad = -(y[active] @ Xa[active]) / n
        grad[:-1] += lam * w[:-1]
        w = w - grad / (lam * t)
        value = hinge_objective(w, Xa, y, lam)
        if value < best:
            best_w, best = w.copy(), value
        history.append(best)
    return best_w, history


def train_svm_ovr(train_dataset: Dataset, lam: float = 0.01, epochs: int = 100, seed: int = 0) -> SvmModel:
    """
    One binary hinge-loss classifier per risk class over the flattened windows

    Full-batch descent draws no randomness; `seed` only keeps the trainer
    signatures uniform.
    """
    norm = fit_minmax(train_dataset)
    Xa = _augment(apply_minmax(train_dataset, norm).X)
    weights = []
    objective = []
    for c in CLASS_VALUES:
        y = np.where(train_dataset.labels == c, 1.0, -1.0)
        w, history = _train_binary_svm(Xa, y, lam, epochs)
        weights.append(w)
        objective.append(history)
        logger.info(f"SVM class {c}: final objective {history[-1]:.6f}")
    return SvmModel(np.array(weights), train_dataset.feature_names, norm, train_dataset.X.shape[1], lam, objective)


# ---------------------------------------------------------------------------
# CART regression tree
# ---------------------------------------------------------------------------

MIN_GAIN = 1e-12


@dataclass
class TreeNode:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> Optional[Tuple[int, float, float]]:
    """
    Exhaustive (feature, threshold) search over midpoints of adjacent distinct values

    Returns (feature, threshold, gain) maximizing S_L^2/n_L + S_R^2/n_R - S^2/n,
    the lower feature and then the lower threshold winning ties.
    """
    n = len(y)
    total = y.sum()
    parent = total * total / n
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs, ys = X[order, j], y[order]
        s_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        ok = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        s_right = total - s_left
        gain = s_left * s_left / n_left + s_right * s_right / (n - n_left) - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[2]:
            best = (j, (xs[i] + xs[i + 1]) / 2.0, float(gain[i]))
    return best


def _grow(X: np.ndarray, y: np.ndarray, depth: int, max_depth: int, min_leaf: int) -> TreeNode:
    node = TreeNode(value=float(np.mean(y)))
    if depth >= max_depth or len(y) < 2 * min_leaf or np.all(y == y[0]):
        return node
    split = best_split(X, y, min_leaf)
    if split is None or split[2] <= MIN_GAIN:
        return node
    node.feature, node.threshold = split[0], split[1]
    mask = X[:, node.feature] <= node.threshold
    node.left = _grow(X[mask], y[mask], depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~mask], y[~mask], depth + 1, max_depth, min_leaf)
    return node


def predict_tree(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            out[idx] = node.value
            continue
        mask = X[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out


def preorder(root: TreeNode) -> List[TreeNode]:
    nodes, stack = [], [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        if not node.is_leaf:
            stack.append(node.right)
            stack.append(node.left)
    return nodes


def tree_depth(root: TreeNode) -> int:
    if root.is_leaf:
        return 0
    return 1 + max(tree_depth(root.left), tree_depth(root.right))


@dataclass
class TreeModel(ScoringModel):
    root: TreeNode
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams
    timesteps: int
    max_depth: int
    min_leaf: int
    kind = "tree"

    def predict_matrix(self, X):
        return predict_tree(self.root, X.reshape(X.shape[0], -1))

    @property
    def node_count(self) -> int:
        return len(preorder(self.root))


def train_decision_tree(train_dataset: Dataset, max_depth: int = 8, min_leaf: int = 5) -> TreeModel:
    """CART regression on flattened windows; leaves hold the mean risk of their samples"""
    y = train_dataset.labels
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateTarget(float(y[0]) if len(y) else float("nan"))
    norm = fit_minmax(train_dataset)
    X = apply_minmax(train_dataset, norm).flattened()
    root = _grow(X, y, 0, max_depth, min_leaf)
    model = TreeModel(root, train_dataset.feature_names, norm, train_dataset.X.shape[1], max_depth, min_leaf)
    logger.info(f"Decision tree: {model.node_count} nodes, depth {tree_depth(root)}")
    return model


def predict_baseline(model: ScoringModel, window: np.ndarray) -> float:
    """Risk score of one already-normalized T x F window"""
    window = np.asarray(window, dtype=np.float64)
    model.check_window(window)
    return float(model.predict_matrix(window[None])[0])
