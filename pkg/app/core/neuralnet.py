"""
Neural network core - 1D convolution, pooling, dense layers, backprop and optimizers

Layers work on batches: convolution input is (N, T, F), dense input is (N, D).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.config import CnnConfig
from app.core.errors import DimensionMismatch, EmptyAfterPool, FeatureMismatch, NonFiniteLoss
from app.core.features import apply_minmax, fit_minmax
from app.models.dataset import Dataset, NormalizationParams
from app.models.records import CLASS_VALUES
from app.utils.logger import get_logger

logger = get_logger(__name__)

CLASS_HALF_WIDTH = 0.5


class Layer:
    """Forward caches what backward needs; backward fills self.grads and returns the input gradient"""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> None:
        pass


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def conv1d_batch(x: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Cross-correlation over time with full feature depth: (N, T, F) -> (N, T-k+1, C)"""
    n_filters, k, n_features = weights.shape
    if x.ndim != 3 or x.shape[2] != n_features:
        raise DimensionMismatch(f"conv input {x.shape} does not match kernel depth {n_features}")
    if x.shape[1] < k:
        raise DimensionMismatch(f"input length {x.shape[1]} is shorter than kernel width {k}")
    out_len = x.shape[1] - k + 1
    out = np.broadcast_to(biases, (x.shape[0], out_len, n_filters)).copy()
    for dt in range(k):
        out += x[:, dt:dt + out_len, :] @ weights[:, dt, :].T
    return out


def conv1d_forward(window: np.ndarray, weights: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Single T x F window -> (T-k+1) x filter_count"""
    return conv1d_batch(np.asarray(window, dtype=np.float64)[None], weights, biases)[0]


def maxpool_batch(x: np.ndarray, pool_width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max over time; remainder dropped; argmax ties go to the earliest step"""
    n, length, channels = x.shape
    out_len = length // pool_width
    if out_len == 0:
        raise EmptyAfterPool(f"pool width {pool_width} leaves no output from length {length}")
    blocks = x[:, :out_len * pool_width, :].reshape(n, out_len, pool_width, channels)
    arg = np.argmax(blocks, axis=2)
    out = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, arg


def maxpool_forward(window: np.ndarray, pool_width: int) -> Tuple[np.ndarray, np.ndarray]:
    out, arg = maxpool_batch(np.asarray(window, dtype=np.float64)[None], pool_width)
    return out[0], arg[0]


class Conv1D(Layer):
    def __init__(self, n_features: int, n_filters: int, kernel_width: int):
        super().__init__()
        self.params["W"] = np.zeros((n_filters, kernel_width, n_features))
        self.params["b"] = np.zeros(n_filters)
        self._x = None

    @property
    def fan_in(self) -> int:
        _, k, f = self.params["W"].shape
        return k * f

    def init_params(self, rng):
        self.params["W"][...] = _uniform(rng, self.params["W"].shape, self.fan_in)
        self.params["b"][...] = _uniform(rng, self.params["b"].shape, self.fan_in)

    def forward(self, x):
        self._x = x
        return conv1d_batch(x, self.params["W"], self.params["b"])

    def backward(self, grad):
        x, W = self._x, self.params["W"]
        k = W.shape[1]
        out_len = grad.shape[1]
        dW = np.zeros_like(W)
        dx = np.zeros_like(x)
        for dt in range(k):
            segment = x[:, dt:dt + out_len, :]
            dW[:, dt, :] = np.tensordot(grad, segment, axes=([0, 1], [0, 1]))
            dx[:, dt:dt + out_len, :] += grad @ W[:, dt, :]
        self.grads["W"] = dW
        self.grads["b"] = grad.sum(axis=(0, 1))
        return dx


class MaxPool1D(Layer):
    def __init__(self, pool_width: int):
        super().__init__()
        self.pool_width = pool_width
        self._shape = None
        self._arg = None

    def forward(self, x):
        self._shape = x.shape
        out, self._arg = maxpool_batch(x, self.pool_width)
        return out

    def backward(self, grad):
        n, length, channels = self._shape
        out_len = grad.shape[1]
        blocks = np.zeros((n, out_len, self.pool_width, channels))
        np.put_along_axis(blocks, self._arg[:, :, None, :], grad[:, :, None, :], axis=2)
        dx = np.zeros(self._shape)
        dx[:, :out_len * self.pool_width, :] = blocks.reshape(n, out_len * self.pool_width, channels)
        return dx


class Flatten(Layer):
    """(N, T, C) -> (N, T*C), time step major"""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.params["W"] = np.zeros((n_in, n_out))
        self.params["b"] = np.zeros(n_out)
        self._x = None

    def init_params(self, rng):
        fan_in = self.params["W"].shape[0]
        self.params["W"][...] = _uniform(rng, self.params["W"].shape, fan_in)
        self.params["b"][...] = _uniform(rng, self.params["b"].shape, fan_in)

    def forward(self, x):
        if x.shape[1] != self.params["W"].shape[0]:
            raise DimensionMismatch(f"dense input width {x.shape[1]} != {self.params['W'].shape[0]}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = self._x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


SIGMOID_EPS = np.finfo(np.float64).eps


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function kept inside [eps, 1 - eps]"""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, SIGMOID_EPS, 1.0 - SIGMOID_EPS)


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class Network:
    """Ordered layer stack; parameters are exposed as '<layer index>.<name>' -> array (shared, not copied)"""

    def __init__(self, layers: List[Layer]):
        self.layers = layers

    def init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x.reshape(x.shape[0])

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad = grad_out.reshape(-1, 1)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()}

    def tensors(self) -> List[np.ndarray]:
        return list(self.params().values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.tensors())


def mse_loss(predicted: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean of squared errors and its gradient with respect to the predictions"""
    diff = predicted - target
    return float(np.mean(diff * diff)), 2.0 * diff / len(diff)


def loss_and_gradients(network: Network, X: np.ndarray, targets: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    predicted = network.forward(X)
    loss, grad = mse_loss(predicted, targets)
    network.backward(grad)
    return loss, network.grads()


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place"""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state


def sgd_momentum_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    velocity: Dict[str, np.ndarray],
    learning_rate: float,
    momentum: float,
) -> Dict[str, np.ndarray]:
    """v <- -lr*g + momentum*v; w <- w + v (in place)"""
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    for k in params:
        v = velocity.get(k)
        if v is None:
            v = np.zeros_like(params[k])
        velocity[k] = -learning_rate * grads[k] + momentum * v
        params[k] += velocity[k]
    return velocity


GRADIENT_FLOOR = 1e-3


def relative_error(a: float, b: float, floor: float = GRADIENT_FLOOR) -> float:
    """|a - b| / max(|a|, |b|); when both lie below `floor` the floor is the denominator"""
    scale = max(abs(a), abs(b))
    return abs(a - b) / (scale if scale >= floor else floor)


def gradient_check(network: Network, X: np.ndarray, targets: np.ndarray, h: float = 1e-4) -> float:
    """Largest relative error between analytic and central-difference gradients over every parameter"""
    _, analytic = loss_and_gradients(network, X, targets)
    analytic = {k: g.copy() for k, g in analytic.items()}
    worst = 0.0
    for key, p in network.params().items():
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus, _ = mse_loss(network.forward(X), targets)
            flat[i] = orig - h
            minus, _ = mse_loss(network.forward(X), targets)
            flat[i] = orig
            numeric = (plus - minus) / (2 * h)
            a = analytic[key].reshape(-1)[i]
            worst = max(worst, relative_error(a, numeric))
    return worst


@dataclass
class TrainingTrace:
    train_mse: List[float] = field(default_factory=list)
    test_mse: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": np.arange(1, len(self.train_mse) + 1), "train_mse": self.train_mse})


def class_score_matrix(risk: np.ndarray) -> np.ndarray:
    """Triangular membership of each risk score in the classes 0, 0.5, 1 -> (n, 3)"""
    risk = np.asarray(risk, dtype=np.float64).reshape(-1, 1)
    centers = np.array(CLASS_VALUES)
    return np.maximum(0.0, 1.0 - np.abs(risk - centers) / CLASS_HALF_WIDTH)


def predicted_classes(scores: np.ndarray) -> np.ndarray:
    """Class center of the largest score; ties resolve toward the higher-risk class"""
    scores = np.asarray(scores)
    last = scores.shape[1] - 1
    idx = last - np.argmax(scores[:, ::-1], axis=1)
    return np.array(CLASS_VALUES)[idx]


def class_scores(risk_score: float) -> Tuple[np.ndarray, float]:
    scores = class_score_matrix(np.array([risk_score]))
    return scores[0], float(predicted_classes(scores)[0])


def build_cnn_network(n_features: int, config: CnnConfig, timesteps: int) -> Network:
    config.check_timesteps(timesteps)
    conv_len = timesteps - config.kernel_width + 1
    pooled = conv_len // config.pool_width
    return Network([
        Conv1D(n_features, config.filter_count, config.kernel_width),
        ReLU(),
        MaxPool1D(config.pool_width),
        Flatten(),
        Dense(pooled * config.filter_count, config.dense_width),
        ReLU(),
        Dense(config.dense_width, 1),
        Sigmoid(),
    ])


class ScoringModel:
    """
    Prediction contract shared by the CNN and the baselines

    Subclasses hold feature_names, normalization and timesteps and implement
    predict_matrix() on already-normalized (N, T, F) windows.
    """

    kind = "model"
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams
    timesteps: int

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_window(self, window: np.ndarray) -> None:
        if window.shape != (self.timesteps, len(self.feature_names)):
            raise FeatureMismatch(self.feature_names, [f"<{window.shape[-1]} columns>"])

    def scaled(self, dataset: Dataset) -> np.ndarray:
        if dataset.feature_names != self.feature_names:
            raise FeatureMismatch(self.feature_names, dataset.feature_names)
        return apply_minmax(dataset, self.normalization).X

    def predict_scores(self, dataset: Dataset) -> np.ndarray:
        """Risk scores for a raw-scale dataset; normalization comes from the model"""
        return self.predict_matrix(self.scaled(dataset))

    def class_score_matrix(self, dataset: Dataset) -> np.ndarray:
        return class_score_matrix(self.predict_scores(dataset))


@dataclass
class CnnModel(ScoringModel):
    network: Network
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams
    config: CnnConfig
    timesteps: int
    kind = "cnn"

    def predict_matrix(self, X):
        return self.network.forward(X)


def forward(model: CnnModel, window: np.ndarray) -> float:
    """Risk score of one already-normalized T x F window"""
    window = np.asarray(window, dtype=np.float64)
    model.check_window(window)
    return float(model.network.forward(window[None])[0])


def backward(model: CnnModel, window: np.ndarray, target: float) -> Dict[str, np.ndarray]:
    window = np.asarray(window, dtype=np.float64)
    model.check_window(window)
    _, grads = loss_and_gradients(model.network, window[None], np.array([float(target)]))
    return {k: g.copy() for k, g in grads.items()}


def _batches(n: int, batch: int, rng: np.random.Generator) -> List[np.ndarray]:
    if batch >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_network(
    network: Network,
    X: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    update,
    batch_cap: int,
    shuffle_seed: int,
    name: str,
) -> TrainingTrace:
    """Shared epoch loop; `update(params, grads)` applies one optimizer step"""
    trace = TrainingTrace()
    rng = np.random.default_rng(shuffle_seed)
    n = len(targets)
    batch = min(batch_cap, n)
    params = network.params()
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in _batches(n, batch, rng):
            loss, grads = loss_and_gradients(network, X[idx], targets[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            total += loss * len(idx)
            update(params, grads)
        epoch_mse = total / n
        trace.train_mse.append(epoch_mse)
        if epoch == 1 or epoch % 10 == 0 or epoch == epochs:
            logger.info(f"{name} epoch {epoch}/{epochs}: train MSE {epoch_mse:.6f}")
    if not network.all_finite():
        raise NonFiniteLoss(epochs, float("nan"))
    return trace


def train_cnn(
    train_dataset: Dataset,
    config: CnnConfig,
    test_dataset: Optional[Dataset] = None,
) -> Tuple[CnnModel, TrainingTrace]:
    """Fit min-max on the training windows, initialize from the seed and run Adam on MSE"""
    timesteps = train_dataset.X.shape[1]
    n_features = len(train_dataset.feature_names)
    network = build_cnn_network(n_features, config, timesteps)
    network.init_params(config.seed)

    norm = fit_minmax(train_dataset)
    X = apply_minmax(train_dataset, norm).X
    optimizer = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    logger.info(
        f"Training CNN on {len(train_dataset)} windows x {n_features} features "
        f"({config.filter_count} filters, {config.epochs} epochs)"
    )
    trace = train_network(
        network, X, train_dataset.labels, config.epochs, optimizer.step,
        config.batch_cap, config.seed + 1, "CNN",
    )
    model = CnnModel(network, train_dataset.feature_names, norm, config, timesteps)
    if test_dataset is not None:
        trace.test_mse = evaluate_mse(model, test_dataset)
        logger.info(f"CNN test MSE {trace.test_mse:.6f}")
    return model, trace


def evaluate_mse(model, dataset: Dataset) -> float:
    predicted = model.predict_scores(dataset)
    return float(np.mean((predicted - dataset.labels) ** 2))


def predict_dataset(model, dataset: Dataset) -> np.ndarray:
    return model.predict_scores(dataset)


def predictions_frame(model, dataset: Dataset) -> pd.DataFrame:
    return pd.DataFrame({
        "sensor_id": dataset.sensor_ids,
        "end_time": dataset.end_times,
        "observed": dataset.labels,
        "predicted": model.predict_scores(dataset),
    })
