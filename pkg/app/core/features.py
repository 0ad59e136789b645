"""
Feature selection - extra-trees importance, Pearson correlation pruning, min-max scaling
"""
import zlib
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DegenerateTarget
from app.models.dataset import Dataset, NormalizationParams
from app.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ImportanceVector:
    feature_names: Tuple[str, ...]
    values: np.ndarray

    def as_dict(self):
        return dict(zip(self.feature_names, self.values.tolist()))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pearson coefficients; entries involving a zero-variance feature are NaN"""

    feature_names: Tuple[str, ...]
    values: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def zero_variance(self) -> Tuple[str, ...]:
        diag = np.diag(self.values)
        return tuple(n for n, d in zip(self.feature_names, diag) if np.isnan(d))


def pearson_matrix(dataset: Dataset) -> CorrelationMatrix:
    """Sample Pearson coefficients over per-window time-averaged features (two-pass formula)"""
    X = dataset.window_means()
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered
    norms = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = cov / np.outer(norms, norms)
    r = np.triu(r) + np.triu(r, 1).T
    flat = norms == 0
    r[flat, :] = np.nan
    r[:, flat] = np.nan
    idx = np.flatnonzero(~flat)
    r[idx, idx] = 1.0
    if flat.any():
        logger.warning(f"Zero-variance features have undefined correlation: {[dataset.feature_names[i] for i in np.flatnonzero(flat)]}")
    return CorrelationMatrix(dataset.feature_names, r)


def _feature_stream(seed: int, tree: int, name: str) -> np.random.Generator:
    # keyed by feature name so that permuting columns permutes the draws with them
    return np.random.default_rng(np.random.SeedSequence([seed, tree, zlib.crc32(name.encode("utf-8"))]))


def _grow_tree(X: np.ndarray, y: np.ndarray, streams: List[np.random.Generator], min_samples_split: int) -> np.ndarray:
    """One fully randomized regression tree; returns per-feature total variance reduction"""
    n_features = X.shape[1]
    gains = np.zeros(n_features)
    stack = [np.arange(len(y))]
    while stack:
        idx = stack.pop()
        n = len(idx)
        yn = y[idx]
        if n < min_samples_split or np.all(yn == yn[0]):
            continue
        Xn = X[idx]
        lo = Xn.min(axis=0)
        hi = Xn.max(axis=0)
        u = np.array([s.random() for s in streams])
        cuts = lo + u * (hi - lo)
        left = Xn < cuts
        n_left = left.sum(axis=0)
        valid = (hi > lo) & (n_left > 0) & (n_left < n)
        if not valid.any():
            continue
        leftf = left.astype(np.float64)
        s_left = yn @ leftf
        s_total = yn.sum()
        n_right = n - n_left
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = s_left ** 2 / n_left + (s_total - s_left) ** 2 / n_right - s_total ** 2 / n
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        gains[best] += max(gain[best], 0.0)
        mask = left[:, best]
        stack.append(idx[~mask])
        stack.append(idx[mask])
    return gains


def extra_trees_importance(
    dataset: Dataset,
    tree_count: int = 100,
    rng_seed: int = 0,
    min_samples_split: int = 5,
) -> ImportanceVector:
    """
    Importance from an ensemble of extremely randomized regression trees

    Each node draws one uniform cut per feature between the node-local min and
    max and keeps the (feature, cut) with the largest variance reduction. No
    bootstrap; nodes smaller than min_samples_split become leaves.
    """
    if tree_count < 1:
        raise ValueError("tree_count must be >= 1")
    y = dataset.labels
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateTarget(float(y[0]) if len(y) else float("nan"))
    X = dataset.window_means()
    total = np.zeros(X.shape[1])
    for tree in range(tree_count):
        streams = [_feature_stream(rng_seed, tree, name) for name in dataset.feature_names]
        total += _grow_tree(X, y, streams, min_samples_split)
    if total.sum() <= 0:
        logger.warning("No informative split found; importance spread evenly")
        values = np.full(len(total), 1.0 / len(total))
    else:
        values = total / total.sum()
    logger.info(f"Extra-trees importance over {tree_count} trees computed")
    return ImportanceVector(dataset.feature_names, values)


def select_features(
    importance: ImportanceVector,
    corr: CorrelationMatrix,
    corr_threshold: float = 0.5,
) -> List[str]:
    """
    Drop the less important feature of every strongly correlated pair

    Pairs are visited in descending |r| (ties: lower index first); a pair is
    skipped once either member is dropped. Survivors keep the original order.
    """
    if importance.feature_names != corr.feature_names:
        raise ValueError("importance and correlation describe different feature lists")
    names = corr.feature_names
    absr = np.abs(corr.values)
    pairs = [
        (absr[i, j], i, j)
        for i in range(len(names))
        for j in range(i + 1, len(names))
        if not np.isnan(absr[i, j]) and absr[i, j] > corr_threshold
    ]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    dropped = set()
    for r, i, j in pairs:
        if i in dropped or j in dropped:
            continue
        # equal importance drops the later feature
        loser = i if importance.values[i] < importance.values[j] else j
        dropped.add(loser)
        logger.debug(f"Dropping {names[loser]} (|r|={r:.3f} with {names[j if loser == i else i]})")
    kept = [n for k, n in enumerate(names) if k not in dropped]
    logger.info(f"Kept {len(kept)} of {len(names)} features: {kept}")
    return kept


def fit_minmax(train_dataset: Dataset) -> NormalizationParams:
    X = train_dataset.X.reshape(-1, len(train_dataset.feature_names))
    return NormalizationParams(train_dataset.feature_names, X.min(axis=0), X.max(axis=0))


def apply_minmax(dataset: Dataset, params: NormalizationParams) -> Dataset:
    """Scale to [0, 1] with train-split bounds; out-of-range values clamp, constant features map to 0"""
    dataset.require_features(params.feature_names)
    span = params.maxs - params.mins
    safe = np.where(span > 0, span, 1.0)
    scaled = (dataset.X - params.mins) / safe
    scaled = np.where(span > 0, np.clip(scaled, 0.0, 1.0), 0.0)
    return replace(dataset, X=scaled, normalization=params)


def invert_minmax(dataset: Dataset, params: NormalizationParams) -> Dataset:
    span = params.maxs - params.mins
    return replace(dataset, X=dataset.X * span + params.mins, normalization=None)


@dataclass
class SelectionResult:
    importance: ImportanceVector
    correlation: CorrelationMatrix
    kept: List[str]

    def report_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "feature": list(self.importance.feature_names),
            "importance": self.importance.values,
            "kept": [n in self.kept for n in self.importance.feature_names],
        })

    def correlation_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.correlation.values, columns=list(self.correlation.feature_names))
        frame.insert(0, "feature", list(self.correlation.feature_names))
        return frame


def select_and_reduce(
    train: Dataset,
    others: Sequence[Dataset] = (),
    corr_threshold: float = 0.5,
    tree_count: int = 100,
    seed: int = 0,
    min_samples_split: int = 5,
) -> Tuple[SelectionResult, Dataset, List[Dataset]]:
    """Fit the selection on `train` and reduce it and every other dataset to the kept features"""
    importance = extra_trees_importance(train, tree_count, seed, min_samples_split)
    corr = pearson_matrix(train)
    kept = select_features(importance, corr, corr_threshold)
    result = SelectionResult(importance, corr, kept)
    return result, train.select_features(kept), [d.select_features(kept) for d in others]
