"""
Model files - versioned UTF-8 text for the CNN and the three baselines

    line 1  crashcast-model v1 | crashcast-model <mlp|svm|tree> v1
    line 2  feature names, comma separated
    line 3  dimensions as key=value pairs
    line 4  normalization as min,max pairs
    then    one line per parameter tensor (tree: one preorder node per line)
"""
import math
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

from app.core.baselines import MlpModel, SvmModel, TreeModel, TreeNode, build_mlp_network, preorder
from app.core.config import CnnConfig
from app.core.errors import ConfigError, ModelFormatError
from app.core.neuralnet import CnnModel, ScoringModel, build_cnn_network
from app.models.dataset import NormalizationParams
from app.models.records import CLASS_VALUES
from app.utils.csvio import Source, decode_text, format_number, join_floats, write_text

MAGIC = "crashcast-model"
VERSION = "v1"
HEADERS = {
    "cnn": f"{MAGIC} {VERSION}",
    "mlp": f"{MAGIC} mlp {VERSION}",
    "svm": f"{MAGIC} svm {VERSION}",
    "tree": f"{MAGIC} tree {VERSION}",
}
KIND_BY_HEADER = {v: k for k, v in HEADERS.items()}


def _dims_line(dims: Dict[str, object]) -> str:
    return " ".join(f"{k}={format_number(v) if isinstance(v, float) else v}" for k, v in dims.items())


def _norm_line(norm: NormalizationParams) -> str:
    return " ".join(f"{format_number(lo)},{format_number(hi)}" for lo, hi in zip(norm.mins, norm.maxs))


def _dims(model: ScoringModel) -> Dict[str, object]:
    base = {"timesteps": model.timesteps, "features": len(model.feature_names)}
    if isinstance(model, CnnModel):
        c = model.config
        base.update(filters=c.filter_count, kernel=c.kernel_width, pool=c.pool_width, dense=c.dense_width)
    elif isinstance(model, MlpModel):
        base.update(hidden=model.hidden_width)
    elif isinstance(model, SvmModel):
        base.update(classes=len(CLASS_VALUES), lam=float(model.lam))
    elif isinstance(model, TreeModel):
        base.update(max_depth=model.max_depth, min_leaf=model.min_leaf, nodes=model.node_count)
    return base


def _body(model: ScoringModel) -> List[str]:
    if isinstance(model, (CnnModel, MlpModel)):
        return [join_floats(t.reshape(-1)) for t in model.network.tensors()]
    if isinstance(model, SvmModel):
        return [join_floats(row) for row in model.weights]
    lines = []
    for node in preorder(model.root):
        if node.is_leaf:
            lines.append(f"leaf {format_number(node.value)}")
        else:
            lines.append(f"split {node.feature} {format_number(node.threshold)}")
    return lines


def dumps_model(model: ScoringModel) -> str:
    lines = [
        HEADERS[model.kind],
        ",".join(model.feature_names),
        _dims_line(_dims(model)),
        _norm_line(model.normalization),
        *_body(model),
    ]
    return "\n".join(lines) + "\n"


def save_model(path: Union[str, Path], model: ScoringModel) -> Path:
    return write_text(path, dumps_model(model))


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _parse_dims(line: str, lineno: int, required: Tuple[str, ...]) -> Dict[str, str]:
    dims = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ModelFormatError(lineno, f"expected key=value, got {token!r}")
        dims[key] = value
    missing = [k for k in required if k not in dims]
    if missing:
        raise ModelFormatError(lineno, f"missing dimensions {missing}")
    return dims


def _int_dim(dims: Dict[str, str], key: str, lineno: int, minimum: int = 1) -> int:
    try:
        value = int(dims[key])
    except ValueError:
        raise ModelFormatError(lineno, f"{key} must be an integer, got {dims[key]!r}")
    if value < minimum:
        raise ModelFormatError(lineno, f"{key} must be >= {minimum}")
    return value


def _floats(line: str, lineno: int, expected: int) -> np.ndarray:
    try:
        values = np.array([float(v) for v in line.split()], dtype=np.float64)
    except ValueError:
        raise ModelFormatError(lineno, "non-numeric value")
    if len(values) != expected:
        raise ModelFormatError(lineno, f"expected {expected} values, got {len(values)}")
    if not np.all(np.isfinite(values)):
        raise ModelFormatError(lineno, "non-finite value")
    return values


def _parse_norm(line: str, lineno: int, names: Tuple[str, ...]) -> NormalizationParams:
    pairs = line.split()
    if len(pairs) != len(names):
        raise ModelFormatError(lineno, f"expected {len(names)} min,max pairs, got {len(pairs)}")
    mins, maxs = [], []
    for pair in pairs:
        lo, sep, hi = pair.partition(",")
        try:
            lo, hi = float(lo), float(hi)
        except ValueError:
            raise ModelFormatError(lineno, f"bad min,max pair {pair!r}")
        if not sep or not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ModelFormatError(lineno, f"bad min,max pair {pair!r}")
        mins.append(lo)
        maxs.append(hi)
    return NormalizationParams(names, np.array(mins), np.array(maxs))


def _fill_network(network, lines: List[str], first_lineno: int) -> None:
    tensors = network.tensors()
    if len(lines) != len(tensors):
        raise ModelFormatError(first_lineno + min(len(lines), len(tensors)), f"expected {len(tensors)} tensor lines, got {len(lines)}")
    for i, (tensor, line) in enumerate(zip(tensors, lines)):
        tensor[...] = _floats(line, first_lineno + i, tensor.size).reshape(tensor.shape)


def _parse_tree(lines: List[str], first_lineno: int, n_inputs: int) -> TreeNode:
    it: Iterator[Tuple[int, str]] = iter(enumerate(lines, start=first_lineno))

    def node() -> TreeNode:
        try:
            lineno, line = next(it)
        except StopIteration:
            raise ModelFormatError(first_lineno + len(lines), "tree ends before every split has two children")
        parts = line.split()
        try:
            if parts[0] == "leaf" and len(parts) == 2:
                value = float(parts[1])
                if not math.isfinite(value):
                    raise ValueError
                return TreeNode(value=value)
            if parts[0] == "split" and len(parts) == 3:
                feature, threshold = int(parts[1]), float(parts[2])
                if not 0 <= feature < n_inputs or not math.isfinite(threshold):
                    raise ValueError
                out = TreeNode(value=float("nan"), feature=feature, threshold=threshold)
                out.left = node()
                out.right = node()
                return out
        except (ValueError, IndexError):
            pass
        raise ModelFormatError(lineno, f"bad tree node {line!r}")

    root = node()
    leftover = next(it, None)
    if leftover is not None:
        raise ModelFormatError(leftover[0], "unexpected line after the last tree node")
    return root


def loads_model(text: str) -> ScoringModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 4:
        raise ModelFormatError(len(lines) + 1, "model file needs a header, features, dimensions and normalization")
    kind = KIND_BY_HEADER.get(lines[0].strip())
    if kind is None:
        raise ModelFormatError(1, f"unknown model header {lines[0]!r}")

    names = tuple(n.strip() for n in lines[1].split(","))
    if not all(names) or len(set(names)) != len(names):
        raise ModelFormatError(2, "feature names must be non-empty and unique")

    required = {
        "cnn": ("timesteps", "features", "filters", "kernel", "pool", "dense"),
        "mlp": ("timesteps", "features", "hidden"),
        "svm": ("timesteps", "features", "classes", "lam"),
        "tree": ("timesteps", "features", "max_depth", "min_leaf", "nodes"),
    }[kind]
    dims = _parse_dims(lines[2], 3, required)
    timesteps = _int_dim(dims, "timesteps", 3)
    if _int_dim(dims, "features", 3) != len(names):
        raise ModelFormatError(3, f"features={dims['features']} but {len(names)} names on line 2")
    norm = _parse_norm(lines[3], 4, names)
    body = lines[4:]

    if kind == "cnn":
        config = CnnConfig(
            filter_count=_int_dim(dims, "filters", 3),
            kernel_width=_int_dim(dims, "kernel", 3),
            pool_width=_int_dim(dims, "pool", 3),
            dense_width=_int_dim(dims, "dense", 3),
        )
        try:
            network = build_cnn_network(len(names), config, timesteps)
        except ConfigError as e:
            raise ModelFormatError(3, str(e))
        _fill_network(network, body, 5)
        return CnnModel(network, names, norm, config, timesteps)

    if kind == "mlp":
        hidden = _int_dim(dims, "hidden", 3)
        network = build_mlp_network(timesteps * len(names), hidden)
        _fill_network(network, body, 5)
        return MlpModel(network, names, norm, timesteps, hidden)

    if kind == "svm":
        if _int_dim(dims, "classes", 3) != len(CLASS_VALUES):
            raise ModelFormatError(3, f"classes must be {len(CLASS_VALUES)}")
        try:
            lam = float(dims["lam"])
        except ValueError:
            raise ModelFormatError(3, "lam must be a number")
        if len(body) != len(CLASS_VALUES):
            raise ModelFormatError(5 + min(len(body), len(CLASS_VALUES)), f"expected {len(CLASS_VALUES)} classifier lines")
        width = timesteps * len(names) + 1
        weights = np.array([_floats(line, 5 + i, width) for i, line in enumerate(body)])
        return SvmModel(weights, names, norm, timesteps, lam)

    root = _parse_tree(body, 5, timesteps * len(names))
    model = TreeModel(
        root, names, norm, timesteps, _int_dim(dims, "max_depth", 3, 0), _int_dim(dims, "min_leaf", 3)
    )
    if model.node_count != _int_dim(dims, "nodes", 3):
        raise ModelFormatError(3, f"nodes={dims['nodes']} but the tree has {model.node_count}")
    return model


def load_model(source: Source, name: str = "model file") -> ScoringModel:
    return loads_model(decode_text(source, name))
