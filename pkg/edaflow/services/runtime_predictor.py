"""
Stage runtime prediction

A bagged ensemble of regression trees maps (design size, stage, vCPUs) to a
runtime estimate. Features are log(cell_count), a one-hot stage encoding and
the vCPU count; the trees regress log(runtime / cell_count), so predictions are
positive and scale with design size.
"""

import math
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator

from edaflow.config import settings
from edaflow.errors import InsufficientData, UntrainedModel
from edaflow.models.flow import FLOW_ORDER, StageKind
from edaflow.services.eda_adapter import MockModel, load_mock_model

logger = structlog.get_logger(__name__)

FORMAT_VERSION = 1
MIN_SAMPLES = 50
FEATURES = ["log_cell_count", *[f"stage_{stage.value}" for stage in FLOW_ORDER], "vcpus"]


class RuntimeSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    cell_count: int = Field(ge=1)
    stage: StageKind
    vcpus: int = Field(ge=1)
    runtime_s: float = Field(gt=0)

    @field_validator("stage")
    @classmethod
    def single_stage(cls, v: StageKind) -> StageKind:
        if v is StageKind.FULL_FLOW:
            raise ValueError("runtime samples describe a single stage, not full_flow")
        return v


class TreeDump(BaseModel):
    """Flat node arrays; feature -1 marks a leaf."""

    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[float]


class TrainingSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_samples: int
    n_train: int
    n_holdout: int
    mean_abs_pct_error_on_holdout: float


class Hyperparameters(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_trees: int = 50
    max_depth: int = 8
    min_samples_leaf: int = 2
    bootstrap_fraction: float = 1.0
    holdout_fraction: float = 0.2


class TrainedModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    format_version: int = FORMAT_VERSION
    model_kind: Literal["tree-ensemble"] = "tree-ensemble"
    seed: int
    features: List[str] = Field(default_factory=lambda: list(FEATURES))
    hyperparameters: Hyperparameters = Field(default_factory=Hyperparameters)
    trees: List[TreeDump]
    training_summary: TrainingSummary


# --- synthetic data -----------------------------------------------------------

def generate_synthetic_dataset(
    seed: int,
    n: int,
    noise: bool = True,
    model: Optional[MockModel] = None,
    vcpu_options: Optional[Sequence[int]] = None,
    cell_range: Tuple[int, int] = (500, 200_000),
) -> List[RuntimeSample]:
    """
    Draw ``n`` samples from the mock runtime model.

    Cell counts are log-uniform over ``cell_range``; stages and vCPUs are
    uniform; multiplicative noise is uniform(0.9, 1.1). ``noise=False`` keeps
    the same draws but returns exact model values.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    model = model or load_mock_model()
    options = np.asarray(vcpu_options or settings.vcpu_options)
    rng = np.random.default_rng(seed)

    lo, hi = cell_range
    cells = np.rint(np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))).astype(int)
    stage_idx = rng.integers(0, len(FLOW_ORDER), size=n)
    vcpus = rng.choice(options, size=n)
    eps = rng.uniform(0.9, 1.1, size=n)

    samples = []
    for i in range(n):
        stage = FLOW_ORDER[int(stage_idx[i])]
        runtime = model.stage_runtime(stage, int(cells[i]), int(vcpus[i]))
        if noise:
            runtime *= float(eps[i])
        samples.append(RuntimeSample(
            cell_count=max(1, int(cells[i])), stage=stage, vcpus=int(vcpus[i]), runtime_s=runtime,
        ))
    return samples


# --- features -----------------------------------------------------------------

def _feature_row(cell_count: int, stage: StageKind, vcpus: int) -> List[float]:
    onehot = [1.0 if stage is s else 0.0 for s in FLOW_ORDER]
    return [math.log(cell_count), *onehot, float(vcpus)]


def _design_matrix(samples: Sequence[RuntimeSample]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array([_feature_row(s.cell_count, s.stage, s.vcpus) for s in samples], dtype=float)
    y = np.array([math.log(s.runtime_s / s.cell_count) for s in samples], dtype=float)
    return X, y


# --- regression tree ----------------------------------------------------------

class _TreeBuilder:
    """Greedy least-squares tree over all features (no feature subsampling)."""

    def __init__(self, max_depth: int, min_samples_leaf: int):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def build(self, X: np.ndarray, y: np.ndarray) -> TreeDump:
        self._grow(X, y, depth=0)
        return TreeDump(feature=self.feature, threshold=self.threshold,
                        left=self.left, right=self.right, value=self.value)

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _best_split(self, X: np.ndarray, y: np.ndarray) -> Optional[Tuple[int, float]]:
        n = len(y)
        leaf = self.min_samples_leaf
        parent_sse = float(np.sum((y - y.mean()) ** 2))
        best: Optional[Tuple[int, float]] = None
        best_sse = parent_sse - 1e-12
        for f in range(X.shape[1]):
            order = np.argsort(X[:, f], kind="stable")
            xs, ys = X[order, f], y[order]
            csum, csq = np.cumsum(ys), np.cumsum(ys * ys)
            total, total_sq = csum[-1], csq[-1]
            # split after position i-1: left = [0, i), right = [i, n)
            i = np.arange(leaf, n - leaf + 1)
            if i.size == 0:
                continue
            valid = xs[i - 1] < xs[np.minimum(i, n - 1)]
            valid &= i < n
            if not valid.any():
                continue
            i = i[valid]
            n_left = i.astype(float)
            n_right = n - n_left
            left_sum, left_sq = csum[i - 1], csq[i - 1]
            sse = (left_sq - left_sum ** 2 / n_left) + (
                (total_sq - left_sq) - (total - left_sum) ** 2 / n_right
            )
            k = int(np.argmin(sse))
            if sse[k] < best_sse:
                best_sse = float(sse[k])
                pos = int(i[k])
                best = (f, float((xs[pos - 1] + xs[pos]) / 2.0))
        return best

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> int:
        node = self._new_node(float(y.mean()))
        if depth >= self.max_depth or len(y) < 2 * self.min_samples_leaf or np.ptp(y) <= 1e-12:
            return node
        split = self._best_split(X, y)
        if split is None:
            return node
        f, thr = split
        mask = X[:, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        left = self._grow(X[mask], y[mask], depth + 1)
        right = self._grow(X[~mask], y[~mask], depth + 1)
        self.left[node] = left
        self.right[node] = right
        return node


def _tree_predict(tree: TreeDump, X: np.ndarray) -> np.ndarray:
    feature = np.asarray(tree.feature)
    threshold = np.asarray(tree.threshold)
    left, right = np.asarray(tree.left), np.asarray(tree.right)
    value = np.asarray(tree.value)
    node = np.zeros(len(X), dtype=int)
    while True:
        f = feature[node]
        internal = f >= 0
        if not internal.any():
            return value[node]
        rows = np.nonzero(internal)[0]
        go_left = X[rows, f[rows]] <= threshold[node[rows]]
        node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])


def _ensemble_log_predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return np.mean([_tree_predict(tree, X) for tree in model.trees], axis=0)


def mean_absolute_percentage_error(actual: Iterable[float], predicted: Iterable[float]) -> float:
    a = np.asarray(list(actual), dtype=float)
    p = np.asarray(list(predicted), dtype=float)
    return float(np.mean(np.abs(p - a) / a))


# --- public operations --------------------------------------------------------

def train(samples: Sequence[RuntimeSample], seed: int,
          hyperparameters: Optional[Hyperparameters] = None) -> TrainedModel:
    """
    Fit the tree ensemble.

    A seeded 80/20 shuffle split holds out samples for the recorded MAPE; the
    trees are fit on the remaining 80% with bootstrap resampling.

    Raises:
        InsufficientData: fewer than 50 samples or a single vCPU value.
    """
    hp = hyperparameters or Hyperparameters()
    if len(samples) < MIN_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    if len({s.vcpus for s in samples}) < 2:
        raise InsufficientData("samples must cover at least 2 distinct vcpus values")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    n_holdout = max(1, int(round(hp.holdout_fraction * len(samples))))
    holdout = [samples[i] for i in perm[:n_holdout]]
    training = [samples[i] for i in perm[n_holdout:]]

    X, y = _design_matrix(training)
    n_boot = max(1, int(round(hp.bootstrap_fraction * len(training))))
    trees = []
    for _ in range(hp.n_trees):
        idx = rng.integers(0, len(training), size=n_boot)
        trees.append(_TreeBuilder(hp.max_depth, hp.min_samples_leaf).build(X[idx], y[idx]))

    draft = TrainedModel(
        seed=seed,
        hyperparameters=hp,
        trees=trees,
        training_summary=TrainingSummary(
            n_samples=len(samples), n_train=len(training), n_holdout=n_holdout,
            mean_abs_pct_error_on_holdout=0.0,
        ),
    )
    Xh, _ = _design_matrix(holdout)
    cells = np.array([s.cell_count for s in holdout], dtype=float)
    predicted = np.exp(_ensemble_log_predict(draft, Xh)) * cells
    mape = mean_absolute_percentage_error([s.runtime_s for s in holdout], predicted)

    model = draft.model_copy(update={
        "training_summary": draft.training_summary.model_copy(
            update={"mean_abs_pct_error_on_holdout": mape}
        )
    })
    logger.info("predictor_trained", n_samples=len(samples), n_trees=hp.n_trees,
                holdout_mape=round(mape, 6), seed=seed)
    return model


def predict(model: Optional[TrainedModel], cell_count: int, stage: StageKind, vcpus: int) -> float:
    if model is None or not model.trees:
        raise UntrainedModel("no trained runtime model available")
    if stage is StageKind.FULL_FLOW:
        raise ValueError("predict one stage at a time; full_flow is not a single stage")
    if cell_count < 1 or vcpus < 1:
        raise ValueError("cell_count and vcpus must be positive")
    X = np.array([_feature_row(cell_count, stage, vcpus)])
    return float(np.exp(_ensemble_log_predict(model, X))[0] * cell_count)


def predict_table(model: Optional[TrainedModel], cell_count: int, stage: StageKind,
                  vcpus_options: Iterable[int]) -> Dict[int, float]:
    return {v: predict(model, cell_count, stage, v) for v in sorted(vcpus_options)}


def save_model(model: TrainedModel, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(model.model_dump_json(indent=1), encoding="utf-8")
    return target


def load_model(path: Union[str, Path]) -> TrainedModel:
    return TrainedModel.model_validate_json(Path(path).read_text(encoding="utf-8"))
