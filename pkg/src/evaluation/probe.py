"""Downstream evaluation: frozen-feature linear probe and full fine-tune.

Both protocols share one stratified train/test split per seed and one
label-fraction subsampling rule, so a probe and a fine-tune with the same
seed see the same rows.
"""
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, field_validator

from src.config.run_config import EvalConfig
from src.data.bundle import DatasetBundle
from src.enums import EvalMode
from src.evaluation.metrics import accuracy, macro, one_vs_rest, pr_auc, roc_auc
from src.logging_config import get_logger
from src.model.networks import pooled_image_tokens
from src.model.params import BRIDGE, IMAGE_ENCODER, ModelParams
from src.model.patcher import PatchGrid, patchify
from src.numeric import ops
from src.numeric.rng import Rng
from src.numeric.tensor import Tensor
from src.training.optim import AdamState, Schedule, adamw_step, lr_at
from src.types import FloatArray, IntArray

logger = get_logger("evaluation.probe")

HEAD_WEIGHT = "head.weight"
HEAD_BIAS = "head.bias"
FEATURE_BATCH = 64
_STD_FLOOR = 1e-12


class ProbeError(ValueError):
    """Raised when a split or subsample leaves fewer than two classes to learn."""


class ProbeResult(BaseModel):
    """Metrics of one evaluation run plus the recipe that produced them."""
    mode: EvalMode
    roc_auc_per_class: list[Optional[float]]
    roc_auc_macro: float = Field(ge=0, le=1)
    pr_auc_per_class: list[Optional[float]]
    pr_auc_macro: float = Field(ge=0, le=1)
    accuracy: float = Field(ge=0, le=1)
    n_train: int = Field(ge=0)
    n_test: int = Field(ge=0)
    label_fraction: float = Field(gt=0, le=1)
    seed: int
    config: dict[str, Any] = Field(default_factory=dict)

    @field_validator("roc_auc_per_class", "pr_auc_per_class")
    @classmethod
    def validate_unit_interval(cls, v: list[Optional[float]]) -> list[Optional[float]]:
        for value in v:
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"per-class metric {value} outside [0, 1]")
        return v

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.model_dump(mode="json"), f, sort_keys=True)
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ProbeResult":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Result file not found: {path}")
        with open(path, encoding="utf-8") as f:
            return cls(**yaml.safe_load(f))


class Split(NamedTuple):
    train: IntArray
    test: IntArray


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def stratified_split(labels: IntArray, test_fraction: float, seed: int) -> Split:
    """Per class, ``round(test_fraction·n_k)`` rows go to test (at least one when n_k ≥ 2)."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = Rng.derive(seed, "probe", "split")
    train: list[int] = []
    test: list[int] = []
    for k in np.unique(labels):
        rows = np.flatnonzero(labels == k)
        rows = rows[rng.permutation(rows.size)]
        n_test = 0
        if rows.size >= 2:
            n_test = min(rows.size - 1, max(1, round(test_fraction * rows.size)))
        test += rows[:n_test].tolist()
        train += rows[n_test:].tolist()
    return Split(np.sort(np.asarray(train, dtype=np.int64)),
                 np.sort(np.asarray(test, dtype=np.int64)))


def _class_quotas(counts: dict[int, int], target: int) -> dict[int, int]:
    """Largest-remainder allocation of ``target`` rows, at least one per class when possible."""
    total = sum(counts.values())
    exact = {k: target * n / total for k, n in counts.items()}
    quotas = {k: int(np.floor(v)) for k, v in exact.items()}
    leftover = target - sum(quotas.values())
    by_remainder = sorted(counts, key=lambda k: (-(exact[k] - quotas[k]), k))
    for k in by_remainder[:leftover]:
        quotas[k] += 1
    for k in sorted(counts):
        if quotas[k] == 0:
            donor = max(sorted(quotas), key=lambda j: quotas[j])
            if quotas[donor] > 1:
                quotas[donor] -= 1
                quotas[k] = 1
    return quotas


def sample_label_fraction(train_idx: IntArray, labels: IntArray, fraction: float,
                          seed: int) -> IntArray:
    """``⌊fraction·N_train⌋`` stratified training rows; fraction 1 keeps every row once."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return train_idx
    labels = np.asarray(labels, dtype=np.int64)
    target = int(np.floor(fraction * train_idx.size))
    train_labels = labels[train_idx]
    counts = {int(k): int((train_labels == k).sum()) for k in np.unique(train_labels)}
    quotas = _class_quotas(counts, target)
    rng = Rng.derive(seed, "probe", "fraction")
    chosen: list[int] = []
    for k in sorted(counts):
        rows = train_idx[train_labels == k]
        chosen += rows[rng.permutation(rows.size)][:quotas[k]].tolist()
    return np.sort(np.asarray(chosen, dtype=np.int64))


def _require_two_classes(labels: IntArray, where: str) -> None:
    present = np.unique(labels)
    if present.size < 2:
        raise ProbeError(f"{where} holds {present.size} class(es); at least 2 are needed")


# ---------------------------------------------------------------------------
# Features and the logistic-regression probe
# ---------------------------------------------------------------------------

def extract_features(params: ModelParams, images: FloatArray, use_bridge: bool = False,
                     batch_size: int = FEATURE_BATCH) -> FloatArray:
    """Mean-pooled encoder tokens per image, ``(n, width)``; deterministic."""
    frozen = ModelParams.from_arrays(params.arrays(), params.config, requires_grad=False)
    grid = PatchGrid.from_model_config(params.config)
    images = np.asarray(images)
    rows = []
    for start in range(0, images.shape[0], batch_size):
        patches = patchify(Tensor(images[start:start + batch_size]), grid)
        rows.append(np.asarray(pooled_image_tokens(frozen, patches, use_bridge).data,
                               dtype=np.float64))
    width = params.config.bridge.width if use_bridge else params.config.image_encoder.width
    return np.concatenate(rows, axis=0) if rows else np.empty((0, width))


def _softmax(z: FloatArray) -> FloatArray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(x: FloatArray, y: IntArray, n_classes: int, iterations: int, lr: float,
                 l2: float) -> tuple[FloatArray, FloatArray]:
    """Multinomial logistic regression by full-batch gradient descent from zeros."""
    n, d = x.shape
    onehot = np.eye(n_classes)[y]
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    for _ in range(iterations):
        g = (_softmax(x @ w + b) - onehot) / n
        w -= lr * (x.T @ g + l2 * w)
        b -= lr * g.sum(axis=0)
    return w, b


def score_predictions(probs: FloatArray, labels: IntArray, n_classes: int) -> dict[str, Any]:
    roc = one_vs_rest(probs, labels, n_classes, roc_auc)
    pr = one_vs_rest(probs, labels, n_classes, pr_auc)
    return {
        "roc_auc_per_class": roc,
        "roc_auc_macro": macro(roc),
        "pr_auc_per_class": pr,
        "pr_auc_macro": macro(pr),
        "accuracy": accuracy(probs.argmax(axis=1), labels),
    }


def linear_probe(features: FloatArray, labels: IntArray, label_fraction: float = 1.0,
                 seed: int = 0, config: Optional[EvalConfig] = None) -> ProbeResult:
    """Train a logistic-regression head on frozen features and score the held-out split."""
    config = config or EvalConfig(label_fraction=label_fraction, seed=seed)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    split = stratified_split(labels, config.test_fraction, seed)
    train = sample_label_fraction(split.train, labels, label_fraction, seed)
    _require_two_classes(labels[train], "probe training subset")
    _require_two_classes(labels[split.test], "probe test split")

    mu = features[train].mean(axis=0)
    sd = features[train].std(axis=0)
    sd = np.where(sd > _STD_FLOOR, sd, 1.0)
    z = (features - mu) / sd
    w, b = fit_logistic(z[train], labels[train], n_classes, config.probe_iterations,
                        config.probe_lr, config.probe_l2)
    metrics = score_predictions(_softmax(z[split.test] @ w + b), labels[split.test], n_classes)
    result = ProbeResult(mode=EvalMode.PROBE, n_train=int(train.size), n_test=int(split.test.size),
                         label_fraction=label_fraction, seed=seed,
                         config=config.model_dump(mode="json"), **metrics)
    logger.info("Linear probe: macro ROC-AUC %.4f, PR-AUC %.4f, acc %.4f (%d train)",
                result.roc_auc_macro, result.pr_auc_macro, result.accuracy, result.n_train)
    return result


# ---------------------------------------------------------------------------
# Fine-tune
# ---------------------------------------------------------------------------

def _finetune_params(params: ModelParams, n_classes: int, use_bridge: bool,
                     seed: int) -> ModelParams:
    prefixes = (f"{IMAGE_ENCODER}.", f"{BRIDGE}.") if use_bridge else (f"{IMAGE_ENCODER}.",)
    arrays = {n: params[n].data.copy() for n in params.names_with_prefix(*prefixes)}
    cfg = params.config
    width = cfg.bridge.width if use_bridge else cfg.image_encoder.width
    rng = Rng.derive(seed, "finetune", "head")
    arrays[HEAD_WEIGHT] = rng.normal_array((width, n_classes), std=cfg.init_std, truncate=2.0)
    arrays[HEAD_BIAS] = np.zeros(n_classes)
    return ModelParams.from_arrays(arrays, cfg)


def _head_logits(model: ModelParams, patches: Tensor, use_bridge: bool) -> Tensor:
    pooled = pooled_image_tokens(model, patches, use_bridge)
    return ops.linear(pooled, model[HEAD_WEIGHT], model[HEAD_BIAS])


def fine_tune(params: ModelParams, bundle: DatasetBundle,
              config: Optional[EvalConfig] = None) -> ProbeResult:
    """Linear head on mean-pooled encoder tokens, every weight unfrozen, AdamW + warmup/cosine."""
    config = config or EvalConfig(mode=EvalMode.FINETUNE)
    seed, fraction = config.seed, config.label_fraction
    rows, labels = bundle.categorical_rows()
    if rows.size == 0:
        raise ProbeError("bundle has no categorically labelled pairs to fine-tune on")
    n_classes = int(labels.max()) + 1
    split = stratified_split(labels, config.test_fraction, seed)
    train = sample_label_fraction(split.train, labels, fraction, seed)
    _require_two_classes(labels[train], "fine-tune training subset")
    _require_two_classes(labels[split.test], "fine-tune test split")

    grid = PatchGrid.from_model_config(params.config)
    patches = patchify(Tensor(bundle.paired_images[rows]), grid).data
    model = _finetune_params(params, n_classes, config.use_bridge, seed)
    adam = AdamState.zeros_like(model)
    schedule = Schedule(config.finetune_lr, config.finetune_warmup_epochs, config.finetune_epochs)
    batch = config.finetune_batch_size
    per_epoch = -(-train.size // batch)
    total_steps = per_epoch * config.finetune_epochs
    onehot = np.eye(n_classes)

    step = 0
    for epoch in range(config.finetune_epochs):
        order = train[Rng.derive(seed, "finetune", "epoch", epoch).permutation(train.size)]
        for start in range(0, order.size, batch):
            idx = order[start:start + batch]
            model.zero_grad()
            logits = _head_logits(model, Tensor(patches[idx]), config.use_bridge)
            picked = ops.mul(ops.log_softmax(logits), Tensor(onehot[labels[idx]]))
            loss = ops.scale(ops.sum_(picked), -1.0 / idx.size)
            loss.backward()
            adamw_step(model, {n: t.grad for n, t in model.items()}, adam,
                       lr_at(schedule, step, total_steps), (0.9, 0.999),
                       config.finetune_weight_decay)
            step += 1
        logger.debug("fine-tune epoch %d loss %.5f", epoch, loss.item(), extra={"epoch": epoch})

    frozen = ModelParams.from_arrays(model.arrays(), model.config, requires_grad=False)
    test_logits = np.concatenate([
        np.asarray(_head_logits(frozen, Tensor(patches[split.test[s:s + FEATURE_BATCH]]),
                                config.use_bridge).data, dtype=np.float64)
        for s in range(0, split.test.size, FEATURE_BATCH)
    ])
    metrics = score_predictions(_softmax(test_logits), labels[split.test], n_classes)
    result = ProbeResult(mode=EvalMode.FINETUNE, n_train=int(train.size),
                         n_test=int(split.test.size), label_fraction=fraction, seed=seed,
                         config=config.model_dump(mode="json"), **metrics)
    logger.info("Fine-tune: macro ROC-AUC %.4f, PR-AUC %.4f, acc %.4f",
                result.roc_auc_macro, result.pr_auc_macro, result.accuracy)
    return result


def evaluate(params: ModelParams, bundle: DatasetBundle, config: EvalConfig) -> ProbeResult:
    """Dispatch on ``config.mode`` over the bundle's categorically labelled pairs."""
    if config.mode == EvalMode.FINETUNE:
        return fine_tune(params, bundle, config)
    rows, labels = bundle.categorical_rows()
    if rows.size == 0:
        raise ProbeError("bundle has no categorically labelled pairs to probe")
    features = extract_features(params, bundle.paired_images[rows], config.use_bridge)
    return linear_probe(features, labels, config.label_fraction, config.seed, config)
