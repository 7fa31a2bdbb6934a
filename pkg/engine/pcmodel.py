"""
Personalized Category (PC) model: an 11-10-5-2 sigmoid network with a softmax output.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from config.settings import TrainConfig
from engine.errors import ModelFormatError, TrainingError
from engine.features import normalize
from engine.models import FEATURE_COLUMNS, FEATURE_VERSION, MlpParams, NormStats

logger = logging.getLogger(__name__)

MODEL_VERSION = "pcic-mlp-v1"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _layers(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h1 = _sigmoid(x @ params.w1.T + params.b1)
    h2 = _sigmoid(h1 @ params.w2.T + params.b2)
    logits = h2 @ params.w3.T + params.b3
    return h1, h2, logits


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """
    Class probabilities (p0, p1) for one input vector or a batch of rows.
    """
    x = np.asarray(x, dtype=float)
    _, _, logits = _layers(params, np.atleast_2d(x))
    probs = np.exp(_log_softmax(logits))
    return probs[0] if x.ndim == 1 else probs


def init_params(seed: int) -> MlpParams:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name in MlpParams.NAMES:
        shape = MlpParams.SHAPES[name]
        if name.startswith("w"):
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return MlpParams(**tensors)


def loss_and_gradients(
    params: MlpParams, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, MlpParams]:
    """
    Weighted mean cross-entropy -[y ln p1 + (1 - y) ln p0] and its gradient.

    The mean is taken over the row weights, so unit weights give the plain mean.
    """
    y = np.asarray(y, dtype=np.int64)
    weights = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    total = weights.sum()

    h1, h2, logits = _layers(params, x)
    log_probs = _log_softmax(logits)
    rows = np.arange(len(y))
    loss = float(-(weights * log_probs[rows, y]).sum() / total)

    delta3 = np.exp(log_probs)
    delta3[rows, y] -= 1.0
    delta3 *= (weights / total)[:, None]

    delta2 = (delta3 @ params.w3) * h2 * (1.0 - h2)
    delta1 = (delta2 @ params.w2) * h1 * (1.0 - h1)
    grads = MlpParams(
        w1=delta1.T @ x,
        b1=delta1.sum(axis=0),
        w2=delta2.T @ h1,
        b2=delta2.sum(axis=0),
        w3=delta3.T @ h2,
        b3=delta3.sum(axis=0),
    )
    return loss, grads


def class_weights(y: np.ndarray, positive_weight: float) -> np.ndarray:
    return np.where(np.asarray(y) == 1, positive_weight, 1.0)


def _positive_weight(y: np.ndarray, config: TrainConfig) -> float:
    if config.positive_class_weight is not None:
        return config.positive_class_weight
    positives = int((y == 1).sum())
    negatives = len(y) - positives
    if positives == 0 or negatives == 0:
        return 1.0
    return negatives / positives


class TrainingReport(BaseModel):
    """Per-epoch losses and the early-stopping outcome of a PC model fit."""

    epochs_run: int
    best_epoch: int
    best_validation_loss: float
    positive_class_weight: float
    stopped_early: bool
    train_losses: list[float] = Field(default_factory=list)
    validation_losses: list[float] = Field(default_factory=list)


def _as_arrays(rows: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    x = rows[list(FEATURE_COLUMNS)].to_numpy(dtype=float)
    y = rows["label"].to_numpy(dtype=np.int64)
    return x, y


def train_pc_model(
    train_rows: pd.DataFrame, validation_rows: pd.DataFrame, config: TrainConfig | None = None, seed: int = 0
) -> tuple[MlpParams, TrainingReport]:
    """
    Fit the PC model by mini-batch gradient descent with early stopping.

    Args:
        train_rows: normalized feature rows with labels
        validation_rows: normalized rows used for early stopping
        config: optimizer settings
        seed: seeds initialization and batch shuffling

    Returns:
        Parameters with the best validation loss, and the training report
    """
    config = config or TrainConfig()
    if train_rows.empty or validation_rows.empty:
        raise TrainingError("training and validation rows must both be non-empty")
    x, y = _as_arrays(train_rows)
    x_val, y_val = _as_arrays(validation_rows)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_val))):
        raise TrainingError("feature matrix contains non-finite values")

    positive_weight = _positive_weight(y, config)
    w = class_weights(y, positive_weight)
    w_val = class_weights(y_val, positive_weight)

    rng = np.random.default_rng(seed)
    params = init_params(seed)
    theta = params.as_vector()
    first_moment = np.zeros_like(theta)
    second_moment = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best_params, best_loss, best_epoch = params.copy(), np.inf, 0
    train_losses: list[float] = []
    validation_losses: list[float] = []
    stale = 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(MlpParams.from_vector(theta), x[batch], y[batch], w[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch} (loss {loss})")
            g = grads.as_vector()
            step += 1
            if config.optimizer == "adam":
                first_moment = beta1 * first_moment + (1 - beta1) * g
                second_moment = beta2 * second_moment + (1 - beta2) * g * g
                m_hat = first_moment / (1 - beta1**step)
                v_hat = second_moment / (1 - beta2**step)
                theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            else:
                theta = theta - config.learning_rate * g
            epoch_loss += loss * len(batch)

        current = MlpParams.from_vector(theta)
        val_loss, _ = loss_and_gradients(current, x_val, y_val, w_val)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite at epoch {epoch}")
        train_losses.append(epoch_loss / len(y))
        validation_losses.append(val_loss)
        logger.debug("epoch %d train %.5f validation %.5f", epoch, train_losses[-1], val_loss)

        if val_loss < best_loss:
            best_params, best_loss, best_epoch, stale = current.copy(), val_loss, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    report = TrainingReport(
        epochs_run=epoch,
        best_epoch=best_epoch,
        best_validation_loss=float(best_loss),
        positive_class_weight=float(positive_weight),
        stopped_early=epoch < config.epochs,
        train_losses=train_losses,
        validation_losses=validation_losses,
    )
    logger.info(
        "Trained PC model: best validation loss %.5f at epoch %d of %d", best_loss, best_epoch, epoch
    )
    return best_params, report


def score_categories(params: MlpParams, rows: pd.DataFrame) -> pd.DataFrame:
    """
    Score and rank each user's categories.

    Ranks are 1-based by p1 descending; ties go to more purchases, then category_id.

    Returns:
        Frame with user_id, category_id, pc_score, rk_pc
    """
    x = rows[list(FEATURE_COLUMNS)].to_numpy(dtype=float)
    scored = rows[["user_id", "category_id", "num_purchases"]].copy()
    scored["pc_score"] = forward(params, x)[:, 1] if len(x) else np.zeros(0)
    scored = scored.sort_values(
        ["user_id", "pc_score", "num_purchases", "category_id"],
        ascending=[True, False, False, True],
        kind="mergesort",
    )
    scored["rk_pc"] = scored.groupby("user_id").cumcount() + 1
    return scored[["user_id", "category_id", "pc_score", "rk_pc"]].reset_index(drop=True)


def permutation_losses(
    params: MlpParams,
    rows: pd.DataFrame,
    column: int,
    repeats: int = 5,
    seed: int = 0,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Validation-loss increase for each of `repeats` shuffles of one feature column."""
    x, y = _as_arrays(rows)
    base, _ = loss_and_gradients(params, x, y, weights)
    increases = np.empty(repeats)
    for repeat in range(repeats):
        rng = np.random.default_rng([seed, column, repeat])
        shuffled = x.copy()
        shuffled[:, column] = rng.permutation(shuffled[:, column])
        loss, _ = loss_and_gradients(params, shuffled, y, weights)
        increases[repeat] = loss - base
    return increases


def permutation_importance(
    params: MlpParams,
    rows: pd.DataFrame,
    repeats: int = 5,
    seed: int = 0,
    weights: np.ndarray | None = None,
) -> pd.DataFrame:
    """
    Mean validation-loss increase after shuffling each feature, sorted descending.

    Returns:
        Frame with feature, importance, std
    """
    results = []
    for column, name in enumerate(FEATURE_COLUMNS):
        increases = permutation_losses(params, rows, column, repeats, seed, weights)
        results.append({"feature": name, "importance": float(increases.mean()), "std": float(increases.std())})
    importance = pd.DataFrame(results)
    return importance.sort_values("importance", ascending=False, kind="mergesort").reset_index(drop=True)


class PCModel:
    """Trained PC network bundled with the normalization stats of its training rows."""

    def __init__(self, params: MlpParams, norm_stats: NormStats, report: TrainingReport | None = None):
        """
        Initialize the PC model.

        Args:
            params: trained network weights
            norm_stats: z-score stats applied before scoring
            report: optional training report
        """
        self.params = params
        self.norm_stats = norm_stats
        self.report = report

    def score(self, matrix: pd.DataFrame) -> pd.DataFrame:
        """Normalize raw feature rows with the stored stats and rank categories per user."""
        normalized, _ = normalize(matrix, self.norm_stats)
        return score_categories(self.params, normalized)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as handle:
            np.savez(
                handle,
                model_version=np.array(MODEL_VERSION),
                feature_version=np.array(self.norm_stats.version),
                norm_mean=self.norm_stats.mean,
                norm_std=self.norm_stats.std,
                **self.params.tensors(),
            )
        return path

    @classmethod
    def load(cls, path: Path) -> PCModel:
        path = Path(path)
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            raise ModelFormatError(f"cannot read model file {path}: {e}") from e
        with data:
            if "model_version" not in data or str(data["model_version"]) != MODEL_VERSION:
                raise ModelFormatError(f"{path}: model version mismatch, expected {MODEL_VERSION}")
            if str(data["feature_version"]) != FEATURE_VERSION:
                raise ModelFormatError(f"{path}: features are {data['feature_version']}, expected {FEATURE_VERSION}")
            tensors = {}
            for name in MlpParams.NAMES:
                if name not in data or data[name].shape != MlpParams.SHAPES[name]:
                    raise ModelFormatError(f"{path}: tensor {name} missing or has the wrong shape")
                tensors[name] = data[name].astype(float)
            stats = NormStats(mean=data["norm_mean"].astype(float), std=data["norm_std"].astype(float))
        if stats.mean.shape != (len(FEATURE_COLUMNS),):
            raise ModelFormatError(f"{path}: normalization stats have the wrong shape")
        return cls(MlpParams(**tensors), stats)


def fit_pc_model(
    matrix: pd.DataFrame,
    train_users: list[str] | set[str],
    validation_users: list[str] | set[str],
    config: TrainConfig | None = None,
    seed: int = 0,
) -> PCModel:
    """Normalize with training-user stats, train, and bundle the result."""
    train_rows = matrix[matrix["user_id"].isin(set(train_users))]
    validation_rows = matrix[matrix["user_id"].isin(set(validation_users))]
    if train_rows.empty or validation_rows.empty:
        raise TrainingError(
            f"no feature rows for {'training' if train_rows.empty else 'validation'} users"
        )
    train_norm, stats = normalize(train_rows)
    validation_norm, _ = normalize(validation_rows, stats)
    params, report = train_pc_model(train_norm, validation_norm, config, seed)
    return PCModel(params, stats, report)
