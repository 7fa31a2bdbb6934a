"""
Assemble the 11-feature PC matrix and its z-score normalization.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from engine.errors import ModelFormatError
from engine.models import FEATURE_COLUMNS, FEATURE_VERSION, LabelSet, NormStats, SplitResult, SurvivalCurves
from engine.survival import SURVIVAL_FEATURES, sample_curves

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["user_id", "category_id"]
_FILE_COLUMNS = [f"f{i}" for i in range(1, len(FEATURE_COLUMNS) + 1)]


def behavior_features(split: SplitResult) -> pd.DataFrame:
    """
    num_purchases, trips_since_last and days_since_last per (user, category).

    A purchase event is one basket containing the category; trips count the user's
    baskets after the last one containing it.
    """
    baskets = split.feature.basket_keys().sort_values(["user_id", "order_date", "order_id"], kind="mergesort")
    baskets["seq"] = baskets.groupby("user_id").cumcount()
    n_baskets = baskets.groupby("user_id").size().rename("n_baskets")

    contains = split.feature.frame[["user_id", "order_id", "category_id"]].drop_duplicates()
    contains = contains.merge(baskets, on=["user_id", "order_id"])
    pairs = contains.groupby(KEY_COLUMNS).agg(
        num_purchases=("seq", "size"), last_seq=("seq", "max"), last_date=("order_date", "max")
    )
    pairs = pairs.reset_index().merge(n_baskets, left_on="user_id", right_index=True)

    reference = pairs["user_id"].map(split.reference_dates())
    pairs["trips_since_last"] = pairs["n_baskets"] - 1 - pairs["last_seq"]
    pairs["days_since_last"] = (reference - pairs["last_date"]).dt.days.clip(lower=0)
    return pairs[KEY_COLUMNS + ["num_purchases", "trips_since_last", "days_since_last"]]


def assemble_feature_matrix(
    split: SplitResult,
    curves_by_category: dict[str, SurvivalCurves],
    forecasts: pd.DataFrame,
    labels: LabelSet,
) -> pd.DataFrame:
    """
    Build one feature row per labeled (user, category).

    Args:
        split: the split the labels and features come from
        curves_by_category: survival curves; categories without curves get trivial ones
        forecasts: arima_date / arima_rate per pair
        labels: rows to produce

    Returns:
        Frame with user_id, category_id, the 11 features in FEATURE_COLUMNS order, and label
    """
    matrix = labels.frame[KEY_COLUMNS + ["label"]].merge(
        behavior_features(split), on=KEY_COLUMNS, how="left", validate="one_to_one"
    )

    survival = np.zeros((len(matrix), len(SURVIVAL_FEATURES)))
    days = matrix["days_since_last"].to_numpy(dtype=np.int64)
    for category_id, index in matrix.groupby("category_id").indices.items():
        curves = curves_by_category.get(category_id)
        if curves is None:
            logger.warning("No survival curves for category %s; using trivial curves", category_id)
            curves = SurvivalCurves.trivial()
        survival[index] = sample_curves(curves, days[index])
    for position, name in enumerate(SURVIVAL_FEATURES):
        matrix[name] = survival[:, position]

    matrix = matrix.merge(
        forecasts[KEY_COLUMNS + ["arima_date", "arima_rate"]], on=KEY_COLUMNS, how="left", validate="one_to_one"
    )
    missing = matrix["arima_date"].isna().sum()
    if missing:
        logger.warning("%d rows without forecasts; filling with 0", missing)
        matrix[["arima_date", "arima_rate"]] = matrix[["arima_date", "arima_rate"]].fillna(0.0)

    matrix = matrix[KEY_COLUMNS + list(FEATURE_COLUMNS) + ["label"]]
    matrix[list(FEATURE_COLUMNS)] = matrix[list(FEATURE_COLUMNS)].astype(float)
    matrix = matrix.sort_values(KEY_COLUMNS).reset_index(drop=True)
    logger.info("Assembled %d feature rows", len(matrix))
    return matrix


def compute_norm_stats(matrix: pd.DataFrame) -> NormStats:
    """Sample mean and standard deviation (n - 1) per feature; zero or undefined std becomes 1."""
    values = matrix[list(FEATURE_COLUMNS)].to_numpy(dtype=float)
    mean = values.mean(axis=0)
    if len(values) > 1:
        std = values.std(axis=0, ddof=1)
    else:
        std = np.ones(values.shape[1])
    std = np.where((std > 0) & np.isfinite(std), std, 1.0)
    return NormStats(mean=mean, std=std)


def normalize(matrix: pd.DataFrame, stats: NormStats | None = None) -> tuple[pd.DataFrame, NormStats]:
    """
    Z-score the feature columns.

    Args:
        matrix: feature rows
        stats: stored training stats (scoring path); computed from `matrix` when absent

    Returns:
        (normalized copy, stats used)
    """
    if stats is None:
        if matrix.empty:
            raise ValueError("cannot compute normalization stats from an empty matrix")
        stats = compute_norm_stats(matrix)
    elif stats.version != FEATURE_VERSION:
        raise ModelFormatError(f"normalization stats are {stats.version}, expected {FEATURE_VERSION}")
    normalized = matrix.copy()
    values = matrix[list(FEATURE_COLUMNS)].to_numpy(dtype=float)
    normalized[list(FEATURE_COLUMNS)] = (values - stats.mean) / stats.std
    return normalized, stats


def parse_norm_stats(text: str) -> NormStats:
    values: dict[str, str] = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    version = values.get("version")
    if version != FEATURE_VERSION:
        raise ModelFormatError(f"normalization stats are {version}, expected {FEATURE_VERSION}")
    try:
        mean = np.array([float(values[f"mean.{name}"]) for name in FEATURE_COLUMNS])
        std = np.array([float(values[f"std.{name}"]) for name in FEATURE_COLUMNS])
    except KeyError as e:
        raise ModelFormatError(f"normalization stats lack {e.args[0]}") from e
    return NormStats(mean=mean, std=std, version=version)


def save_norm_stats(stats: NormStats, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(stats.to_text(), encoding="utf-8")
    return path


def load_norm_stats(path: Path) -> NormStats:
    return parse_norm_stats(Path(path).read_text(encoding="utf-8"))


def save_feature_matrix(matrix: pd.DataFrame, path: Path) -> Path:
    """CSV `user_id,category_id,f1..f11,label` under a version line naming f1..f11."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = matrix[KEY_COLUMNS + list(FEATURE_COLUMNS) + ["label"]].copy()
    out.columns = KEY_COLUMNS + _FILE_COLUMNS + ["label"]
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# {FEATURE_VERSION}: {','.join(FEATURE_COLUMNS)}\n")
        out.to_csv(handle, index=False, lineterminator="\n", float_format="%.17g")
    return path


def load_feature_matrix(path: Path) -> pd.DataFrame:
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        header = handle.readline().strip()
    expected = f"# {FEATURE_VERSION}: {','.join(FEATURE_COLUMNS)}"
    if header != expected:
        raise ModelFormatError(f"{path}: feature header {header!r} does not match {expected!r}")
    frame = pd.read_csv(path, skiprows=1, dtype={"user_id": str, "category_id": str})
    if list(frame.columns) != KEY_COLUMNS + _FILE_COLUMNS + ["label"]:
        raise ModelFormatError(f"{path}: unexpected columns {list(frame.columns)}")
    frame.columns = KEY_COLUMNS + list(FEATURE_COLUMNS) + ["label"]
    frame["label"] = frame["label"].astype(int)
    return frame
