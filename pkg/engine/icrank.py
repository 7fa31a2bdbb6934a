"""
Item-within-category (IC) ranking from personal frequency, recency and units per trip.

    IR = ceil(Rk(alpha * IRR + beta * IFR) / NIB)
"""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
import pandas as pd

from config.settings import IcConfig, RecommendConfig
from engine.errors import EvaluationError
from engine.evaluate import score_lists
from engine.models import ITEM_TIE_ASCENDING, ITEM_TIE_COLUMNS, Histories
from engine.parallel import chunked, parallel_map
from engine.recommend import merge_pc_ic, recommendation_lists

logger = logging.getLogger(__name__)

GROUP_COLUMNS = ["user_id", "category_id"]
# Rounding keeps grid products such as 0.1 * 3 from splitting exact ties.
_COMBINED_DECIMALS = 12


def compute_item_stats(feature: Histories, reference: pd.Series) -> pd.DataFrame:
    """
    Freq, DaysSincePurchase and NIB for every (user, item) of the feature period.

    Args:
        feature: feature-period histories (one row per basket line)
        reference: per-user reference date (split date minus one day)

    Returns:
        Frame with user_id, item_id, category_id, freq, days_since_purchase, nib
    """
    frame = feature.frame
    stats = (
        frame.groupby(["user_id", "item_id"], sort=True)
        .agg(
            category_id=("category_id", "first"),
            freq=("order_id", "nunique"),
            last_date=("order_date", "max"),
            mean_quantity=("quantity", "mean"),
        )
        .reset_index()
    )
    ref = stats["user_id"].map(reference)
    stats["days_since_purchase"] = (ref - stats["last_date"]).dt.days.clip(lower=0).astype(int)
    stats["nib"] = stats["mean_quantity"].clip(lower=1.0)
    return stats[["user_id", "item_id", "category_id", "freq", "days_since_purchase", "nib"]]


def _ordinal_rank(stats: pd.DataFrame, column: str | None, ascending: bool = True) -> pd.Series:
    """1-based position within each (user, category) by `column`, ties by the item tie chain."""
    by = list(GROUP_COLUMNS)
    order = [True, True]
    if column is not None:
        by.append(column)
        order.append(ascending)
    for tie, tie_ascending in zip(ITEM_TIE_COLUMNS, ITEM_TIE_ASCENDING):
        if tie != column:
            by.append(tie)
            order.append(tie_ascending)
    ordered = stats.sort_values(by, ascending=order, kind="mergesort")
    ranks = ordered.groupby(GROUP_COLUMNS, sort=False).cumcount() + 1
    return ranks.reindex(stats.index)


def rank_items(stats: pd.DataFrame, alpha: float, beta: float) -> pd.DataFrame:
    """
    Rank every (user, category) group of item stats.

    Returns:
        The stats with ifr, irr, combined, rk and ir columns, ordered by
        (user_id, category_id, ir) with the item tie chain
    """
    ranked = stats.reset_index(drop=True).copy()
    # freq descending is the head of the tie chain, so the chain alone gives IFR
    ranked["ifr"] = _ordinal_rank(ranked, None)
    ranked["irr"] = _ordinal_rank(ranked, "days_since_purchase", ascending=True)
    ranked["combined"] = (alpha * ranked["irr"] + beta * ranked["ifr"]).round(_COMBINED_DECIMALS)
    ranked["rk"] = _ordinal_rank(ranked, "combined", ascending=True)
    ranked["ir"] = np.ceil(ranked["rk"] / ranked["nib"]).astype(int)
    return ranked.sort_values(
        GROUP_COLUMNS + ["ir"] + list(ITEM_TIE_COLUMNS),
        ascending=[True, True, True] + list(ITEM_TIE_ASCENDING),
        kind="mergesort",
    ).reset_index(drop=True)


def rank_items_in_category(stats: pd.DataFrame, config: IcConfig) -> dict[str, int]:
    """
    IR of each item of one (user, category), in final order.

    Unset alpha or beta count as 0.5.
    """
    if stats.empty:
        raise ValueError("cannot rank an empty item set")
    alpha = 0.5 if config.alpha is None else config.alpha
    beta = 0.5 if config.beta is None else config.beta
    ranked = rank_items(stats, alpha, beta)
    return dict(zip(ranked["item_id"], ranked["ir"].astype(int)))


def alpha_beta_grid(step: float = 0.1) -> list[float]:
    count = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(count + 1) if i * step <= 1.0 + 1e-9]


def _score_cells(task: tuple) -> list[tuple[float, float, float]]:
    cells, pc_ranks, stats, truth, users, k, order = task
    results = []
    for alpha, beta in cells:
        merged = merge_pc_ic(pc_ranks, rank_items(stats, alpha, beta), order)
        metrics, _ = score_lists(recommendation_lists(merged), truth, users, [k])
        results.append((alpha, beta, metrics[f"ndcg@{k}"]))
    return results


def tune_alpha_beta(
    pc_ranks: pd.DataFrame,
    item_stats: pd.DataFrame,
    item_truth: Mapping[str, set[str]],
    config: IcConfig | None = None,
    merge_order: str = RecommendConfig().merge_order,
    workers: int = 1,
) -> tuple[IcConfig, pd.DataFrame]:
    """
    Exhaustive (alpha, beta) grid search by NDCG@K of the merged list on validation users.

    Ties go to the smaller alpha, then the smaller beta.

    Args:
        pc_ranks: PC ranks of the validation users
        item_stats: item stats of the validation users
        item_truth: repurchased items per user in the label window
        config: grid step and NDCG cut-off
        merge_order: merge used to build the evaluated lists
        workers: processes the grid cells fan out over

    Returns:
        (config with the chosen alpha and beta, grid frame alpha, beta, ndcg)

    Raises:
        EvaluationError: no validation user has repurchase truth
    """
    config = config or IcConfig()
    users = sorted(set(pc_ranks["user_id"]))
    if not any(item_truth.get(u) for u in users):
        raise EvaluationError("alpha/beta tuning needs validation users with repurchased items")

    values = alpha_beta_grid(config.grid_step)
    cells = [(a, b) for a in values for b in values]
    tasks = [
        (part, pc_ranks, item_stats, item_truth, users, config.tune_k, merge_order)
        for part in chunked(cells, max(1, workers))
    ]
    scores = [row for part in parallel_map(_score_cells, tasks, workers) for row in part]
    grid = pd.DataFrame(scores, columns=["alpha", "beta", "ndcg"])

    best_alpha, best_beta, best_score = scores[0]
    for alpha, beta, score in scores[1:]:
        if score > best_score:
            best_alpha, best_beta, best_score = alpha, beta, score
    logger.info("Tuned alpha=%.2f beta=%.2f (NDCG@%d %.4f)", best_alpha, best_beta, config.tune_k, best_score)
    return config.model_copy(update={"alpha": best_alpha, "beta": best_beta}), grid
