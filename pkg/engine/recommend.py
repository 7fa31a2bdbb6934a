"""
Merge PC category ranks with IC item ranks, apply deployment filters, emit top-K lists.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import pandas as pd

from config.settings import FilterConfig
from engine.models import ITEM_TIE_ASCENDING, ITEM_TIE_COLUMNS, Histories, RankedRecommendation

logger = logging.getLogger(__name__)

OUTPUT_COLUMNS = ["user_id", "rank", "item_id", "category_id", "rk_pc", "rk_ic", "pc_score"]


def _rerank(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy()
    frame["rank"] = frame.groupby("user_id", sort=False).cumcount() + 1
    return frame.reset_index(drop=True)


def merge_pc_ic(pc_ranks: pd.DataFrame, ic_ranks: pd.DataFrame, order: str = "round_robin") -> pd.DataFrame:
    """
    Interleave each user's categories into one ranked item list.

    round_robin sorts by (IR, Rk_PC): every category's first items, then second
    items, and so on. category_first sorts by (Rk_PC, IR). Remaining ties follow
    the item tie chain.

    Args:
        pc_ranks: user_id, category_id, pc_score, rk_pc
        ic_ranks: ranked items with user_id, category_id, item_id, ir and the tie columns
        order: round_robin or category_first

    Returns:
        Frame with user_id, rank, item_id, category_id, rk_pc, rk_ic, pc_score
    """
    merged = ic_ranks.merge(
        pc_ranks[["user_id", "category_id", "pc_score", "rk_pc"]], on=["user_id", "category_id"], how="inner"
    )
    dropped = len(ic_ranks) - len(merged)
    if dropped:
        logger.warning("%d ranked items have no PC-ranked category and were dropped", dropped)

    primary = ["ir", "rk_pc"] if order == "round_robin" else ["rk_pc", "ir"]
    merged = merged.sort_values(
        ["user_id"] + primary + list(ITEM_TIE_COLUMNS),
        ascending=[True, True, True] + list(ITEM_TIE_ASCENDING),
        kind="mergesort",
    )
    merged = merged.rename(columns={"ir": "rk_ic"})
    return _rerank(merged)[OUTPUT_COLUMNS]


def item_repurchase_rates(feature: Histories) -> pd.Series:
    """Share of each item's buyers who bought it in at least two baskets (corpus-wide)."""
    counts = feature.frame.groupby(["item_id", "user_id"]).size()
    repeat = (counts >= 2).groupby(level="item_id").mean()
    return repeat.rename("repurchase_rate")


def item_recent_counts(feature: Histories, reference: pd.Series, months: int = 6) -> pd.DataFrame:
    """Baskets containing each (user, item) in the `months` before the user's reference date."""
    frame = feature.frame
    ref = frame["user_id"].map(reference)
    cutoff = ref - pd.DateOffset(months=months)
    recent = frame[(frame["order_date"] > cutoff) & (frame["order_date"] <= ref)]
    counts = recent.groupby(["user_id", "item_id"]).size().rename("recent_count").reset_index()
    return counts


def apply_filters(
    recommendations: pd.DataFrame,
    config: FilterConfig,
    recent_counts: pd.DataFrame,
    repurchase_rates: pd.Series,
) -> pd.DataFrame:
    """
    Drop items bought fewer than `min_item_purchases` times in the lookback, items
    below the repurchase-rate threshold, and excluded categories, then close rank gaps.
    """
    filtered = recommendations.merge(recent_counts, on=["user_id", "item_id"], how="left")
    filtered["recent_count"] = filtered["recent_count"].fillna(0)
    keep = filtered["recent_count"] >= config.min_item_purchases
    if config.repurchase_rate_threshold > 0:
        rates = filtered["item_id"].map(repurchase_rates).fillna(0.0)
        keep &= rates >= config.repurchase_rate_threshold
    if config.excluded_category_ids:
        keep &= ~filtered["category_id"].isin(config.excluded_category_ids)

    survivors = filtered[keep]
    logger.debug("Filters kept %d of %d recommendations", len(survivors), len(filtered))
    return _rerank(survivors)[OUTPUT_COLUMNS]


def top_k(recommendations: pd.DataFrame, k: int) -> pd.DataFrame:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    return recommendations[recommendations["rank"] <= k].reset_index(drop=True)


def recommendation_lists(recommendations: pd.DataFrame) -> dict[str, list[str]]:
    """Item ids per user in rank order."""
    ordered = recommendations.sort_values(["user_id", "rank"], kind="mergesort")
    return {user: group["item_id"].tolist() for user, group in ordered.groupby("user_id", sort=False)}


def write_recommendations(recommendations: pd.DataFrame, path: Path, output_format: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = recommendations[OUTPUT_COLUMNS]
    if output_format == "jsonl":
        with path.open("w", encoding="utf-8") as handle:
            for record in rows.to_dict(orient="records"):
                line = RankedRecommendation(**record).model_dump()
                handle.write(json.dumps(line, sort_keys=False) + "\n")
    else:
        rows.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    logger.info("Wrote %d recommendations to %s", len(rows), path)
    return path
