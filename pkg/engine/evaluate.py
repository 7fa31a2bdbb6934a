"""
Ranking metrics, user folds and the TopSell / FBought / RCP baselines.
"""

from __future__ import annotations

import hashlib
import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from engine.errors import EvaluationError
from engine.models import FoldMetrics, Histories
from engine.recommend import item_repurchase_rates

logger = logging.getLogger(__name__)

BASELINES = ("TopSell", "FBought", "RCP")
MIN_CV_USERS = 50


def recall_at_k(recommended: Sequence[str], truth: set[str], k: int) -> float:
    """|top-K ∩ truth| / |truth|; 0 for an empty truth set."""
    if not truth:
        return 0.0
    hits = len(set(recommended[:k]) & truth)
    return hits / len(truth)


def ndcg_at_k(recommended: Sequence[str], truth: set[str], k: int) -> float:
    """Binary-relevance NDCG over the first K positions."""
    if not truth:
        return 0.0
    dcg = sum(1.0 / math.log2(position + 2) for position, item in enumerate(recommended[:k]) if item in truth)
    ideal = sum(1.0 / math.log2(position + 2) for position in range(min(len(truth), k)))
    return dcg / ideal


def score_lists(
    lists: Mapping[str, Sequence[str]],
    truth: Mapping[str, set[str]],
    users: Iterable[str],
    ks: Sequence[int],
) -> tuple[dict[str, float], int]:
    """
    Mean recall@K and NDCG@K over users with a non-empty truth set.

    Users without a list count as an empty recommendation.

    Returns:
        (metric name -> mean, number of users averaged)
    """
    scored = [u for u in users if truth.get(u)]
    if not scored:
        return {}, 0
    metrics: dict[str, float] = {}
    for k in ks:
        metrics[f"recall@{k}"] = float(np.mean([recall_at_k(lists.get(u, []), truth[u], k) for u in scored]))
        metrics[f"ndcg@{k}"] = float(np.mean([ndcg_at_k(lists.get(u, []), truth[u], k) for u in scored]))
    return metrics, len(scored)


def fold_metrics(
    algorithm: str,
    fold: int,
    lists: Mapping[str, Sequence[str]],
    truth: Mapping[str, set[str]],
    users: Iterable[str],
    ks: Sequence[int],
    segment: str = "all",
) -> FoldMetrics:
    metrics, n_users = score_lists(lists, truth, users, ks)
    return FoldMetrics(fold=fold, algorithm=algorithm, segment=segment, n_users=n_users, metrics=metrics)


def _hash_key(seed: int, salt: str, user: str) -> str:
    return hashlib.sha256(f"{seed}:{salt}{user}".encode("utf-8")).hexdigest()


def hash_order(users: Iterable[str], seed: int, salt: str = "") -> list[str]:
    """Users sorted by a seeded hash; independent of input order."""
    return sorted(set(users), key=lambda u: (_hash_key(seed, salt, u), u))


def assign_folds(users: Iterable[str], folds: int = 5, seed: int = 0) -> dict[str, int]:
    """
    Partition users into `folds` test folds of sizes differing by at most one.

    Raises:
        EvaluationError: fewer than 50 users
    """
    ordered = hash_order(users, seed)
    if len(ordered) < MIN_CV_USERS:
        raise EvaluationError(f"cross-validation needs at least {MIN_CV_USERS} users, got {len(ordered)}")
    return {user: position % folds for position, user in enumerate(ordered)}


def split_validation(train_users: Iterable[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Hold out `fraction` of the training users (at least one) for validation."""
    ordered = hash_order(train_users, seed, salt="validation:")
    n_validation = min(max(1, int(round(fraction * len(ordered)))), max(len(ordered) - 1, 0))
    validation = sorted(ordered[:n_validation])
    train = sorted(ordered[n_validation:])
    return train, validation


def item_purchase_counts(feature: Histories) -> pd.DataFrame:
    """Baskets containing each (user, item) in the feature period."""
    return feature.frame.groupby(["user_id", "item_id"]).size().rename("count").reset_index()


def _ranked_lists(scored: pd.DataFrame) -> dict[str, list[str]]:
    ordered = scored.sort_values(["user_id", "score", "item_id"], ascending=[True, False, True], kind="mergesort")
    return {user: group["item_id"].tolist() for user, group in ordered.groupby("user_id", sort=False)}


def run_baseline(name: str, feature: Histories, users: Iterable[str] | None = None) -> dict[str, list[str]]:
    """
    Ranked previously-bought items per user for one baseline.

    TopSell orders by corpus purchase count, FBought by the user's own count,
    RCP by the item's repeat-customer probability. Ties go to item_id.

    Raises:
        EvaluationError: unknown baseline name
    """
    if name not in BASELINES:
        raise EvaluationError(f"unknown baseline {name!r}; expected one of {', '.join(BASELINES)}")
    counts = item_purchase_counts(feature)
    if users is not None:
        wanted = set(users)
        scored = counts[counts["user_id"].isin(wanted)].copy()
    else:
        scored = counts.copy()

    if name == "TopSell":
        popularity = counts.groupby("item_id")["count"].sum()
        scored["score"] = scored["item_id"].map(popularity).astype(float)
    elif name == "FBought":
        scored["score"] = scored["count"].astype(float)
    else:
        scored["score"] = scored["item_id"].map(item_repurchase_rates(feature)).astype(float)
    return _ranked_lists(scored)


def top_sell_order(feature: Histories) -> list[str]:
    """Global TopSell list before per-user restriction."""
    popularity = item_purchase_counts(feature).groupby("item_id")["count"].sum().reset_index()
    popularity = popularity.sort_values(["count", "item_id"], ascending=[False, True], kind="mergesort")
    return popularity["item_id"].tolist()
