"""
Synthetic shoppers with known per-(user, category) repurchase rhythms.

Each user buys a random subset of categories. For every such pair a mean gap is
drawn from a gamma distribution. Each trip buys the pair's staple item, or now and
then a single unit of another item; the next trip comes after a gamma-distributed
gap whose mean is the units bought divided by the pair's consumption rate. Same-day
purchases of a user share one order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import SynthConfig
from engine.ingest import write_transactions
from engine.models import CANONICAL_COLUMNS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticCorpus:
    transactions: pd.DataFrame
    truth: pd.DataFrame


def _popularity(n_items: int, skew: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, n_items + 1) ** skew
    return weights / weights.sum()


def _purchase_times(rng: np.random.Generator, mean_gap: float, rate: float, loyalty: float, config: SynthConfig):
    """Purchase times in [0, horizon), units bought at each, and whether the trip left the staple."""
    horizon = config.horizon_days
    times: list[np.ndarray] = []
    quantities: list[np.ndarray] = []
    switched: list[np.ndarray] = []
    start = rng.uniform(0.0, mean_gap)
    batch = int(3 * horizon / mean_gap) + 20
    while start < horizon:
        away = rng.random(batch) >= loyalty
        q = np.where(away, 1, 1 + rng.poisson(config.quantity_mean - 1.0, size=batch))
        gaps = rng.gamma(config.gap_shape, (q / rate) / config.gap_shape)
        t = start + np.concatenate([[0.0], np.cumsum(gaps[:-1])])
        inside = t < horizon
        times.append(t[inside])
        quantities.append(q[inside])
        switched.append(away[inside])
        start = t[-1] + gaps[-1]
    return np.concatenate(times), np.concatenate(quantities).astype(float), np.concatenate(switched)


def _trip_items(
    rng: np.random.Generator, preference: np.ndarray, popularity: np.ndarray, switched: np.ndarray
) -> np.ndarray:
    """Staple on regular trips, another item drawn from the preference otherwise."""
    n_items = len(preference)
    staple = int(rng.choice(n_items, p=preference))
    items = np.full(len(switched), staple)
    if n_items == 1 or not switched.any():
        return items
    others = np.delete(np.arange(n_items), staple)
    weights = preference[others]
    if weights.sum() <= 0:
        weights = popularity[others]
    items[switched] = rng.choice(others, size=int(switched.sum()), p=weights / weights.sum())
    return items


def generate_synthetic(config: SynthConfig | None = None, seed: int = 42) -> SyntheticCorpus:
    """
    Simulate a transaction log and its ground truth.

    Returns:
        Canonical transactions, and truth rows user_id, category_id, mean_gap,
        rate, n_events per simulated pair
    """
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)
    popularity = _popularity(config.items_per_category, config.popularity_skew)
    categories = [f"c{c:03d}" for c in range(config.n_categories)]
    loyalty = 1.0 if config.items_per_category == 1 else config.item_loyalty
    # expected units per trip; keeps the pair's mean gap at the drawn value
    units = loyalty * config.quantity_mean + (1.0 - loyalty)

    lines: list[pd.DataFrame] = []
    truth_rows: list[tuple] = []
    for u in range(config.n_users):
        user = f"u{u:05d}"
        participation = config.category_participation or rng.uniform(0.2, 1.0)
        chosen = np.flatnonzero(rng.random(config.n_categories) < participation)
        if len(chosen) == 0:
            chosen = np.array([rng.integers(config.n_categories)])

        for c in chosen:
            mean_gap = rng.gamma(config.mean_gap_shape, config.mean_gap_days / config.mean_gap_shape)
            mean_gap = max(mean_gap, 1.0)
            rate = units / mean_gap
            preference = rng.dirichlet(config.preference_concentration * popularity * config.items_per_category)

            times, quantities, switched = _purchase_times(rng, mean_gap, rate, loyalty, config)
            truth_rows.append((user, categories[c], mean_gap, rate, len(times)))
            if len(times) == 0:
                continue
            days = np.floor(times).astype(int)
            items = _trip_items(rng, preference, popularity, switched)
            extra = rng.random(len(times)) < config.multi_item_prob
            second = rng.choice(config.items_per_category, size=len(times), p=preference)
            extra &= second != items

            lines.append(
                pd.DataFrame(
                    {
                        "user_id": user,
                        "day": np.concatenate([days, days[extra]]),
                        "item": np.concatenate([items, second[extra]]),
                        "category_id": categories[c],
                        "quantity": np.concatenate([quantities, np.ones(int(extra.sum()))]),
                    }
                )
            )

    truth = pd.DataFrame(truth_rows, columns=["user_id", "category_id", "mean_gap", "rate", "n_events"])
    if not lines:
        return SyntheticCorpus(pd.DataFrame(columns=list(CANONICAL_COLUMNS)), truth)

    raw = pd.concat(lines, ignore_index=True)
    raw["item_id"] = raw["category_id"] + "-i" + raw["item"].map("{:03d}".format)
    raw["order_id"] = "o" + raw["user_id"].str[1:] + "-" + raw["day"].map("{:04d}".format)
    start = pd.Timestamp(config.start_date)
    raw["order_date"] = start + pd.to_timedelta(raw["day"], unit="D")

    transactions = (
        raw.groupby(["user_id", "order_id", "order_date", "item_id", "category_id"], sort=True)["quantity"]
        .sum()
        .reset_index()
    )
    transactions = transactions.sort_values(["user_id", "order_date", "order_id", "item_id"], kind="mergesort")
    transactions = transactions.loc[:, list(CANONICAL_COLUMNS)].reset_index(drop=True)
    logger.info(
        "Generated %d lines for %d users over %s..%s",
        len(transactions),
        config.n_users,
        config.start_date,
        config.start_date + timedelta(days=config.horizon_days - 1),
    )
    return SyntheticCorpus(transactions=transactions, truth=truth)


def write_synthetic(corpus: SyntheticCorpus, out_dir: Path) -> tuple[Path, Path]:
    """Write transactions.csv and truth.csv into `out_dir`."""
    out_dir = Path(out_dir)
    transactions_path = write_transactions(corpus.transactions, out_dir / "transactions.csv")
    truth_path = out_dir / "truth.csv"
    corpus.truth.to_csv(truth_path, index=False, lineterminator="\n", float_format="%.17g")
    return transactions_path, truth_path
