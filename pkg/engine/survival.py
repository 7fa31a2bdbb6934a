"""
Per-category life tables over inter-purchase gaps and the six survival features.
"""

from __future__ import annotations

import logging
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from engine.models import Histories, LifeTable, SurvivalCurves

logger = logging.getLogger(__name__)

SURVIVAL_FEATURES = ("hazard", "cum_hazard", "survival", "cum_survival", "norm_risk", "norm_event")


def purchase_dates(feature: Histories) -> pd.DataFrame:
    """Distinct (user_id, category_id, order_date) purchase days, date-ordered per pair."""
    dates = feature.frame[["user_id", "category_id", "order_date"]].drop_duplicates()
    return dates.sort_values(["user_id", "category_id", "order_date"], kind="mergesort").reset_index(drop=True)


def _reference_per_row(user_ids: pd.Series, reference: date | pd.Timestamp | pd.Series) -> pd.Series:
    if isinstance(reference, pd.Series):
        return user_ids.map(reference)
    return pd.Series(pd.Timestamp(reference), index=user_ids.index)


def gap_observations(feature: Histories, reference: date | pd.Timestamp | pd.Series) -> pd.DataFrame:
    """
    Life-table observations for every category.

    Each consecutive pair of purchase days of a (user, category) is an event at its
    gap; the open interval from the last purchase to `reference` is censored.

    Args:
        feature: feature-period histories
        reference: censoring horizon, one date or a per-user Series

    Returns:
        Frame with category_id, k (days) and event (bool)
    """
    dates = purchase_dates(feature)
    previous = dates.groupby(["user_id", "category_id"], sort=False)["order_date"].shift()
    has_previous = previous.notna()
    events = pd.DataFrame(
        {
            "category_id": dates.loc[has_previous, "category_id"],
            "k": (dates.loc[has_previous, "order_date"] - previous[has_previous]).dt.days,
            "event": True,
        }
    )

    last = dates.groupby(["user_id", "category_id"], sort=False)["order_date"].max().reset_index()
    horizon = _reference_per_row(last["user_id"], reference)
    censored = pd.DataFrame(
        {
            "category_id": last["category_id"],
            "k": (horizon - last["order_date"]).dt.days.clip(lower=0),
            "event": False,
        }
    )
    observations = pd.concat([events, censored], ignore_index=True)
    observations["k"] = observations["k"].astype(int)
    return observations


def life_table_from_observations(category_id: str, k: np.ndarray, event: np.ndarray) -> LifeTable:
    """Tabulate (duration, event) observations; each stays at risk through its own day."""
    size = int(k.max()) + 1 if len(k) else 1
    n_event = np.bincount(k[event], minlength=size).astype(np.int64)
    n_censor = np.bincount(k[~event], minlength=size).astype(np.int64)
    removed = np.cumsum(n_event + n_censor)
    n_risk = len(k) - np.concatenate([[0], removed[:-1]])
    return LifeTable(category_id=category_id, n_risk=n_risk.astype(np.int64), n_event=n_event, n_censor=n_censor)


def build_life_table(
    feature: Histories, category_id: str, observation_end: date | pd.Timestamp | pd.Series
) -> LifeTable:
    """
    Build the life table of one category.

    Args:
        feature: feature-period histories
        category_id: category to tabulate
        observation_end: censoring horizon (split date minus one day), or per-user Series

    Returns:
        LifeTable over days k = 0..K_max
    """
    subset = Histories(feature.frame[feature.frame["category_id"] == category_id])
    if subset.empty:
        raise KeyError(f"category {category_id!r} has no purchases in the feature period")
    observations = gap_observations(subset, observation_end)
    return life_table_from_observations(
        category_id, observations["k"].to_numpy(), observations["event"].to_numpy(dtype=bool)
    )


def build_life_tables(feature: Histories, observation_end: date | pd.Timestamp | pd.Series) -> dict[str, LifeTable]:
    """Life tables of every category present in the feature period."""
    observations = gap_observations(feature, observation_end)
    tables = {}
    for category_id, group in observations.groupby("category_id", sort=True):
        tables[str(category_id)] = life_table_from_observations(
            str(category_id), group["k"].to_numpy(), group["event"].to_numpy(dtype=bool)
        )
    logger.info("Built %d life tables from %d observations", len(tables), len(observations))
    return tables


def compute_curves(table: LifeTable, min_observations: int = 2, window: int = 3) -> SurvivalCurves:
    """
    Derive hazard, survival and normalized risk/event curves from a life table.

    Tables with fewer than `min_observations` observations get the trivial curves.
    """
    n_total = table.n_total
    if n_total < min_observations:
        return SurvivalCurves.trivial()

    n_risk = table.n_risk.astype(float)
    n_event = table.n_event.astype(float)

    hazard = np.divide(n_event, n_risk, out=np.zeros_like(n_event), where=n_risk > 0)
    cum_hazard = np.cumsum(hazard)
    survival = np.exp(-cum_hazard)

    # Nonnegative orientation of the +/- window difference: S(k - w) - S(k + w).
    k = np.arange(len(survival))
    lower = np.maximum(k - window, 0)
    upper = np.minimum(k + window, len(survival) - 1)
    cum_survival = survival[lower] - survival[upper]

    return SurvivalCurves(
        hazard=hazard,
        cum_hazard=cum_hazard,
        survival=survival,
        cum_survival=cum_survival,
        norm_risk=n_risk / n_risk[0],
        norm_event=n_event / n_total,
    )


def survival_features(curves: SurvivalCurves, k: int) -> tuple[float, float, float, float, float, float]:
    """The six curve values at day k; days past K_max read the last day."""
    if k < 0:
        raise ValueError(f"days since last purchase must be >= 0, got {k}")
    row = sample_curves(curves, np.array([k]))[0]
    return tuple(float(v) for v in row)


def sample_curves(curves: SurvivalCurves, ks: np.ndarray) -> np.ndarray:
    """Vectorized `survival_features`: one row of six values per requested day."""
    index = np.clip(np.asarray(ks, dtype=np.int64), 0, curves.k_max)
    return np.column_stack(
        [
            curves.hazard[index],
            curves.cum_hazard[index],
            curves.survival[index],
            curves.cum_survival[index],
            curves.norm_risk[index],
            curves.norm_event[index],
        ]
    )


def dump_life_tables(tables: dict[str, LifeTable], path: Path) -> Path:
    """Write `category_id,k,n_risk,n_event,n_censor` rows for audit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = [tables[c].to_frame() for c in sorted(tables)]
    if frames:
        out = pd.concat(frames, ignore_index=True)
    else:
        out = pd.DataFrame(columns=["category_id", "k", "n_risk", "n_event", "n_censor"])
    out.to_csv(path, index=False, lineterminator="\n")
    return path


def load_life_tables(path: Path) -> dict[str, LifeTable]:
    frame = pd.read_csv(path, dtype={"category_id": str})
    tables = {}
    for category_id, group in frame.groupby("category_id", sort=True):
        group = group.sort_values("k")
        tables[str(category_id)] = LifeTable(
            category_id=str(category_id),
            n_risk=group["n_risk"].to_numpy(dtype=np.int64),
            n_event=group["n_event"].to_numpy(dtype=np.int64),
            n_censor=group["n_censor"].to_numpy(dtype=np.int64),
        )
    return tables
