"""
Domain types shared by the engine stages.

Bulk data (transactions, histories, feature rows) travels as pandas frames
wrapped in small frozen containers; numeric model state lives in numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

CANONICAL_COLUMNS = ("user_id", "order_id", "order_date", "item_id", "category_id", "quantity")

# Frozen input order of the PC model; persisted matrices and models carry the version.
FEATURE_COLUMNS = (
    "hazard",
    "cum_hazard",
    "survival",
    "cum_survival",
    "norm_risk",
    "norm_event",
    "arima_date",
    "arima_rate",
    "num_purchases",
    "trips_since_last",
    "days_since_last",
)
FEATURE_VERSION = "pcic-features-v1"

# Tie chain shared by every item ranking: more purchases, then more recent, then item id.
ITEM_TIE_COLUMNS = ("freq", "days_since_purchase", "item_id")
ITEM_TIE_ASCENDING = (False, True, True)


class TransactionRecord(BaseModel):
    """One purchase line of the transaction log."""

    model_config = ConfigDict(frozen=True)

    user_id: str = Field(..., min_length=1)
    order_id: str = Field(..., min_length=1)
    order_date: date
    item_id: str = Field(..., min_length=1)
    category_id: str = Field(..., min_length=1)
    quantity: float = Field(..., ge=0)


@dataclass(frozen=True)
class TransactionLog:
    """Parsed transactions in file order plus the rejected-row count."""

    frame: pd.DataFrame
    n_rows: int
    n_rejected: int

    def __len__(self) -> int:
        return len(self.frame)

    def records(self) -> Iterator[TransactionRecord]:
        for row in self.frame.itertuples(index=False):
            yield TransactionRecord(
                user_id=row.user_id,
                order_id=row.order_id,
                order_date=row.order_date.date(),
                item_id=row.item_id,
                category_id=row.category_id,
                quantity=row.quantity,
            )


@dataclass(frozen=True)
class Basket:
    order_id: str
    order_date: date
    items: frozenset[tuple[str, str, float]]


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    baskets: tuple[Basket, ...]


@dataclass(frozen=True)
class Histories:
    """
    Per-user purchase histories.

    The frame holds the canonical columns sorted by (user_id, order_date, order_id);
    a basket is one (user_id, order_id) group.
    """

    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> Histories:
        ordered = frame.loc[:, list(CANONICAL_COLUMNS)].sort_values(
            ["user_id", "order_date", "order_id", "item_id"], kind="mergesort"
        )
        return cls(ordered.reset_index(drop=True))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def empty(self) -> bool:
        return self.frame.empty

    def users(self) -> list[str]:
        return sorted(self.frame["user_id"].unique().tolist())

    def max_date(self) -> pd.Timestamp:
        return self.frame["order_date"].max()

    def restrict(self, users: set[str] | list[str]) -> Histories:
        return Histories(self.frame[self.frame["user_id"].isin(set(users))].reset_index(drop=True))

    def basket_keys(self) -> pd.DataFrame:
        """One row per basket: user_id, order_id, order_date."""
        return (
            self.frame.groupby(["user_id", "order_id"], sort=False)["order_date"]
            .min()
            .reset_index()
        )

    def user(self, user_id: str) -> UserHistory:
        rows = self.frame[self.frame["user_id"] == user_id]
        baskets = []
        for order_id, group in rows.groupby("order_id", sort=False):
            items = frozenset(zip(group["item_id"], group["category_id"], group["quantity"].astype(float)))
            baskets.append(Basket(str(order_id), group["order_date"].min().date(), items))
        baskets.sort(key=lambda basket: (basket.order_date, basket.order_id))
        return UserHistory(user_id, tuple(baskets))


@dataclass(frozen=True)
class SplitResult:
    """Feature/label partition of the corpus; `user_split_dates` maps user → first label day."""

    feature: Histories
    label: Histories
    split_date: date
    user_split_dates: pd.Series

    def reference_dates(self) -> pd.Series:
        """Last fully observed feature day per user (split date minus one day)."""
        return self.user_split_dates - pd.Timedelta(days=1)

    @property
    def observation_end(self) -> date:
        return self.split_date - timedelta(days=1)


@dataclass(frozen=True)
class LabelSet:
    """Rows (user_id, category_id, label) for every category bought before the split."""

    frame: pd.DataFrame
    split_date: date

    def __len__(self) -> int:
        return len(self.frame)

    def as_dict(self) -> dict[tuple[str, str], int]:
        return {
            (u, c): int(y)
            for u, c, y in zip(self.frame["user_id"], self.frame["category_id"], self.frame["label"])
        }


@dataclass(frozen=True)
class LifeTable:
    """Day-indexed risk/event/censor counts of one category's inter-purchase gaps."""

    category_id: str
    n_risk: np.ndarray
    n_event: np.ndarray
    n_censor: np.ndarray

    @property
    def n_total(self) -> int:
        return int(self.n_risk[0]) if len(self.n_risk) else 0

    @property
    def k_max(self) -> int:
        return len(self.n_risk) - 1

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "category_id": self.category_id,
                "k": np.arange(len(self.n_risk)),
                "n_risk": self.n_risk,
                "n_event": self.n_event,
                "n_censor": self.n_censor,
            }
        )


@dataclass(frozen=True)
class SurvivalCurves:
    hazard: np.ndarray
    cum_hazard: np.ndarray
    survival: np.ndarray
    cum_survival: np.ndarray
    norm_risk: np.ndarray
    norm_event: np.ndarray

    @classmethod
    def trivial(cls) -> SurvivalCurves:
        """Curves of a table without usable events: no hazard, everyone survives."""
        return cls(
            hazard=np.zeros(1),
            cum_hazard=np.zeros(1),
            survival=np.ones(1),
            cum_survival=np.zeros(1),
            norm_risk=np.ones(1),
            norm_event=np.zeros(1),
        )

    @property
    def k_max(self) -> int:
        return len(self.hazard) - 1


class ArimaOrder(NamedTuple):
    p: int
    d: int
    q: int = 0

    def __str__(self) -> str:
        return f"arima({self.p},{self.d},{self.q})"


@dataclass(frozen=True)
class ArimaFit:
    order: ArimaOrder
    ar_coefficients: tuple[float, ...]
    intercept: float
    residual_variance: float
    aic: float
    n_obs: int
    forecast: float


@dataclass(frozen=True)
class NormStats:
    """Per-feature z-score parameters, computed on training rows only."""

    mean: np.ndarray
    std: np.ndarray
    version: str = FEATURE_VERSION

    def to_text(self) -> str:
        lines = [f"version = {self.version}"]
        for name, mu, sd in zip(FEATURE_COLUMNS, self.mean, self.std):
            lines.append(f"mean.{name} = {float(mu)!r}")
            lines.append(f"std.{name} = {float(sd)!r}")
        return "\n".join(lines) + "\n"


@dataclass
class MlpParams:
    """Weights of the 11-10-5-2 PC network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
    SHAPES = {"w1": (10, 11), "b1": (10,), "w2": (5, 10), "b2": (5,), "w3": (2, 5), "b3": (2,)}

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def copy(self) -> MlpParams:
        return MlpParams(**{name: value.copy() for name, value in self.tensors().items()})

    def as_vector(self) -> np.ndarray:
        return np.concatenate([value.ravel() for value in self.tensors().values()])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> MlpParams:
        tensors, offset = {}, 0
        for name in cls.NAMES:
            shape = cls.SHAPES[name]
            size = int(np.prod(shape))
            tensors[name] = np.asarray(vector[offset : offset + size], dtype=float).reshape(shape)
            offset += size
        return cls(**tensors)

    @classmethod
    def zeros(cls) -> MlpParams:
        return cls(**{name: np.zeros(shape) for name, shape in cls.SHAPES.items()})


class RankedRecommendation(BaseModel):
    """One line of the final per-user list."""

    user_id: str
    rank: int = Field(..., ge=1)
    item_id: str
    category_id: str
    rk_pc: int = Field(..., ge=1)
    rk_ic: int = Field(..., ge=1)
    pc_score: float = Field(..., ge=0, le=1)


class FoldMetrics(BaseModel):
    fold: int
    algorithm: str
    segment: str = "all"
    n_users: int
    metrics: dict[str, float]


class MetricsReport(BaseModel):
    """Per-fold metric means; `summary` averages folds with their standard deviation."""

    folds: list[FoldMetrics] = Field(default_factory=list)
    label_window_days: int | None = None

    def summary(self) -> pd.DataFrame:
        rows = [
            {"algorithm": f.algorithm, "segment": f.segment, "fold": f.fold, "n_users": f.n_users, **f.metrics}
            for f in self.folds
        ]
        if not rows:
            return pd.DataFrame(columns=["algorithm", "segment", "metric", "mean", "std", "n_users"])
        frame = pd.DataFrame(rows)
        metric_columns = [c for c in frame.columns if c not in ("algorithm", "segment", "fold", "n_users")]
        long = frame.melt(
            id_vars=["algorithm", "segment", "fold", "n_users"], value_vars=metric_columns, var_name="metric"
        ).dropna(subset=["value"])
        grouped = long.groupby(["algorithm", "segment", "metric"], sort=False)
        summary = grouped["value"].agg(["mean", "std"]).reset_index()
        summary["std"] = summary["std"].fillna(0.0)
        users = long.groupby(["algorithm", "segment", "metric"], sort=False)["n_users"].sum().reset_index()
        return summary.merge(users, on=["algorithm", "segment", "metric"])

    def to_table(self, segment: str = "all") -> str:
        """Algorithm × metric grid of fold means, for the terminal."""
        summary = self.summary()
        summary = summary[summary["segment"] == segment]
        if summary.empty:
            return "(no metrics)"
        grid = summary.pivot(index="algorithm", columns="metric", values="mean")
        order = list(dict.fromkeys(summary["algorithm"]))
        columns = sorted(grid.columns, key=_metric_sort_key)
        return grid.loc[order, columns].to_string(float_format=lambda v: f"{v:.4f}", na_rep="-")


def _metric_sort_key(name: str) -> tuple[str, int]:
    metric, _, k = name.partition("@")
    return (metric, int(k) if k.isdigit() else 0)


@dataclass(frozen=True)
class FeatureBundle:
    """Everything featurization derives from one split, shared by training and evaluation."""

    split: SplitResult
    labels: LabelSet
    matrix: pd.DataFrame
    item_stats: pd.DataFrame
    item_truth: dict[str, set[str]]
    category_truth: dict[str, set[str]]
    repurchase_rates: pd.Series
    recent_counts: pd.DataFrame
    life_tables: dict[str, LifeTable] = field(default_factory=dict)
    forecasts: pd.DataFrame | None = None

    def engaged_users(self, threshold: int) -> set[str]:
        counts = self.split.feature.frame.groupby("user_id")["category_id"].nunique()
        return set(counts[counts > threshold].index)
