"""
Transaction ingest: parse logs, organize histories, split feature/label periods, build labels.
"""

from __future__ import annotations

import logging
from pathlib import Path

import duckdb
import pandas as pd

from config.settings import ColumnConfig, SplitConfig
from engine.errors import IngestError, SplitError
from engine.models import CANONICAL_COLUMNS, Histories, LabelSet, SplitResult, TransactionLog

logger = logging.getLogger(__name__)

# Validation and duplicate aggregation run in DuckDB over the raw string table.
_CLEAN_SQL = """
WITH typed AS (
    SELECT
        row_no,
        trim(user_id) AS user_id,
        trim(order_id) AS order_id,
        TRY_CAST(trim(order_date) AS DATE) AS order_date,
        trim(item_id) AS item_id,
        trim(category_id) AS category_id,
        TRY_CAST(trim(quantity) AS DOUBLE) AS quantity
    FROM raw_rows
),
valid AS (
    SELECT * FROM typed
    WHERE order_date IS NOT NULL
      AND quantity IS NOT NULL AND isfinite(quantity) AND quantity >= 0
      AND user_id <> '' AND order_id <> '' AND item_id <> '' AND category_id <> ''
)
SELECT
    user_id,
    order_id,
    arg_min(order_date, row_no) AS order_date,
    item_id,
    arg_min(category_id, row_no) AS category_id,
    sum(quantity) AS quantity,
    min(row_no) AS first_row,
    (SELECT count(*) FROM valid) AS n_valid
FROM valid
GROUP BY user_id, order_id, item_id
ORDER BY first_row
"""


def parse_transactions(path: Path, columns: ColumnConfig | None = None, max_reject_fraction: float = 0.5) -> TransactionLog:
    """
    Parse a transaction CSV into canonical records.

    Args:
        path: CSV file with a header row
        columns: mapping from canonical names to the file's column names
        max_reject_fraction: abort when more rows than this share fail validation

    Returns:
        TransactionLog with records in file order and the rejected-row count
    """
    columns = columns or ColumnConfig()
    path = Path(path)
    if not path.exists():
        raise IngestError(f"transaction file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise IngestError(f"transaction file has no header row: {path}") from e

    mapping = {
        "user_id": columns.user,
        "order_id": columns.order,
        "order_date": columns.date,
        "item_id": columns.item,
        "category_id": columns.category,
        "quantity": columns.quantity,
    }
    missing = [source for source in mapping.values() if source not in raw.columns]
    if missing:
        raise IngestError(f"{path}: missing required column(s) {', '.join(missing)}")

    raw_rows = pd.DataFrame({canonical: raw[source] for canonical, source in mapping.items()})
    raw_rows.insert(0, "row_no", range(len(raw_rows)))

    conn = duckdb.connect()
    try:
        conn.register("raw_rows", raw_rows)
        cleaned = conn.execute(_CLEAN_SQL).df()
    finally:
        conn.close()

    n_rows = len(raw_rows)
    n_valid = int(cleaned["n_valid"].iloc[0]) if len(cleaned) else 0
    n_rejected = n_rows - n_valid
    if n_rows and n_rejected / n_rows > max_reject_fraction:
        raise IngestError(
            f"{path}: {n_rejected} of {n_rows} rows rejected (unparseable dates or negative quantities); "
            "check the column mapping"
        )
    if n_rejected:
        logger.warning("Rejected %d of %d rows in %s", n_rejected, n_rows, path)

    frame = cleaned.loc[:, list(CANONICAL_COLUMNS)].reset_index(drop=True)
    frame["order_date"] = pd.to_datetime(frame["order_date"])
    frame["quantity"] = frame["quantity"].astype(float)
    logger.info("Parsed %d records from %s", len(frame), path)
    return TransactionLog(frame=frame, n_rows=n_rows, n_rejected=n_rejected)


def write_transactions(frame: pd.DataFrame, path: Path) -> Path:
    """Write records as a canonical CSV that `parse_transactions` reads back unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = frame.loc[:, list(CANONICAL_COLUMNS)].copy()
    out["order_date"] = pd.to_datetime(out["order_date"]).dt.strftime("%Y-%m-%d")
    out["quantity"] = [repr(float(q)) for q in out["quantity"]]
    out.to_csv(path, index=False, lineterminator="\n")
    return path


def build_histories(log: TransactionLog | pd.DataFrame) -> Histories:
    """Organize records per user into date-ordered baskets."""
    frame = log.frame if isinstance(log, TransactionLog) else log
    return Histories.from_frame(frame)


def read_histories(path: Path) -> Histories:
    """Load histories from a canonical CSV stage artifact."""
    frame = pd.read_csv(
        path,
        dtype={"user_id": str, "order_id": str, "item_id": str, "category_id": str, "quantity": float},
        parse_dates=["order_date"],
        keep_default_na=False,
    )
    return build_histories(frame)


def _engaged_users(feature: pd.DataFrame, threshold: int) -> set[str]:
    counts = feature.groupby("user_id")["category_id"].nunique()
    return set(counts[counts > threshold].index)


def temporal_split(histories: Histories, config: SplitConfig | None = None) -> SplitResult:
    """
    Split histories into the feature period and the label window.

    Args:
        histories: per-user histories of the whole corpus
        config: label window, history length, engaged-user and protocol options

    Returns:
        SplitResult with feature/label histories and the split date
    """
    config = config or SplitConfig()
    frame = histories.frame
    if frame.empty:
        raise SplitError("cannot split an empty corpus")

    max_date = frame["order_date"].max()
    if config.protocol == "last_basket":
        user_split = frame.groupby("user_id")["order_date"].max()
    else:
        split_date = max_date - pd.Timedelta(days=config.label_window_days - 1)
        user_split = pd.Series(split_date, index=pd.Index(sorted(frame["user_id"].unique()), name="user_id"))

    row_split = frame["user_id"].map(user_split)
    history_start = max_date - pd.Timedelta(days=config.history_days)
    is_feature = (frame["order_date"] < row_split) & (frame["order_date"] >= history_start)
    is_label = frame["order_date"] >= row_split

    feature = frame[is_feature]
    label = frame[is_label]
    if feature.empty:
        raise SplitError(
            f"all {len(frame)} records fall inside the label window; shorten split.label_window_days"
        )

    retained = set(feature["user_id"].unique())
    if config.engaged_only:
        retained &= _engaged_users(feature, config.engaged_category_threshold)
        logger.info(
            "Engaged-only split keeps %d users (> %d categories)", len(retained), config.engaged_category_threshold
        )
        if not retained:
            raise SplitError("no user exceeds split.engaged_category_threshold")

    feature = feature[feature["user_id"].isin(retained)]
    label = label[label["user_id"].isin(retained)]
    user_split = user_split[user_split.index.isin(retained)].sort_index()

    split_day = user_split.max().date()
    logger.info(
        "Split at %s: %d feature rows, %d label rows, %d users",
        split_day,
        len(feature),
        len(label),
        len(retained),
    )
    return SplitResult(
        feature=Histories(feature.reset_index(drop=True)),
        label=Histories(label.reset_index(drop=True)),
        split_date=split_day,
        user_split_dates=user_split,
    )


def build_labels(split: SplitResult) -> LabelSet:
    """
    Label every (user, category) bought in the feature period.

    A row is 1 when the user bought any item of the category in the label window.
    """
    pairs = split.feature.frame[["user_id", "category_id"]].drop_duplicates()
    bought = split.label.frame[["user_id", "category_id"]].drop_duplicates()
    bought = bought.assign(label=1)
    labels = pairs.merge(bought, on=["user_id", "category_id"], how="left")
    labels["label"] = labels["label"].fillna(0).astype(int)
    labels = labels.sort_values(["user_id", "category_id"]).reset_index(drop=True)
    logger.info("Built %d labels (%d positive)", len(labels), int(labels["label"].sum()))
    return LabelSet(frame=labels, split_date=split.split_date)


def build_item_truth(split: SplitResult) -> dict[str, set[str]]:
    """Items each user bought in the label window and also before it (repeat purchases)."""
    before = split.feature.frame[["user_id", "item_id"]].drop_duplicates()
    after = split.label.frame[["user_id", "item_id"]].drop_duplicates()
    repeats = before.merge(after, on=["user_id", "item_id"])
    return {user: set(group["item_id"]) for user, group in repeats.groupby("user_id")}


def build_category_truth(labels: LabelSet) -> dict[str, set[str]]:
    positives = labels.frame[labels.frame["label"] == 1]
    return {user: set(group["category_id"]) for user, group in positives.groupby("user_id")}

