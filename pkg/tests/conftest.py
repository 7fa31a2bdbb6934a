"""
Pytest configuration and fixtures.
"""

from pathlib import Path

import pandas as pd
import pytest

from config.settings import RunConfig, load_settings
from engine.ingest import build_histories
from engine.synth import generate_synthetic


@pytest.fixture
def test_settings(tmp_path):
    """Settings with a temporary work directory and a short training schedule."""
    return load_settings(
        overrides={
            "paths.work_dir": str(tmp_path / "work"),
            "paths.synth_dir": str(tmp_path / "data"),
            "paths.transactions": str(tmp_path / "data" / "transactions.csv"),
            "train.epochs": 8,
            "train.batch_size": 64,
            "train.learning_rate": 0.01,
            "ic.grid_step": 0.5,
            "eval.ks": "3,10",
        }
    )


@pytest.fixture
def small_synth_settings(test_settings: RunConfig) -> RunConfig:
    return test_settings.with_overrides(
        {
            "synth.n_users": 60,
            "synth.n_categories": 6,
            "synth.items_per_category": 4,
            "synth.horizon_days": 150,
            "synth.mean_gap_days": 10,
            "synth.category_participation": 0.7,
            "split.history_days": 140,
            "split.engaged_category_threshold": 3,
        }
    )


@pytest.fixture
def small_corpus(small_synth_settings):
    return generate_synthetic(small_synth_settings.synth, small_synth_settings.seed)


@pytest.fixture
def small_histories(small_corpus):
    return build_histories(small_corpus.transactions)


def _rows(rows):
    return pd.DataFrame(rows, columns=["user_id", "order_id", "order_date", "item_id", "category_id", "quantity"])


@pytest.fixture
def tiny_frame():
    """Two users, two categories, ten days; the last day is 2024-01-10."""
    frame = _rows(
        [
            ("u1", "o1", "2024-01-01", "milk", "dairy", 1.0),
            ("u1", "o1", "2024-01-01", "bread", "bakery", 2.0),
            ("u1", "o2", "2024-01-04", "milk", "dairy", 2.0),
            ("u1", "o3", "2024-01-08", "milk", "dairy", 1.0),
            ("u1", "o3", "2024-01-08", "cheese", "dairy", 1.0),
            ("u1", "o4", "2024-01-10", "milk", "dairy", 1.0),
            ("u2", "o5", "2024-01-02", "bread", "bakery", 1.0),
            ("u2", "o6", "2024-01-06", "bread", "bakery", 1.0),
            ("u2", "o7", "2024-01-09", "milk", "dairy", 3.0),
        ]
    )
    frame["order_date"] = pd.to_datetime(frame["order_date"])
    return frame


@pytest.fixture
def tiny_histories(tiny_frame):
    return build_histories(tiny_frame)


@pytest.fixture
def transactions_csv(tmp_path) -> Path:
    """A raw CSV with a duplicate line and one unparseable row."""
    path = tmp_path / "transactions.csv"
    path.write_text(
        "user_id,order_id,order_date,item_id,category_id,quantity\n"
        "u1,o1,2024-01-01,milk,dairy,1\n"
        "u1,o1,2024-01-01,bread,bakery,2\n"
        "u1,o1,2024-01-01,milk,dairy,1.5\n"
        "u1,o2,not-a-date,milk,dairy,1\n"
        "u2,o3,2024-01-03,eggs,dairy,12\n",
        encoding="utf-8",
    )
    return path
