"""
Tests for transaction ingest, temporal splitting and labels.
"""

from datetime import date

import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config.settings import ColumnConfig, SplitConfig
from engine.errors import IngestError, SplitError
from engine.ingest import (
    build_histories,
    build_item_truth,
    build_labels,
    parse_transactions,
    read_histories,
    temporal_split,
    write_transactions,
)


class TestParseTransactions:
    """Test suite for CSV parsing."""

    def test_duplicates_are_summed_and_bad_rows_rejected(self, transactions_csv):
        """Test duplicate lines and rejected rows."""
        log = parse_transactions(transactions_csv)
        assert log.n_rows == 5
        assert log.n_rejected == 1
        assert len(log) == 3
        milk = log.frame[(log.frame["order_id"] == "o1") & (log.frame["item_id"] == "milk")]
        assert milk["quantity"].tolist() == [2.5]

    def test_file_order_kept(self, transactions_csv):
        """Test that records keep file order."""
        log = parse_transactions(transactions_csv)
        assert log.frame["item_id"].tolist() == ["milk", "bread", "eggs"]

    def test_records_are_typed(self, transactions_csv):
        """Test column types of parsed records."""
        first = next(parse_transactions(transactions_csv).records())
        assert first.order_date == date(2024, 1, 1)
        assert first.quantity == 2.5

    def test_missing_file(self, tmp_path):
        """Test a missing input file."""
        with pytest.raises(IngestError):
            parse_transactions(tmp_path / "nope.csv")

    def test_missing_column(self, tmp_path):
        """Test a file without a required column."""
        path = tmp_path / "bad.csv"
        path.write_text("user_id,order_id\nu1,o1\n", encoding="utf-8")
        with pytest.raises(IngestError, match="missing required column"):
            parse_transactions(path)

    def test_mostly_rejected_aborts(self, tmp_path):
        """Test the reject-fraction abort."""
        path = tmp_path / "bad.csv"
        path.write_text(
            "user_id,order_id,order_date,item_id,category_id,quantity\n"
            "u1,o1,01/02/2024,a,c,1\n"
            "u1,o2,01/03/2024,a,c,1\n"
            "u1,o3,2024-01-04,a,c,-1\n"
            "u1,o4,2024-01-05,a,c,1\n",
            encoding="utf-8",
        )
        with pytest.raises(IngestError, match="rejected"):
            parse_transactions(path)

    def test_column_mapping(self, tmp_path):
        """Test remapped column names."""
        path = tmp_path / "mapped.csv"
        path.write_text("cust,basket,day,sku,dept,units\nu1,o1,2024-02-01,a,c,2\n", encoding="utf-8")
        columns = ColumnConfig(user="cust", order="basket", date="day", item="sku", category="dept", quantity="units")
        log = parse_transactions(path, columns)
        assert log.frame.loc[0, "user_id"] == "u1"
        assert log.frame.loc[0, "quantity"] == 2.0

    def test_write_then_read_keeps_records(self, tmp_path, tiny_frame):
        """Test the canonical transaction file."""
        path = write_transactions(tiny_frame, tmp_path / "canonical.csv")
        histories = read_histories(path)
        expected = build_histories(tiny_frame)
        pd.testing.assert_frame_equal(histories.frame, expected.frame, check_dtype=False)


class TestHistories:
    """Test suite for per-user histories."""

    def test_baskets_are_date_ordered(self, tiny_histories):
        """Test basket ordering."""
        history = tiny_histories.user("u1")
        assert [b.order_id for b in history.baskets] == ["o1", "o2", "o3", "o4"]
        assert len(history.baskets[0].items) == 2

    def test_users_sorted(self, tiny_histories):
        """Test the user listing."""
        assert tiny_histories.users() == ["u1", "u2"]


class TestTemporalSplit:
    """Test suite for the feature/label split."""

    def test_window_split_date(self, tiny_histories):
        """Test the split date of the label window."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=3, history_days=100))
        assert split.split_date == date(2024, 1, 8)
        assert split.feature.frame["order_date"].max() < pd.Timestamp("2024-01-08")
        assert split.label.frame["order_date"].min() >= pd.Timestamp("2024-01-08")

    def test_one_day_window(self, tiny_histories):
        """Test a one-day label window."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=1, history_days=100))
        assert split.split_date == date(2024, 1, 10)
        assert set(split.label.frame["order_id"]) == {"o4"}

    def test_history_limit(self, tiny_histories):
        """Test the history limit."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=3, history_days=6))
        # max date 2024-01-10 minus 6 days
        assert split.feature.frame["order_date"].min() >= pd.Timestamp("2024-01-04")

    def test_everything_in_label_window(self, tiny_histories):
        """Test a label window covering the whole corpus."""
        with pytest.raises(SplitError):
            temporal_split(tiny_histories, SplitConfig(label_window_days=50, history_days=100))

    def test_engaged_only(self, tiny_histories):
        """Test the engaged-only split."""
        split = temporal_split(
            tiny_histories,
            SplitConfig(label_window_days=3, history_days=100, engaged_only=True, engaged_category_threshold=1),
        )
        assert split.feature.users() == ["u1"]

    def test_engaged_only_without_engaged_users(self, tiny_histories):
        """Test an engaged-only split with nobody engaged."""
        with pytest.raises(SplitError):
            temporal_split(
                tiny_histories,
                SplitConfig(label_window_days=3, history_days=100, engaged_only=True, engaged_category_threshold=5),
            )

    def test_last_basket_protocol(self, tiny_histories):
        """Test the last-basket protocol."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=1, history_days=100, protocol="last_basket"))
        assert set(split.label.frame["order_id"]) == {"o4", "o7"}
        assert split.user_split_dates["u2"] == pd.Timestamp("2024-01-09")


class TestLabels:
    """Test suite for category labels and item truth."""

    def test_labels(self, tiny_histories):
        """Test category labels."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=3, history_days=100))
        labels = build_labels(split).as_dict()
        assert labels == {
            ("u1", "bakery"): 0,
            ("u1", "dairy"): 1,
            ("u2", "bakery"): 0,
        }

    def test_item_truth_only_repeats(self, tiny_histories):
        """Test item truth."""
        split = temporal_split(tiny_histories, SplitConfig(label_window_days=3, history_days=100))
        truth = build_item_truth(split)
        assert truth == {"u1": {"milk"}}


CATEGORY_OF = {"a": "x", "b": "x", "c": "y", "d": "z"}

corpus_rows = st.lists(
    st.tuples(
        st.sampled_from(["u1", "u2", "u3", "u4"]),
        st.integers(min_value=0, max_value=30),
        st.sampled_from(sorted(CATEGORY_OF)),
    ),
    min_size=1,
    max_size=100,
)


def _corpus(rows):
    frame = pd.DataFrame(
        {
            "user_id": [u for u, _, _ in rows],
            "order_id": [f"{u}-{day}" for u, day, _ in rows],
            "order_date": [pd.Timestamp("2024-01-01") + pd.Timedelta(days=day) for _, day, _ in rows],
            "item_id": [item for _, _, item in rows],
            "category_id": [CATEGORY_OF[item] for _, _, item in rows],
            "quantity": 1.0,
        }
    )
    return build_histories(frame)


def _split_or_none(histories, config):
    try:
        return temporal_split(histories, config)
    except SplitError:
        return None


class TestSplitProperties:
    """Test suite for split and label properties on random corpora."""

    @settings(max_examples=200, deadline=None)
    @given(corpus_rows, st.integers(min_value=1, max_value=10), st.integers(min_value=0, max_value=30))
    def test_retained_rows_land_in_one_period(self, rows, window, extra_history):
        """Every retained row inside the history is in exactly one of the two periods."""
        histories = _corpus(rows)
        history_days = window + 1 + extra_history
        split = _split_or_none(histories, SplitConfig(label_window_days=window, history_days=history_days))
        if split is None:
            return
        frame = histories.frame
        history_start = frame["order_date"].max() - pd.Timedelta(days=history_days)
        retained = set(split.feature.users())
        expected = frame[frame["user_id"].isin(retained) & (frame["order_date"] >= history_start)]

        def keys(part):
            return sorted(part[["user_id", "order_id", "item_id"]].itertuples(index=False, name=None))

        both = pd.concat([split.feature.frame, split.label.frame])
        assert keys(both) == keys(expected)
        assert not set(keys(split.feature.frame)) & set(keys(split.label.frame))

    @settings(max_examples=200, deadline=None)
    @given(corpus_rows, st.integers(min_value=1, max_value=10))
    def test_labels_match_brute_force(self, rows, window):
        """A pair is labeled 1 exactly when the category is bought again inside the label window."""
        histories = _corpus(rows)
        split = _split_or_none(histories, SplitConfig(label_window_days=window, history_days=100))
        if split is None:
            return
        last_day = max(day for _, day, _ in rows)
        first_label_day = last_day - window + 1
        feature_pairs = {(u, CATEGORY_OF[i]) for u, day, i in rows if day < first_label_day}
        label_pairs = {(u, CATEGORY_OF[i]) for u, day, i in rows if day >= first_label_day}
        expected = {pair: int(pair in label_pairs) for pair in feature_pairs}
        assert build_labels(split).as_dict() == expected
