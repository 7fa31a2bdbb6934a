"""
Tests for feature assembly, normalization and the versioned matrix file.
"""

import numpy as np
import pandas as pd
import pytest

from config.settings import SplitConfig
from engine.errors import ModelFormatError
from engine.features import (
    assemble_feature_matrix,
    behavior_features,
    compute_norm_stats,
    load_feature_matrix,
    load_norm_stats,
    normalize,
    parse_norm_stats,
    save_feature_matrix,
    save_norm_stats,
)
from engine.forecast import compute_forecasts
from engine.ingest import build_labels, temporal_split
from engine.models import FEATURE_COLUMNS, NormStats
from engine.survival import build_life_tables, compute_curves


@pytest.fixture
def tiny_split(tiny_histories):
    return temporal_split(tiny_histories, SplitConfig(label_window_days=3, history_days=100))


@pytest.fixture
def tiny_matrix(tiny_split):
    reference = tiny_split.reference_dates()
    curves = {c: compute_curves(t) for c, t in build_life_tables(tiny_split.feature, reference).items()}
    forecasts = compute_forecasts(tiny_split.feature, reference)
    return assemble_feature_matrix(tiny_split, curves, forecasts, build_labels(tiny_split))


class TestBehaviorFeatures:
    """Test suite for purchase-count and recency features."""

    def test_counts_and_recency(self, tiny_split):
        """Test purchases, trips and days since last purchase."""
        features = behavior_features(tiny_split).set_index(["user_id", "category_id"])
        # u1 baskets before 2024-01-08: o1 (dairy, bakery), o2 (dairy)
        assert features.loc[("u1", "dairy"), "num_purchases"] == 2
        assert features.loc[("u1", "bakery"), "num_purchases"] == 1
        assert features.loc[("u1", "bakery"), "trips_since_last"] == 1
        assert features.loc[("u1", "dairy"), "trips_since_last"] == 0
        # reference day is 2024-01-07
        assert features.loc[("u1", "dairy"), "days_since_last"] == 3
        assert features.loc[("u2", "bakery"), "days_since_last"] == 1


class TestAssemble:
    """Test suite for the feature matrix."""

    def test_columns_in_frozen_order(self, tiny_matrix):
        """Test the feature column order."""
        assert list(tiny_matrix.columns) == ["user_id", "category_id", *FEATURE_COLUMNS, "label"]

    def test_one_row_per_label(self, tiny_matrix):
        """Test one matrix row per labeled pair."""
        assert len(tiny_matrix) == 3
        assert tiny_matrix["label"].tolist() == [0, 1, 0]

    def test_all_finite(self, tiny_matrix):
        """Test that every feature value is finite."""
        assert np.isfinite(tiny_matrix[list(FEATURE_COLUMNS)].to_numpy()).all()

    def test_missing_curves_fall_back_to_trivial(self, tiny_split):
        """Test categories without curves."""
        labels = build_labels(tiny_split)
        forecasts = compute_forecasts(tiny_split.feature, tiny_split.reference_dates())
        matrix = assemble_feature_matrix(tiny_split, {}, forecasts, labels)
        assert (matrix["survival"] == 1.0).all()
        assert (matrix["hazard"] == 0.0).all()


class TestNormalization:
    """Test suite for z-scoring with training stats."""

    def test_zero_variance_column_gets_unit_std(self):
        """Test normalization of a constant column."""
        matrix = pd.DataFrame({name: [1.0, 1.0, 1.0] for name in FEATURE_COLUMNS})
        matrix["hazard"] = [0.0, 1.0, 2.0]
        stats = compute_norm_stats(matrix)
        assert stats.std[FEATURE_COLUMNS.index("survival")] == 1.0
        assert stats.std[0] == pytest.approx(1.0)

    def test_normalized_training_rows_are_standard(self):
        """Test z-scores of the training rows."""
        rng = np.random.default_rng(0)
        matrix = pd.DataFrame(rng.normal(3.0, 2.0, size=(50, len(FEATURE_COLUMNS))), columns=list(FEATURE_COLUMNS))
        normalized, stats = normalize(matrix)
        values = normalized[list(FEATURE_COLUMNS)].to_numpy()
        assert np.allclose(values.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(values.std(axis=0, ddof=1), 1.0)

    def test_stored_stats_are_reused(self):
        """Test normalization with stored statistics."""
        matrix = pd.DataFrame({name: [2.0, 4.0] for name in FEATURE_COLUMNS})
        stats = NormStats(mean=np.zeros(len(FEATURE_COLUMNS)), std=np.full(len(FEATURE_COLUMNS), 2.0))
        normalized, used = normalize(matrix, stats)
        assert used is stats
        assert normalized["hazard"].tolist() == [1.0, 2.0]

    def test_version_mismatch_rejected(self):
        """Test statistics from another feature version."""
        matrix = pd.DataFrame({name: [1.0] for name in FEATURE_COLUMNS})
        stats = NormStats(mean=np.zeros(11), std=np.ones(11), version="other")
        with pytest.raises(ModelFormatError):
            normalize(matrix, stats)

    def test_stats_file(self, tmp_path):
        """Test the statistics file."""
        stats = NormStats(mean=np.arange(11) / 3.0, std=np.arange(1, 12) / 7.0)
        loaded = load_norm_stats(save_norm_stats(stats, tmp_path / "norm_stats.txt"))
        assert np.array_equal(loaded.mean, stats.mean)
        assert np.array_equal(loaded.std, stats.std)

    def test_stats_text_without_version(self):
        """Test a statistics file without a version line."""
        with pytest.raises(ModelFormatError):
            parse_norm_stats("mean.hazard = 0\n")


class TestMatrixFile:
    """Test suite for the versioned feature file."""

    def test_save_and_load(self, tmp_path, tiny_matrix):
        """Test the versioned matrix file."""
        path = save_feature_matrix(tiny_matrix, tmp_path / "matrix.csv")
        assert path.read_text(encoding="utf-8").startswith("# pcic-features-v1: hazard,")
        loaded = load_feature_matrix(path)
        pd.testing.assert_frame_equal(loaded, tiny_matrix, check_dtype=False)

    def test_wrong_header_rejected(self, tmp_path):
        """Test a matrix file with a foreign header."""
        path = tmp_path / "matrix.csv"
        path.write_text("# other-v9: a,b\nuser_id,category_id\n", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            load_feature_matrix(path)
