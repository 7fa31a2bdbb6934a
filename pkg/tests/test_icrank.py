"""
Tests for item-within-category ranking and the alpha/beta grid search.
"""

import numpy as np
import pandas as pd
import pytest

from config.settings import IcConfig
from engine.errors import EvaluationError
from engine.icrank import alpha_beta_grid, compute_item_stats, rank_items, rank_items_in_category, tune_alpha_beta
from engine.models import Histories


def _stats(rows, user="u", category="c"):
    frame = pd.DataFrame(rows, columns=["item_id", "freq", "days_since_purchase", "nib"])
    frame.insert(0, "category_id", category)
    frame.insert(0, "user_id", user)
    return frame


def _random_stats(seed: int, n: int = 8) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    return _stats(
        [
            (f"i{i}", int(rng.integers(1, 6)), int(rng.integers(0, 30)), float(rng.choice([1.0, 1.5, 2.0, 3.0])))
            for i in range(n)
        ]
    )


@pytest.fixture
def abc():
    return _stats([("A", 5, 2, 1.0), ("B", 3, 1, 1.0), ("C", 1, 10, 1.0)])


class TestItemStats:
    """Test suite for Freq, DaysSincePurchase and NIB."""

    def test_tiny_corpus(self, tiny_histories):
        """Test item statistics on the tiny corpus."""
        reference = pd.Series({"u1": pd.Timestamp("2024-01-10"), "u2": pd.Timestamp("2024-01-10")})
        stats = compute_item_stats(tiny_histories, reference).set_index(["user_id", "item_id"])
        assert stats.loc[("u1", "milk"), "freq"] == 4
        assert stats.loc[("u1", "milk"), "nib"] == pytest.approx(1.25)
        assert stats.loc[("u1", "milk"), "days_since_purchase"] == 0
        assert stats.loc[("u1", "bread"), "nib"] == 2.0
        assert stats.loc[("u2", "milk"), "days_since_purchase"] == 1
        assert stats.loc[("u2", "milk"), "nib"] == 3.0

    def test_nib_floored_at_one(self):
        """Test the NIB floor."""
        frame = pd.DataFrame(
            {
                "user_id": ["u", "u"],
                "order_id": ["o1", "o2"],
                "order_date": pd.to_datetime(["2024-01-01", "2024-01-02"]),
                "item_id": ["a", "a"],
                "category_id": ["c", "c"],
                "quantity": [0.5, 0.5],
            }
        )
        stats = compute_item_stats(Histories.from_frame(frame), pd.Series({"u": pd.Timestamp("2024-01-03")}))
        assert stats.loc[0, "nib"] == 1.0
        assert stats.loc[0, "freq"] == 2
        assert stats.loc[0, "days_since_purchase"] == 1


class TestRankItems:
    """Test suite for the IR formula."""

    def test_worked_example(self, abc):
        """Test the three-item worked example."""
        ranked = rank_items(abc, 0.5, 0.5).set_index("item_id")
        assert ranked.loc[["A", "B", "C"], "ifr"].tolist() == [1, 2, 3]
        assert ranked.loc[["A", "B", "C"], "irr"].tolist() == [2, 1, 3]
        assert ranked.loc[["A", "B", "C"], "combined"].tolist() == [1.5, 1.5, 3.0]
        assert rank_items_in_category(abc, IcConfig(alpha=0.5, beta=0.5)) == {"A": 1, "B": 2, "C": 3}
        assert list(rank_items_in_category(abc, IcConfig(alpha=0.5, beta=0.5))) == ["A", "B", "C"]

    def test_nib_promotes(self, abc):
        """Test promotion by NIB."""
        abc.loc[abc["item_id"] == "B", "nib"] = 2.0
        ranks = rank_items_in_category(abc, IcConfig(alpha=0.5, beta=0.5))
        assert ranks == {"A": 1, "B": 1, "C": 3}
        assert list(ranks) == ["A", "B", "C"]

    def test_unset_weights_count_as_half(self, abc):
        """Test ranking with unset weights."""
        assert rank_items_in_category(abc, IcConfig()) == rank_items_in_category(abc, IcConfig(alpha=0.5, beta=0.5))

    @pytest.mark.parametrize("alpha,beta,nib", [(0.0, 0.0, 1.0), (1.0, 0.3, 2.5), (0.2, 1.0, 7.0)])
    def test_single_item(self, alpha, beta, nib):
        """Test a category with one item."""
        stats = _stats([("only", 2, 4, nib)])
        assert rank_items_in_category(stats, IcConfig(alpha=alpha, beta=beta)) == {"only": 1}

    def test_empty_rejected(self):
        """Test ranking no items."""
        with pytest.raises(ValueError):
            rank_items_in_category(_stats([]), IcConfig())

    @pytest.mark.parametrize("seed", range(20))
    def test_beta_zero_is_pure_recency(self, seed):
        """Test pure recency ordering."""
        stats = _random_stats(seed)
        stats["nib"] = 1.0
        ranked = rank_items(stats, 1.0, 0.0)
        expected = stats.sort_values(
            ["days_since_purchase", "freq", "item_id"], ascending=[True, False, True], kind="mergesort"
        )
        assert ranked["item_id"].tolist() == expected["item_id"].tolist()

    @pytest.mark.parametrize("seed", range(20))
    def test_alpha_zero_is_pure_frequency(self, seed):
        """Test pure frequency ordering."""
        stats = _random_stats(seed)
        stats["nib"] = 1.0
        ranked = rank_items(stats, 0.0, 1.0)
        expected = stats.sort_values(
            ["freq", "days_since_purchase", "item_id"], ascending=[False, True, True], kind="mergesort"
        )
        assert ranked["item_id"].tolist() == expected["item_id"].tolist()

    @pytest.mark.parametrize("seed", range(20))
    def test_joint_scaling_invariance(self, seed):
        """Test that only the alpha/beta ratio matters."""
        stats = _random_stats(seed)
        small = rank_items(stats, 0.2, 0.3)
        large = rank_items(stats, 0.4, 0.6)
        assert small["item_id"].tolist() == large["item_id"].tolist()
        assert small["ir"].tolist() == large["ir"].tolist()

    @pytest.mark.parametrize("seed", range(20))
    def test_raising_nib_never_worsens_ir(self, seed):
        """Test monotonicity in NIB."""
        stats = _random_stats(seed)
        before = rank_items(stats, 0.6, 0.4).set_index("item_id")["ir"]
        stats.loc[3, "nib"] = stats.loc[3, "nib"] + 1.0
        after = rank_items(stats, 0.6, 0.4).set_index("item_id")["ir"]
        item = stats.loc[3, "item_id"]
        assert after[item] <= before[item]
        assert (after >= 1).all()

    def test_groups_ranked_separately(self, abc):
        """Test independent ranking per (user, category)."""
        other = _stats([("X", 1, 1, 1.0), ("Y", 9, 9, 1.0)], category="d")
        ranked = rank_items(pd.concat([abc, other], ignore_index=True), 0.5, 0.5)
        assert ranked.groupby("category_id")["rk"].min().tolist() == [1, 1]


class TestGrid:
    """Test suite for the alpha/beta grid search."""

    def test_grid_values(self):
        """Test the alpha/beta grid."""
        assert alpha_beta_grid(0.1) == [round(i / 10, 10) for i in range(11)]
        assert alpha_beta_grid(0.5) == [0.0, 0.5, 1.0]

    def test_dominant_cell(self):
        """Test tuning toward a dominant cell."""
        # B (recent, rare) is the repurchase; it leads only when alpha > beta
        pc_ranks = pd.DataFrame({"user_id": ["u"], "category_id": ["c"], "pc_score": [0.9], "rk_pc": [1]})
        stats = _stats([("A", 5, 10, 1.0), ("B", 1, 1, 1.0)])
        tuned, grid = tune_alpha_beta(pc_ranks, stats, {"u": {"B"}}, IcConfig(grid_step=0.5))
        assert (tuned.alpha, tuned.beta) == (0.5, 0.0)
        assert len(grid) == 9
        assert grid["ndcg"].max() == pytest.approx(1.0)

    def test_all_cells_equal_picks_origin(self):
        """Test the tuning tie rule."""
        pc_ranks = pd.DataFrame(
            {"user_id": ["u", "u"], "category_id": ["c", "d"], "pc_score": [0.9, 0.4], "rk_pc": [1, 2]}
        )
        stats = pd.concat([_stats([("a", 2, 3, 1.0)]), _stats([("b", 1, 1, 1.0)], category="d")], ignore_index=True)
        tuned, grid = tune_alpha_beta(pc_ranks, stats, {"u": {"b"}}, IcConfig(grid_step=0.5))
        assert (tuned.alpha, tuned.beta) == (0.0, 0.0)
        assert grid["ndcg"].nunique() == 1

    def test_parallel_matches_serial(self):
        """Test parallel grid search."""
        pc_ranks = pd.DataFrame({"user_id": ["u"], "category_id": ["c"], "pc_score": [0.9], "rk_pc": [1]})
        stats = _random_stats(3)
        truth = {"u": {"i2", "i5"}}
        serial, serial_grid = tune_alpha_beta(pc_ranks, stats, truth, IcConfig(grid_step=0.25), workers=1)
        parallel, parallel_grid = tune_alpha_beta(pc_ranks, stats, truth, IcConfig(grid_step=0.25), workers=2)
        assert (serial.alpha, serial.beta) == (parallel.alpha, parallel.beta)
        pd.testing.assert_frame_equal(serial_grid, parallel_grid)

    def test_without_truth(self):
        """Test tuning without validation truth."""
        pc_ranks = pd.DataFrame({"user_id": ["u"], "category_id": ["c"], "pc_score": [0.9], "rk_pc": [1]})
        with pytest.raises(EvaluationError):
            tune_alpha_beta(pc_ranks, _stats([("a", 1, 1, 1.0)]), {}, IcConfig(grid_step=0.5))
