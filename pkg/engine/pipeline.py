"""
Stage orchestration with LangGraph.

FeaturePipeline chains split → labels → survival → forecast → assemble → items
into a FeatureBundle. FoldEvaluator chains train → tune → recommend → baselines
→ metrics for one cross-validation fold. Every node appends a trail message.
"""

from __future__ import annotations

import logging
from typing import Annotated, Any, TypedDict

import pandas as pd
from langchain_core.messages import AIMessage, BaseMessage, HumanMessage
from langgraph.graph import END, StateGraph
from langgraph.graph.message import add_messages

from config.settings import IcConfig, RunConfig
from engine.errors import EvaluationError
from engine.evaluate import BASELINES, assign_folds, fold_metrics, run_baseline, split_validation
from engine.features import assemble_feature_matrix
from engine.forecast import compute_forecasts
from engine.icrank import compute_item_stats, rank_items, tune_alpha_beta
from engine.ingest import build_category_truth, build_item_truth, build_labels, temporal_split
from engine.models import FeatureBundle, FoldMetrics, Histories, MetricsReport
from engine.parallel import parallel_map
from engine.pcmodel import PCModel, fit_pc_model
from engine.recommend import (
    apply_filters,
    item_recent_counts,
    item_repurchase_rates,
    merge_pc_ic,
    recommendation_lists,
)
from engine.survival import build_life_tables, compute_curves

logger = logging.getLogger(__name__)


class FeatureState(TypedDict, total=False):
    """State shared across the featurization nodes."""

    messages: Annotated[list[BaseMessage], add_messages]
    histories: Histories
    split: Any
    labels: Any
    life_tables: dict
    curves: dict
    forecasts: pd.DataFrame
    matrix: pd.DataFrame
    item_stats: pd.DataFrame
    item_truth: dict
    category_truth: dict
    repurchase_rates: pd.Series
    recent_counts: pd.DataFrame


class FeaturePipeline:
    """Featurization chain from histories (or a stored split) to a FeatureBundle."""

    def __init__(self, settings: RunConfig):
        """
        Initialize the feature pipeline.

        Args:
            settings: run configuration
        """
        self.settings = settings
        self.graph = self._build_graph()

    def _split_node(self, state: FeatureState) -> dict:
        """
        Split the histories into feature and label periods.

        Args:
            state: Current feature state

        Returns:
            Updated state with the split (a stored split is kept)
        """
        if state.get("split") is not None:
            return {"messages": [AIMessage(content="Split: reused stored split")]}
        split = temporal_split(state["histories"], self.settings.split)
        return {
            "split": split,
            "messages": [AIMessage(content=f"Split: label window starts {split.split_date}")],
        }

    def _labels_node(self, state: FeatureState) -> dict:
        """
        Build category labels and the category truth sets.

        Args:
            state: Current feature state

        Returns:
            Updated state with labels and category_truth
        """
        labels = build_labels(state["split"])
        positives = int(labels.frame["label"].sum())
        return {
            "labels": labels,
            "category_truth": build_category_truth(labels),
            "messages": [AIMessage(content=f"Labels: {len(labels)} pairs, {positives} positive")],
        }

    def _survival_node(self, state: FeatureState) -> dict:
        """
        Build per-category life tables and their survival curves.

        Args:
            state: Current feature state

        Returns:
            Updated state with life_tables and curves
        """
        split = state["split"]
        tables = build_life_tables(split.feature, split.reference_dates())
        config = self.settings.survival
        curves = {c: compute_curves(t, config.min_observations, config.window_days) for c, t in tables.items()}
        return {
            "life_tables": tables,
            "curves": curves,
            "messages": [AIMessage(content=f"Survival: {len(tables)} life tables")],
        }

    def _forecast_node(self, state: FeatureState) -> dict:
        """
        Forecast next purchase date and quantity per (user, category).

        Args:
            state: Current feature state

        Returns:
            Updated state with forecasts
        """
        split = state["split"]
        forecasts = compute_forecasts(
            split.feature, split.reference_dates(), self.settings.forecast, self.settings.workers
        )
        fitted = int(forecasts["date_model"].str.startswith("arima").sum()) if len(forecasts) else 0
        return {
            "forecasts": forecasts,
            "messages": [AIMessage(content=f"Forecast: {len(forecasts)} pairs, {fitted} ARIMA fits")],
        }

    def _assemble_node(self, state: FeatureState) -> dict:
        """
        Assemble the normalized feature matrix.

        Args:
            state: Current feature state

        Returns:
            Updated state with matrix
        """
        matrix = assemble_feature_matrix(state["split"], state["curves"], state["forecasts"], state["labels"])
        return {"matrix": matrix, "messages": [AIMessage(content=f"Assemble: {len(matrix)} feature rows")]}

    def _items_node(self, state: FeatureState) -> dict:
        """
        Compute per-item statistics, item truth and deployment filter inputs.

        Args:
            state: Current feature state

        Returns:
            Updated state with item_stats, item_truth, repurchase_rates and recent_counts
        """
        split = state["split"]
        reference = split.reference_dates()
        item_stats = compute_item_stats(split.feature, reference)
        return {
            "item_stats": item_stats,
            "item_truth": build_item_truth(split),
            "repurchase_rates": item_repurchase_rates(split.feature),
            "recent_counts": item_recent_counts(split.feature, reference, self.settings.filter.lookback_months),
            "messages": [AIMessage(content=f"Items: {len(item_stats)} (user, item) stats")],
        }

    def _build_graph(self):
        workflow = StateGraph(FeatureState)

        workflow.add_node("split", self._split_node)
        workflow.add_node("labels", self._labels_node)
        workflow.add_node("survival", self._survival_node)
        workflow.add_node("forecast", self._forecast_node)
        workflow.add_node("assemble", self._assemble_node)
        workflow.add_node("items", self._items_node)

        workflow.set_entry_point("split")
        workflow.add_edge("split", "labels")
        workflow.add_edge("labels", "survival")
        workflow.add_edge("survival", "forecast")
        workflow.add_edge("forecast", "assemble")
        workflow.add_edge("assemble", "items")
        workflow.add_edge("items", END)

        return workflow.compile()

    def run(self, histories: Histories | None = None, split=None) -> tuple[FeatureBundle, list[str]]:
        """
        Run featurization.

        Args:
            histories: whole-corpus histories (split here)
            split: a stored split to reuse instead

        Returns:
            (FeatureBundle, trail of node messages)
        """
        if histories is None and split is None:
            raise ValueError("featurization needs histories or a split")
        initial_state: FeatureState = {
            "messages": [HumanMessage(content="Featurize transactions")],
            "histories": histories,
            "split": split,
        }
        final_state = self.graph.invoke(initial_state)
        bundle = FeatureBundle(
            split=final_state["split"],
            labels=final_state["labels"],
            matrix=final_state["matrix"],
            item_stats=final_state["item_stats"],
            item_truth=final_state["item_truth"],
            category_truth=final_state["category_truth"],
            repurchase_rates=final_state["repurchase_rates"],
            recent_counts=final_state["recent_counts"],
            life_tables=final_state["life_tables"],
            forecasts=final_state["forecasts"],
        )
        return bundle, [msg.content for msg in final_state["messages"]]


def pc_category_lists(pc_ranks: pd.DataFrame) -> dict[str, list[str]]:
    ordered = pc_ranks.sort_values(["user_id", "rk_pc"], kind="mergesort")
    return {user: group["category_id"].tolist() for user, group in ordered.groupby("user_id", sort=False)}


def build_recommendations(
    pc_ranks: pd.DataFrame, item_stats: pd.DataFrame, ic: IcConfig, merge_order: str
) -> pd.DataFrame:
    """Rank items with the given alpha/beta (0.5 when unset) and merge them under the PC ranks."""
    alpha = 0.5 if ic.alpha is None else ic.alpha
    beta = 0.5 if ic.beta is None else ic.beta
    users = set(pc_ranks["user_id"])
    stats = item_stats[item_stats["user_id"].isin(users)]
    return merge_pc_ic(pc_ranks, rank_items(stats, alpha, beta), merge_order)


def tune_or_default(
    model: PCModel, bundle: FeatureBundle, validation_users: list[str], settings: RunConfig
) -> tuple[IcConfig, pd.DataFrame | None]:
    """Configured alpha/beta when both are set, otherwise grid-tuned on validation users."""
    ic = settings.ic
    if ic.alpha is not None and ic.beta is not None:
        return ic, None
    users = set(validation_users)
    pc_ranks = model.score(bundle.matrix[bundle.matrix["user_id"].isin(users)])
    stats = bundle.item_stats[bundle.item_stats["user_id"].isin(users)]
    try:
        return tune_alpha_beta(
            pc_ranks, stats, bundle.item_truth, ic, settings.recommend.merge_order, settings.workers
        )
    except EvaluationError as e:
        logger.warning("%s; keeping alpha=beta=0.5", e)
        return ic.model_copy(update={"alpha": 0.5, "beta": 0.5}), None


class FoldState(TypedDict, total=False):
    """State shared across the nodes evaluating one fold."""

    messages: Annotated[list[BaseMessage], add_messages]
    fold: int
    train_users: list[str]
    validation_users: list[str]
    test_users: list[str]
    model: PCModel
    ic: IcConfig
    pc_ranks: pd.DataFrame
    lists: dict
    results: list


class FoldEvaluator:
    """Train, tune, recommend and score one cross-validation fold."""

    def __init__(self, settings: RunConfig, bundle: FeatureBundle):
        """
        Initialize the fold evaluator.

        Args:
            settings: run configuration
            bundle: featurized corpus shared by every fold
        """
        self.settings = settings
        self.bundle = bundle
        self.graph = self._build_graph()

    def _train_node(self, state: FoldState) -> dict:
        """
        Fit the PC model on the fold's training users.

        Args:
            state: Current fold state

        Returns:
            Updated state with model
        """
        model = fit_pc_model(
            self.bundle.matrix,
            state["train_users"],
            state["validation_users"],
            self.settings.train,
            self.settings.seed + state["fold"],
        )
        report = model.report
        return {
            "model": model,
            "messages": [
                AIMessage(
                    content=f"Train: best validation loss {report.best_validation_loss:.4f} "
                    f"at epoch {report.best_epoch}"
                )
            ],
        }

    def _tune_node(self, state: FoldState) -> dict:
        """
        Pick alpha/beta on the validation users.

        Args:
            state: Current fold state

        Returns:
            Updated state with ic
        """
        ic, _ = tune_or_default(state["model"], self.bundle, state["validation_users"], self.settings)
        return {"ic": ic, "messages": [AIMessage(content=f"Tune: alpha={ic.alpha} beta={ic.beta}")]}

    def _recommend_node(self, state: FoldState) -> dict:
        """
        Rank categories and items for the test users.

        Args:
            state: Current fold state

        Returns:
            Updated state with pc_ranks and the PC/PCIC lists
        """
        matrix = self.bundle.matrix
        pc_ranks = state["model"].score(matrix[matrix["user_id"].isin(set(state["test_users"]))])
        merged = build_recommendations(pc_ranks, self.bundle.item_stats, state["ic"], self.settings.recommend.merge_order)
        lists = {"PC": pc_category_lists(pc_ranks), "PCIC": recommendation_lists(merged)}
        if self.settings.eval.report_filtered:
            filtered = apply_filters(
                merged, self.settings.filter, self.bundle.recent_counts, self.bundle.repurchase_rates
            )
            lists["PCIC+filters"] = recommendation_lists(filtered)
        return {
            "pc_ranks": pc_ranks,
            "lists": lists,
            "messages": [AIMessage(content=f"Recommend: {len(merged)} ranked items for {len(pc_ranks['user_id'].unique())} users")],
        }

    def _baselines_node(self, state: FoldState) -> dict:
        """
        Run every baseline on the test users.

        Args:
            state: Current fold state

        Returns:
            Updated state with the baseline lists added
        """
        lists = dict(state["lists"])
        for name in BASELINES:
            lists[name] = run_baseline(name, self.bundle.split.feature, state["test_users"])
        return {"lists": lists, "messages": [AIMessage(content=f"Baselines: {', '.join(BASELINES)}")]}

    def _metrics_node(self, state: FoldState) -> dict:
        """
        Score every list per segment.

        Args:
            state: Current fold state

        Returns:
            Updated state with results
        """
        ks = self.settings.eval.ks
        test_users = state["test_users"]
        engaged = sorted(set(test_users) & self.bundle.engaged_users(self.settings.split.engaged_category_threshold))
        segments = {"all": test_users}
        if engaged:
            segments["engaged"] = engaged

        results: list[FoldMetrics] = []
        for algorithm, lists in state["lists"].items():
            truth = self.bundle.category_truth if algorithm == "PC" else self.bundle.item_truth
            for segment, users in segments.items():
                results.append(fold_metrics(algorithm, state["fold"], lists, truth, users, ks, segment))
        return {"results": results, "messages": [AIMessage(content=f"Metrics: {len(results)} rows")]}

    def _build_graph(self):
        workflow = StateGraph(FoldState)

        workflow.add_node("train", self._train_node)
        workflow.add_node("tune", self._tune_node)
        workflow.add_node("recommend", self._recommend_node)
        workflow.add_node("baselines", self._baselines_node)
        workflow.add_node("metrics", self._metrics_node)

        workflow.set_entry_point("train")
        workflow.add_edge("train", "tune")
        workflow.add_edge("tune", "recommend")
        workflow.add_edge("recommend", "baselines")
        workflow.add_edge("baselines", "metrics")
        workflow.add_edge("metrics", END)

        return workflow.compile()

    def evaluate(
        self, fold: int, train_users: list[str], validation_users: list[str], test_users: list[str]
    ) -> tuple[list[FoldMetrics], list[str]]:
        """
        Evaluate one fold.

        Args:
            fold: fold number, also offsets the training seed
            train_users: users the PC model is fit on
            validation_users: users for early stopping and alpha/beta tuning
            test_users: users the lists are scored on

        Returns:
            (per-algorithm FoldMetrics, trail of node messages)
        """
        initial_state: FoldState = {
            "messages": [HumanMessage(content=f"Evaluate fold {fold}")],
            "fold": fold,
            "train_users": train_users,
            "validation_users": validation_users,
            "test_users": test_users,
        }
        final_state = self.graph.invoke(initial_state)
        return final_state["results"], [msg.content for msg in final_state["messages"]]


def fold_plan(users: list[str], settings: RunConfig) -> list[tuple[int, list[str], list[str], list[str]]]:
    """(fold, train, validation, test) users for every fold."""
    folds = assign_folds(users, settings.eval.folds, settings.seed)
    plan = []
    for fold in range(settings.eval.folds):
        test = sorted(u for u, f in folds.items() if f == fold)
        rest = sorted(u for u, f in folds.items() if f != fold)
        train, validation = split_validation(rest, settings.train.validation_fraction, settings.seed + fold)
        plan.append((fold, train, validation, test))
    return plan


def _run_fold(task: tuple) -> tuple[list[FoldMetrics], list[str]]:
    settings, bundle, fold, train, validation, test = task
    return FoldEvaluator(settings, bundle).evaluate(fold, train, validation, test)


def cross_validate(bundle: FeatureBundle, settings: RunConfig) -> tuple[MetricsReport, list[str]]:
    """
    K-fold cross-validation by user.

    Folds run in parallel when `workers` > 1; each fold then works single-process.

    Raises:
        EvaluationError: fewer than 50 users
    """
    users = sorted(set(bundle.labels.frame["user_id"]))
    plan = fold_plan(users, settings)
    fold_settings = settings.with_overrides({"workers": 1}) if settings.workers > 1 else settings
    tasks = [(fold_settings, bundle, fold, train, validation, test) for fold, train, validation, test in plan]
    outcomes = parallel_map(_run_fold, tasks, settings.workers)

    report = MetricsReport(label_window_days=settings.split.label_window_days)
    trail: list[str] = []
    for results, messages in outcomes:
        report.folds.extend(results)
        trail.extend(messages)
    logger.info("Cross-validated %d users over %d folds", len(users), len(plan))
    return report, trail


def label_window_sensitivity(histories: Histories, settings: RunConfig, windows: list[int]) -> pd.DataFrame:
    """
    Re-featurize and cross-validate per label window.

    Returns:
        Frame with label_window_days, algorithm, segment, metric, mean, std, n_users
        for the PC and PCIC rows
    """
    frames = []
    for window in windows:
        window_settings = settings.with_overrides({"split.label_window_days": window})
        bundle, _ = FeaturePipeline(window_settings).run(histories)
        report, _ = cross_validate(bundle, window_settings)
        summary = report.summary()
        summary = summary[summary["algorithm"].isin(["PC", "PCIC"])]
        frames.append(summary.assign(label_window_days=window))
    if not frames:
        return pd.DataFrame(columns=["label_window_days", "algorithm", "segment", "metric", "mean", "std", "n_users"])
    table = pd.concat(frames, ignore_index=True)
    return table[["label_window_days", "algorithm", "segment", "metric", "mean", "std", "n_users"]]
