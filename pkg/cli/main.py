"""
`bia` command line: one subcommand per batch stage, handing off through files in `paths.work_dir`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import pandas as pd
import typer

from config.settings import RunConfig, describe_keys, load_settings, parse_cli_overrides, parse_config_text
from engine.artifacts import Workspace
from engine.errors import PipelineError, StageOrderError
from engine.evaluate import split_validation
from engine.features import load_feature_matrix, normalize, save_norm_stats
from engine.ingest import parse_transactions, read_histories, temporal_split, write_transactions
from engine.pcmodel import PCModel, fit_pc_model, permutation_importance
from engine.pipeline import FeaturePipeline, build_recommendations, cross_validate, label_window_sensitivity, tune_or_default
from engine.recommend import apply_filters, top_k, write_recommendations
from engine.synth import generate_synthetic, write_synthetic

logger = logging.getLogger(__name__)


def _keys_epilog() -> str:
    lines = ["Config keys (`key = value` in --config, or --set key=value):", ""]
    for key, default, description in describe_keys():
        lines.append(f"  {key} = {default}  {description}")
    return "\n\n".join(lines)


app = typer.Typer(
    help="Buy It Again batch engine: personalized category + item-in-category repurchase ranking.",
    epilog=_keys_epilog(),
    no_args_is_help=True,
    add_completion=False,
)


@dataclass
class Context:
    settings: RunConfig
    workspace: Workspace


def _fail(message: str, code: int = 1) -> None:
    typer.echo(f"❌ Error: {message}", err=True)
    raise typer.Exit(code=code)


def _run(ctx: typer.Context, stage: str, body: Callable[[RunConfig, Workspace], list[Path]]) -> None:
    """Run one stage body, record its outputs in the manifest, and map engine errors to exit codes."""
    state: Context = ctx.obj
    try:
        outputs = body(state.settings, state.workspace)
        state.workspace.record(stage, state.settings, outputs)
    except StageOrderError as e:
        _fail(str(e), code=2)
    except PipelineError as e:
        _fail(str(e))
    typer.echo(f"✅ {stage} done")


@app.callback()
def main(
    ctx: typer.Context,
    config: Path | None = typer.Option(None, "--config", "-c", help="Config file (`key = value`) or run manifest"),
    set_values: list[str] = typer.Option([], "--set", "-S", metavar="KEY=VALUE", help="Override a config key"),
    label_window_days: int | None = typer.Option(None, "--label-window-days", help="Override split.label_window_days"),
    workers: int | None = typer.Option(None, "--workers", "-w", help="Override workers"),
    seed: int | None = typer.Option(None, "--seed", help="Override seed"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    """Load the run configuration shared by every subcommand."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        overrides: dict[str, object] = parse_cli_overrides(set_values)
        if label_window_days is not None:
            overrides["split.label_window_days"] = label_window_days
        if workers is not None:
            overrides["workers"] = workers
        if seed is not None:
            overrides["seed"] = seed
        settings = load_settings(config, overrides)
    except PipelineError as e:
        _fail(str(e))
    ctx.obj = Context(settings=settings, workspace=Workspace(settings.paths.work_dir))


@app.command()
def keys() -> None:
    """List every config key with its default."""
    for key, default, description in describe_keys():
        typer.echo(f"{key} = {default}    # {description}")


@app.command()
def synth(ctx: typer.Context) -> None:
    """Write a synthetic transaction corpus and its ground truth to `paths.synth_dir`."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        corpus = generate_synthetic(settings.synth, settings.seed)
        outputs = write_synthetic(corpus, settings.paths.synth_dir)
        typer.echo(f"🧪 {len(corpus.transactions)} lines for {settings.synth.n_users} users → {outputs[0]}")
        return list(outputs)

    _run(ctx, "synth", body)


@app.command()
def ingest(ctx: typer.Context) -> None:
    """Parse `paths.transactions` into canonical records."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        log = parse_transactions(settings.paths.transactions, settings.col, settings.ingest.max_reject_fraction)
        out = write_transactions(log.frame, workspace.path("ingest/transactions.csv"))
        report = workspace.path("ingest/report.json")
        report.write_text(
            json.dumps({"rows": log.n_rows, "rejected": log.n_rejected, "records": len(log)}, indent=2) + "\n",
            encoding="utf-8",
        )
        typer.echo(f"📥 {len(log)} records ({log.n_rejected} of {log.n_rows} rows rejected)")
        return [out, report]

    _run(ctx, "ingest", body)


@app.command()
def split(ctx: typer.Context) -> None:
    """Split histories into the feature period and the label window."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("split", "ingest")
        result = temporal_split(read_histories(workspace.path("ingest/transactions.csv")), settings.split)
        typer.echo(f"✂️  split at {result.split_date}: {len(result.feature)} feature / {len(result.label)} label rows")
        return workspace.save_split(result)

    _run(ctx, "split", body)


@app.command()
def featurize(ctx: typer.Context) -> None:
    """Life tables, survival curves, ARIMA forecasts, feature matrix and item stats."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("featurize", "split")
        bundle, trail = FeaturePipeline(settings).run(split=workspace.load_split())
        outputs = workspace.save_bundle(bundle)
        trail_path = workspace.path("features/trail.txt")
        trail_path.write_text("\n".join(trail) + "\n", encoding="utf-8")
        for step in trail[1:]:
            typer.echo(f"  - {step}")
        return outputs + [trail_path]

    _run(ctx, "featurize", body)


@app.command()
def train(ctx: typer.Context) -> None:
    """Train the PC model and tune alpha/beta on the held-out validation users."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("train", "featurize")
        bundle = workspace.load_bundle()
        users = sorted(set(bundle.matrix["user_id"]))
        train_users, validation_users = split_validation(users, settings.train.validation_fraction, settings.seed)
        model = fit_pc_model(bundle.matrix, train_users, validation_users, settings.train, settings.seed)
        ic, grid = tune_or_default(model, bundle, validation_users, settings)

        outputs = [
            model.save(workspace.path("model/pc_model.npz")),
            save_norm_stats(model.norm_stats, workspace.path("model/norm_stats.txt")),
        ]
        tuned = workspace.path("model/ic_tuned.conf")
        tuned.write_text(f"ic.alpha = {ic.alpha!r}\nic.beta = {ic.beta!r}\n", encoding="utf-8")
        report = workspace.path("model/training_report.json")
        report.write_text(model.report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        outputs += [tuned, report]
        if grid is not None:
            grid_path = workspace.path("model/ic_grid.csv")
            grid.to_csv(grid_path, index=False, lineterminator="\n", float_format="%.17g")
            outputs.append(grid_path)
        typer.echo(
            f"🧠 best validation loss {model.report.best_validation_loss:.4f} "
            f"(epoch {model.report.best_epoch}); alpha={ic.alpha} beta={ic.beta}"
        )
        return outputs

    _run(ctx, "train", body)


@app.command()
def score(ctx: typer.Context) -> None:
    """Score every (user, category) with the trained PC model."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("score", "train")
        model = PCModel.load(workspace.path("model/pc_model.npz"))
        scores = model.score(load_feature_matrix(workspace.path("features/matrix.csv")))
        path = workspace.path("scores/pc_scores.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        scores.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
        typer.echo(f"📊 scored {len(scores)} (user, category) pairs")
        return [path]

    _run(ctx, "score", body)


@app.command()
def recommend(ctx: typer.Context) -> None:
    """Merge PC and IC ranks, filter, and write top-K lists."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("recommend", "score")
        if settings.ic.alpha is None or settings.ic.beta is None:
            workspace.require("recommend", "train")
            tuned = parse_config_text(workspace.path("model/ic_tuned.conf").read_text(encoding="utf-8"))
            unset = {key: value for key, value in tuned.items() if getattr(settings.ic, key.split(".")[-1]) is None}
            settings = settings.with_overrides(unset)
        bundle = workspace.load_bundle()
        pc_ranks = pd.read_csv(workspace.path("scores/pc_scores.csv"), dtype={"user_id": str, "category_id": str})
        recs = build_recommendations(pc_ranks, bundle.item_stats, settings.ic, settings.recommend.merge_order)
        if settings.recommend.apply_filters:
            recs = apply_filters(recs, settings.filter, bundle.recent_counts, bundle.repurchase_rates)
        recs = top_k(recs, settings.recommend.top_k)
        suffix = "jsonl" if settings.recommend.output_format == "jsonl" else "csv"
        path = write_recommendations(
            recs, workspace.path(f"recommend/recommendations.{suffix}"), settings.recommend.output_format
        )
        typer.echo(f"🛒 {len(recs)} recommendations for {recs['user_id'].nunique()} users → {path}")
        return [path]

    _run(ctx, "recommend", body)


@app.command()
def evaluate(ctx: typer.Context) -> None:
    """Cross-validate PCIC against the baselines; optionally compare label windows."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("evaluate", "featurize")
        bundle = workspace.load_bundle()
        report, trail = cross_validate(bundle, settings)

        out_dir = workspace.path("evaluate")
        out_dir.mkdir(parents=True, exist_ok=True)
        summary_path = out_dir / "metrics.csv"
        report.summary().to_csv(summary_path, index=False, lineterminator="\n", float_format="%.17g")
        folds_path = out_dir / "folds.json"
        folds_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        table = report.to_table("all")
        engaged = report.to_table("engaged")
        table_path = out_dir / "table.txt"
        table_path.write_text(f"all users\n{table}\n\nengaged users\n{engaged}\n", encoding="utf-8")
        trail_path = out_dir / "trail.txt"
        trail_path.write_text("\n".join(trail) + "\n", encoding="utf-8")
        typer.echo(f"\n📈 {settings.eval.folds}-fold results (all users)\n{table}\n")
        outputs = [summary_path, folds_path, table_path, trail_path]

        if settings.eval.label_windows:
            workspace.require("evaluate", "ingest")
            histories = read_histories(workspace.path("ingest/transactions.csv"))
            sensitivity = label_window_sensitivity(histories, settings, settings.eval.label_windows)
            sensitivity_path = out_dir / "sensitivity.csv"
            sensitivity.to_csv(sensitivity_path, index=False, lineterminator="\n", float_format="%.17g")
            view = sensitivity[(sensitivity["segment"] == "all") & sensitivity["metric"].str.startswith("ndcg@")]
            grid = view.pivot_table(index=["algorithm", "metric"], columns="label_window_days", values="mean")
            typer.echo(f"⏱️  label-window sensitivity (NDCG, all users)\n{grid.to_string(float_format=lambda v: f'{v:.4f}')}\n")
            outputs.append(sensitivity_path)
        return outputs

    _run(ctx, "evaluate", body)


@app.command()
def importance(ctx: typer.Context) -> None:
    """Permutation importance of the 11 PC features on the validation users."""

    def body(settings: RunConfig, workspace: Workspace) -> list[Path]:
        workspace.require("importance", "train")
        model = PCModel.load(workspace.path("model/pc_model.npz"))
        matrix = load_feature_matrix(workspace.path("features/matrix.csv"))
        users = sorted(set(matrix["user_id"]))
        _, validation_users = split_validation(users, settings.train.validation_fraction, settings.seed)
        rows, _ = normalize(matrix[matrix["user_id"].isin(set(validation_users))], model.norm_stats)
        scores = permutation_importance(model.params, rows, settings.eval.importance_repeats, settings.seed)
        path = workspace.path("model/importance.csv")
        scores.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
        typer.echo("🔍 permutation importance (validation loss increase)")
        for row in scores.itertuples(index=False):
            typer.echo(f"  {row.feature:<18} {row.importance:+.5f}")
        return [path]

    _run(ctx, "importance", body)


if __name__ == "__main__":
    app()
