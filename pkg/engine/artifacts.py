"""
File-based hand-off between CLI stages and the run manifest.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import pandas as pd

from config.settings import RunConfig
from engine.errors import StageOrderError
from engine.features import load_feature_matrix, save_feature_matrix
from engine.ingest import build_category_truth, read_histories, write_transactions
from engine.models import FEATURE_VERSION, FeatureBundle, LabelSet, SplitResult
from engine.pcmodel import MODEL_VERSION
from engine.survival import dump_life_tables, load_life_tables

logger = logging.getLogger(__name__)

STAGE_VERSIONS = {
    "synth": "synth-v1",
    "ingest": "ingest-v1",
    "split": "split-v1",
    "featurize": FEATURE_VERSION,
    "train": MODEL_VERSION,
    "score": "score-v1",
    "recommend": "recommend-v1",
    "evaluate": "evaluate-v1",
    "importance": "importance-v1",
}

STAGE_FILES = {
    "ingest": ["ingest/transactions.csv"],
    "split": ["split/feature.csv", "split/label.csv", "split/split_dates.csv"],
    "featurize": [
        "features/matrix.csv",
        "features/item_stats.csv",
        "features/item_truth.csv",
        "features/recent_counts.csv",
        "features/repurchase_rates.csv",
        "features/life_tables.csv",
        "features/forecasts.csv",
    ],
    "train": ["model/pc_model.npz", "model/norm_stats.txt", "model/ic_tuned.conf", "model/training_report.json"],
    "score": ["scores/pc_scores.csv"],
}

_ID_TYPES = {"user_id": str, "item_id": str, "category_id": str}


class Workspace:
    """Stage artifacts under one work directory."""

    def __init__(self, work_dir: Path):
        self.root = Path(work_dir)

    def path(self, relative: str) -> Path:
        return self.root / relative

    def files(self, stage: str) -> list[Path]:
        return [self.path(name) for name in STAGE_FILES.get(stage, [])]

    def require(self, stage: str, upstream: str) -> None:
        """Raise StageOrderError when any output of `upstream` is missing."""
        for path in self.files(upstream):
            if not path.exists():
                raise StageOrderError(stage, upstream, path)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def read_manifest(self) -> dict[str, Any]:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        return {"stages": {}}

    def record(self, stage: str, settings: RunConfig, outputs: list[Path]) -> Path:
        """
        Update the manifest with the current config snapshot and this stage's outputs.

        The manifest holds no timestamps, so identical runs write identical bytes.
        """
        manifest = self.read_manifest()
        manifest["config"] = settings.snapshot()
        manifest["seed"] = settings.seed
        manifest.setdefault("stages", {})[stage] = {
            "version": STAGE_VERSIONS[stage],
            "outputs": sorted(_relative(path, self.root) for path in outputs),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return self.manifest_path

    def save_split(self, split: SplitResult) -> list[Path]:
        dates = split.user_split_dates.rename("split_date").rename_axis("user_id").reset_index()
        dates["split_date"] = pd.to_datetime(dates["split_date"]).dt.strftime("%Y-%m-%d")
        dates_path = self.path("split/split_dates.csv")
        outputs = [
            write_transactions(split.feature.frame, self.path("split/feature.csv")),
            write_transactions(split.label.frame, self.path("split/label.csv")),
        ]
        dates.to_csv(dates_path, index=False, lineterminator="\n")
        return outputs + [dates_path]

    def load_split(self) -> SplitResult:
        dates = pd.read_csv(self.path("split/split_dates.csv"), dtype={"user_id": str}, parse_dates=["split_date"])
        user_split = dates.set_index("user_id")["split_date"].sort_index()
        return SplitResult(
            feature=read_histories(self.path("split/feature.csv")),
            label=read_histories(self.path("split/label.csv")),
            split_date=user_split.max().date(),
            user_split_dates=user_split,
        )

    def save_bundle(self, bundle: FeatureBundle) -> list[Path]:
        truth_rows = [(user, item) for user in sorted(bundle.item_truth) for item in sorted(bundle.item_truth[user])]
        outputs = [
            save_feature_matrix(bundle.matrix, self.path("features/matrix.csv")),
            self._write(bundle.item_stats, "features/item_stats.csv"),
            self._write(pd.DataFrame(truth_rows, columns=["user_id", "item_id"]), "features/item_truth.csv"),
            self._write(bundle.recent_counts, "features/recent_counts.csv"),
            self._write(bundle.repurchase_rates.rename_axis("item_id").reset_index(), "features/repurchase_rates.csv"),
            dump_life_tables(bundle.life_tables, self.path("features/life_tables.csv")),
        ]
        forecasts = bundle.forecasts if bundle.forecasts is not None else pd.DataFrame()
        outputs.append(self._write(forecasts, "features/forecasts.csv"))
        return outputs

    def load_bundle(self) -> FeatureBundle:
        split = self.load_split()
        matrix = load_feature_matrix(self.path("features/matrix.csv"))
        labels = LabelSet(frame=matrix[["user_id", "category_id", "label"]].copy(), split_date=split.split_date)
        truth = self._read("features/item_truth.csv")
        rates = self._read("features/repurchase_rates.csv")
        return FeatureBundle(
            split=split,
            labels=labels,
            matrix=matrix,
            item_stats=self._read("features/item_stats.csv"),
            item_truth={user: set(group["item_id"]) for user, group in truth.groupby("user_id")},
            category_truth=build_category_truth(labels),
            repurchase_rates=rates.set_index("item_id")["repurchase_rate"],
            recent_counts=self._read("features/recent_counts.csv"),
            life_tables=load_life_tables(self.path("features/life_tables.csv")),
            forecasts=self._read("features/forecasts.csv"),
        )

    def _write(self, frame: pd.DataFrame, relative: str) -> Path:
        path = self.path(relative)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
        return path

    def _read(self, relative: str) -> pd.DataFrame:
        return pd.read_csv(self.path(relative), dtype=_ID_TYPES, keep_default_na=False)


def _relative(path: Path, root: Path) -> str:
    try:
        return Path(path).relative_to(root).as_posix()
    except ValueError:
        return Path(path).as_posix()
