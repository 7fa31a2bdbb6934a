from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from engine.errors import ConfigError


def _split_list(value: Any) -> Any:
    """Accept `a,b,c` strings for list-valued keys."""
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class Section(BaseModel):
    """Base for config sections: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class PathsConfig(Section):
    transactions: Path = Field(Path("data/transactions.csv"), description="Input transaction CSV")
    work_dir: Path = Field(Path("work"), description="Directory for stage artifacts and the manifest")
    synth_dir: Path = Field(Path("data"), description="Output directory of the `synth` stage")


class ColumnConfig(Section):
    """Column remapping for non-canonical transaction files."""

    user: str = Field("user_id", description="Column holding the user id")
    order: str = Field("order_id", description="Column holding the order id")
    date: str = Field("order_date", description="Column holding the order date (YYYY-MM-DD)")
    item: str = Field("item_id", description="Column holding the item id")
    category: str = Field("category_id", description="Column holding the category id")
    quantity: str = Field("quantity", description="Column holding the purchased quantity")


class IngestConfig(Section):
    max_reject_fraction: float = Field(
        0.5, ge=0.0, le=1.0, description="Abort when more than this share of rows is rejected"
    )


class SplitConfig(Section):
    label_window_days: int = Field(7, gt=0, description="Days held out at the end to build labels (m)")
    history_days: int = Field(548, gt=0, description="Days of history used for features")
    engaged_only: bool = Field(False, description="Keep only highly engaged users")
    engaged_category_threshold: int = Field(
        25, gt=0, description="Distinct categories a user needs to exceed to count as engaged"
    )
    protocol: Literal["window", "last_basket"] = Field(
        "window", description="Label window at corpus end, or each user's last basket"
    )

    @model_validator(mode="after")
    def window_inside_history(self) -> SplitConfig:
        if self.label_window_days >= self.history_days:
            raise ValueError("label_window_days must be smaller than history_days")
        return self


class SurvivalConfig(Section):
    min_observations: int = Field(2, ge=1, description="Observations a life table needs for non-trivial curves")
    window_days: int = Field(3, ge=1, description="Half width of the cum_survival window")


class ForecastConfig(Section):
    max_p: int = Field(3, ge=0, le=3, description="Largest autoregressive order searched")
    max_d: int = Field(3, ge=0, le=3, description="Largest differencing degree searched")
    min_series: int = Field(4, ge=2, description="Series length needed before an ARIMA fit is tried")
    feature_cap: float = Field(365.0, gt=0, description="Forecast features are clamped to +/- this")
    rate_epsilon: float = Field(1e-6, gt=0, description="Floor for predicted consumption rates")


class TrainConfig(Section):
    learning_rate: float = Field(1e-3, gt=0, description="Optimizer step size")
    epochs: int = Field(50, gt=0, description="Maximum training epochs")
    batch_size: int = Field(256, gt=0, description="Mini-batch size")
    patience: int = Field(5, gt=0, description="Epochs without validation improvement before stopping")
    positive_class_weight: float | None = Field(
        None, gt=0, description="Weight of positive rows; unset uses the negatives/positives ratio"
    )
    optimizer: Literal["adam", "sgd"] = Field("adam", description="adam (adaptive moments) or plain sgd")
    validation_fraction: float = Field(0.1, gt=0, lt=1, description="Share of training users held out")


class IcConfig(Section):
    alpha: float | None = Field(None, ge=0, le=1, description="Recency weight; unset means tune it")
    beta: float | None = Field(None, ge=0, le=1, description="Frequency weight; unset means tune it")
    grid_step: float = Field(0.1, gt=0, le=1, description="Step of the alpha/beta grid over [0, 1]")
    tune_k: int = Field(10, gt=0, description="Cut-off of the NDCG used for alpha/beta tuning")


class FilterConfig(Section):
    min_item_purchases: int = Field(2, ge=0, description="Purchases of an item needed inside the lookback")
    lookback_months: int = Field(6, gt=0, description="Lookback of the purchase-count filter (n)")
    repurchase_rate_threshold: float = Field(
        0.0, ge=0, le=1, description="Drop items whose repurchase rate is below this (0 disables)"
    )
    excluded_category_ids: frozenset[str] = Field(
        frozenset(), description="Comma separated categories never recommended"
    )

    @field_validator("excluded_category_ids", mode="before")
    @classmethod
    def split_ids(cls, value: Any) -> Any:
        return _split_list(value)


class RecommendConfig(Section):
    top_k: int = Field(10, ge=1, description="Length of the emitted recommendation lists")
    merge_order: Literal["round_robin", "category_first"] = Field(
        "round_robin", description="round_robin sorts by (IR, Rk_PC); category_first by (Rk_PC, IR)"
    )
    output_format: Literal["csv", "jsonl"] = Field("csv", description="Recommendation file format")
    apply_filters: bool = Field(True, description="Apply deployment filters before top-K")


class EvalConfig(Section):
    folds: int = Field(5, ge=2, description="Cross-validation folds")
    ks: list[int] = Field([3, 5, 10], description="Cut-offs for recall@K and NDCG@K")
    label_windows: list[int] = Field([], description="Label windows compared by the sensitivity report")
    importance_repeats: int = Field(5, ge=1, description="Shuffles per feature for permutation importance")
    report_filtered: bool = Field(True, description="Also report PCIC after deployment filters")

    @field_validator("ks", "label_windows", mode="before")
    @classmethod
    def split_ints(cls, value: Any) -> Any:
        return _split_list(value)


class SynthConfig(Section):
    n_users: int = Field(1000, gt=0, description="Synthetic shoppers")
    n_categories: int = Field(30, gt=0, description="Synthetic categories")
    items_per_category: int = Field(10, gt=0, description="Items in each category")
    horizon_days: int = Field(540, gt=0, description="Days simulated")
    start_date: date = Field(date(2022, 1, 1), description="First simulated day")
    mean_gap_days: float = Field(14.0, gt=0, description="Mean of the per-pair mean gap")
    mean_gap_shape: float = Field(2.0, gt=0, description="Gamma shape of the per-pair mean gap draw")
    gap_shape: float = Field(4.0, gt=0, description="Gamma shape of individual gaps (1 = exponential)")
    category_participation: float | None = Field(
        None, gt=0, le=1, description="Share of categories each user buys; unset draws it per user"
    )
    popularity_skew: float = Field(1.0, ge=0, description="Zipf exponent of item popularity")
    preference_concentration: float = Field(
        2.0, gt=0, description="Dirichlet concentration of per-user item preferences"
    )
    item_loyalty: float = Field(
        0.9, ge=0, le=1, description="Chance a trip buys the user's staple item of the category"
    )
    quantity_mean: float = Field(1.5, ge=1, description="Mean units per staple purchase")
    multi_item_prob: float = Field(0.1, ge=0, le=1, description="Chance a trip buys a second item of the category")


class RunConfig(BaseSettings):
    """Run configuration with environment variable support (BIA_SPLIT__LABEL_WINDOW_DAYS=1)."""

    model_config = SettingsConfigDict(
        env_prefix="BIA_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="forbid",
    )

    seed: int = Field(42, description="Seed for every random draw of the run")
    workers: int = Field(1, ge=1, description="Parallelism degree of stage-internal work")

    paths: PathsConfig = PathsConfig()
    col: ColumnConfig = ColumnConfig()
    ingest: IngestConfig = IngestConfig()
    split: SplitConfig = SplitConfig()
    survival: SurvivalConfig = SurvivalConfig()
    forecast: ForecastConfig = ForecastConfig()
    train: TrainConfig = TrainConfig()
    ic: IcConfig = IcConfig()
    filter: FilterConfig = FilterConfig()
    recommend: RecommendConfig = RecommendConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready copy of every setting, as stored in the run manifest."""
        data = self.model_dump(mode="json")
        data["filter"]["excluded_category_ids"] = sorted(data["filter"]["excluded_category_ids"])
        return data

    def with_overrides(self, overrides: dict[str, Any]) -> RunConfig:
        """Copy of this config with dotted-key overrides applied and validated."""
        merged = _deep_merge(self.snapshot(), _nest(overrides))
        return _validate(merged)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected `key = value`, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_cli_overrides(pairs: list[str]) -> dict[str, str]:
    """Turn repeated `--set key=value` options into a flat override map."""
    overrides: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _nest(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) > 2 or not all(parts):
            raise ConfigError(f"unknown config key {key!r}")
        if len(parts) == 1:
            nested[key] = value
        else:
            section = nested.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"config key {parts[0]!r} is a section, not a value")
            section[parts[1]] = value
    return nested


def _deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _validate(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_settings(path: Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Load the run configuration.

    Args:
        path: `key = value` config file, or a run manifest (`.json`) to replay
        overrides: dotted-key values that win over the file

    Returns:
        Validated RunConfig
    """
    data: dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            data = json.loads(text).get("config", {})
        else:
            data = _nest(parse_config_text(text))
    if overrides:
        data = _deep_merge(data, _nest(overrides))
    return _validate(data)


def describe_keys() -> list[tuple[str, str, str]]:
    """(dotted key, default, description) for every setting."""
    rows: list[tuple[str, str, str]] = []
    for name, field in RunConfig.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, Section):
            for sub_name, sub_field in annotation.model_fields.items():
                default = sub_field.default
                if isinstance(default, (list, frozenset, set)):
                    default = ",".join(str(v) for v in sorted(default))
                rows.append((f"{name}.{sub_name}", str(default), sub_field.description or ""))
        else:
            rows.append((name, str(field.default), field.description or ""))
    return rows
