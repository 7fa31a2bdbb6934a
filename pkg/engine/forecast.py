"""
ARIMA(p, d, 0) fits on purchase gaps and consumption rates per (user, category).

With q fixed at 0 each candidate is an AR model on the d-times differenced
series, fitted by conditional least squares and ranked by AIC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from config.settings import ForecastConfig
from engine.errors import ForecastError
from engine.models import ArimaFit, ArimaOrder, Histories
from engine.parallel import chunked, parallel_map

logger = logging.getLogger(__name__)

_VARIANCE_FLOOR = 1e-12


def fit_order(series: np.ndarray | list[float], order: ArimaOrder) -> ArimaFit | None:
    """
    Fit one ARIMA(p, d, 0) candidate by conditional least squares.

    Returns None when the candidate is not estimable (too short or singular design).
    """
    x = np.asarray(series, dtype=float)
    p, d = order.p, order.d
    if p + d >= len(x):
        return None
    z = np.diff(x, n=d)
    n_eff = len(z) - p
    if n_eff < p + 2:
        return None

    columns = [np.ones(n_eff)] + [z[p - lag : len(z) - lag] for lag in range(1, p + 1)]
    design = np.column_stack(columns)
    target = z[p:]
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < p + 1:
        return None

    residuals = target - design @ coef
    variance = float(residuals @ residuals) / n_eff
    aic = n_eff * math.log(max(variance, _VARIANCE_FLOOR)) + 2 * (p + 2)

    next_z = coef[0] + sum(coef[lag] * z[-lag] for lag in range(1, p + 1))
    forecast = _undifference(x, d, float(next_z))
    if not (math.isfinite(aic) and math.isfinite(forecast)):
        return None

    return ArimaFit(
        order=order,
        ar_coefficients=tuple(float(c) for c in coef[1:]),
        intercept=float(coef[0]),
        residual_variance=variance,
        aic=aic,
        n_obs=n_eff,
        forecast=forecast,
    )


def _undifference(x: np.ndarray, d: int, next_value: float) -> float:
    levels = [x]
    for _ in range(d - 1):
        levels.append(np.diff(levels[-1]))
    value = next_value
    for level in reversed(levels[:d]):
        value = float(level[-1]) + value
    return value


def candidate_orders(n_obs: int, max_p: int = 3, max_d: int = 3) -> list[ArimaOrder]:
    """Search grid p <= max_p, d <= max_d, q = 0 with p + d < n_obs."""
    return [ArimaOrder(p, d) for d in range(max_d + 1) for p in range(max_p + 1) if p + d < n_obs]


def fit_arima(series: np.ndarray | list[float], max_p: int = 3, max_d: int = 3) -> ArimaFit:
    """
    Auto-fit ARIMA over the (max_p, max_d, 0) grid and keep the minimum-AIC model.

    Raises:
        ForecastError: series shorter than 4 values, or every candidate singular
    """
    x = np.asarray(series, dtype=float)
    if len(x) < 4:
        raise ForecastError(f"series of length {len(x)} is too short for an ARIMA fit")
    if not np.all(np.isfinite(x)):
        raise ForecastError("series contains non-finite values")

    best: ArimaFit | None = None
    for order in candidate_orders(len(x), max_p, max_d):
        fit = fit_order(x, order)
        if fit is not None and (best is None or fit.aic < best.aic):
            best = fit
    if best is None:
        raise ForecastError(f"no estimable ARIMA candidate for a series of length {len(x)}")
    return best


def predict_next(
    series: np.ndarray, fallback: float | None, config: ForecastConfig
) -> tuple[float | None, str]:
    """
    One-step forecast with the fallback chain ARIMA → series mean → category median.

    Returns:
        (prediction or None when nothing is known, label of the model used)
    """
    values = np.asarray(series, dtype=float)
    if len(values) >= config.min_series:
        try:
            fit = fit_arima(values, config.max_p, config.max_d)
            return fit.forecast, str(fit.order)
        except ForecastError as e:
            logger.debug("ARIMA fallback to mean: %s", e)
    if len(values):
        return float(values.mean()), "mean"
    if fallback is not None and math.isfinite(fallback):
        return float(fallback), "category_median"
    return None, "none"


def _clamp(value: float, cap: float) -> float:
    return float(min(max(value, -cap), cap))


def _gap_feature(gaps, days_since_last, category_median_gap, config) -> tuple[float, str]:
    predicted, model = predict_next(gaps, category_median_gap, config)
    if predicted is None:
        return config.feature_cap, model
    return _clamp(max(predicted, 0.0) - days_since_last, config.feature_cap), model


def _depletion_feature(quantities, gaps, days_since_last, category_median_rate, config) -> tuple[float, str]:
    quantities = np.asarray(quantities, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if len(quantities) == 0:
        return config.feature_cap, "none"
    # quantity bought at purchase i is consumed over the gap that follows it
    rates = quantities[: len(gaps)] / gaps
    predicted, model = predict_next(rates, category_median_rate, config)
    if predicted is None:
        return config.feature_cap, model
    depletion_days = float(quantities[-1]) / max(predicted, config.rate_epsilon)
    return _clamp(depletion_days - days_since_last, config.feature_cap), model


def forecast_gap_feature(
    gaps: np.ndarray | list[float],
    days_since_last: float,
    category_median_gap: float | None = None,
    config: ForecastConfig | None = None,
) -> float:
    """
    ARIMA(date): predicted next gap minus days since the last purchase.

    Positive means the next purchase is still ahead, negative means overdue.
    """
    return _gap_feature(gaps, days_since_last, category_median_gap, config or ForecastConfig())[0]


def forecast_depletion_feature(
    quantities: np.ndarray | list[float],
    gaps: np.ndarray | list[float],
    days_since_last: float,
    category_median_rate: float | None = None,
    config: ForecastConfig | None = None,
) -> float:
    """
    ARIMA(rate): days until the last purchase runs out, minus days since it was bought.

    Rates are units per day over each completed interval.
    """
    return _depletion_feature(
        quantities, gaps, days_since_last, category_median_rate, config or ForecastConfig()
    )[0]


@dataclass(frozen=True)
class PairSeries:
    user_id: str
    category_id: str
    gaps: np.ndarray
    quantities: np.ndarray
    days_since_last: int


def pair_series(feature: Histories, reference: pd.Series) -> list[PairSeries]:
    """Gap and quantity series of every (user, category), in (user, category) order."""
    daily = (
        feature.frame.groupby(["user_id", "category_id", "order_date"], sort=True)["quantity"]
        .sum()
        .reset_index()
    )
    if daily.empty:
        return []
    keys = daily["user_id"].to_numpy() + "\x00" + daily["category_id"].to_numpy()
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    bounds = np.r_[starts, len(daily)]
    days = (daily["order_date"] - pd.Timestamp("1970-01-01")).dt.days.to_numpy()
    quantities = daily["quantity"].to_numpy(dtype=float)
    users = daily["user_id"].to_numpy()
    categories = daily["category_id"].to_numpy()
    ref_days = (reference - pd.Timestamp("1970-01-01")).dt.days.to_dict()

    series = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        user = users[lo]
        series.append(
            PairSeries(
                user_id=user,
                category_id=categories[lo],
                gaps=np.diff(days[lo:hi]).astype(float),
                quantities=quantities[lo:hi],
                days_since_last=int(ref_days[user] - days[hi - 1]),
            )
        )
    return series


def category_medians(series: list[PairSeries]) -> tuple[dict[str, float], dict[str, float]]:
    """Median gap and median consumption rate per category, pooled over users."""
    gaps: dict[str, list[np.ndarray]] = {}
    rates: dict[str, list[np.ndarray]] = {}
    for s in series:
        if len(s.gaps):
            gaps.setdefault(s.category_id, []).append(s.gaps)
            rates.setdefault(s.category_id, []).append(s.quantities[: len(s.gaps)] / s.gaps)
    median_gap = {c: float(np.median(np.concatenate(v))) for c, v in gaps.items()}
    median_rate = {c: float(np.median(np.concatenate(v))) for c, v in rates.items()}
    return median_gap, median_rate


def _forecast_partition(task: tuple[list[PairSeries], dict, dict, ForecastConfig]) -> list[tuple]:
    series, median_gap, median_rate, config = task
    rows = []
    for s in series:
        date_value, date_model = _gap_feature(
            s.gaps, s.days_since_last, median_gap.get(s.category_id), config
        )
        rate_value, rate_model = _depletion_feature(
            s.quantities, s.gaps, s.days_since_last, median_rate.get(s.category_id), config
        )
        rows.append((s.user_id, s.category_id, date_value, rate_value, date_model, rate_model))
    return rows


def compute_forecasts(
    feature: Histories, reference: pd.Series, config: ForecastConfig | None = None, workers: int = 1
) -> pd.DataFrame:
    """
    ARIMA(date) and ARIMA(rate) features for every (user, category) of the feature period.

    Pairs are fitted independently, partitioned by user across `workers` processes.

    Returns:
        Frame with user_id, category_id, arima_date, arima_rate, date_model, rate_model
    """
    config = config or ForecastConfig()
    series = pair_series(feature, reference)
    median_gap, median_rate = category_medians(series)
    partitions = chunked(series, max(1, workers) * 4)
    tasks = [(part, median_gap, median_rate, config) for part in partitions]
    rows = [row for part in parallel_map(_forecast_partition, tasks, workers) for row in part]
    forecasts = pd.DataFrame(
        rows, columns=["user_id", "category_id", "arima_date", "arima_rate", "date_model", "rate_model"]
    )
    fitted = forecasts["date_model"].str.startswith("arima").sum()
    logger.info("Forecast %d pairs (%d ARIMA date fits)", len(forecasts), int(fitted))
    return forecasts
