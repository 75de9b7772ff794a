"""Technical indicators and the unified per-sector feature tensor.

Each sector contributes six indicator columns (three moving-average ratios,
two momentum changes, one rolling volatility), concatenated sector-major
into rows x_t. Rows before ``valid_from`` carry NaN and are excluded from
episodes rather than zero-filled. Normalization statistics come from the
training rows only, so no test information leaks into the inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .data import SectorPanel


class FeatureError(ValueError):
    pass


def _as_series(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=np.float64)
    if p.ndim != 1:
        raise FeatureError(f"expected a 1-d price series, got shape {p.shape}")
    return p


def sma(prices, k: int) -> np.ndarray:
    """k-day simple moving average; NaN before the first full window."""
    p = _as_series(prices)
    if k < 1:
        raise FeatureError(f"sma window must be >= 1, got {k}")
    out = np.full(p.shape, np.nan)
    if k <= p.size:
        out[k - 1:] = np.lib.stride_tricks.sliding_window_view(p, k).mean(axis=-1)
    return out


def momentum(prices, k: int) -> np.ndarray:
    """Price change over a k-day lag; NaN before index k."""
    p = _as_series(prices)
    if k < 1:
        raise FeatureError(f"momentum lag must be >= 1, got {k}")
    out = np.full(p.shape, np.nan)
    if k < p.size:
        out[k:] = p[k:] - p[:-k]
    return out


def log_returns(prices) -> np.ndarray:
    p = _as_series(prices)
    if (p <= 0).any():
        raise FeatureError("log returns need strictly positive prices")
    out = np.full(p.shape, np.nan)
    out[1:] = np.log(p[1:] / p[:-1])
    return out


def volatility(prices, k: int) -> np.ndarray:
    """Sample standard deviation (divisor k-1) of the last k daily log returns."""
    if k < 2:
        raise FeatureError(f"volatility window must be >= 2, got {k}")
    r = log_returns(prices)[1:]
    out = np.full(len(r) + 1, np.nan)
    if k <= r.size:
        windows = np.lib.stride_tricks.sliding_window_view(r, k)
        out[k:] = windows.std(axis=-1, ddof=1)
    return out


@dataclass(frozen=True)
class FeatureConfig:
    sma_windows: tuple[int, ...] = (10, 20, 50)
    momentum_lags: tuple[int, ...] = (5, 10)
    vol_window: int = 20
    normalize: bool = True

    @property
    def per_sector(self) -> int:
        return len(self.sma_windows) + len(self.momentum_lags) + 1


@dataclass
class FeatureTensor:
    """T x d feature matrix; d = S sectors x F indicators, sector-major."""

    values: np.ndarray
    feature_names: list[str]
    valid_from: int

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def window(self, t: int, length: int) -> np.ndarray:
        if t - length + 1 < self.valid_from:
            raise FeatureError(
                f"window ending at {t} with length {length} reaches before valid_from={self.valid_from}"
            )
        return self.values[t - length + 1:t + 1]

    def check(self) -> None:
        tail = self.values[self.valid_from:]
        if not np.isfinite(tail).all():
            raise FeatureError("non-finite feature values at or after valid_from")


def build_features(panel: SectorPanel, config: FeatureConfig = FeatureConfig(),
                   stats_end: int | date | None = None) -> FeatureTensor:
    """Compute all indicators, normalize, and concatenate sector-major.

    Moving averages are stored as the ratio P_t / SMA - 1, momentum as the
    fractional change over the lag, volatility raw; each column is then
    z-scored with statistics over rows [valid_from, stats_end]. Pass the
    training-split end as ``stats_end`` to keep test data out of the
    statistics (defaults to the last row).
    """
    s, t = panel.close.shape
    cols: list[np.ndarray] = []
    names: list[str] = []
    for si, sector in enumerate(panel.sector_ids):
        p = panel.close[si]
        for k in config.sma_windows:
            cols.append(p / sma(p, k) - 1.0)
            names.append(f"{sector}|sma{k}_ratio")
        for k in config.momentum_lags:
            shifted = np.full(t, np.nan)
            shifted[k:] = p[:-k]
            cols.append(momentum(p, k) / shifted)
            names.append(f"{sector}|mom{k}")
        cols.append(volatility(p, config.vol_window))
        names.append(f"{sector}|vol{config.vol_window}")
    values = np.stack(cols, axis=1)

    valid_from = max(max(config.sma_windows) - 1,
                     max(config.momentum_lags),
                     config.vol_window)
    if valid_from >= t:
        raise FeatureError(f"panel with {t} days has no fully valid feature rows")

    if config.normalize:
        if stats_end is None:
            end_idx = t - 1
        elif isinstance(stats_end, date):
            end_idx = panel.last_index_at_or_before(stats_end)
        else:
            end_idx = int(stats_end)
        if end_idx < valid_from:
            raise FeatureError(f"stats_end index {end_idx} precedes valid_from {valid_from}")
        train_rows = values[valid_from:end_idx + 1]
        mu = train_rows.mean(axis=0)
        sigma = train_rows.std(axis=0)
        sigma = np.where(sigma <= 1e-12, 1.0, sigma)  # constant columns stay at 0
        values = (values - mu) / sigma

    tensor = FeatureTensor(values=values, feature_names=names, valid_from=valid_from)
    tensor.check()
    return tensor


def dump_features(tensor: FeatureTensor, panel: SectorPanel, fh) -> None:
    """Write the tensor as delimited text for external inspection."""
    fh.write("date," + ",".join(tensor.feature_names) + "\n")
    for t in range(tensor.values.shape[0]):
        row = ",".join(repr(float(v)) for v in tensor.values[t])
        fh.write(f"{panel.dates[t].isoformat()},{row}\n")
