"""Out-of-sample evaluation: daily portfolios, equity curves, and metrics.

Evaluation is deterministic: the actor's top-n targets by probability each
receive weight 1/n (the dummy class maps to cash, earning zero), the
portfolio rebalances daily at close, and dropout is disabled. Metrics use
252 trading days per year and a zero risk-free rate; transaction costs
default to zero but a cost rate can be supplied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbones import Network, policy_output
from .data import SectorPanel, SplitSpec
from .features import FeatureTensor

TRADING_DAYS_PER_YEAR = 252


class BacktestError(ValueError):
    pass


@dataclass
class EquityCurve:
    """Portfolio value per test day, normalized to start at 1.0."""

    dates: list
    values: np.ndarray
    daily_returns: np.ndarray

    def __post_init__(self):
        if (self.values <= 0).any():
            raise BacktestError("equity curve values must stay positive")

    @classmethod
    def from_values(cls, dates, values) -> "EquityCurve":
        values = np.asarray(values, dtype=np.float64)
        returns = values[1:] / values[:-1] - 1.0
        return cls(dates=list(dates), values=values, daily_returns=returns)


@dataclass
class MetricsReport:
    cumulative_return: float
    annualized_return: float
    annualized_volatility: float
    sharpe_ratio: float | None  # None marks undefined (zero volatility)
    max_drawdown: float

    KEYS = ("cumulative_return", "annualized_return", "annualized_volatility",
            "sharpe_ratio", "max_drawdown")

    def to_kv_text(self) -> str:
        lines = []
        for key in self.KEYS:
            value = getattr(self, key)
            lines.append(f"{key}={'nan' if value is None else repr(float(value))}")
        return "\n".join(lines) + "\n"

    def to_table_text(self) -> str:
        sr = "undefined" if self.sharpe_ratio is None else f"{self.sharpe_ratio:.4f}"
        return (
            f"cumulative return      {self.cumulative_return * 100:10.2f}%\n"
            f"annualized return      {self.annualized_return * 100:10.2f}%\n"
            f"annualized volatility  {self.annualized_volatility * 100:10.2f}%\n"
            f"sharpe ratio           {sr:>11}\n"
            f"max drawdown           {self.max_drawdown * 100:10.2f}%\n"
        )

    @classmethod
    def from_kv_text(cls, text: str) -> "MetricsReport":
        pairs = {}
        for line in text.strip().splitlines():
            key, _, value = line.partition("=")
            pairs[key.strip()] = float(value)
        missing = [k for k in cls.KEYS if k not in pairs]
        if missing:
            raise BacktestError(f"metrics text missing keys: {missing}")
        sr = pairs["sharpe_ratio"]
        return cls(cumulative_return=pairs["cumulative_return"],
                   annualized_return=pairs["annualized_return"],
                   annualized_volatility=pairs["annualized_volatility"],
                   sharpe_ratio=None if math.isnan(sr) else sr,
                   max_drawdown=pairs["max_drawdown"])


def allocate(probs, n: int) -> tuple[np.ndarray, float]:
    """Equal 1/n weights on the n most probable targets; dummy goes to cash.

    Returns (sector weight vector, cash weight); ties break to the lower
    target index.
    """
    p = np.asarray(probs, dtype=np.float64)
    n_targets = p.shape[-1]
    n_sectors = n_targets - 1
    if not 1 <= n <= n_sectors:
        raise BacktestError(f"top-n size {n} out of range [1, {n_sectors}]")
    order = np.lexsort((np.arange(n_targets), -p))
    weights = np.zeros(n_sectors)
    cash = 0.0
    for target in order[:n]:
        if target == n_sectors:
            cash += 1.0 / n
        else:
            weights[target] += 1.0 / n
    return weights, cash


def network_policy(net: Network):
    """Deterministic evaluation-mode policy (no dropout, no sampling)."""

    def policy(window: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = net.forward(window[None])
        return policy_output(logits.data[0]).probs

    return policy


def run_backtest(policy, panel: SectorPanel, features: FeatureTensor, split: SplitSpec,
                 top_n: int = 10, seq_len: int = 10, cost_rate: float = 0.0) -> EquityCurve:
    """Replay the policy over the test split with daily rebalancing.

    ``policy`` maps an (L, d) feature window to a probability vector over
    S + 1 targets. Each day's realized return is the weight-averaged
    next-day simple return of the held sectors; cash earns zero. The curve
    has one row per test day, starting at 1.0.
    """
    lo, hi = split.test_indices(panel)
    start = max(lo, features.valid_from + seq_len - 1)
    if start >= hi:
        raise BacktestError("test range leaves no tradable days after warmup")
    values = [1.0]
    dates = [panel.dates[start]]
    prev_weights = np.zeros(panel.n_sectors)
    prev_cash = 1.0
    for t in range(start, hi):
        probs = np.asarray(policy(features.window(t, seq_len)), dtype=np.float64)
        weights, cash = allocate(probs, top_n)
        growth = panel.close[:, t + 1] / panel.close[:, t] - 1.0
        day_return = float((weights * growth).sum())
        if cost_rate:
            turnover = float(np.abs(weights - prev_weights).sum() + abs(cash - prev_cash))
            day_return -= cost_rate * turnover
        values.append(values[-1] * (1.0 + day_return))
        dates.append(panel.dates[t + 1])
        prev_weights, prev_cash = weights, cash
    return EquityCurve.from_values(dates, values)


def max_drawdown(values: np.ndarray) -> float:
    """Worst peak-to-trough decline via a streaming running maximum."""
    peak = values[0]
    worst = 0.0
    for v in values:
        peak = v if v > peak else peak
        worst = min(worst, v / peak - 1.0)
    return float(worst)


def compute_metrics(curve: EquityCurve) -> MetricsReport:
    """The five standard metrics from an equity curve.

    CR is the end-to-start ratio minus one; AR compounds CR to a 252-day
    year; AV is the sample standard deviation of daily returns annualized
    by sqrt(252); SR is the annualized mean-over-std of daily returns at a
    zero risk-free rate, undefined when volatility is zero; MDD is the
    worst running-peak decline (a non-positive number).
    """
    values = curve.values
    if len(values) < 2:
        raise BacktestError(f"need at least 2 curve points, got {len(values)}")
    n_days = len(values) - 1
    cr = float(values[-1] / values[0] - 1.0)
    ar = float((1.0 + cr) ** (TRADING_DAYS_PER_YEAR / n_days) - 1.0)
    returns = curve.daily_returns
    std = float(returns.std(ddof=1)) if len(returns) >= 2 else 0.0
    av = std * math.sqrt(TRADING_DAYS_PER_YEAR)
    if std > 0.0:
        sharpe = float(returns.mean() / std * math.sqrt(TRADING_DAYS_PER_YEAR))
    else:
        sharpe = None
    return MetricsReport(cumulative_return=cr, annualized_return=ar,
                         annualized_volatility=av, sharpe_ratio=sharpe,
                         max_drawdown=max_drawdown(values))


def curve_to_text(curve: EquityCurve) -> str:
    lines = ["date,value,daily_return"]
    for i, (day, value) in enumerate(zip(curve.dates, curve.values)):
        ret = "" if i == 0 else repr(float(curve.daily_returns[i - 1]))
        lines.append(f"{day.isoformat()},{repr(float(value))},{ret}")
    return "\n".join(lines) + "\n"
