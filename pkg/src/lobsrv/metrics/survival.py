"""Censoring-aware evaluation: Kaplan-Meier, IPCW Brier score and AUC, C-index, RCLL."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

N_HORIZONS = 20
LOG_FLOOR = math.log(1e-300)


class UndefinedMetric(float):
    """NaN that marks a metric whose comparison set is empty."""

    def __new__(cls):
        return super().__new__(cls, math.nan)

    def __repr__(self) -> str:
        return "UNDEFINED"


UNDEFINED = UndefinedMetric()


def is_undefined(value) -> bool:
    return isinstance(value, float) and math.isnan(value)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function equal to ``values[j]`` on ``[times[j], times[j+1])`` and 1 before ``times[0]``."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        return np.where(idx < 0, 1.0, self.values[np.maximum(idx, 0)])

    def left_limit(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left") - 1
        return np.where(idx < 0, 1.0, self.values[np.maximum(idx, 0)])


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit estimate ``prod_{t_j <= t} (1 - d_j / n_j)``; tied times decrement together."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.float64)
    if times.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if np.any(times <= 0):
        raise ValueError("observation times must be positive")
    uniq, inverse = np.unique(times, return_inverse=True)
    d = np.bincount(inverse, weights=events, minlength=len(uniq))
    exits = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    at_risk = len(times) - np.concatenate([[0.0], np.cumsum(exits)[:-1]])
    return StepFunction(uniq, np.cumprod(1.0 - d / at_risk))


def censoring_survival(durations, deltas) -> StepFunction:
    """``G(t)``: Kaplan-Meier with the roles of event and censoring swapped."""
    return kaplan_meier(durations, 1.0 - np.asarray(deltas, dtype=np.float64))


@dataclass
class Diagnostics:
    zero_censoring_weight: int = 0
    clamped_log_terms: int = 0
    undefined_horizons: list = field(default_factory=list)


def _inverse(g: np.ndarray, diag: Diagnostics | None) -> np.ndarray:
    zero = g <= 0
    if diag is not None:
        diag.zero_censoring_weight += int(zero.sum())
    with np.errstate(divide="ignore"):
        return np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, g))


def ipcw_weights(t: float, durations, deltas, G: StepFunction, diag: Diagnostics | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Case weights ``delta_i 1{T_i <= t} / G(T_i-)`` and control weights ``1{T_i > t} / G(t)``.

    Samples whose needed ``G`` value is zero get weight 0 and are counted in ``diag``.
    """
    T = np.asarray(durations, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    case = (T <= t) & (d == 1)
    ctrl = T > t
    w_case = np.zeros_like(T)
    if case.any():
        w_case[case] = _inverse(G.left_limit(T[case]), diag)
    w_ctrl = np.zeros_like(T)
    if ctrl.any():
        w_ctrl[ctrl] = _inverse(G(np.full(int(ctrl.sum()), t)), diag)
    return w_case, w_ctrl


def brier_at(t: float, surv_t, durations, deltas, G: StepFunction, diag: Diagnostics | None = None) -> float:
    """``(1/n) sum_i w_i(t) (S(t|x_i) - 1{T_i > t})^2``."""
    s = np.asarray(surv_t, dtype=np.float64)
    T = np.asarray(durations, dtype=np.float64)
    w_case, w_ctrl = ipcw_weights(t, T, deltas, G, diag)
    alive = (T > t).astype(np.float64)
    return float(np.mean((w_case + w_ctrl) * (s - alive) ** 2))


def auc_at(t: float, surv_t, durations, deltas, G: StepFunction, ties: str = "formula", diag: Diagnostics | None = None) -> float:
    """Cumulative/dynamic AUC with risk ``1 - S(t|x)``.

    ``ties="formula"`` credits a control whose risk equals the case's risk
    fully (``r_j <= r_i``); ``ties="half"`` credits it 0.5.
    """
    if ties not in ("formula", "half"):
        raise ValueError(f"ties must be 'formula' or 'half', got {ties!r}")
    r = 1.0 - np.asarray(surv_t, dtype=np.float64)
    T = np.asarray(durations, dtype=np.float64)
    w_case, _ = ipcw_weights(t, T, deltas, G, diag)
    ctrl = T > t
    n_ctrl = int(ctrl.sum())
    case_w = w_case.sum()
    if n_ctrl == 0 or case_w <= 0:
        return UNDEFINED
    r_ctrl = np.sort(r[ctrl])
    cases = np.flatnonzero(w_case > 0)
    below = np.searchsorted(r_ctrl, r[cases], side="right")  # controls with r_j <= r_i
    if ties == "half":
        strict = np.searchsorted(r_ctrl, r[cases], side="left")
        below = 0.5 * (below + strict)
    return float(np.sum(w_case[cases] * below) / (n_ctrl * case_w))


def c_index(risk, durations, deltas) -> float:
    """Harrell's concordance over pairs ``T_i < T_j`` with ``delta_i = 1``; risk ties count 0.5."""
    r = np.asarray(risk, dtype=np.float64)
    T = np.asarray(durations, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    order = np.argsort(T, kind="stable")
    T, d, r = T[order], d[order], r[order]
    num = 0.0
    den = 0
    for i in np.flatnonzero(d == 1):
        later = T > T[i]
        n = int(later.sum())
        if n == 0:
            continue
        rj = r[later]
        num += float(np.sum(r[i] > rj) + 0.5 * np.sum(r[i] == rj))
        den += n
    return num / den if den else UNDEFINED


def horizon_grid(durations, deltas, n: int = N_HORIZONS, lo_q: float = 0.10, hi_q: float = 0.50) -> np.ndarray:
    """``n`` equally spaced horizons between two quantiles of the executed samples' times."""
    T = np.asarray(durations, dtype=np.float64)[np.asarray(deltas) == 1]
    if T.size == 0:
        raise ValueError("no executed samples to place evaluation horizons")
    lo, hi = np.quantile(T, [lo_q, hi_q])
    if not hi > lo:
        raise ValueError(f"degenerate horizon window [{lo}, {hi}]")
    return np.linspace(lo, hi, n)


def integrate(grid, values) -> float:
    """Trapezoid integral of ``values`` over ``grid`` divided by the grid span."""
    g = np.asarray(grid, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(g)) / (g[-1] - g[0]))


def ibs(grid, surv, durations, deltas, G: StepFunction, diag: Diagnostics | None = None) -> float:
    """Integrated Brier score; ``surv[h, i]`` is ``S(grid[h] | x_i)``."""
    return integrate(grid, [brier_at(t, s, durations, deltas, G, diag) for t, s in zip(grid, surv)])


def iauc(grid, surv, durations, deltas, G: StepFunction, ties: str = "formula", diag: Diagnostics | None = None) -> float:
    """Integrated AUC over the horizons where it is defined."""
    vals = [auc_at(t, s, durations, deltas, G, ties, diag) for t, s in zip(grid, surv)]
    return _integrate_defined(grid, vals, diag)


def _integrate_defined(grid, values, diag: Diagnostics | None) -> float:
    grid = np.asarray(grid, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(vals)
    if not ok.all():
        log.warning("AUC undefined at %d of %d horizons; excluded from IAUC", int((~ok).sum()), len(vals))
        if diag is not None:
            diag.undefined_horizons.extend(grid[~ok].tolist())
    if ok.sum() == 0:
        return UNDEFINED
    if ok.sum() == 1:
        return float(vals[ok][0])
    return integrate(grid[ok], vals[ok])


def rcll_eval(log_density_t, log_survival_t, deltas, diag: Diagnostics | None = None) -> float:
    """Mean of ``-[delta log f(T) + (1 - delta) log S(T)]``; log terms floored at ``log(1e-300)``."""
    d = np.asarray(deltas, dtype=np.float64)
    lf = np.asarray(log_density_t, dtype=np.float64)
    ls = np.asarray(log_survival_t, dtype=np.float64)
    used = np.where(d == 1, lf, ls)
    low = ~(used >= LOG_FLOOR)
    if diag is not None:
        diag.clamped_log_terms += int(low.sum())
    used = np.where(low, LOG_FLOOR, used)
    return float(-np.mean(used))


# -- reports --------------------------------------------------------------

SCALARS = ("rcll", "ibs", "iauc", "cindex")


@dataclass
class MetricRow:
    metric: str
    horizon: float | None
    value: float
    n_effective: int


@dataclass
class MetricReport:
    rows: list[MetricRow]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def scalar(self, name: str) -> float:
        for row in self.rows:
            if row.metric == name and row.horizon is None:
                return row.value
        raise KeyError(name)

    def scalars(self) -> dict[str, float]:
        return {r.metric: r.value for r in self.rows if r.horizon is None}

    def curve(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [(r.horizon, r.value) for r in self.rows if r.metric == name and r.horizon is not None]
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "horizon", "value", "n_effective"])
            for r in self.rows:
                w.writerow([r.metric, "" if r.horizon is None else repr(float(r.horizon)), repr(float(r.value)), r.n_effective])


def read_metric_csv(path) -> MetricReport:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            h = None if rec["horizon"] == "" else float(rec["horizon"])
            rows.append(MetricRow(rec["metric"], h, float(rec["value"]), int(rec["n_effective"])))
    return MetricReport(rows)


def evaluate(
    survival_fn: Callable[[float], np.ndarray],
    log_density_t,
    log_survival_t,
    durations,
    deltas,
    grid=None,
    ties: str = "formula",
) -> MetricReport:
    """All four scalar metrics plus per-horizon AUC and Brier curves.

    ``survival_fn(t)`` returns ``S(t | x_i)`` for every sample; the log
    terms are evaluated at each sample's own observed time.
    """
    T = np.asarray(durations, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    diag = Diagnostics()
    if grid is None:
        grid = horizon_grid(T, d)
    grid = np.asarray(grid, dtype=np.float64)
    G = censoring_survival(T, d)
    surv = np.stack([survival_fn(t) for t in grid])
    aucs, briers = [], []
    curves: list[MetricRow] = []
    for t, s in zip(grid, surv):
        aucs.append(auc_at(t, s, T, d, G, ties, diag))
        n_pairs = int(((T <= t) & (d == 1)).sum() * (T > t).sum())
        curves.append(MetricRow("auc", float(t), aucs[-1], n_pairs))
    for t, s in zip(grid, surv):
        briers.append(brier_at(t, s, T, d, G, diag))
        n_w = int((((T <= t) & (d == 1)) | (T > t)).sum())
        curves.append(MetricRow("brier", float(t), briers[-1], n_w))
    n = len(T)
    rows = [
        MetricRow("rcll", None, rcll_eval(log_density_t, log_survival_t, d, diag), n),
        MetricRow("ibs", None, integrate(grid, briers), n),
        MetricRow("iauc", None, _integrate_defined(grid, aucs, diag), n),
        MetricRow("cindex", None, c_index(1.0 - surv[-1], T, d), n),
    ]
    rows.extend(curves)
    return MetricReport(rows, diag)


def evaluate_weibull(params, durations, deltas, grid=None, ties: str = "formula") -> MetricReport:
    return evaluate(params.survival, params.log_density(durations), params.log_survival(durations), durations, deltas, grid, ties)
