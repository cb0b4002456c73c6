"""Repeated train/validate/test runs with warm starts, and hyperparameter grid search."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lobsrv.features.dataset import Splits, day_seed
from lobsrv.features.normalize import NormalizationStats, fit_normalizer, normalize_all
from lobsrv.metrics.survival import SCALARS, MetricReport, evaluate_weibull, horizon_grid
from lobsrv.model.kanformer import Batch, KANFormer, ModelConfig, collate
from lobsrv.training.trainer import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

SEARCH_GRID: dict[str, list] = {
    "weight_decay": [1e-3, 1e-4, 1e-5],
    "batch_size": [256, 512, 1024],
    "n_heads": [2, 4],
    "hidden_size": [8, 16, 32],
    "grid_size": [5, 7],
    "spline_order": [3],
    "n_layers": [2, 4, 6],
    "dropout_rate": [0.1, 0.2, 0.3, 0.4, 0.5],
    "action_embedding": [2, 4, 8, 16],
}


class GridError(ValueError):
    pass


@dataclass
class PreparedSplits:
    stats: NormalizationStats
    train: Batch
    validation: Batch
    test: Batch


def prepare(splits: Splits) -> PreparedSplits:
    """Fit the normalizer on the training split only and collate every split."""
    stats = fit_normalizer(splits.train)
    batches = [collate(normalize_all(stats, part)) for part in (splits.train, splits.validation, splits.test)]
    return PreparedSplits(stats, *batches)


def evaluate_model(model, batch: Batch, grid=None, ties: str = "formula") -> MetricReport:
    params = model.predict(batch)
    if grid is None:
        grid = horizon_grid(batch.durations, batch.deltas)
    return evaluate_weibull(params, batch.durations, batch.deltas, grid, ties)


@dataclass
class ProtocolResult:
    reports: list[MetricReport]
    mean: dict[str, float]
    std: dict[str, float]
    initial_states: list[dict[str, np.ndarray]]
    final_states: list[dict[str, np.ndarray]]
    train_results: list[TrainResult]


def run_protocol(
    model_config: ModelConfig,
    train_config: TrainConfig,
    split_generator: Callable[[int], Splits],
    n_repeats: int | None = None,
) -> ProtocolResult:
    """Train on ``n_repeats`` independent sample draws and aggregate the test metrics.

    Repeat 0 starts from a random initialisation; with ``warm_init`` later
    repeats start from repeat 0's selected parameters.
    """
    n = train_config.n_repeats if n_repeats is None else n_repeats
    if n < 1:
        raise ValueError("n_repeats must be >= 1")
    reports, inits, finals, results = [], [], [], []
    warm: dict[str, np.ndarray] | None = None
    for k in range(n):
        data = prepare(split_generator(k))
        model = KANFormer(model_config, seed=day_seed(train_config.seed, k, stage=3))
        cfg = replace(train_config, seed=day_seed(train_config.seed, k, stage=4))
        if warm is not None:
            model.load_state_dict(warm)
            cfg = replace(cfg, head_init=False)
        inits.append(model.state_dict())
        res = train(model, data.train, data.validation, cfg)
        finals.append(res.best_state)
        results.append(res)
        if k == 0 and train_config.warm_init:
            warm = res.best_state
        reports.append(evaluate_model(model, data.test))
        log.info("repeat %d/%d: %s", k + 1, n, reports[-1].scalars())
    table = np.array([[r.scalar(m) for m in SCALARS] for r in reports])
    mean = dict(zip(SCALARS, np.nanmean(table, axis=0).tolist()))
    std = dict(zip(SCALARS, (np.nanstd(table, axis=0) if n > 1 else np.zeros(len(SCALARS))).tolist()))
    return ProtocolResult(reports, mean, std, inits, finals, results)


# -- grid search ------------------------------------------------------------


@dataclass
class GridResult:
    model_config: ModelConfig
    train_config: TrainConfig
    leaderboard: list[dict]


def _route(point: dict, model_config: ModelConfig, train_config: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    m_keys = {f.name for f in fields(ModelConfig)}
    t_keys = {f.name for f in fields(TrainConfig)}
    m_upd = {k: v for k, v in point.items() if k in m_keys}
    t_upd = {k: v for k, v in point.items() if k in t_keys}
    unknown = set(point) - m_keys - t_keys
    if unknown:
        raise GridError(f"unknown grid keys: {sorted(unknown)}")
    return replace(model_config, **m_upd), replace(train_config, **t_upd)


def grid_points(grid: dict[str, Sequence], budget: int | None = None, seed: int = 0) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise GridError("empty hyperparameter grid")
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    if budget is not None and budget < len(points):
        if budget < 1:
            raise GridError("grid search budget must be >= 1")
        pick = np.sort(np.random.default_rng(seed).choice(len(points), size=budget, replace=False))
        points = [points[i] for i in pick]
    return points


def grid_search(
    grid: dict[str, Sequence],
    data: PreparedSplits,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    budget: int | None = None,
    leaderboard_path=None,
) -> GridResult:
    """Train one model per grid point and rank by best validation RCLL."""
    points = grid_points(grid, budget, train_config.seed)
    rows = []
    for i, point in enumerate(points):
        m_cfg, t_cfg = _route(point, model_config, train_config)
        model = KANFormer(m_cfg, seed=day_seed(train_config.seed, i, stage=5))
        res = train(model, data.train, data.validation, t_cfg)
        rows.append({**point, "val_rcll": res.best_val_rcll, "best_epoch": res.best_epoch, "_cfg": (m_cfg, t_cfg)})
        log.info("grid point %d/%d %s: val %.5f", i + 1, len(points), point, res.best_val_rcll)
    rows.sort(key=lambda r: r["val_rcll"])
    best_m, best_t = rows[0]["_cfg"]
    board = [{k: v for k, v in r.items() if k != "_cfg"} for r in rows]
    if leaderboard_path is not None:
        write_leaderboard(leaderboard_path, board, list(grid))
    return GridResult(best_m, best_t, board)


def write_leaderboard(path, board: list[dict], keys: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", *keys, "val_rcll", "best_epoch"])
        for i, row in enumerate(board, 1):
            w.writerow([i, *(row[k] for k in keys), repr(row["val_rcll"]), row["best_epoch"]])


# -- ablation grid ----------------------------------------------------------

ARCHITECTURE_ROWS = [(True, True), (True, False), (False, True), (False, False)]  # (use_kan, use_dcc)
FEATURE_ROWS = [  # (use_action_type, use_agent_features, use_queue)
    (True, True, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (False, False, False),
]


def ablation_configs(base: ModelConfig = ModelConfig()) -> list[tuple[str, ModelConfig]]:
    """Architecture rows with every input, then input rows on the KAN + DCC model."""
    rows = []
    for kan, dcc in ARCHITECTURE_ROWS:
        rows.append(("architecture", replace(base, use_kan=kan, use_dcc=dcc, use_action_type=True, use_agent_features=True, use_queue=True)))
    for act, agent, queue in FEATURE_ROWS:
        rows.append(("inputs", replace(base, use_kan=True, use_dcc=True, use_action_type=act, use_agent_features=agent, use_queue=queue)))
    return rows
