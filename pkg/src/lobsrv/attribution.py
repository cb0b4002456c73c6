"""Expected-gradients attributions of fill risk ``1 - S(t|x)`` per input channel and horizon."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from lobsrv import tensor as T
from lobsrv.features.sampling import N_RATIOS
from lobsrv.features.snapshot import LOB_FEATURES
from lobsrv.market.session import RATIO_NAMES
from lobsrv.model.kanformer import Batch
from lobsrv.tensor import Tensor

log = logging.getLogger(__name__)

INPUTS = ("action_type", "agent", "lob", "queue")


@dataclass(frozen=True)
class AttributionConfig:
    horizons: tuple = ()
    background_size: int = 64
    n_path_samples: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.background_size < 1 or self.n_path_samples < 1:
            raise ValueError("background_size and n_path_samples must be >= 1")


def _path_points(x: Mapping[str, np.ndarray], background: Mapping[str, np.ndarray], n: int, rng: np.random.Generator):
    """``n`` draws of (background row, alpha) and the interpolated inputs ``b + alpha (x - b)``."""
    n_bg = len(next(iter(background.values())))
    pick = rng.integers(0, n_bg, size=n)
    alpha = rng.uniform(0.0, 1.0, size=n)
    points, deltas = {}, {}
    for key, xv in x.items():
        b = np.asarray(background[key], dtype=np.float64)[pick]
        diff = np.asarray(xv, dtype=np.float64)[None] - b
        a = alpha.reshape((n,) + (1,) * (diff.ndim - 1))
        points[key] = b + a * diff
        deltas[key] = diff
    return points, deltas


def expected_gradients(
    fn: Callable[[dict[str, Tensor]], Tensor],
    x: Mapping[str, np.ndarray],
    background: Mapping[str, np.ndarray],
    n_samples: int = 32,
    seed: int = 0,
) -> dict[str, np.ndarray]:
    """``phi_j = E_{b, alpha}[(x_j - b_j) dF/dx_j (b + alpha (x - b))]`` for a scalar-per-row ``fn``.

    ``x`` holds one unbatched input per key, ``background`` the same keys
    with a leading sample axis; ``fn`` maps batched tensors to ``[n]``.
    """
    points, deltas = _path_points(x, background, n_samples, np.random.default_rng(seed))
    leaves = {k: Tensor(v, requires_grad=True) for k, v in points.items()}
    T.backward(fn(leaves).sum())
    return {k: (deltas[k] * leaves[k].grad).mean(axis=0) for k in x}


def _model_inputs(model, batch: Batch) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in model.model_inputs(batch).items()}


def explain(model, sample: Batch, background: Batch, horizons: Sequence[float], n_samples: int = 32, seed: int = 0) -> dict[str, np.ndarray]:
    """Attributions for one sample at every horizon: arrays shaped ``[H, *input_shape]``.

    The risk ``F_t = 1 - S(t)`` depends on the inputs only through
    ``(log lambda, log k)``, so two backward passes serve all horizons.
    """
    if len(sample) != 1:
        raise ValueError("explain takes a batch holding exactly one sample")
    horizons = np.asarray(horizons, dtype=np.float64)
    if np.any(horizons <= 0):
        raise ValueError("horizons must be positive")
    was = model.training
    model.eval()
    try:
        x = {k: v[0] for k, v in _model_inputs(model, sample).items()}
        bg = _model_inputs(model, background)
        points, deltas = _path_points(x, bg, n_samples, np.random.default_rng(seed))
        leaves = {k: Tensor(v, requires_grad=True) for k, v in points.items()}
        log_lam, log_k = model.forward_inputs(**leaves)
        grads = []
        for out in (log_lam, log_k):
            for leaf in leaves.values():
                leaf.zero_grad()
            T.backward(out.sum())
            grads.append({k: leaf.grad.copy() for k, leaf in leaves.items()})
    finally:
        model.train(was)
    ll, lk = log_lam.data, log_k.data
    k_ = np.exp(lk)
    typical = np.exp(np.median(ll))
    if horizons.max() > 100 * typical or horizons.min() < typical / 100:
        log.warning("horizons %s far from the predicted time scale %.3g", horizons, typical)
    out = {key: np.empty((len(horizons),) + x[key].shape) for key in x}
    for h, t in enumerate(horizons):
        z = np.log(t) - ll
        H = np.exp(k_ * z)
        S = np.exp(-H)
        # dF/dlog_lambda = -S H k ; dF/dlog_k = S H k z
        c_lam = -S * H * k_
        c_k = S * H * k_ * z
        for key in x:
            shape = (n_samples,) + (1,) * (deltas[key].ndim - 1)
            g = c_lam.reshape(shape) * grads[0][key] + c_k.reshape(shape) * grads[1][key]
            out[key][h] = (deltas[key] * g).mean(axis=0)
    return out


def channel_names(model) -> list[str]:
    cfg = model.config
    names = list(LOB_FEATURES)
    if cfg.use_action_type:
        names.append("action_type")
    if cfg.use_agent_features:
        names.extend(RATIO_NAMES)
    if cfg.use_queue:
        names.append("queue")
    return names


def _channel_values(phi: Mapping[str, np.ndarray], names: Sequence[str]) -> dict[str, np.ndarray]:
    """Per-horizon ``|phi|`` for each channel, averaged over lookback positions."""
    vals = {}
    lob = np.abs(phi["lob"]).mean(axis=1)  # [H, 24]
    for j, name in enumerate(LOB_FEATURES):
        vals[name] = lob[:, j]
    if "action_type" in names:
        vals["action_type"] = np.abs(phi["action_type"]).sum(axis=-1).mean(axis=1)
    if RATIO_NAMES[0] in names:
        agent = np.abs(phi["agent"]).mean(axis=1)
        for j in range(N_RATIOS):
            vals[RATIO_NAMES[j]] = agent[:, j]
    if "queue" in names:
        vals["queue"] = np.abs(phi["queue"]).reshape(phi["queue"].shape[0], -1).mean(axis=1)
    return vals


@dataclass
class AttributionReport:
    horizons: np.ndarray
    channels: list[str]
    values: np.ndarray  # [channel, horizon] mean |phi|

    def at(self, horizon_index: int) -> dict[str, float]:
        return {c: float(self.values[i, horizon_index]) for i, c in enumerate(self.channels)}

    def ranking(self, horizon_index: int = 0) -> list[str]:
        col = self.values[:, horizon_index]
        return [self.channels[i] for i in np.argsort(-col, kind="stable")]

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "horizon_seconds", "mean_abs_shap"])
            for i, c in enumerate(self.channels):
                for h, t in enumerate(self.horizons):
                    w.writerow([c, repr(float(t)), repr(float(self.values[i, h]))])


def aggregate(explanations: Sequence[Mapping[str, np.ndarray]], horizons, channels: Sequence[str]) -> AttributionReport:
    """Mean over explained samples of each channel's position-averaged ``|phi|``."""
    if not explanations:
        raise ValueError("nothing to aggregate")
    per = [_channel_values(phi, channels) for phi in explanations]
    values = np.array([np.mean([p[c] for p in per], axis=0) for c in channels])
    return AttributionReport(np.asarray(horizons, dtype=np.float64), list(channels), values)


def attribute(model, explain_set: Batch, background_pool: Batch, horizons, config: AttributionConfig = AttributionConfig()) -> AttributionReport:
    """Explain every sample of ``explain_set`` against a background drawn from ``background_pool``."""
    rng = np.random.default_rng(config.seed)
    n_bg = min(config.background_size, len(background_pool))
    background = background_pool.subset(np.sort(rng.choice(len(background_pool), size=n_bg, replace=False)))
    phis = []
    for i in range(len(explain_set)):
        seed = int(np.random.SeedSequence([config.seed, i]).generate_state(1)[0])
        phis.append(explain(model, explain_set.subset(slice(i, i + 1)), background, horizons, config.n_path_samples, seed))
    return aggregate(phis, horizons, channel_names(model))
