"""Mini-batch training under the censored likelihood with validation-based early stopping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from lobsrv import checkpoint
from lobsrv import tensor as T
from lobsrv.metrics.survival import rcll_eval
from lobsrv.model.kanformer import Batch
from lobsrv.training.loss import rcll_loss
from lobsrv.training.optim import AdamW, EarlyStopping, lr_at

log = logging.getLogger(__name__)

BATCH_SIZES = (256, 512, 1024)
WEIGHT_DECAYS = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    decay_gamma: float = 0.9
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 1e-5
    batch_size: int = 256
    weight_decay: float = 1e-4
    seed: int = 0
    n_repeats: int = 30
    warm_init: bool = True
    head_init: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.n_repeats < 1:
            raise ValueError("batch_size, max_epochs and n_repeats must be positive")
        if not 0.0 < self.decay_gamma <= 1.0:
            raise ValueError(f"decay_gamma {self.decay_gamma} outside (0, 1]")

    def to_kv(self) -> dict[str, str]:
        return {k: str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_kv(cls, kv: dict) -> "TrainConfig":
        from lobsrv.config import as_bool

        vals = {}
        for f in fields(cls):
            if f.name in kv:
                default = getattr(cls, f.name)
                if isinstance(default, bool):
                    vals[f.name] = as_bool(kv[f.name])
                else:
                    vals[f.name] = type(default)(kv[f.name])
        return cls(**vals)


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    log: list[dict]
    best_epoch: int
    best_val_rcll: float
    epochs_run: int


def marginal_weibull(durations, deltas) -> tuple[float, float]:
    """Censored maximum-likelihood ``(log lambda, log k)`` ignoring all covariates."""
    t = np.asarray(durations, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    lt = np.log(t)

    def nll(theta):
        a, b = theta
        k = np.exp(b)
        z = lt - a
        h = np.exp(k * z)
        val = -np.mean(d * (b - a + (k - 1.0) * z) - h)
        ga = -np.mean(d * (-1.0 - (k - 1.0)) + h * k)
        gb = -np.mean(d * (1.0 + k * z) - h * k * z)
        return val, np.array([ga, gb])

    x0 = np.array([np.mean(lt), 0.0])
    res = minimize(nll, x0, jac=True, method="L-BFGS-B")
    return float(res.x[0]), float(res.x[1])


def init_head(model, durations, deltas) -> None:
    """Point the output bias at the marginal fit so training starts from a sensible scale."""
    a, b = marginal_weibull(durations, deltas)
    model.head_out.bias.data = np.array([a, b])


def validation_rcll(model, batch: Batch) -> float:
    params = model.predict(batch)
    return rcll_eval(params.log_density(batch.durations), params.log_survival(batch.durations), batch.deltas)


def train(model, train_set: Batch, val_set: Batch, config: TrainConfig = TrainConfig(), log_path=None, checkpoint_path=None) -> TrainResult:
    """Fit ``model`` in place and return the parameters of the best validation epoch.

    ``max_epochs`` is a hard cap. Each epoch reshuffles the training set with
    a generator seeded from ``(seed, epoch)``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("empty training or validation split")
    if config.head_init and hasattr(model, "head_out"):
        init_head(model, train_set.durations, train_set.deltas)
    if hasattr(model, "set_dropout_seed"):
        model.set_dropout_seed(config.seed)
    opt = AdamW(model.parameters(), lr=config.lr0, weight_decay=config.weight_decay)
    stopper = EarlyStopping(config.patience, config.min_delta)
    best_state = model.state_dict()
    records: list[dict] = []
    log_fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w")
    try:
        for epoch in range(config.max_epochs):
            t0 = time.perf_counter()
            opt.lr = lr_at(epoch, config.lr0, config.decay_gamma)
            model.train()
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
            total = 0.0
            for lo in range(0, len(order), config.batch_size):
                mb = train_set.subset(order[lo : lo + config.batch_size])
                opt.zero_grad()
                log_lam, log_k = model(mb)
                loss = rcll_loss(log_lam, log_k, mb.durations, mb.deltas)
                T.backward(loss)
                opt.step()
                total += loss.item() * len(mb)
            val = validation_rcll(model, val_set)
            stop = stopper.update(val)
            if stopper.improved:
                best_state = model.state_dict()
            rec = {
                "epoch": epoch + 1,
                "lr": opt.lr,
                "train_rcll": total / len(train_set),
                "val_rcll": val,
                "wall_seconds": round(time.perf_counter() - t0, 3),
            }
            records.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            log.info("epoch %d lr %.3g train %.5f val %.5f", rec["epoch"], rec["lr"], rec["train_rcll"], val)
            if stop:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    model.load_state_dict(best_state)
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, best_state)
    return TrainResult(best_state, records, stopper.best_epoch, stopper.best, len(records))
