"""Dual-encoder survival model: action and LOB encoders, queue position, Weibull head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from lobsrv import tensor as T
from lobsrv.features.sampling import N_RATIOS, OrderSample
from lobsrv.features.snapshot import LOB_WIDTH
from lobsrv.market.book import ACTION_TYPES
from lobsrv.model.encoder import Encoder, EncoderConfig
from lobsrv.model.nn import Linear, Module, parameter
from lobsrv.model.weibull import WeibullParams
from lobsrv.tensor import Tensor

N_ACTIONS = len(ACTION_TYPES)
NULL_ACTION = N_ACTIONS  # shared learned vector used when action types are ablated


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    hidden_size: int = 16
    dropout_rate: float = 0.1
    grid_size: int = 5
    spline_order: int = 3
    action_embedding: int = 8
    use_kan: bool = True
    use_dcc: bool = True
    dcc_kernel: int = 3
    dcc_dilation: int = 1
    use_action_type: bool = True
    use_agent_features: bool = True
    use_queue: bool = True
    positional: bool = True

    def encoder(self, lob: bool) -> EncoderConfig:
        return EncoderConfig(
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            hidden_size=self.hidden_size,
            dropout_rate=self.dropout_rate,
            use_kan=self.use_kan,
            use_dcc=self.use_dcc and lob,
            dcc_kernel=self.dcc_kernel,
            dcc_dilation=self.dcc_dilation,
            grid_size=self.grid_size,
            spline_order=self.spline_order,
            positional=self.positional,
        )

    def to_kv(self) -> dict[str, str]:
        return {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        from lobsrv.config import as_bool

        vals = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            default = getattr(cls, f.name)
            if isinstance(default, bool):
                vals[f.name] = as_bool(raw)
            elif isinstance(default, int):
                vals[f.name] = int(raw)
            else:
                vals[f.name] = float(raw)
        return cls(**vals)


@dataclass
class Batch:
    codes: np.ndarray  # [B, L] int
    ratios: np.ndarray  # [B, L, 5]
    lob: np.ndarray  # [B, L, 24]
    queue: np.ndarray  # [B]
    durations: np.ndarray  # [B]
    deltas: np.ndarray  # [B]

    def __len__(self) -> int:
        return len(self.durations)

    def subset(self, idx) -> "Batch":
        return Batch(self.codes[idx], self.ratios[idx], self.lob[idx], self.queue[idx], self.durations[idx], self.deltas[idx])


def collate(samples: Sequence[OrderSample]) -> Batch:
    actions = np.stack([s.actions for s in samples])
    return Batch(
        codes=np.rint(actions[..., 0]).astype(np.int64),
        ratios=actions[..., 1:].copy(),
        lob=np.stack([s.lob for s in samples]),
        queue=np.array([s.queue for s in samples], dtype=np.float64),
        durations=np.array([s.duration for s in samples], dtype=np.float64),
        deltas=np.array([s.delta for s in samples], dtype=np.float64),
    )


def _check_finite(x: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError(f"non-finite activations in {where}")
    return x


class KANFormer(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._rng = rng
        d = config.action_embedding
        self.action_embedding = parameter(rng.normal(0.0, 1.0, size=(N_ACTIONS + 1, d)))
        self.action_encoder = Encoder(d + N_RATIOS, config.encoder(lob=False), rng)
        self.lob_encoder = Encoder(LOB_WIDTH, config.encoder(lob=True), rng)
        n_in = 2 * config.hidden_size + (1 if config.use_queue else 0)
        self.head_hidden = Linear(n_in, config.hidden_size, rng)
        self.head_out = Linear(config.hidden_size, 2, rng)

    # inputs are split out so attribution can differentiate w.r.t. them
    def embed_actions(self, codes: np.ndarray) -> Tensor:
        if not self.config.use_action_type:
            codes = np.full_like(codes, NULL_ACTION)
        return T.embedding_lookup(self.action_embedding, codes)

    def model_inputs(self, batch: Batch) -> dict[str, Tensor]:
        ratios = batch.ratios if self.config.use_agent_features else np.zeros_like(batch.ratios)
        return {
            "action_type": self.embed_actions(batch.codes),
            "agent": Tensor(ratios),
            "lob": Tensor(batch.lob),
            "queue": Tensor(batch.queue.reshape(-1, 1)),
        }

    def forward_inputs(self, action_type: Tensor, agent: Tensor, lob: Tensor, queue: Tensor | None) -> tuple[Tensor, Tensor]:
        if not self.config.use_agent_features:
            agent = agent * 0.0
        z_a = _check_finite(self.action_encoder(T.concat([action_type, agent], axis=-1)), "action encoder")
        z_l = _check_finite(self.lob_encoder(lob), "lob encoder")
        parts = [z_a, z_l]
        if self.config.use_queue:
            parts.append(queue)
        z_c = T.concat(parts, axis=-1)
        hidden = _check_finite(T.silu(self.head_hidden(z_c)), "predictor hidden layer")
        out = _check_finite(self.head_out(hidden), "predictor output")
        return out[:, 0], out[:, 1]

    def __call__(self, batch: Batch) -> tuple[Tensor, Tensor]:
        x = self.model_inputs(batch)
        return self.forward_inputs(x["action_type"], x["agent"], x["lob"], x["queue"])

    def predict(self, batch: Batch, chunk: int = 512) -> WeibullParams:
        """Evaluation-mode Weibull parameters, computed in chunks."""
        was = self.training
        self.eval()
        lam, k = [], []
        try:
            for lo in range(0, len(batch), chunk):
                ll, lk = self(batch.subset(slice(lo, lo + chunk)))
                lam.append(ll.data)
                k.append(lk.data)
        finally:
            self.train(was)
        return WeibullParams(np.concatenate(lam), np.concatenate(k))

    def set_dropout_seed(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for m in self.modules():
            if hasattr(m, "_rate"):
                m._rng = rng
