"""Command-line pipeline: simulate, featurize, train, evaluate, explain, ablate."""

from __future__ import annotations

import os

_threads = os.environ.get("LOBSRV_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import dataclass, fields, replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from lobsrv import checkpoint  # noqa: E402
from lobsrv.attribution import AttributionConfig, attribute  # noqa: E402
from lobsrv.config import as_bool, format_kv, read_kv  # noqa: E402
from lobsrv.features.dataset import PlantedLaw, chronological_split, day_seed, plant_labels, sample_days  # noqa: E402
from lobsrv.features.normalize import NormalizationStats, fit_normalizer, normalize_all  # noqa: E402
from lobsrv.features.shards import read_shard, write_shard  # noqa: E402
from lobsrv.market.session import SimConfig, read_stream, run_session, write_stream  # noqa: E402
from lobsrv.metrics.survival import SCALARS, horizon_grid  # noqa: E402
from lobsrv.model.kanformer import KANFormer, ModelConfig, collate  # noqa: E402
from lobsrv.training.protocol import SEARCH_GRID, PreparedSplits, ablation_configs, evaluate_model, grid_search  # noqa: E402
from lobsrv.training.trainer import TrainConfig, train  # noqa: E402

log = logging.getLogger("lobsrv")

STAGES = ("simulate", "featurize", "train", "evaluate", "explain", "ablate")


class MissingArtifact(RuntimeError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing {path}: run {stage} first")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_days: int = 10
    per_day_quota: int = 100
    lookback: int = 50
    labels: str = "stream"  # or "planted"
    planted_log_scale: float = PlantedLaw.log_scale
    planted_beta_queue: float = PlantedLaw.beta_queue
    planted_beta_vi: float = PlantedLaw.beta_vi
    planted_shape: float = PlantedLaw.shape
    planted_censor_rate: float = PlantedLaw.censor_rate
    grid_search: bool = False
    grid_budget: int = 0
    ties: str = "formula"
    explain_count: int = 50
    background_size: int = 64
    n_path_samples: int = 32

    def law(self) -> PlantedLaw:
        return PlantedLaw(self.planted_log_scale, self.planted_beta_queue, self.planted_beta_vi, self.planted_shape, self.planted_censor_rate)


@dataclass
class Settings:
    experiment: ExperimentConfig
    sim: SimConfig
    model: ModelConfig
    train: TrainConfig
    out: Path


_SIM_KEYS = {f.name for f in fields(SimConfig)} - {"agent_overrides", "seed"}


def _cast(cls, kv: dict) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in kv:
            default = getattr(cls, f.name)
            raw = kv[f.name]
            if isinstance(default, bool):
                out[f.name] = as_bool(raw)
            elif isinstance(default, (int, float)):
                out[f.name] = type(default)(raw)
            else:
                out[f.name] = str(raw)
    return out


def build_settings(kv: dict, seed: int | None, out: str) -> Settings:
    """Route flat keys to their sections; ``seed`` is the master seed for every stage."""
    kv = dict(kv)
    if seed is not None:
        kv["seed"] = str(seed)
    exp_keys = {f.name for f in fields(ExperimentConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    unknown = [k for k in kv if k not in exp_keys | model_keys | train_keys | _SIM_KEYS and not k.startswith("agent.")]
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    exp = ExperimentConfig(**_cast(ExperimentConfig, kv))
    if exp.labels not in ("stream", "planted"):
        raise ValueError(f"labels must be 'stream' or 'planted', got {exp.labels!r}")
    sim_kv = {k: v for k, v in kv.items() if k in _SIM_KEYS or k.startswith("agent.")}
    sim = SimConfig.from_mapping(sim_kv)
    sim.seed = exp.seed
    sim.validate()
    model = ModelConfig(**_cast(ModelConfig, kv))
    tr = TrainConfig(**_cast(TrainConfig, {k: v for k, v in kv.items() if k in train_keys}))
    tr = replace(tr, seed=day_seed(exp.seed, 0, stage=4))
    return Settings(exp, sim, model, tr, Path(out))


# -- artifact paths -------------------------------------------------------


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


def _stream_paths(out: Path) -> list[Path]:
    manifest = _need(out / "streams" / "manifest.json", "simulate")
    return [out / "streams" / name for name in json.loads(manifest.read_text())["days"]]


def _load_data(out: Path) -> PreparedSplits:
    shards = out / "shards"
    stats = NormalizationStats.from_dict(checkpoint.load(_need(shards / "normalizer.ckpt", "featurize")))
    parts = [normalize_all(stats, read_shard(_need(shards / f"{name}.lobds", "featurize"))) for name in ("train", "validation", "test")]
    return PreparedSplits(stats, *(collate(p) for p in parts))


def _load_model(out: Path) -> KANFormer:
    mdir = out / "model"
    cfg = ModelConfig.from_kv(read_kv(_need(mdir / "model.cfg", "train")))
    model = KANFormer(cfg)
    model.load_state_dict(checkpoint.load(_need(mdir / "checkpoint.ckpt", "train")))
    model.eval()
    return model


# -- commands ---------------------------------------------------------------


def cmd_simulate(s: Settings) -> str:
    """Write one NDJSON event stream per simulated day."""
    sdir = s.out / "streams"
    sdir.mkdir(parents=True, exist_ok=True)
    names, total = [], 0
    for d in range(s.experiment.n_days):
        events = run_session(s.sim, day_seed(s.experiment.seed, d, stage=1)).events
        name = f"day_{d:03d}.ndjson"
        write_stream(sdir / name, events)
        names.append(name)
        total += len(events)
        log.info("day %d: %d events", d, len(events))
    manifest = {"days": names, "session_seconds": s.sim.session_seconds, "seed": s.experiment.seed}
    (sdir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return f"simulate: {len(names)} days, {total} events -> {sdir}"


def cmd_featurize(s: Settings) -> str:
    """Sample orders, split by day, fit the normalizer and write shards."""
    paths = _stream_paths(s.out)
    streams = [read_stream(_need(p, "simulate")) for p in paths]
    session_end = json.loads((s.out / "streams" / "manifest.json").read_text())["session_seconds"]
    e = s.experiment
    days, reports = sample_days(streams, session_end, e.per_day_quota, e.lookback, day_seed(e.seed, 0, stage=2))
    if e.labels == "planted":
        days = [plant_labels(d, e.law(), day_seed(e.seed, i, stage=6)) for i, d in enumerate(days)]
    splits = chronological_split(days)
    shards = s.out / "shards"
    shards.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", splits.train), ("validation", splits.validation), ("test", splits.test)):
        if not part:
            raise ValueError(f"{name} split is empty; increase n_days or per_day_quota")
        write_shard(shards / f"{name}.lobds", part)
    checkpoint.save(shards / "normalizer.ckpt", fit_normalizer(splits.train).as_dict())
    meta = {name: [r.start, r.stop] for name, r in zip(("train", "validation", "test"), splits.days)}
    (shards / "splits.json").write_text(json.dumps(meta) + "\n")
    with open(shards / "sampling_report.ndjson", "w") as fh:
        for r in reports:
            fh.write(json.dumps({"day": r.day, "candidates": r.candidates, "valid": r.valid, "kept": r.kept, "warning": r.warning}) + "\n")
    return f"featurize: {len(splits.train)}/{len(splits.validation)}/{len(splits.test)} train/validation/test samples -> {shards}"


def cmd_train(s: Settings) -> str:
    """Fit the model on the train shard with early stopping on validation."""
    data = _load_data(s.out)
    mdir = s.out / "model"
    mdir.mkdir(parents=True, exist_ok=True)
    m_cfg, t_cfg = s.model, s.train
    if s.experiment.grid_search:
        budget = s.experiment.grid_budget or None
        res = grid_search(SEARCH_GRID, data, m_cfg, t_cfg, budget, mdir / "leaderboard.csv")
        m_cfg, t_cfg = res.model_config, res.train_config
    model = KANFormer(m_cfg, seed=day_seed(s.experiment.seed, 0, stage=3))
    res = train(model, data.train, data.validation, t_cfg, mdir / "train_log.ndjson", mdir / "checkpoint.ckpt")
    (mdir / "model.cfg").write_text(format_kv(m_cfg.to_kv()))
    (mdir / "train.cfg").write_text(format_kv(t_cfg.to_kv()))
    return f"train: best validation RCLL {res.best_val_rcll:.5f} at epoch {res.best_epoch} of {res.epochs_run} -> {mdir}"


def cmd_evaluate(s: Settings) -> str:
    """Score the checkpoint on the test shard."""
    model = _load_model(s.out)
    test = _load_data(s.out).test
    report = evaluate_model(model, test, ties=s.experiment.ties)
    rdir = s.out / "reports"
    report.write_csv(rdir / "metrics.csv")
    h, auc = report.curve("auc")
    _, brier = report.curve("brier")
    with open(rdir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "auc", "brier"])
        for row in zip(h, auc, brier):
            w.writerow([repr(float(v)) for v in row])
    sc = report.scalars()
    return "evaluate: " + " ".join(f"{k}={sc[k]:.4f}" for k in SCALARS) + f" -> {rdir / 'metrics.csv'}"


def cmd_explain(s: Settings) -> str:
    """Expected-gradients attributions per channel and horizon."""
    model = _load_model(s.out)
    data = _load_data(s.out)
    e = s.experiment
    grid = horizon_grid(data.test.durations, data.test.deltas)
    n = min(e.explain_count, len(data.test))
    pick = np.sort(np.random.default_rng(day_seed(e.seed, 0, stage=7)).choice(len(data.test), size=n, replace=False))
    cfg = AttributionConfig(tuple(grid), e.background_size, e.n_path_samples, day_seed(e.seed, 0, stage=8))
    report = attribute(model, data.test.subset(pick), data.train, grid, cfg)
    path = s.out / "reports" / "attribution.csv"
    report.write_csv(path)
    top = ", ".join(report.ranking(0)[:3])
    return f"explain: {n} samples x {len(grid)} horizons, top channels at shortest horizon: {top} -> {path}"


def cmd_ablate(s: Settings) -> str:
    """Retrain and score the nine architecture and input ablations."""
    data = _load_data(s.out)
    rdir = s.out / "reports" / "ablation"
    rdir.mkdir(parents=True, exist_ok=True)
    grid = horizon_grid(data.test.durations, data.test.deltas)
    flags = ("use_kan", "use_dcc", "use_action_type", "use_agent_features", "use_queue")
    rows = []
    for i, (table, cfg) in enumerate(ablation_configs(s.model)):
        model = KANFormer(cfg, seed=day_seed(s.experiment.seed, 0, stage=3))
        train(model, data.train, data.validation, s.train)
        report = evaluate_model(model, data.test, grid, s.experiment.ties)
        report.write_csv(rdir / f"row_{i}.csv")
        rows.append([table, *(str(getattr(cfg, f)).lower() for f in flags), *(repr(report.scalar(m)) for m in SCALARS)])
        log.info("ablation row %d %s: %s", i, table, report.scalars())
    path = s.out / "reports" / "ablation.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", *flags, *SCALARS])
        w.writerows(rows)
    return f"ablate: {len(rows)} configurations -> {path}"


COMMANDS = {
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "ablate": cmd_ablate,
}


def _summary(fn) -> str:
    doc = fn.__doc__.rstrip(".")
    return doc[0].lower() + doc[1:]


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--out", metavar="DIR", default="runs/default", help="artifact directory")
    common.add_argument("--quiet", action="store_true", help="only print the summary line")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    parser = argparse.ArgumentParser(prog="lobsrv", description="Time-to-fill survival modelling on a simulated limit order book.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=_summary(COMMANDS[name]))
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        kv = read_kv(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            kv[k.strip()] = v.strip()
        settings = build_settings(kv, args.seed, args.out)
        summary = COMMANDS[args.command](settings)
    except MissingArtifact as exc:
        print(f"lobsrv {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"lobsrv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
