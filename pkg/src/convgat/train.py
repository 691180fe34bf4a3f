"""Dataset preparation, AdamW, the training loop and seeded multi-run evaluation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import make_model
from .errors import ConfigError, DataError, NumericError
from .features import EmbeddingStore, bind_features
from .gat import GatConfig
from .metrics import T_CRITICAL, css_cfs_report, f1_score, mean_ci
from .nn import ParamStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-6
    weight_decay: float = 0.1
    accumulation_steps: int = 16
    max_epochs: int = 20
    patience: int = 7
    seeds: tuple = tuple(range(10))
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    selection: str = "val_f1"
    shuffle: bool = True
    balance: bool = True
    split: tuple = (0.8, 0.1, 0.1)
    data_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "split", tuple(float(r) for r in self.split))
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.accumulation_steps < 1:
            raise ConfigError("accumulation_steps must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.selection not in ("val_f1", "val_loss"):
            raise ConfigError("selection must be 'val_f1' or 'val_loss'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass
class Sample:
    graph: object
    x: np.ndarray
    y: int

    @property
    def id(self) -> str:
        return self.graph.target_id

    @property
    def context_sensitive(self) -> Optional[bool]:
        return self.graph.context_sensitive


@dataclass
class EvalReport:
    samples: list
    f1: float
    css_pcp: Optional[float]
    cfs_pcp: Optional[float]
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    seed: int
    params: dict
    history: list
    report: EvalReport
    meta: dict = field(default_factory=dict)


def bind_samples(graphs, store: EmbeddingStore, missing: str = "error") -> list:
    samples = []
    skipped = 0
    for g in graphs:
        if g.y is None:
            skipped += 1
            continue
        samples.append(Sample(g, bind_features(g, store, missing).data, g.y))
    if skipped:
        logger.warning("skipped %d unlabeled graphs", skipped)
    return samples


def undersample_balance(samples: Sequence, seed: int) -> list:
    """Randomly drop majority-class samples until both classes are equal, then shuffle."""
    rng = np.random.default_rng(seed)
    pos = [s for s in samples if s.y == 1]
    neg = [s for s in samples if s.y == 0]
    if not pos or not neg:
        raise DataError("undersampling needs both classes present")
    k = min(len(pos), len(neg))
    pos = [pos[i] for i in sorted(rng.choice(len(pos), k, replace=False))]
    neg = [neg[i] for i in sorted(rng.choice(len(neg), k, replace=False))]
    merged = pos + neg
    return [merged[i] for i in rng.permutation(len(merged))]


def split_dataset(samples: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple:
    """Stratified (train, val, test) split."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError("split ratios must be three non-negative numbers summing to 1")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for label in (1, 0):
        group = [s for s in samples if s.y == label]
        if not group:
            continue
        order = rng.permutation(len(group))
        n_train = int(round(ratios[0] * len(group)))
        n_val = int(round(ratios[1] * len(group)))
        sizes = (n_train, n_val, len(group) - n_train - n_val)
        if any(size <= 0 for size, r in zip(sizes, ratios) if r > 0):
            raise DataError(f"class {label} has {len(group)} samples, too few to stratify into {ratios}")
        bounds = np.cumsum((0,) + sizes)
        for part, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            part.extend(group[i] for i in order[lo:hi])
    return tuple([p[i] for i in rng.permutation(len(p))] for p in parts)


def adamw_step(params: ParamStore, cfg: TrainConfig) -> None:
    """One AdamW update from the gradients in ``params``; gradients are zeroed afterwards."""
    for name, grad in params.grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in {name}")
    params.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bias1 = 1.0 - b1**params.step
    bias2 = 1.0 - b2**params.step
    for name, theta in params.params.items():
        grad = params.grads[name]
        m, v = params.m[name], params.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        if cfg.weight_decay:
            theta -= cfg.lr * cfg.weight_decay * theta
        theta -= cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
    params.zero_grad()


def _scale_grads(params: ParamStore, factor: float) -> None:
    for g in params.grads.values():
        g *= factor


def predict(model, params, samples) -> list:
    return [float(model.forward(s.graph, s.x, params, training=False).prob) for s in samples]


def evaluate(model, params, samples, threshold: float = 0.5, seed: Optional[int] = None) -> EvalReport:
    rows = []
    for s, prob in zip(samples, predict(model, params, samples)):
        rows.append(
            dict(id=s.id, prob=prob, pred=int(prob >= threshold), label=s.y, context_sensitive=s.context_sensitive)
        )
    f1 = f1_score([r["pred"] for r in rows], [r["label"] for r in rows])
    css, cfs = css_cfs_report(rows)
    return EvalReport(rows, f1, css, cfs, seed)


def _val_loss(model, params, samples) -> float:
    return float(np.mean([model.loss(model.forward(s.graph, s.x, params), s.y) for s in samples]))


def train(model, train_set, val_set, cfg: TrainConfig, seed: int) -> tuple:
    """Train with gradient accumulation and early stopping.

    Returns ``(best_state, history)`` where ``best_state`` maps parameter
    names to arrays from the epoch with the best validation score.
    """
    if not train_set or not val_set:
        raise DataError("training and validation sets must be non-empty")
    rng = np.random.default_rng(seed)
    params = model.init_params(seed)
    history = []
    best_score, best_state, stale = -math.inf, params.state_dict(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set)) if cfg.shuffle else np.arange(len(train_set))
        pending, losses = 0, []
        for pos, idx in enumerate(order):
            sample = train_set[idx]
            out = model.forward(sample.graph, sample.x, params, training=True, rng=rng)
            loss = float(model.loss(out, sample.y))
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, sample {pos}")
            losses.append(loss)
            model.backward(out, sample.y, params)
            pending += 1
            if pending == cfg.accumulation_steps or pos == len(order) - 1:
                _scale_grads(params, 1.0 / pending)
                try:
                    adamw_step(params, cfg)
                except NumericError as exc:
                    raise NumericError(f"{exc} at epoch {epoch}, sample {pos}") from None
                pending = 0
        report = evaluate(model, params, val_set, cfg.threshold)
        record = dict(epoch=epoch, train_loss=float(np.mean(losses)), val_f1=report.f1)
        if cfg.selection == "val_loss":
            record["val_loss"] = _val_loss(model, params, val_set)
            score = -record["val_loss"]
        else:
            score = report.f1
        history.append(record)
        if score > best_score:
            best_score, best_state, stale = score, params.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best_state, history


def prepare_splits(samples, cfg: TrainConfig) -> tuple:
    data = undersample_balance(samples, cfg.data_seed) if cfg.balance else list(samples)
    return split_dataset(data, cfg.split, cfg.data_seed)


def run_seed(kind: str, model_cfg: GatConfig, cfg: TrainConfig, splits, seed: int) -> RunResult:
    train_set, val_set, test_set = splits
    model = make_model(kind, model_cfg)
    state, history = train(model, train_set, val_set, cfg, seed)
    params = model.init_params(seed)
    params.load_state_dict(state)
    report = evaluate(model, params, test_set, cfg.threshold, seed)
    return RunResult(seed, state, history, report)


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(kind: str, model_cfg: GatConfig, cfg: TrainConfig, samples, jobs: int = 1) -> tuple:
    """Train one model per seed on a shared split; returns ``(metrics, runs)``."""
    splits = prepare_splits(samples, cfg)
    tasks = [(kind, model_cfg, cfg, splits, seed) for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed_star, tasks))
    else:
        runs = [run_seed(*t) for t in tasks]
    return aggregate(runs), runs


def aggregate(runs, t: float = T_CRITICAL) -> dict:
    f1s = [r.report.f1 for r in runs]
    mean, half = mean_ci(f1s, t) if len(f1s) >= 2 else (f1s[0], None)
    return {
        "runs": [
            {"seed": r.seed, "f1": r.report.f1, "css_pcp": r.report.css_pcp, "cfs_pcp": r.report.cfs_pcp} for r in runs
        ],
        "mean_f1": mean,
        "ci_halfwidth": half,
        "t": t,
        "n": len(runs),
    }
