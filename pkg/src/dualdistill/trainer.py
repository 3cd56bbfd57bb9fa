"""Two-stage training: pool pretraining, then alternating bi-directional
distillation between the pool model and a subject-customized clone.

Stage 1 is plain minibatch Adam on cross-entropy over the pooled
subjects.  Stage 2 walks the new subject's batches with an update flag
that flips every batch: the flagged (active) model takes a full Adam
step on its joint objective while the other model takes a small passive
step.  Three passive rules are provided: the default damps the passive
model's own gradient by (1 - momentum), ParameterEMA pulls it toward the
active model's parameters, and DecayedGradient shrinks the parameters by
the momentum factor while adding the same damped gradient term.

Both models' gradients for a batch are computed from the parameters as
they stood at the start of that batch, then both updates are applied.
Everything is seeded and deterministic; reruns are bit-identical.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, DataError
from .losses import DivergenceKind, cross_entropy, joint_loss, softmax_temperature
from .models import (Model, ModelConfig, build_model, clone_architecture,
                     forward_with_taps, predict)


class PassiveRule(enum.Enum):
    DAMPED_GRADIENT = "damped"
    PARAMETER_EMA = "ema"
    DECAYED_GRADIENT = "decayed"

    @classmethod
    def parse(cls, name: str) -> "PassiveRule":
        try:
            return cls(name.lower())
        except ValueError:
            raise ConfigError("unknown passive rule %r; expected one of %s"
                              % (name, [k.value for k in cls])) from None


@dataclass
class DistillConfig:
    """Hyperparameters for both training stages.

    ``momentum`` is the damping coefficient of the passive update; 1.0
    freezes the passive model entirely under the default rule.
    ``feature_weights`` of None means uniform 1/(tap count).
    """
    lr: float = 5e-4
    batch_size: int = 32
    epochs_stage1: int = 150
    epochs_stage2: int = 150
    temperature: float = 4.0
    momentum: float = 0.995
    divergence: DivergenceKind = DivergenceKind.LOGISTIC
    feature_weights: Optional[Dict[str, float]] = None
    passive_rule: PassiveRule = PassiveRule.DAMPED_GRADIENT
    initial_role: str = "pool"
    weight_dif: float = 1.0
    weight_div: float = 1.0
    temperature_compensation: bool = False
    seed: int = 0

    def validate(self) -> "DistillConfig":
        if self.lr <= 0:
            raise ConfigError("lr must be positive, got %r" % self.lr)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1, got %r" % self.batch_size)
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts cannot be negative")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive, got %r" % self.temperature)
        if not (0.0 <= self.momentum <= 1.0):
            raise ConfigError("momentum must be in [0, 1], got %r" % self.momentum)
        if self.initial_role not in ("pool", "cus"):
            raise ConfigError("initial_role must be 'pool' or 'cus'")
        if self.weight_dif < 0 or self.weight_div < 0:
            raise ConfigError("term weights cannot be negative")
        return self


@dataclass
class TrainingSet:
    """Arrays ready for batching: windows, labels, and source subject ids."""
    X: np.ndarray
    y: np.ndarray
    subject_ids: np.ndarray

    @classmethod
    def from_arrays(cls, X, y, subject_ids=None) -> "TrainingSet":
        X = np.asarray(X)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if X.ndim != 3:
            raise DataError("windows must be (count, channels, length), got %r" % (X.shape,))
        if X.shape[0] != y.shape[0]:
            raise DataError("window count %d != label count %d" % (X.shape[0], y.shape[0]))
        if subject_ids is None:
            subject_ids = np.zeros(y.shape[0], dtype=np.int64)
        return cls(X, y, np.asarray(subject_ids, dtype=np.int64).reshape(-1))

    def __len__(self):
        return self.X.shape[0]


def concat_training_sets(parts: Iterable[TrainingSet]) -> TrainingSet:
    parts = list(parts)
    if not parts:
        raise DataError("no training data given")
    return TrainingSet(np.concatenate([p.X for p in parts]),
                       np.concatenate([p.y for p in parts]),
                       np.concatenate([p.subject_ids for p in parts]))


@dataclass
class TrainRecord:
    epoch: int
    batch: int
    role: str
    l_pred: float
    l_dif: float
    l_div: float
    pool_update_norm: float
    cus_update_norm: float


@dataclass
class TrainLog:
    records: List[TrainRecord] = field(default_factory=list)

    def add(self, **kw):
        self.records.append(TrainRecord(**kw))

    def roles(self) -> List[str]:
        return [r.role for r in self.records]

    def epoch_mean_total(self) -> Dict[int, float]:
        sums: Dict[int, List[float]] = {}
        for r in self.records:
            sums.setdefault(r.epoch, []).append(r.l_pred + r.l_dif + r.l_div)
        return {e: float(np.mean(v)) for e, v in sums.items()}

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("epoch,batch,role,l_pred,l_dif,l_div,pool_update_norm,cus_update_norm\n")
            for r in self.records:
                f.write("%d,%d,%s,%.12g,%.12g,%.12g,%.12g,%.12g\n"
                        % (r.epoch, r.batch, r.role, r.l_pred, r.l_dif, r.l_div,
                           r.pool_update_norm, r.cus_update_norm))


class Adam:
    """Standard Adam with bias correction; state lives per parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns ||delta||."""
        self.t += 1
        sq = 0.0
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            delta = -self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.data = p.data + delta
            sq += float((delta * delta).sum())
        return float(np.sqrt(sq))


def passive_update(model: Model, grads: Optional[List[Optional[np.ndarray]]],
                   cfg: DistillConfig, other: Optional[Model] = None) -> float:
    """Apply the momentum-damped passive step in place; returns ||delta||.

    DampedGradient: theta <- theta - (1 - phi) * lr * g  (no optimizer state)
    ParameterEMA:   theta <- phi * theta + (1 - phi) * theta_other
    LiteralPaper:   theta <- phi * theta + (1 - phi) * lr * g
    """
    phi = cfg.momentum
    rule = cfg.passive_rule
    sq = 0.0
    if rule == PassiveRule.PARAMETER_EMA:
        if other is None:
            raise ConfigError("ParameterEMA needs the other model's parameters")
        for p, q in zip(model.params, other.params):
            delta = (1 - phi) * (q.data - p.data)
            p.data = p.data + delta
            sq += float((delta * delta).sum())
        return float(np.sqrt(sq))
    if grads is None:
        raise ConfigError("passive rule %s needs gradients" % rule.value)
    for p, g in zip(model.params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if rule == PassiveRule.DAMPED_GRADIENT:
            new = p.data - (1 - phi) * cfg.lr * g
        elif rule == PassiveRule.LITERAL_PAPER:
            new = phi * p.data + (1 - phi) * cfg.lr * g
        else:
            raise ConfigError("unknown passive rule %r" % (rule,))
        sq += float(((new - p.data) ** 2).sum())
        p.data = new
    return float(np.sqrt(sq))


def _derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_forbidden(batch_ids: np.ndarray, forbid: Optional[set]):
    if forbid and np.any(np.isin(batch_ids, list(forbid))):
        raise DataError("training batch contains a held-out subject: %s"
                        % sorted(set(batch_ids.tolist()) & set(forbid)))


def fit_crossentropy(model: Model, data: TrainingSet, cfg: DistillConfig,
                     epochs: int, shuffle_stream: int = 1,
                     forbid_subjects: Optional[set] = None) -> TrainLog:
    """Train a single model in place with Adam on cross-entropy."""
    cfg.validate()
    if len(data) == 0:
        raise DataError("training set is empty")
    log = TrainLog()
    adam = Adam(model.params, cfg.lr)
    for epoch in range(epochs):
        rng = _derived_rng(cfg.seed, shuffle_stream, epoch)
        for b, idx in enumerate(_epoch_batches(len(data), cfg.batch_size, rng)):
            _check_forbidden(data.subject_ids[idx], forbid_subjects)
            xb = np.asarray(data.X[idx], dtype=np.float64)
            out = forward_with_taps(model, xb)
            loss = cross_entropy(softmax_temperature(out.logits, 1.0), data.y[idx])
            model.zero_grad()
            loss.backward()
            norm = adam.step()
            log.add(epoch=epoch, batch=b, role="pool", l_pred=float(loss.data),
                    l_dif=0.0, l_div=0.0, pool_update_norm=norm, cus_update_norm=0.0)
    return log


def pretrain_pool(config: ModelConfig, data: TrainingSet, cfg: DistillConfig,
                  forbid_subjects: Optional[set] = None) -> Tuple[Model, TrainLog]:
    """Stage 1: train a fresh pool model on the pooled subjects' windows."""
    cfg.validate()
    if len(data) == 0:
        raise DataError("pool training set is empty")
    if np.unique(data.y).size < 2:
        raise DataError("pool training set has a single class")
    model = build_model(config, cfg.seed)
    log = fit_crossentropy(model, data, cfg, cfg.epochs_stage1,
                           shuffle_stream=1, forbid_subjects=forbid_subjects)
    return model, log


def distill(pool: Model, subject_data: TrainingSet,
            cfg: DistillConfig) -> Tuple[Model, Model, TrainLog]:
    """Stage 2: alternate full and passive updates between pool and clone.

    The input pool model is not modified; the adapted pool comes back as
    the second return value.  The customized model starts as a fresh
    clone of the pool architecture under a seed derived from cfg.seed.
    """
    cfg.validate()
    if len(subject_data) == 0:
        raise DataError("subject training set is empty")

    pool_out = pool.copy()
    clone_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(17,)).generate_state(1)[0])
    cus = clone_architecture(pool, clone_seed)

    adam = {"pool": Adam(pool_out.params, cfg.lr), "cus": Adam(cus.params, cfg.lr)}
    models = {"pool": pool_out, "cus": cus}
    log = TrainLog()
    role = cfg.initial_role
    need_passive_grads = cfg.passive_rule != PassiveRule.PARAMETER_EMA

    for epoch in range(cfg.epochs_stage2):
        rng = _derived_rng(cfg.seed, 2, epoch)
        for b, idx in enumerate(_epoch_batches(len(subject_data), cfg.batch_size, rng)):
            xb = np.asarray(subject_data.X[idx], dtype=np.float64)
            yb = subject_data.y[idx]
            out = {name: forward_with_taps(m, xb) for name, m in models.items()}

            passive = "cus" if role == "pool" else "pool"
            active_terms = joint_loss(role, out[role], out[passive], yb, cfg)
            models[role].zero_grad()
            active_terms.total.backward()

            # both gradients are taken before either update is applied;
            # the detached cross terms keep each backward on its own model
            passive_grads = None
            if need_passive_grads:
                passive_terms = joint_loss(passive, out[passive], out[role], yb, cfg)
                models[passive].zero_grad()
                passive_terms.total.backward()
                passive_grads = [p.grad for p in models[passive].params]

            active_norm = adam[role].step()
            passive_norm = passive_update(models[passive], passive_grads, cfg,
                                          other=models[role])

            log.add(epoch=epoch, batch=b, role=role,
                    l_pred=active_terms.pred, l_dif=active_terms.dif,
                    l_div=active_terms.div,
                    pool_update_norm=active_norm if role == "pool" else passive_norm,
                    cus_update_norm=active_norm if role == "cus" else passive_norm)
            role = passive
    return cus, pool_out, log


# -- hyperparameter grid ------------------------------------------------------

@dataclass
class GridCell:
    config: DistillConfig
    accuracy: float
    fpr_per_hour: float


@dataclass
class GridSearchResult:
    best: DistillConfig
    cells: List[GridCell]


def _val_metrics(model: Model, val: TrainingSet, window_s: float) -> Tuple[float, float]:
    pred = predict(model, val.X)
    acc = float(np.mean(pred == val.y))
    interictal = val.y == 0
    fp = int(np.sum(pred[interictal] == 1))
    hours = interictal.sum() * window_s / 3600.0
    fpr = fp / hours if hours > 0 else 0.0
    return acc, fpr


def grid_search(pool: Model, train: TrainingSet, val: TrainingSet,
                base_cfg: DistillConfig, grid: Dict[str, List],
                window_s: float = 20.0) -> GridSearchResult:
    """Distill once per grid cell and pick the best validation accuracy.

    Ties break toward lower false-prediction rate, then lower learning
    rate.  The validation split must be disjoint from training data.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must name at least one value per axis")
    for key in grid:
        if not hasattr(base_cfg, key):
            raise ConfigError("unknown grid axis %r" % key)

    keys = list(grid)
    cells: List[GridCell] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base_cfg, **dict(zip(keys, combo)))
        cus, _pool, _log = distill(pool, train, cfg)
        acc, fpr = _val_metrics(cus, val, window_s)
        cells.append(GridCell(cfg, acc, fpr))

    best = min(cells, key=lambda c: (-c.accuracy, c.fpr_per_hour, c.config.lr))
    return GridSearchResult(best=best.config, cells=cells)
