"""Loss functions for the two-model distillation objective.

The joint objective of each model has three terms: its own hard-label
cross-entropy, a feature alignment penalty over declared tap points, and
a Bregman divergence between the two models' temperature-softened output
distributions.  The divergence takes the other model's distribution as
the (gradient-stopped) target side, so each backward pass only reaches
the parameters of the model whose loss it is.

All probabilities are clamped to [eps, 1-eps] before any log; squared
terms are left unclamped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor, clamp, mul, softmax, sub, tlog, tmean, tsum
from .errors import ConfigError, DataError, ShapeError

EPS = 1e-7

TapList = List[Tuple[str, Tensor]]


class DivergenceKind(enum.Enum):
    MSE = "mse"
    KL = "kl"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, name: str) -> "DivergenceKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ConfigError("unknown divergence %r; expected one of %s"
                              % (name, [k.value for k in cls])) from None


def softmax_temperature(logits: Tensor, temperature: float) -> Tensor:
    """Class distribution from logits softened by ``temperature``.

    temperature 1 recovers the plain softmax; larger values flatten the
    distribution without changing the argmax.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be positive, got %r" % (temperature,))
    return softmax(logits / float(temperature))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` holds one distribution per row (a single 1-D distribution
    is treated as a batch of one); ``labels`` are integer class ids.
    """
    p = probs
    if p.ndim == 1:
        p = p.reshape((1, -1))
    if p.ndim != 2:
        raise ShapeError("probs must be 1-D or 2-D, got %r" % (p.shape,))
    y = np.asarray(labels).reshape(-1)
    B, M = p.shape
    if y.shape[0] != B:
        raise ShapeError("got %d labels for %d rows" % (y.shape[0], B))
    if y.size and (y.min() < 0 or y.max() >= M):
        raise DataError("label out of range [0, %d)" % M)
    onehot = np.zeros((B, M))
    onehot[np.arange(B), y] = 1.0
    picked = tsum(mul(tlog(clamp(p, EPS, 1.0)), Tensor(onehot)), axis=1)
    return -tmean(picked)


def _sum_classes_mean_batch(elems: Tensor) -> Tensor:
    if elems.ndim == 1:
        return tsum(elems)
    return tmean(tsum(elems, axis=1))


def bregman_divergence(p: Tensor, q: Tensor, kind: DivergenceKind) -> Tensor:
    """Divergence from target distribution ``p`` to distribution ``q``.

    The first argument is the target side; for the asymmetric kinds this
    direction defines which distribution sits inside the logs.  Inputs
    are single distributions or row batches (batches are averaged).

    MSE:      sum_m (p_m - q_m)^2
    KL:       sum_m p_m ln(p_m / q_m)
    Logistic: sum_m p_m ln(p_m / q_m) + (1 - p_m) ln((1 - p_m) / (1 - q_m))
    """
    if p.shape != q.shape:
        raise ShapeError("distribution shapes differ: %r vs %r" % (p.shape, q.shape))
    if kind == DivergenceKind.MSE:
        d = sub(p, q)
        return _sum_classes_mean_batch(mul(d, d))
    pc = clamp(p, EPS, 1.0 - EPS)
    qc = clamp(q, EPS, 1.0 - EPS)
    if kind == DivergenceKind.KL:
        elems = mul(pc, sub(tlog(pc), tlog(qc)))
        return _sum_classes_mean_batch(elems)
    if kind == DivergenceKind.LOGISTIC:
        head = mul(pc, sub(tlog(pc), tlog(qc)))
        tail = mul(1.0 - pc, sub(tlog(1.0 - pc), tlog(1.0 - qc)))
        return _sum_classes_mean_batch(head + tail)
    raise ConfigError("unknown divergence kind %r" % (kind,))


def uniform_tap_weights(tap_names: Sequence[str]) -> Dict[str, float]:
    """The default feature weights: 1 / (number of taps) for each tap."""
    names = list(tap_names)
    if not names:
        return {}
    w = 1.0 / len(names)
    return {name: w for name in names}


def feature_difference(taps_a: TapList, taps_b: TapList,
                       weights: Dict[str, float]) -> Tensor:
    """Weighted squared distance between two models' tap activations.

    Both tap lists must declare the same names in the same order, and
    ``weights`` must cover exactly those names with nonnegative values.
    The result is sum_i alpha_i * sum((z_a^i - z_b^i)^2) over every
    element of each tap.
    """
    names_a = [n for n, _ in taps_a]
    names_b = [n for n, _ in taps_b]
    if names_a != names_b:
        raise ConfigError("tap names differ between models: %r vs %r" % (names_a, names_b))
    if set(weights) != set(names_a):
        raise ConfigError("feature weights %r do not match taps %r"
                          % (sorted(weights), names_a))
    for name, w in weights.items():
        if w < 0:
            raise ConfigError("feature weight for %r is negative" % name)
    total: Optional[Tensor] = None
    for (name, za), (_, zb) in zip(taps_a, taps_b):
        if za.shape != zb.shape:
            raise ShapeError("tap %r shapes differ: %r vs %r" % (name, za.shape, zb.shape))
        d = sub(za, zb)
        term = tsum(mul(d, d)) * weights[name]
        total = term if total is None else total + term
    return Tensor(0.0) if total is None else total


@dataclass
class JointTerms:
    """A joint loss value with its three components, for logging."""
    total: Tensor
    pred: float
    dif: float
    div: float


def joint_loss(role: str, own, other, labels, cfg) -> JointTerms:
    """The full objective of one model given the other model's outputs.

    ``role`` is "pool" or "cus" and names whose loss this is; ``own`` and
    ``other`` are forward results (logits + taps) with ``own`` belonging
    to the model under ``role``.  The other model's logits and taps are
    detached, so gradients reach only the own model's parameters.

    ``cfg`` supplies temperature, divergence kind, feature weights and
    the optional term weights; see DistillConfig.
    """
    if role not in ("pool", "cus"):
        raise ConfigError("role must be 'pool' or 'cus', got %r" % (role,))

    pred = cross_entropy(softmax_temperature(own.logits, 1.0), labels)

    weights = cfg.feature_weights
    if weights is None:
        weights = uniform_tap_weights([n for n, _ in own.taps])
    other_taps = [(n, z.detach()) for n, z in other.taps]
    dif = feature_difference(own.taps, other_taps, weights)

    d_own = softmax_temperature(own.logits, cfg.temperature)
    d_target = softmax_temperature(other.logits.detach(), cfg.temperature)
    div = bregman_divergence(d_target, d_own, cfg.divergence)
    if getattr(cfg, "temperature_compensation", False):
        div = div * (cfg.temperature ** 2)

    w_dif = getattr(cfg, "weight_dif", 1.0)
    w_div = getattr(cfg, "weight_div", 1.0)
    total = pred + dif * w_dif + div * w_div
    return JointTerms(total=total, pred=float(pred.data),
                      dif=float(dif.data), div=float(div.data))
