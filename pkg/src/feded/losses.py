"""Training objectives. Each returns the batch-mean loss and its gradient w.r.t. the logits.

The FedED objective is ``loss_cal + lam * loss_dis + loss_logit``:

* ``loss_cal``: cross-entropy on logits shifted by ``log p(c)``; classes with
  ``p(c) = 0`` drop out of the partition function.
* ``loss_dis``: KL(teacher || student) between softmaxes restricted to the
  client's empty classes. The teacher is the frozen round-start global model.
* ``loss_logit``: for every observed class ``c``, the log of the batch mean of
  ``exp(f[c])`` over samples whose label is not ``c``, weighted by ``p(c)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from feded.errors import ConfigError, PriorMismatchError, ShapeError
from feded.nn import DTYPE, Model, logsumexp, softmax


@dataclass(frozen=True)
class ClassPrior:
    counts: np.ndarray
    p: np.ndarray
    empty: np.ndarray  # sorted indices with zero count

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def observed(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)

    @classmethod
    def from_counts(cls, counts) -> "ClassPrior":
        counts = np.asarray(counts, dtype=np.int64)
        total = counts.sum()
        if counts.ndim != 1 or total <= 0 or np.any(counts < 0):
            raise ConfigError("class counts must be a non-negative vector with a positive sum")
        return cls(counts, counts / total, np.flatnonzero(counts == 0))


@dataclass
class LossResult:
    value: float
    dlogits: np.ndarray


def class_priors(labels, num_classes: int) -> ClassPrior:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigError("cannot compute class priors of an empty label list")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigError(f"labels must lie in [0, {num_classes})")
    return ClassPrior.from_counts(np.bincount(labels, minlength=num_classes))


def _check(logits, labels=None):
    f = np.asarray(logits, dtype=DTYPE)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ShapeError(f"logits must be a non-empty (B, C) matrix, got shape {f.shape}")
    if labels is None:
        return f, None
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (f.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch size {f.shape[0]}")
    if y.min() < 0 or y.max() >= f.shape[1]:
        raise ShapeError(f"labels must lie in [0, {f.shape[1]})")
    return f, y


def loss_ce(logits, labels) -> LossResult:
    f, y = _check(logits, labels)
    b = np.arange(len(y))
    value = np.mean(logsumexp(f, axis=1) - f[b, y])
    d = softmax(f, axis=1)
    d[b, y] -= 1.0
    return LossResult(float(value), d / len(y))


def loss_cal(logits, labels, prior: ClassPrior) -> LossResult:
    f, y = _check(logits, labels)
    if prior.num_classes != f.shape[1]:
        raise ShapeError(f"prior covers {prior.num_classes} classes, logits have {f.shape[1]}")
    bad = np.isin(y, prior.empty)
    if bad.any():
        raise PriorMismatchError(
            f"labels {sorted(set(y[bad].tolist()))} are empty classes for this client's prior"
        )
    obs = prior.observed
    n = len(y)
    b = np.arange(n)
    shifted = f[:, obs] + np.log(prior.p[obs])
    value = np.mean(logsumexp(shifted, axis=1) - (np.log(prior.p[y]) + f[b, y]))
    d = np.zeros_like(f)
    d[:, obs] = softmax(shifted, axis=1)
    d[b, y] -= 1.0
    return LossResult(float(value), d / n)


def loss_dis(logits_local, logits_global, empty) -> LossResult:
    """KL(global || local) over the softmax restricted to ``empty``."""
    f, _ = _check(logits_local)
    g, _ = _check(logits_global)
    if g.shape != f.shape:
        raise ShapeError(f"teacher logits {g.shape} do not match student logits {f.shape}")
    if isinstance(empty, ClassPrior):
        empty = empty.empty
    if isinstance(empty, (set, frozenset)):
        empty = sorted(empty)
    o = np.unique(np.asarray(empty, dtype=np.int64))
    if o.size and (o.min() < 0 or o.max() >= f.shape[1]):
        raise ShapeError(f"empty-class indices {o.tolist()} out of range for {f.shape[1]} classes")
    d = np.zeros_like(f)
    if o.size <= 1:
        return LossResult(0.0, d)
    n = f.shape[0]
    zs, zt = f[:, o], g[:, o]
    log_q = zs - logsumexp(zs, axis=1)[:, None]
    log_qg = zt - logsumexp(zt, axis=1)[:, None]
    qg = np.exp(log_qg)
    value = np.sum(qg * (log_qg - log_q)) / n
    d[:, o] = (np.exp(log_q) - qg) / n
    # rounding can push an exact-zero KL a hair below zero
    return LossResult(max(float(value), 0.0), d)


def loss_logit(logits, labels, prior: ClassPrior) -> LossResult:
    f, y = _check(logits, labels)
    if prior.num_classes != f.shape[1]:
        raise ShapeError(f"prior covers {prior.num_classes} classes, logits have {f.shape[1]}")
    n, c = f.shape
    d = np.zeros_like(f)
    obs = prior.observed
    mask = y[:, None] != obs[None, :]  # (B, |obs|)
    live = mask.any(axis=0)
    if not live.any():
        return LossResult(0.0, d)
    cols = obs[live]
    m = mask[:, live]
    z = np.where(m, f[:, cols], -np.inf)
    top = z.max(axis=0)
    e = np.where(m, np.exp(z - top), 0.0)
    s = e.sum(axis=0)
    per_class = top + np.log(s) - np.log(n)
    w = prior.p[cols]
    d[:, cols] = w * e / s
    return LossResult(float(np.dot(w, per_class)), d)


def loss_feded(logits_local, logits_global, labels, prior: ClassPrior, lam: float,
               logit_weight: float = 1.0) -> LossResult:
    """Calibrated CE + lam * empty-class distillation + logit suppression.

    ``logit_weight`` is a local extension (default 1, the unweighted sum).
    """
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    cal = loss_cal(logits_local, labels, prior)
    dis = loss_dis(logits_local, logits_global, prior.empty)
    sup = loss_logit(logits_local, labels, prior)
    return LossResult(
        cal.value + lam * dis.value + logit_weight * sup.value,
        cal.dlogits + lam * dis.dlogits + logit_weight * sup.dlogits,
    )


def prox_term(params: Model, params_global: Model, mu: float) -> tuple[float, list[np.ndarray]]:
    """(mu/2) * ||w - w_g||^2 and its parameter gradient mu * (w - w_g)."""
    if mu < 0:
        raise ConfigError(f"mu must be non-negative, got {mu}")
    local, ref = params.params(), params_global.params()
    if len(local) != len(ref) or any(a.shape != b.shape for a, b in zip(local, ref)):
        raise ShapeError("proximal term needs models of identical shape")
    diffs = [a - b for a, b in zip(local, ref)]
    value = 0.5 * mu * sum(float(np.sum(d * d)) for d in diffs)
    return value, [mu * d for d in diffs]
