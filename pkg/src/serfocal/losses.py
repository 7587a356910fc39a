"""Softmax cross-entropy and focal loss.

Focal loss scales the cross-entropy of the true class by ``(1 - p_t)**gamma``
so confidently classified samples contribute little:

    FL(p_t) = -(1 - p_t)**gamma * log(p_t)

Batched losses are averaged over samples.
"""

from dataclasses import dataclass

import numpy as np

from serfocal.errors import ConfigError, NumericError

P_MIN = 1e-12
LOG_P_MIN = np.log(P_MIN)


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")


def _check_label(label, k):
    if not 0 <= label < k:
        raise IndexError(f"label {label} out of range for {k} classes")


def softmax(logits, axis=-1):
    z = np.asarray(logits)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(probs, label):
    """``-log(max(p_label, 1e-12))`` for a single probability vector."""
    _check_label(label, len(probs))
    return float(-np.log(max(probs[label], P_MIN)))


def focal_loss(probs, label, cfg=FocalConfig()):
    _check_label(label, len(probs))
    if isinstance(cfg, (int, float)):
        cfg = FocalConfig(float(cfg))
    pt = float(probs[label])
    return float(-((1.0 - pt) ** cfg.gamma) * np.log(max(pt, P_MIN)))


def _focal_coefficient(pt, log_pt, gamma):
    """d FL / d log(p_t), the factor multiplying ``d log p_t / d z``.

    FL = -(1-p)^g * log p; with d p = p * d log p this is
    g * (1-p)^(g-1) * p * log p - (1-p)^g.
    """
    q = 1.0 - pt
    modulator = q**gamma
    if gamma == 0:
        return -modulator
    with np.errstate(divide="ignore", invalid="ignore"):
        shaped = np.where(q > 0, gamma * q ** (gamma - 1.0) * pt * log_pt, 0.0)
    return shaped - modulator


def focal_loss_backward(logits, label, cfg=FocalConfig()):
    """Gradient of ``focal_loss(softmax(logits), label)`` w.r.t. the logits."""
    if isinstance(cfg, (int, float)):
        cfg = FocalConfig(float(cfg))
    z = np.asarray(logits, dtype=np.float64)
    _check_label(label, z.shape[-1])
    _, grad = focal_loss_batch(z[None, :], np.array([label]), cfg.gamma)
    return grad[0]


def focal_loss_batch(logits, labels, gamma=2.0):
    """Mean focal loss over a batch and its gradient w.r.t. the logits.

    ``logits`` is (N, K), ``labels`` is (N,) integer class indices.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    n = logits.shape[0]
    log_p = log_softmax(logits)
    p = np.exp(log_p)
    rows = np.arange(n)
    log_pt = np.maximum(log_p[rows, labels], LOG_P_MIN)
    pt = p[rows, labels]
    losses = -((1.0 - pt) ** gamma) * log_pt
    coef = _focal_coefficient(pt, log_pt, gamma)
    # d log p_t / d z_j = onehot_j - p_j
    dlogp = -p
    dlogp[rows, labels] += 1.0
    grad = coef[:, None] * dlogp / n
    loss = float(losses.mean())
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite focal loss or gradient")
    return loss, grad.astype(logits.dtype, copy=False)


def cross_entropy_batch(logits, labels):
    """Mean softmax cross-entropy over a batch and its gradient."""
    n = logits.shape[0]
    log_p = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-np.maximum(log_p[rows, labels], LOG_P_MIN).mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    grad /= n
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy")
    return loss, grad.astype(logits.dtype, copy=False)
