"""Contrastive objectives and their gradients with respect to the query features.

Every loss returns a :class:`LossValue` holding the scalar and ``dL/dq``.
Positives and negatives are treated as constants. Pushing ``grad_q``
through :meth:`MlpEncoder.backward` yields the parameter gradient, which
:func:`with_param_grad` stores on the value.

Negatives are passed as an array of shape ``(n, m, d)`` (``m`` may be 0) or
as a list of per-sample ``(m_i, d)`` arrays.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import BatchTooSmallError, DimMismatchError, NonPositiveTauError


@dataclass
class LossValue:
    value: float
    grad_q: np.ndarray
    grad: np.ndarray = None  # flat encoder-parameter gradient, once backpropagated

    def scaled(self, w):
        return LossValue(w * self.value, w * self.grad_q,
                         None if self.grad is None else w * self.grad)


def with_param_grad(loss, encoder):
    """Backpropagate ``loss.grad_q`` through the encoder's last forward pass."""
    loss.grad = encoder.backward(loss.grad_q)
    return loss


def _log_softmax(logits):
    """Row-wise log-softmax; rows may contain ``-inf`` but not only ``-inf``."""
    shift = logits.max(axis=1, keepdims=True)
    z = logits - shift
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_tau(tau):
    if not tau > 0:
        raise NonPositiveTauError(f"tau must be > 0, got {tau}")


def _pad_negatives(negatives, n, d):
    if isinstance(negatives, np.ndarray) and negatives.ndim == 3:
        return negatives, np.ones(negatives.shape[:2], dtype=bool)
    if len(negatives) != n:
        raise DimMismatchError(f"{len(negatives)} negative sets for {n} samples")
    width = max((len(v) for v in negatives), default=0)
    out = np.zeros((n, width, d))
    mask = np.zeros((n, width), dtype=bool)
    for i, v in enumerate(negatives):
        v = np.asarray(v, dtype=np.float64).reshape(-1, d)
        out[i, :len(v)] = v
        mask[i, :len(v)] = True
    return out, mask


def _info_nce(q, pos, neg, mask, tau):
    """Per-sample ``-log softmax`` of the positive logit and its gradient in ``q``."""
    pos_logit = np.einsum("nd,nd->n", q, pos) / tau
    neg_logit = np.einsum("nd,nmd->nm", q, neg) / tau
    neg_logit = np.where(mask, neg_logit, -np.inf)
    logits = np.concatenate([pos_logit[:, None], neg_logit], axis=1)
    log_p = _log_softmax(logits)
    terms = -log_p[:, 0]
    p = np.exp(log_p)
    grad = ((p[:, 0] - 1.0)[:, None] * pos + np.einsum("nm,nmd->nd", p[:, 1:], neg)) / tau
    return terms, grad


def loss_intra(q, positives, negatives, tau=0.2):
    """Intra-domain loss averaged over the three positives of each sample, summed over the batch.

    Parameters
    ----------
    q : ndarray (n, d)
        Query features from the online encoder.
    positives : sequence of three (n, d) arrays or ndarray (n, 3, d)
        Augmented view, bank nearest neighbour and matched prototype.
    negatives : ndarray (n, m, d) or list of (m_i, d)
        Unmatched prototypes of each sample.
    """
    _check_tau(tau)
    q = np.asarray(q, dtype=np.float64)
    n, d = q.shape
    pos = np.asarray(positives, dtype=np.float64)
    if pos.ndim == 3 and pos.shape[0] == 3 and pos.shape[1] == n:
        pos = pos.transpose(1, 0, 2)
    if pos.shape != (n, pos.shape[1], d):
        raise DimMismatchError(f"positives shape {pos.shape} incompatible with q {q.shape}")
    neg, mask = _pad_negatives(negatives, n, d)
    n_pos = pos.shape[1]
    total = 0.0
    grad = np.zeros_like(q)
    for j in range(n_pos):
        terms, g = _info_nce(q, pos[:, j], neg, mask, tau)
        total += terms.sum()
        grad += g
    return LossValue(float(total / n_pos), grad / n_pos)


def loss_cross(q, matched, negatives, tau=0.2):
    """Cross-domain loss: one positive (the matched prototype of the other domain)."""
    _check_tau(tau)
    q = np.asarray(q, dtype=np.float64)
    matched = np.asarray(matched, dtype=np.float64)
    if matched.shape != q.shape:
        raise DimMismatchError(f"matched shape {matched.shape} != q shape {q.shape}")
    neg, mask = _pad_negatives(negatives, *q.shape)
    terms, grad = _info_nce(q, matched, neg, mask, tau)
    return LossValue(float(terms.sum()), grad)


def loss_pretrain(q, q_aug, tau=0.2):
    """Instance discrimination over the batch.

    Sample ``i``'s positive is ``q_aug[i]``; every other row of ``q_aug``
    is a negative.
    """
    _check_tau(tau)
    q = np.asarray(q, dtype=np.float64)
    q_aug = np.asarray(q_aug, dtype=np.float64)
    if q.shape != q_aug.shape:
        raise DimMismatchError(f"views differ in shape: {q.shape} vs {q_aug.shape}")
    n = len(q)
    if n < 2:
        raise BatchTooSmallError("instance discrimination needs at least two samples")
    log_p = _log_softmax(q @ q_aug.T / tau)
    terms = -np.diagonal(log_p)
    p = np.exp(log_p)
    p[np.arange(n), np.arange(n)] -= 1.0
    return LossValue(float(terms.sum()), p @ q_aug / tau)


def loss_total(l_in, l_cr, lam=0.01):
    """``l_in + lam * l_cr``, combining scalars and whichever gradients both carry."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    grad = None
    if l_in.grad is not None and l_cr.grad is not None:
        grad = l_in.grad + lam * l_cr.grad
    return LossValue(l_in.value + lam * l_cr.value, l_in.grad_q + lam * l_cr.grad_q, grad)
