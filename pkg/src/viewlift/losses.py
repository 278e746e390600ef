"""Reference forward computations for the training objective.

These are numerical oracles (no gradients, no backbone): label-smoothed
identity cross-entropy, batch-hard triplet loss on Euclidean distances,
real-vs-synthetic domain cross-entropy, and their weighted combination.
"""

from dataclasses import dataclass

import numpy as np

from viewlift.assets import REAL, SYNTHETIC
from viewlift.errors import ValidationError


@dataclass(frozen=True)
class LossWeights:
    lambda_id: float = 1.0
    lambda_tri: float = 1.0
    lambda_dom: float = 0.5

    def __post_init__(self):
        if min(self.lambda_id, self.lambda_tri, self.lambda_dom) < 0:
            raise ValueError("loss weights must be >= 0")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def id_loss(logits: np.ndarray, labels, smoothing: float = 0.1) -> float:
    """Mean label-smoothed cross-entropy over the batch.

    The smoothed target puts 1 - eps + eps/C on the true class and eps/C on
    the others; log-probabilities are stabilized by max subtraction.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValidationError("labels must have one entry per logit row")
    if labels.min() < 0 or labels.max() >= c:
        raise ValidationError(f"label out of range [0, {c - 1}]")
    if not 0.0 <= smoothing < 1.0:
        raise ValidationError("smoothing must lie in [0, 1)")
    logp = _log_softmax(logits)
    target = np.full((n, c), smoothing / c)
    target[np.arange(n), labels] += 1.0 - smoothing
    return float(-(target * logp).sum(axis=1).mean())


def triplet_loss(embeddings: np.ndarray, labels, margin: float = 0.3) -> float:
    """Batch-hard triplet loss: per anchor, the farthest same-identity and
    nearest different-identity rows under Euclidean distance.

    Requires every identity to have at least two instances and the batch to
    contain at least two identities (guaranteed by the P x K epoch plans).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(emb)
    if labels.shape[0] != n:
        raise ValidationError("labels must have one entry per embedding row")
    if margin < 0:
        raise ValidationError("margin must be >= 0")
    same = labels[:, None] == labels[None, :]
    if same.all():
        raise ValidationError("batch needs at least two identities")
    if (same.sum(axis=1) < 2).any():
        raise ValidationError("every identity needs at least two instances")

    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    pos_mask = same & ~np.eye(n, dtype=bool)
    d_ap = np.where(pos_mask, dist, -np.inf).max(axis=1)
    d_an = np.where(~same, dist, np.inf).min(axis=1)
    return float(np.maximum(0.0, margin + d_ap - d_an).mean())


def domain_loss(domain_logits: np.ndarray, domain_labels) -> float:
    """Two-class softmax cross-entropy predicting real vs synthetic.

    Logit column 0 scores "real", column 1 "synthetic"; labels may be the
    domain strings or 0/1 indices.
    """
    logits = np.asarray(domain_logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValidationError("domain logits must have shape (N, 2)")
    idx = []
    for lab in domain_labels:
        if lab in (REAL, 0):
            idx.append(0)
        elif lab in (SYNTHETIC, 1):
            idx.append(1)
        else:
            raise ValidationError(f"bad domain label {lab!r}")
    labels = np.asarray(idx, dtype=np.int64)
    if labels.shape[0] != logits.shape[0]:
        raise ValidationError("one domain label per logit row required")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def total_loss(l_id: float, l_tri: float, l_dom: float,
               weights: LossWeights = LossWeights()) -> float:
    """Weighted combination of the three loss terms."""
    return (weights.lambda_id * l_id + weights.lambda_tri * l_tri
            + weights.lambda_dom * l_dom)
