"""Training objectives: clean/attacked cross-entropy, InfoNCE, combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import ConfigError
from .tensor import ContractError, Tensor

PROB_FLOOR = 1e-12


@dataclass
class LossBundle:
    """Scalar losses of one training step, with the combining identities."""

    l_ce: float
    l_ce_attack: float
    l_infonce: float
    w_contrastive: float

    @property
    def l_clf(self):
        return self.l_ce + self.l_ce_attack

    @property
    def l_total(self):
        return (
            self.w_contrastive * self.l_infonce
            + (1.0 - self.w_contrastive) * self.l_clf
        )


def cross_entropy(probs, labels):
    """Mean binary cross-entropy of (benign, bad) probability pairs.

    probs: tensor [N, 2]; labels: int array [N] with 1 = bad actor.
    Probabilities are clamped to [1e-12, 1 - 1e-12] before the log.
    """
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    y = np.asarray(labels, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != 2 or probs.shape[0] == 0:
        raise ContractError(f"cross_entropy: expected nonempty [N, 2] probs, got {probs.shape}")
    if y.shape != (probs.shape[0],):
        raise ContractError(f"cross_entropy: labels shape {y.shape} != ({probs.shape[0]},)")
    p_bad = T.clip(
        T.sum_axis(probs * np.array([0.0, 1.0]), axis=1), PROB_FLOOR, 1.0 - PROB_FLOOR
    )
    terms = y * T.log(p_bad) + (1.0 - y) * T.log(1.0 - p_bad)
    return -T.mean_axis(terms, axis=0)


def info_nce(z_orig, z_attack, temperature=1.0):
    """InfoNCE over in-batch pairs, anchored on the original views.

    For each of the N anchors the positive is its attacked counterpart
    and the negatives are both views of every other user (2(N-1) terms);
    similarity is cosine. Returns the mean per-anchor loss.
    """
    z_orig = z_orig if isinstance(z_orig, Tensor) else Tensor(z_orig)
    z_attack = z_attack if isinstance(z_attack, Tensor) else Tensor(z_attack)
    if z_orig.shape != z_attack.shape or z_orig.ndim != 2:
        raise ContractError(
            f"info_nce: views must share shape [N, dim], got {z_orig.shape} and {z_attack.shape}"
        )
    n = z_orig.shape[0]
    if n < 2:
        raise ContractError(f"info_nce: batch size {n} < 2, no negatives exist")
    zo = T.normalize_rows(z_orig)
    za = T.normalize_rows(z_attack)
    inv_t = 1.0 / temperature
    sim_oa = zo @ T.transpose(za, (1, 0))  # [N, N]; diagonal = positives
    sim_oo = zo @ T.transpose(zo, (1, 0))
    pos = T.sum_axis(sim_oa * np.eye(n), axis=1)
    # denominator: all attacked views + the other originals (drop self-sim)
    denom = T.sum_axis(T.exp(sim_oa * inv_t), axis=1) + T.sum_axis(
        T.exp(sim_oo * inv_t) * (1.0 - np.eye(n)), axis=1
    )
    losses = T.log(denom) - pos * inv_t
    return T.mean_axis(losses, axis=0)


def total_loss(l_clf, l_infonce, w_contrastive):
    """Weighted average of classification and contrastive losses."""
    if not 0.0 <= w_contrastive <= 1.0:
        raise ConfigError(f"w_contrastive must be in [0, 1], got {w_contrastive}")
    return w_contrastive * l_infonce + (1.0 - w_contrastive) * l_clf
