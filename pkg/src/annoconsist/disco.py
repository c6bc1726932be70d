"""Dissimilarity coefficient between the prediction and conditional sides.

All three diversity terms use the identity-matching task loss on the
shared pool. div_pc takes the exact expectation over the factorized
state and the empirical mean over the K samples; div_cc is the unbiased
k != k' sample estimator; div_pp is exact on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .loss import LossConfig, delta
from .prednet import expected_loss_vs_sample, self_diversity_pred


@dataclass
class DiscoConfig:
    gamma: float = 0.5


class DiscParts(NamedTuple):
    disc: float
    div_pc: float
    div_cc: float
    div_pp: float


def div_pc(state: np.ndarray, labels: np.ndarray, cfg: LossConfig) -> float:
    """(1/K) sum_k E_state Delta(y_p, y_c^k)."""
    k = labels.shape[0]
    return sum(expected_loss_vs_sample(state, labels[i], cfg) for i in range(k)) / k


def div_cc(labels: np.ndarray, rec, cfg: LossConfig) -> float:
    """(1/(K(K-1))) sum_{k != k'} Delta(y^k, y^k'). Needs K >= 2."""
    k = labels.shape[0]
    if k < 2:
        raise ValueError("div_cc needs at least two samples")
    acc = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                acc += delta(labels[i], labels[j], rec, cfg).total
    return acc / (k * (k - 1))


def div_pp(state: np.ndarray, cfg: LossConfig) -> float:
    return self_diversity_pred(state, cfg)


def disc(state: np.ndarray, labels: np.ndarray, rec, cfg: LossConfig,
         gamma: float = 0.5) -> DiscParts:
    """Jensen-style difference DIV(p,c) - gamma DIV(c,c) - (1-gamma) DIV(p,p)."""
    pc = div_pc(state, labels, cfg)
    cc = div_cc(labels, rec, cfg)
    pp = div_pp(state, cfg)
    return DiscParts(pc - gamma * cc - (1.0 - gamma) * pp, pc, cc, pp)
