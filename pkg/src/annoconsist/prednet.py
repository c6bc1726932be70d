"""Fully factorized prediction distribution over proposal labels.

Each proposal gets an independent softmax over C+1 classes computed from
its features alone (no noise, no annotation). Decoding keeps proposals
whose best foreground probability clears a threshold and runs per-class
greedy NMS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import LossConfig
from .scenes import SceneRecord
from .scorer import feature_dim, features


@dataclass
class PredParams:
    w: np.ndarray  # (C+1, D)

    def copy(self) -> "PredParams":
        return PredParams(w=self.w.copy())

    def arrays(self):
        return {"w": self.w}


@dataclass
class InstancePrediction:
    proposal_index: int
    class_id: int
    confidence: float
    mask: np.ndarray
    box: object


def pred_init(num_classes: int) -> PredParams:
    return PredParams(w=np.zeros((num_classes + 1, feature_dim(num_classes))))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: PredParams, rec: SceneRecord) -> np.ndarray:
    """(P, C+1) predictive state; rows sum to 1."""
    return softmax_rows(features(rec) @ params.w.T)


def argmax_labeling(state: np.ndarray) -> np.ndarray:
    """Mode of the factorized distribution (background ties win)."""
    return state.argmax(axis=1).astype(np.int64)


def decode(state: np.ndarray, rec: SceneRecord, score_thresh: float = 0.7,
           nms_t: float = 0.5) -> list:
    """Thresholded, per-class NMS-filtered instance list.

    Candidates need best foreground probability >= score_thresh; within a
    class, a kept candidate suppresses others it covers by more than
    nms_t. Idempotent: decoding the survivors again changes nothing.
    """
    geom = rec.geometry()
    fg = state[:, 1:]
    conf = fg.max(axis=1)
    cls = fg.argmax(axis=1) + 1
    cand = np.nonzero(conf >= score_thresh)[0]
    order = cand[np.argsort(-conf[cand], kind="stable")]
    out = []
    suppressed = np.zeros(state.shape[0], dtype=bool)
    for u in order:
        if suppressed[u]:
            continue
        out.append(
            InstancePrediction(
                proposal_index=int(u),
                class_id=int(cls[u]),
                confidence=float(conf[u]),
                mask=rec.pool[u],
                box=geom.boxes[u],
            )
        )
        for v in cand:
            if v != u and not suppressed[v] and cls[v] == cls[u] and geom.ovl[u, v] > nms_t:
                suppressed[v] = True
    return out


def expected_loss_vs_sample(state: np.ndarray, y: np.ndarray,
                            cfg: LossConfig) -> float:
    """E over the factorized state of Delta(y_p, y), identity matching.

    Per-proposal expectation of the mismatch cost has the closed form
    lambda * (1 - p_u(y_u)); box and mask terms vanish on a shared pool.
    """
    p_target = state[np.arange(state.shape[0]), y]
    return float(cfg.w_cls * cfg.lambda_cls * (1.0 - p_target).sum())


def self_diversity_pred(state: np.ndarray, cfg: LossConfig) -> float:
    """E Delta(y, y') for two independent draws from the state."""
    return float(
        cfg.w_cls * cfg.lambda_cls * (1.0 - (state * state).sum(axis=1)).sum()
    )
