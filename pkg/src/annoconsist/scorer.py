"""Per-proposal features and the noise-conditioned scorer.

The scorer maps concat(features(u), z) to a row of C+1 scores (column 0
is background). Default is a single weight matrix; an optional one-hidden-
layer tanh variant is available. Feature layout, for C classes:

    [area, cx, cy, mean_r, mean_g, mean_b, boundary_edge,
     seed_frac_class_1 .. seed_frac_class_C, 1.0]

seed_frac is |r ∩ s| / |r|, maximized over seeds of that class: the
fraction of the proposal covered by the seed. Seed-sized proposals score
near 1, full extents are diluted, so a scorer trained on seeds alone
prefers the discriminative part of an object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import inner_boundary
from .scenes import SceneRecord

NOISE_DIM = 8
MLP_HIDDEN = 32


def feature_dim(num_classes: int) -> int:
    return 8 + num_classes


def features(rec: SceneRecord) -> np.ndarray:
    """(P, D) feature matrix; cached on the record."""
    if rec._features is not None:
        return rec._features
    p = rec.num_proposals
    d = feature_dim(rec.num_classes)
    out = np.zeros((p, d), dtype=np.float64)
    hw = rec.height * rec.width
    seeds_by_class = {}
    for s in rec.seeds:
        seeds_by_class.setdefault(s.class_id, []).append(s.mask)
    for i in range(p):
        m = rec.pool[i]
        ys, xs = np.nonzero(m)
        area = ys.size
        out[i, 0] = area / hw
        out[i, 1] = xs.mean() / rec.width
        out[i, 2] = ys.mean() / rec.height
        out[i, 3:6] = rec.image[m].mean(axis=0)
        ring = inner_boundary(m)
        out[i, 6] = rec.edges[ring].mean() if ring.any() else 0.0
        for j, seed_masks in seeds_by_class.items():
            best = max(np.count_nonzero(m & s) / area for s in seed_masks)
            out[i, 7 + j - 1] = best
        out[i, d - 1] = 1.0
    rec._features = out
    return out


@dataclass
class CondParams:
    """Scorer parameters. kind is "linear" (w: (C+1, D+d)) or "mlp"
    (w1: (hidden, D+d), w2: (C+1, hidden))."""

    kind: str
    w: np.ndarray | None = None
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None

    def copy(self) -> "CondParams":
        return CondParams(
            kind=self.kind,
            w=None if self.w is None else self.w.copy(),
            w1=None if self.w1 is None else self.w1.copy(),
            w2=None if self.w2 is None else self.w2.copy(),
        )

    def arrays(self):
        if self.kind == "linear":
            return {"w": self.w}
        return {"w1": self.w1, "w2": self.w2}


def cond_init(num_classes: int, noise_dim: int = NOISE_DIM, kind: str = "linear",
              hidden: int = MLP_HIDDEN, rng=None) -> CondParams:
    d_in = feature_dim(num_classes) + noise_dim
    if kind == "linear":
        return CondParams(kind="linear", w=np.zeros((num_classes + 1, d_in)))
    if kind == "mlp":
        if rng is None:
            rng = np.random.default_rng(0)
        # tanh saturates with zero init; small random breaks the symmetry
        w1 = rng.normal(0.0, 0.1, size=(hidden, d_in))
        return CondParams(kind="mlp", w1=w1, w2=np.zeros((num_classes + 1, hidden)))
    raise ValueError(f"unknown scorer kind {kind!r}")


def scorer_input(rec: SceneRecord, z: np.ndarray) -> np.ndarray:
    """(P, D+d) matrix: features with the shared noise row appended."""
    f = features(rec)
    return np.hstack([f, np.broadcast_to(z, (f.shape[0], z.shape[0]))])


def score_from_input(params: CondParams, x: np.ndarray) -> np.ndarray:
    if params.kind == "linear":
        return x @ params.w.T
    return np.tanh(x @ params.w1.T) @ params.w2.T


def score_all(params: CondParams, rec: SceneRecord, z: np.ndarray) -> np.ndarray:
    """(P, C+1) score table for one noise draw; finite for finite params."""
    return score_from_input(params, scorer_input(rec, z))


def score_vjp(params: CondParams, x: np.ndarray, q: np.ndarray) -> CondParams:
    """Gradient of sum(q * F(x)) with respect to the parameters.

    q has the score table's shape; this is the only backward pass the
    trainer needs, since every loss term is a weighted sum of entries.
    """
    if params.kind == "linear":
        return CondParams(kind="linear", w=q.T @ x)
    hidden = np.tanh(x @ params.w1.T)
    dw2 = q.T @ hidden
    dh = q @ params.w2
    dpre = dh * (1.0 - hidden * hidden)
    return CondParams(kind="mlp", w1=dpre.T @ x, w2=dw2)


def score_grad(params: CondParams, rec: SceneRecord, z: np.ndarray, u: int, c: int) -> CondParams:
    """Gradient of the single entry F[u, c]; analytic, used by tests too."""
    x = scorer_input(rec, z)
    q = np.zeros((x.shape[0], num_scores(params)))
    q[u, c] = 1.0
    return score_vjp(params, x, q)


def num_scores(params: CondParams) -> int:
    return params.w.shape[0] if params.kind == "linear" else params.w2.shape[0]


def draw_noise(seed: int, scene_id: int, k: int, extra: int = 0,
               dim: int = NOISE_DIM) -> np.ndarray:
    """U[0,1]^dim, deterministic in (seed, scene_id, k, extra)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, scene_id, k, extra)))
    return rng.uniform(0.0, 1.0, size=dim)


def axpy(dst: CondParams, src: CondParams, alpha: float) -> None:
    """dst += alpha * src, in place, for parameter structures."""
    for name, arr in src.arrays().items():
        cur = getattr(dst, name)
        cur += alpha * arr
