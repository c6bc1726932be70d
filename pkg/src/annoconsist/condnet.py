"""Conditional distribution over labelings: scoring, refinement, inference.

A labeling assigns each pool proposal a class id (0 = background). The
conditional side scores labelings as sum of per-proposal entries of a
refined score table plus a hard annotation-consistency term, and samples
by running greedy inference on K noise-perturbed tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .masks import box_iou
from .scenes import Annotation, PoolGeometry, SceneRecord
from .scorer import CondParams, draw_noise, score_from_input, scorer_input

TERM_MODES = ("U", "U+P", "U+P+H")


class InferenceError(Exception):
    pass


@dataclass
class InferenceConfig:
    delta: float = 0.1  # stabilizer in the pairwise update
    n_iters: int = 3  # refinement iterations
    overlap_t: float = 0.5  # greedy suppression threshold
    select_threshold: float = 0.0  # stop once the next score falls to/below this
    center_scores: bool = False  # subtract the per-class pool median first
    box_rho: float = 0.5  # box-IoU needed to count as covering a box


def pairwise_refine(f: np.ndarray, adjacency, cfg: InferenceConfig) -> np.ndarray:
    """Boundary-aware score smoothing, final table only."""
    return refine_stack(f, adjacency, cfg)[-1]


def refine_stack(f: np.ndarray, adjacency, cfg: InferenceConfig) -> np.ndarray:
    """All refinement iterates, shape (n_iters+1, P, C+1).

    Each iteration adds, per neighbor pair, exp(-I_uv) / (gap^2 + delta);
    updates read the previous iterate only, so order never matters. Strong
    edges (large I_uv) gate the flow to nothing.
    """
    g0 = np.ascontiguousarray(f, dtype=np.float64)
    if adjacency.edge_u.size == 0:
        return np.broadcast_to(g0, (cfg.n_iters + 1,) + g0.shape).copy()
    w = np.exp(-adjacency.edge_w)
    return kernels.refine_forward(
        g0, adjacency.edge_u, adjacency.edge_v, w, cfg.delta, cfg.n_iters
    )


def refine_backward(stack: np.ndarray, adjacency, cfg: InferenceConfig,
                    q_final: np.ndarray) -> np.ndarray:
    """Adjoint of refine_stack: gradient wrt the unrefined table."""
    if adjacency.edge_u.size == 0:
        return q_final.astype(np.float64).copy()
    w = np.exp(-adjacency.edge_w)
    return kernels.refine_backward(
        stack, adjacency.edge_u, adjacency.edge_v, w, cfg.delta,
        np.ascontiguousarray(q_final, dtype=np.float64),
    )


def higher_order_feasible(labels: np.ndarray, ann: Annotation,
                          geom: PoolGeometry, cfg: InferenceConfig) -> bool:
    """Annotation consistency: every present class selected at least once;
    with boxes, every box covered by a selected proposal of its class whose
    tight box reaches IoU box_rho."""
    for j in ann.classes:
        if not (labels == j).any():
            return False
    if ann.boxes is not None:
        for j, b in ann.boxes:
            hit = False
            for u in np.nonzero(labels == j)[0]:
                if box_iou(geom.boxes[u], b) >= cfg.box_rho:
                    hit = True
                    break
            if not hit:
                return False
    return True


def total_score(g: np.ndarray, labels: np.ndarray, ann: Annotation,
                geom: PoolGeometry, cfg: InferenceConfig) -> float:
    """Sum of selected table entries, or -inf when annotation-inconsistent."""
    if not higher_order_feasible(labels, ann, geom, cfg):
        return float("-inf")
    return float(g[np.arange(g.shape[0]), labels].sum())


def _class_thresholds(g: np.ndarray, classes: np.ndarray, cfg: InferenceConfig) -> np.ndarray:
    tau = np.full(classes.shape[0], cfg.select_threshold, dtype=np.float64)
    if cfg.center_scores:
        for i, j in enumerate(classes):
            tau[i] += float(np.median(g[:, j]))
    return tau


def greedy_infer(g: np.ndarray, ann: Annotation, geom: PoolGeometry,
                 cfg: InferenceConfig, enforce: bool = True) -> np.ndarray:
    """Per-class greedy selection.

    Classes are visited in ascending id. Within a class, proposals are
    taken in descending score order (ties to the lower id); taking r_i
    drops every remaining r_l with overlap_fraction(r_i, r_l) > t from
    that class's candidates. Selection stops once the next candidate's
    score is at or below the threshold; with enforce=True the first take
    per class ignores the threshold, and box annotations additionally get
    a covering proposal forced in when the threshold pass missed them.
    """
    classes = np.asarray(ann.classes, dtype=np.int64)
    if classes.size == 0:
        return np.zeros(g.shape[0], dtype=np.int64)
    tau = _class_thresholds(g, classes, cfg)
    labels, status = kernels.greedy_labels(
        np.ascontiguousarray(g, dtype=np.float64),
        classes,
        tau,
        geom.ovl,
        cfg.overlap_t,
        enforce,
    )
    if status == kernels.EXHAUSTED:
        raise InferenceError("no proposal left to select for an annotated class")
    if enforce and ann.boxes is not None:
        labels = _force_box_cover(g, labels, ann, geom, cfg)
    return labels


def _force_box_cover(g, labels, ann, geom, cfg):
    labels = labels.copy()
    for j, b in ann.boxes:
        covered = any(
            box_iou(geom.boxes[u], b) >= cfg.box_rho
            for u in np.nonzero(labels == j)[0]
        )
        if covered:
            continue
        best = -1
        best_score = -np.inf
        for u in range(g.shape[0]):
            if labels[u] != 0:
                continue
            if box_iou(geom.boxes[u], b) < cfg.box_rho:
                continue
            if g[u, j] > best_score:
                best = u
                best_score = g[u, j]
        if best < 0:
            raise InferenceError(f"no unselected proposal can cover a class-{j} box")
        labels[best] = j
    return labels


MAX_EXACT_PROPOSALS = 12
_EXACT_CHUNK = 1 << 18


def exact_infer(g: np.ndarray, ann: Annotation, geom: PoolGeometry,
                cfg: InferenceConfig) -> np.ndarray:
    """Brute-force argmax of total_score over the restricted family:
    labels drawn from {0} ∪ annotated classes, all selected pairs mutually
    non-overlapping (overlap ≤ t in both directions). Ties go to the
    lexicographically smallest labeling. Only for P ≤ 12.
    """
    p = g.shape[0]
    if p > MAX_EXACT_PROPOSALS:
        raise InferenceError(f"exact_infer supports at most {MAX_EXACT_PROPOSALS} proposals")
    classes = np.asarray(ann.classes, dtype=np.int64)
    alphabet = np.concatenate(([0], classes))
    a = alphabet.shape[0]
    forbidden = []
    for u in range(p):
        for v in range(u + 1, p):
            if geom.ovl[u, v] > cfg.overlap_t or geom.ovl[v, u] > cfg.overlap_t:
                forbidden.append((u, v))
    box_compat = None
    if ann.boxes is not None:
        box_compat = [
            (j, np.array([box_iou(geom.boxes[u], b) >= cfg.box_rho for u in range(p)]))
            for j, b in ann.boxes
        ]

    total = a**p
    best_score = -np.inf
    best_labels = None
    radix = a ** np.arange(p, dtype=np.int64)
    for lo in range(0, total, _EXACT_CHUNK):
        hi = min(lo + _EXACT_CHUNK, total)
        codes = np.arange(lo, hi, dtype=np.int64)
        digits = (codes[:, None] // radix[None, :]) % a
        labels = alphabet[digits]
        valid = np.ones(hi - lo, dtype=bool)
        for j in classes:
            valid &= (labels == j).any(axis=1)
        for u, v in forbidden:
            valid &= ~((labels[:, u] != 0) & (labels[:, v] != 0))
        if box_compat is not None:
            for j, compat in box_compat:
                valid &= ((labels == j) & compat[None, :]).any(axis=1)
        if not valid.any():
            continue
        scores = g[np.arange(p)[None, :], labels].sum(axis=1)
        scores[~valid] = -np.inf
        i = int(np.argmax(scores))
        cand_score = scores[i]
        ties = np.nonzero(scores == cand_score)[0]
        cand = min(tuple(labels[t]) for t in ties)
        if cand_score > best_score or (
            cand_score == best_score and cand < tuple(best_labels)
        ):
            best_score = cand_score
            best_labels = np.array(cand, dtype=np.int64)
    if best_labels is None:
        raise InferenceError("no annotation-consistent labeling exists in the search family")
    return best_labels


@dataclass
class ForwardState:
    """Everything one noise draw produced, kept for the backward pass."""

    z: np.ndarray
    x: np.ndarray  # scorer input matrix (P, D+d)
    stack: np.ndarray | None  # refinement iterates, None when unrefined
    g: np.ndarray  # final table the inference ran on

    @property
    def refined(self) -> bool:
        return self.stack is not None


@dataclass
class SampleSet:
    term_mode: str
    states: list
    labels: np.ndarray  # (K, P)
    enforced: bool = True  # consistency forcing used when sampling

    @property
    def k(self) -> int:
        return self.labels.shape[0]


def forward_scores(params: CondParams, rec: SceneRecord, z: np.ndarray,
                   cfg: InferenceConfig, refine: bool) -> ForwardState:
    x = scorer_input(rec, z)
    f = score_from_input(params, x)
    if refine:
        stack = refine_stack(f, rec.adjacency, cfg)
        return ForwardState(z=z, x=x, stack=stack, g=stack[-1])
    return ForwardState(z=z, x=x, stack=None, g=f)


def sample_k(params: CondParams, rec: SceneRecord, k: int, seed: int,
             cfg: InferenceConfig, term_mode: str = "U+P+H",
             zero_noise: bool = False, noise_tag: int = 0,
             enforce: bool | None = None) -> SampleSet:
    """K labelings from K noise draws (all-zeros noise in pointwise mode).

    Noise is derived from (seed, scene_id, k, noise_tag) so any scene's
    stream is reproducible in isolation. enforce overrides the term-mode
    default for annotation-consistency forcing (the seed-supervised
    initialization phase forces it in every mode).
    """
    if term_mode not in TERM_MODES:
        raise ValueError(f"term_mode must be one of {TERM_MODES}")
    refine = term_mode != "U"
    if enforce is None:
        enforce = term_mode == "U+P+H"
    geom = rec.geometry()
    states = []
    labels = np.zeros((k, rec.num_proposals), dtype=np.int64)
    for i in range(k):
        if zero_noise:
            z = np.zeros(params_noise_dim(params, rec), dtype=np.float64)
        else:
            z = draw_noise(seed, rec.scene_id, i, noise_tag)
        st = forward_scores(params, rec, z, cfg, refine)
        labels[i] = greedy_infer(st.g, rec.annotation, geom, cfg, enforce=enforce)
        states.append(st)
    return SampleSet(term_mode=term_mode, states=states, labels=labels,
                     enforced=enforce)


def params_noise_dim(params: CondParams, rec: SceneRecord) -> int:
    from .scorer import feature_dim

    width = params.w.shape[1] if params.kind == "linear" else params.w1.shape[1]
    return width - feature_dim(rec.num_classes)
