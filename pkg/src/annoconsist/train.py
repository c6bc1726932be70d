"""Joint training of the two distributions by block coordinate descent.

The conditional scorer is trained by direct loss minimization: each
gradient comes from comparing the greedy labeling of a score table with
the greedy labeling of the same table augmented by a scaled dissimilarity
row. The prediction distribution has a closed-form gradient because it
factorizes over proposals.

The schedule is: an initialization phase that anchors the conditional to
seed-derived labelings, then alternating predictor / conditional phases,
then one final predictor phase so decoded predictions always reflect the
final conditional.
"""

import base64
import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .condnet import (
    InferenceConfig,
    SampleSet,
    greedy_infer,
    higher_order_feasible,
    refine_backward,
    sample_k,
)
from .disco import div_cc, div_pc, div_pp
from .evaluate import DEFAULT_THRESHOLDS, EvalResult, evaluate_predictions, map_at
from .loss import LossConfig, cost_row
from .masks import box_iou, inner_boundary, mask_iou, tight_box
from .prednet import PredParams, argmax_labeling, decode, pred_init, predict
from .scorer import CondParams, axpy, cond_init, features, score_vjp
from .synthgen import EmptyPoolError, apply_box_regime


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    k: int = 10  # noise draws per scene per step
    gamma: float = 0.5  # diversity trade-off weight
    epsilon: float = 1.0  # loss-augmentation scale
    aug_sign: float = -1.0  # -1 augments toward the reference, +1 away from it
    lr_init: float = 0.1  # conditional lr during the seed-anchored phase
    lr_cond: float = 0.02
    lr_pred: float = 1.0
    clip_grad: float = 25.0  # l2 cap per update; 0 disables clipping
    optimizer: str = "sgd"  # "sgd" or "adam"
    init_epochs: int = 8
    cond_epochs: int = 3
    pred_epochs: int = 20
    outer_iters: int = 4
    term_mode: str = "U+P+H"  # scoring terms used by the conditional
    cond_pointwise: bool = False  # zero noise, no pairwise sample term
    pred_pointwise: bool = False  # drop the predictor self-diversity term
    supervision: str = "image"  # "image" (presence only) or "box"
    box_min_iou: float = 0.5  # pool filter in the box regime
    decode_thresh: float = 0.7
    decode_nms: float = 0.5
    scorer_kind: str = "linear"
    noise_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.supervision not in ("image", "box"):
            raise ValueError("supervision must be 'image' or 'box'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass
class FitResult:
    cond: CondParams
    pred: PredParams
    log: list = field(default_factory=list)  # one dict per epoch
    snapshots: list = field(default_factory=list)  # params after each outer iter
    skipped_scenes: int = 0

    @property
    def final_map50(self) -> float:
        return self.log[-1]["map50"] if self.log else 0.0


class Optimizer:
    """SGD or Adam over named parameter arrays, updating in place."""

    def __init__(self, kind: str, lr: float, clip: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = lr
        self.clip = clip
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m: dict = {}
        self._v: dict = {}
        self._t = 0

    def step(self, params, grad) -> float:
        """Apply one (optionally norm-clipped) update; returns the raw
        gradient l2 norm."""
        arrs = grad.arrays()
        sq = 0.0
        for g in arrs.values():
            sq += float(np.sum(g * g))
        norm = float(np.sqrt(sq))
        if not np.isfinite(norm):
            raise TrainingError("non-finite gradient; stopping")
        scale = 1.0
        if self.clip > 0.0 and norm > self.clip:
            scale = self.clip / norm
        self._t += 1
        for name, g in arrs.items():
            if scale != 1.0:
                g = g * scale
            p = getattr(params, name)
            if self.kind == "sgd":
                p -= self.lr * g
            else:
                m = self._m.setdefault(name, np.zeros_like(g))
                v = self._v.setdefault(name, np.zeros_like(g))
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                mhat = m / (1.0 - self.beta1 ** self._t)
                vhat = v / (1.0 - self.beta2 ** self._t)
                p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return norm


def cond_zeros_like(params: CondParams) -> CondParams:
    if params.kind == "linear":
        return CondParams(kind="linear", w=np.zeros_like(params.w))
    return CondParams(kind="mlp", w1=np.zeros_like(params.w1),
                      w2=np.zeros_like(params.w2))


def seed_labeling(rec) -> np.ndarray:
    """Anchor labeling for the initialization phase: each seed labels one
    proposal; everything else stays background.

    The anchor score of a proposal for a seed is the fraction of seed
    pixels the mask covers times (0.05 + mean edge strength along the
    mask's inner boundary). Coverage alone would favor any superset of
    the seed, and raw seed IoU would favor shrunken masks; weighting
    coverage by boundary alignment singles out masks whose outline
    follows image evidence. Ties keep the lowest proposal index."""
    labels = np.zeros(rec.num_proposals, dtype=np.int64)
    ring_edge = np.zeros(rec.num_proposals, dtype=np.float64)
    for u in range(rec.num_proposals):
        ring = inner_boundary(rec.pool[u])
        ring_edge[u] = rec.edges[ring].mean() if ring.any() else 0.0
    for s in rec.seeds:
        seed_area = float(np.count_nonzero(s.mask))
        if seed_area == 0.0:
            continue
        best_score, best_u = 0.0, -1
        for u in range(rec.num_proposals):
            cover = np.count_nonzero(s.mask & rec.pool[u]) / seed_area
            score = cover * (0.05 + ring_edge[u])
            if score > best_score:
                best_score, best_u = score, u
        if best_u >= 0:
            labels[best_u] = s.class_id
    return labels


def selection_matrix(labels: np.ndarray, m: int) -> np.ndarray:
    """(P, C+1) one-hot rows; sum(sel * G) is the labeling's total score."""
    out = np.zeros((labels.shape[0], m), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def loss_augmented_infer(g: np.ndarray, y_ref: np.ndarray, rec,
                         inf_cfg: InferenceConfig, loss_cfg: LossConfig,
                         sign: float, eps: float,
                         enforce: bool = True) -> np.ndarray:
    """Greedy argmax of the table augmented by sign * eps times the
    per-proposal dissimilarity to the reference labeling.

    With sign -1 the augmented argmax is pulled toward the reference
    (entries that disagree with it are penalized); with +1 it is pushed
    away. Both directions yield valid finite-difference estimators; the
    pulled variant also recovers margin-style updates that can demote
    selections whose score sits within eps of the threshold.
    """
    aug = g + sign * eps * cost_row(y_ref, rec.num_classes, loss_cfg)
    return greedy_infer(aug, rec.annotation, rec.geometry(), inf_cfg,
                        enforce=enforce)


def grad_score_sum(params: CondParams, st, q: np.ndarray, rec,
                   inf_cfg: InferenceConfig) -> CondParams:
    """Parameter gradient of sum(q * G) for one forward state, chaining
    back through the pairwise refinement when it was applied."""
    if st.refined:
        q0 = refine_backward(st.stack, rec.adjacency, inf_cfg, q)
    else:
        q0 = q
    return score_vjp(params, st.x, q0)


def cond_grad(params: CondParams, rec, samples: SampleSet, y_ref: np.ndarray,
              train_cfg: TrainConfig, inf_cfg: InferenceConfig,
              loss_cfg: LossConfig, anchor: bool = False) -> CondParams:
    """Direct-loss-minimization gradient of the dissimilarity coefficient
    with respect to the conditional parameters, for one scene.

    Per draw k the contributions of the reference term and of every
    pairwise sample term are collected into a single coefficient table
    before one backward pass, so a zero-cost configuration yields an
    exactly zero gradient.

    With anchor=True the reference term skips the augmented inference and
    uses y_ref itself as the augmented labeling. This is the saturated
    limit of pulled augmentation (the penalty on disagreeing entries
    outgrows every score gap, so the feasible minimum-cost labeling wins)
    and turns the reference term into a margin update that raises the
    reference labeling's score above the current samples'. y_ref must be
    feasible; the initialization phase uses this with the seed anchors.
    """
    kk = samples.k
    m = rec.num_classes + 1
    geom = rec.geometry()
    eps = train_cfg.aug_sign * train_cfg.epsilon
    ref_eps = -train_cfg.epsilon if anchor else eps
    gamma = 0.0 if train_cfg.cond_pointwise else train_cfg.gamma
    enforce = samples.enforced
    row_ref = cost_row(y_ref, rec.num_classes, loss_cfg)
    pair_rows = None
    pair_coef = 0.0
    if gamma != 0.0 and kk >= 2:
        pair_rows = [cost_row(samples.labels[k2], rec.num_classes, loss_cfg)
                     for k2 in range(kk)]
        pair_coef = 2.0 * gamma / (kk * (kk - 1) * eps)
    m_ref = selection_matrix(y_ref, m) if anchor else None
    total = cond_zeros_like(params)
    for k in range(kk):
        st = samples.states[k]
        m_c = selection_matrix(samples.labels[k], m)
        if anchor:
            m_a = m_ref
        else:
            y_a = greedy_infer(st.g + eps * row_ref, rec.annotation, geom,
                               inf_cfg, enforce=enforce)
            m_a = selection_matrix(y_a, m)
        q = (m_a - m_c) / (kk * ref_eps)
        if pair_rows is not None:
            for k2 in range(kk):
                if k2 == k:
                    continue
                y_b = greedy_infer(st.g + eps * pair_rows[k2], rec.annotation,
                                   geom, inf_cfg, enforce=enforce)
                q += pair_coef * (m_c - selection_matrix(y_b, m))
        axpy(total, grad_score_sum(params, st, q, rec, inf_cfg), 1.0)
    return total


def empirical_distribution(labels: np.ndarray, m: int) -> np.ndarray:
    """(P, C+1) per-proposal class frequencies across the K draws."""
    kk, p = labels.shape
    out = np.zeros((p, m), dtype=np.float64)
    for k in range(kk):
        out[np.arange(p), labels[k]] += 1.0
    return out / kk


def pred_objective(state: np.ndarray, labels: np.ndarray,
                   loss_cfg: LossConfig, gamma: float,
                   pointwise: bool) -> float:
    """Predictor block of the dissimilarity coefficient, closed form.

    Sum over proposals of expected disagreement with the sample set,
    minus (1 - gamma) times the predictor's self-diversity (dropped in
    the pointwise variant).
    """
    lam = loss_cfg.w_cls * loss_cfg.lambda_cls
    qbar = empirical_distribution(labels, state.shape[1])
    val = float(np.sum(1.0 - np.sum(state * qbar, axis=1)))
    if not pointwise:
        val -= (1.0 - gamma) * float(np.sum(1.0 - np.sum(state * state, axis=1)))
    return lam * val


def pred_grad(params: PredParams, rec, labels: np.ndarray,
              loss_cfg: LossConfig, gamma: float,
              pointwise: bool) -> PredParams:
    """Exact gradient of pred_objective for one scene."""
    p = predict(params, rec)
    qbar = empirical_distribution(labels, p.shape[1])
    lam = loss_cfg.w_cls * loss_cfg.lambda_cls
    pdotq = np.sum(p * qbar, axis=1, keepdims=True)
    dz = -(p * qbar - p * pdotq)
    if not pointwise:
        nrm = np.sum(p * p, axis=1, keepdims=True)
        dz += (1.0 - gamma) * 2.0 * (p * p - p * nrm)
    dz *= lam
    return PredParams(w=dz.T @ features(rec))


def prepare_records(records: list, train_cfg: TrainConfig,
                    inf_cfg: InferenceConfig) -> tuple:
    """Apply the supervision regime to every scene.

    Image regime drops the boxes from the working annotation. Box regime
    restricts each pool to box-compatible proposals and skips scenes
    where some box would be impossible to cover. Returns (records,
    num_skipped).
    """
    out = []
    skipped = 0
    for rec in records:
        if train_cfg.supervision == "image":
            # warm the caches on the source record first so repeated fits
            # over the same list share them through the shallow copy
            rec.geometry()
            features(rec)
            out.append(dataclasses.replace(
                rec, annotation=rec.annotation.without_boxes()))
            continue
        try:
            br = apply_box_regime(rec, train_cfg.box_min_iou)
        except EmptyPoolError:
            skipped += 1
            continue
        coverable = all(
            any(box_iou(tight_box(br.pool[u]), b) >= inf_cfg.box_rho
                for u in range(br.num_proposals))
            for _, b in br.annotation.boxes)
        if not coverable:
            skipped += 1
            continue
        out.append(br)
    if not out:
        raise TrainingError("no usable scenes after applying supervision")
    return out, skipped


def _epoch_metrics(records, cond_params, pred_params, scene_samples,
                   train_cfg, inf_cfg, loss_cfg, grad_norms):
    """One log row: divergence parts, train-set mAP at 0.5, feasibility."""
    pcs, ccs, pps, feas = [], [], [], []
    preds_by_scene, gts_by_scene = {}, {}
    for rec, samples in zip(records, scene_samples):
        state = predict(pred_params, rec)
        pcs.append(div_pc(state, samples.labels, loss_cfg))
        ccs.append(div_cc(samples.labels, rec, loss_cfg)
                   if samples.k >= 2 else 0.0)
        pps.append(div_pp(state, loss_cfg))
        geom = rec.geometry()
        feas.append(np.mean([
            higher_order_feasible(samples.labels[k], rec.annotation, geom,
                                  inf_cfg)
            for k in range(samples.k)]))
        preds_by_scene[rec.scene_id] = decode(
            state, rec, train_cfg.decode_thresh, train_cfg.decode_nms)
        gts_by_scene[rec.scene_id] = rec.gt
    g = train_cfg.gamma
    pc, cc, pp = float(np.mean(pcs)), float(np.mean(ccs)), float(np.mean(pps))
    return {
        "disc": pc - g * cc - (1.0 - g) * pp,
        "div_pc": pc,
        "div_cc": cc,
        "div_pp": pp,
        "map50": map_at(preds_by_scene, gts_by_scene, 0.5),
        "feasible": float(np.mean(feas)),
        "grad_norm": float(np.mean(grad_norms)) if grad_norms else 0.0,
    }


def fit(records: list, train_cfg: TrainConfig | None = None,
        inf_cfg: InferenceConfig | None = None,
        loss_cfg: LossConfig | None = None,
        verbose: bool = False) -> FitResult:
    """Block coordinate descent on the dissimilarity coefficient.

    Deterministic for fixed configs and records: all noise is derived
    from train_cfg.seed together with scene ids and phase tags.
    """
    tcfg = train_cfg or TrainConfig()
    icfg = inf_cfg or InferenceConfig()
    lcfg = loss_cfg or LossConfig()
    records, skipped = prepare_records(records, tcfg, icfg)
    c = records[0].num_classes

    rng = np.random.default_rng(np.random.SeedSequence((tcfg.seed, 0x1417)))
    cond = cond_init(c, tcfg.noise_dim, tcfg.scorer_kind, rng=rng)
    pred = pred_init(c)
    opt_i = Optimizer(tcfg.optimizer, tcfg.lr_init, clip=tcfg.clip_grad)
    opt_c = Optimizer(tcfg.optimizer, tcfg.lr_cond, clip=tcfg.clip_grad)
    opt_p = Optimizer(tcfg.optimizer, tcfg.lr_pred, clip=tcfg.clip_grad)
    k_eff = 1 if tcfg.cond_pointwise else tcfg.k
    seeds_ref = [seed_labeling(rec) for rec in records]
    log: list = []
    snapshots: list = []

    def run_cond_epoch(phase, outer, epoch, refs, tag):
        # The init phase forces annotation consistency in every term mode;
        # without it low-score early tables select nothing and no positive
        # signal ever reaches the scorer. Regular phases honor the mode.
        anchor = phase == "init"
        enforce = True if anchor else None
        opt = opt_i if anchor else opt_c
        norms, batch = [], []
        for i, rec in enumerate(records):
            samples = sample_k(cond, rec, k_eff, tcfg.seed, icfg,
                               term_mode=tcfg.term_mode,
                               zero_noise=tcfg.cond_pointwise,
                               noise_tag=tag, enforce=enforce)
            grad = cond_grad(cond, rec, samples, refs[i], tcfg, icfg, lcfg,
                             anchor=anchor)
            norms.append(opt.step(cond, grad))
            batch.append(samples)
        row = {"phase": phase, "outer": outer, "epoch": epoch}
        row.update(_epoch_metrics(records, cond, pred, batch, tcfg, icfg,
                                  lcfg, norms))
        log.append(row)
        if verbose:
            print(_format_row(row))

    def run_pred_phase(phase, outer, tag):
        batch = [sample_k(cond, rec, k_eff, tcfg.seed, icfg,
                          term_mode=tcfg.term_mode,
                          zero_noise=tcfg.cond_pointwise, noise_tag=tag)
                 for rec in records]
        for epoch in range(tcfg.pred_epochs):
            norms = []
            for i, rec in enumerate(records):
                grad = pred_grad(pred, rec, batch[i].labels, lcfg, tcfg.gamma,
                                 tcfg.pred_pointwise)
                norms.append(opt_p.step(pred, grad))
            row = {"phase": phase, "outer": outer, "epoch": epoch}
            row.update(_epoch_metrics(records, cond, pred, batch, tcfg, icfg,
                                      lcfg, norms))
            log.append(row)
            if verbose:
                print(_format_row(row))

    for epoch in range(tcfg.init_epochs):
        run_cond_epoch("init", -1, epoch, seeds_ref, 0x10000 + epoch)

    for outer in range(tcfg.outer_iters):
        run_pred_phase("pred", outer, 0x30000 + outer)
        refs = [argmax_labeling(predict(pred, rec)) for rec in records]
        for epoch in range(tcfg.cond_epochs):
            run_cond_epoch("cond", outer, epoch, refs,
                           0x20000 + outer * 0x100 + epoch)
        snapshots.append({"outer": outer, "cond": cond.copy(),
                          "pred": pred.copy()})

    run_pred_phase("final", tcfg.outer_iters, 0x30000 + tcfg.outer_iters)
    snapshots.append({"outer": tcfg.outer_iters, "cond": cond.copy(),
                      "pred": pred.copy()})
    return FitResult(cond=cond, pred=pred, log=log, snapshots=snapshots,
                     skipped_scenes=skipped)


def evaluate_params(pred_params: PredParams, records: list,
                    thresholds=DEFAULT_THRESHOLDS, decode_thresh: float = 0.7,
                    decode_nms: float = 0.5) -> EvalResult:
    """Decode every scene with the predictor and score against ground truth."""
    preds_by_scene = {
        rec.scene_id: decode(predict(pred_params, rec), rec, decode_thresh,
                             decode_nms)
        for rec in records
    }
    gts_by_scene = {rec.scene_id: rec.gt for rec in records}
    return evaluate_predictions(preds_by_scene, gts_by_scene, thresholds)


def _format_row(row: dict) -> str:
    return (f"[{row['phase']:>5s} {row['outer']:>2d}.{row['epoch']:<2d}] "
            f"disc={row['disc']:+.4f} pc={row['div_pc']:.4f} "
            f"cc={row['div_cc']:.4f} pp={row['div_pp']:.4f} "
            f"map50={row['map50']:.3f} feas={row['feasible']:.2f} "
            f"|g|={row['grad_norm']:.3f}")


LOG_COLUMNS = ("phase", "outer", "epoch", "disc", "div_pc", "div_cc",
               "div_pp", "map50", "feasible", "grad_norm")


def write_log_csv(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOG_COLUMNS})


def _arr_to_obj(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(
            np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _arr_from_obj(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a.reshape(obj["shape"])


def save_checkpoint(path: str, cond: CondParams, pred: PredParams,
                    meta: dict | None = None) -> None:
    obj = {
        "format_version": 1,
        "cond": {"kind": cond.kind,
                 "arrays": {n: _arr_to_obj(a) for n, a in cond.arrays().items()}},
        "pred": {"arrays": {"w": _arr_to_obj(pred.w)}},
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple:
    """Returns (cond, pred, meta)."""
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format_version") != 1:
        raise ValueError("unsupported checkpoint version")
    arrays = {n: _arr_from_obj(o) for n, o in obj["cond"]["arrays"].items()}
    cond = CondParams(kind=obj["cond"]["kind"], **arrays)
    pred = PredParams(w=_arr_from_obj(obj["pred"]["arrays"]["w"]))
    return cond, pred, obj.get("meta", {})
