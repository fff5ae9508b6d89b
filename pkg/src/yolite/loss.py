"""Training-objective arithmetic: confidence, classification, and box
regression losses over a given target assignment, with analytic gradients
with respect to the predictions.

All three parts follow the one-stage detector convention: binary
cross-entropy on box confidence (no-object cells down-weighted by
``lambda_noobj``), binary cross-entropy per class on responsible boxes, and a
complete-IoU penalty on responsible boxes combining overlap, center distance
normalized by the enclosing box diagonal, and an aspect-ratio term.
Probabilities are clamped to [EPS, 1 - EPS] before any logarithm; gradients
are zero in the clamped region.  Everything is computed in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detect import Box
from .errors import ShapeError

EPS = 1e-7
LAMBDA_NOOBJ_DEFAULT = 0.5


def _as_f64(arr, shape, name) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.shape != shape:
        raise ShapeError(f"{name} must have shape {shape}, got {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} holds non-finite values")
    return out


@dataclass
class TargetAssignment:
    """Ground-truth side of the loss: who is responsible for what.

    ``obj_mask`` is binary with one entry per (cell, box slot); responsible
    slots carry a truth box with positive dimensions.  The assignment is an
    input here; `assign_targets` builds one with the center-cell rule and
    best-overlap anchor choice, but any assignment is accepted.
    """

    s: int
    b: int
    c: int
    obj_mask: np.ndarray      # (s*s, b) of {0, 1}
    truth_conf: np.ndarray    # (s*s, b) in [0, 1]
    truth_class: np.ndarray   # (s*s, b, c) in [0, 1]
    truth_boxes: np.ndarray   # (s*s, b, 4) as (cx, cy, w, h)
    lambda_noobj: float = LAMBDA_NOOBJ_DEFAULT

    def __post_init__(self):
        cells = self.s * self.s
        self.obj_mask = _as_f64(self.obj_mask, (cells, self.b), "obj_mask")
        if not np.isin(self.obj_mask, (0.0, 1.0)).all():
            raise ValueError("obj_mask must be binary")
        self.truth_conf = _as_f64(self.truth_conf, (cells, self.b), "truth_conf")
        self.truth_class = _as_f64(self.truth_class, (cells, self.b, self.c), "truth_class")
        self.truth_boxes = _as_f64(self.truth_boxes, (cells, self.b, 4), "truth_boxes")
        resp = self.obj_mask == 1.0
        if resp.any() and (self.truth_boxes[resp][:, 2:] <= 0).any():
            raise ValueError("every responsible slot needs a truth box with positive size")

    @classmethod
    def empty(cls, s: int, b: int, c: int,
              lambda_noobj: float = LAMBDA_NOOBJ_DEFAULT) -> "TargetAssignment":
        cells = s * s
        return cls(s, b, c,
                   np.zeros((cells, b)), np.zeros((cells, b)),
                   np.zeros((cells, b, c)), np.zeros((cells, b, 4)),
                   lambda_noobj=lambda_noobj)


@dataclass
class Predictions:
    """Predicted side of the loss, one entry per (cell, box slot)."""

    s: int
    b: int
    c: int
    conf: np.ndarray          # (s*s, b)
    class_prob: np.ndarray    # (s*s, b, c)
    boxes: np.ndarray         # (s*s, b, 4) as (cx, cy, w, h)

    def __post_init__(self):
        cells = self.s * self.s
        self.conf = _as_f64(self.conf, (cells, self.b), "conf")
        self.class_prob = _as_f64(self.class_prob, (cells, self.b, self.c), "class_prob")
        self.boxes = _as_f64(self.boxes, (cells, self.b, 4), "boxes")
        for name, arr in (("conf", self.conf), ("class_prob", self.class_prob)):
            if (arr < 0).any() or (arr > 1).any():
                raise ValueError(f"{name} must lie within [0, 1]")


@dataclass
class LossBreakdown:
    loss1: float              # confidence
    loss2: float              # classification
    loss3: float              # box regression
    total: float
    d_conf: np.ndarray
    d_class: np.ndarray
    d_box: np.ndarray


def _bce_terms(p: np.ndarray, target: np.ndarray):
    """Per-element BCE value and d/dp, zero-gradient where p is clamped."""
    clamped = np.clip(p, EPS, 1.0 - EPS)
    value = -(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped))
    grad = -(target / clamped - (1.0 - target) / (1.0 - clamped))
    interior = (p > EPS) & (p < 1.0 - EPS)
    return value, np.where(interior, grad, 0.0)


def confidence_loss(pred: Predictions, t: TargetAssignment) -> tuple[float, np.ndarray]:
    """Objectness BCE over all slots; no-object slots weighted by lambda_noobj."""
    if (pred.s, pred.b) != (t.s, t.b):
        raise ShapeError(f"prediction grid {(pred.s, pred.b)} != target grid {(t.s, t.b)}")
    value, grad = _bce_terms(pred.conf, t.truth_conf)
    weight = t.obj_mask + t.lambda_noobj * (1.0 - t.obj_mask)
    return float(np.sum(weight * value)), weight * grad


def class_loss(pred: Predictions, t: TargetAssignment) -> tuple[float, np.ndarray]:
    """Per-class BCE summed over responsible slots only."""
    if (pred.s, pred.b, pred.c) != (t.s, t.b, t.c):
        raise ShapeError(
            f"prediction layout {(pred.s, pred.b, pred.c)} != target layout {(t.s, t.b, t.c)}")
    value, grad = _bce_terms(pred.class_prob, t.truth_class)
    mask = t.obj_mask[:, :, None]
    return float(np.sum(mask * value)), mask * grad


def _iou_with_grad(p: Box, g: Box):
    """IoU value and its gradient wrt the predicted (cx, cy, w, h)."""
    px1, py1, px2, py2 = p.corners()
    gx1, gy1, gx2, gy2 = g.corners()
    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    if iw <= 0 or ih <= 0:
        return 0.0, np.zeros(4)
    inter = iw * ih
    union = p.area + g.area - inter
    if union <= 0:
        return 0.0, np.zeros(4)
    # corner sensitivities: which side of each min/max the predicted box owns
    d_iw_cx = (1.0 if px2 < gx2 else 0.0) - (1.0 if px1 > gx1 else 0.0)
    d_iw_w = 0.5 * ((1.0 if px2 < gx2 else 0.0) + (1.0 if px1 > gx1 else 0.0))
    d_ih_cy = (1.0 if py2 < gy2 else 0.0) - (1.0 if py1 > gy1 else 0.0)
    d_ih_h = 0.5 * ((1.0 if py2 < gy2 else 0.0) + (1.0 if py1 > gy1 else 0.0))
    d_inter = np.array([d_iw_cx * ih, d_ih_cy * iw, d_iw_w * ih, d_ih_h * iw])
    d_area = np.array([0.0, 0.0, p.h, p.w])
    d_union = d_area - d_inter
    iou_v = inter / union
    d_iou = (d_inter * union - inter * d_union) / (union * union)
    return iou_v, d_iou


def ciou_loss(pred_box: Box, gt_box: Box) -> tuple[float, np.ndarray]:
    """Complete-IoU regression loss and gradient wrt (cx, cy, w, h).

    value = 1 - IoU + center_dist^2 / enclosing_diag^2 + v^2 / (1 - IoU + v)
    with v = (4/pi^2) * (arctan(w_t/h_t) - arctan(w/h))^2.  The last term is
    the numerically stable collapsed form of the aspect-ratio penalty.
    """
    if pred_box.h == 0 or gt_box.h == 0:
        raise ValueError("box heights must be positive for the aspect-ratio term")
    iou_v, d_iou = _iou_with_grad(pred_box, gt_box)

    dx, dy = pred_box.cx - gt_box.cx, pred_box.cy - gt_box.cy
    rho2 = dx * dx + dy * dy
    d_rho2 = np.array([2 * dx, 2 * dy, 0.0, 0.0])

    px1, py1, px2, py2 = pred_box.corners()
    gx1, gy1, gx2, gy2 = gt_box.corners()
    ew = max(px2, gx2) - min(px1, gx1)
    eh = max(py2, gy2) - min(py1, gy1)
    c2 = ew * ew + eh * eh
    d_ew = np.array([(1.0 if px2 > gx2 else 0.0) - (1.0 if px1 < gx1 else 0.0), 0.0,
                     0.5 * ((1.0 if px2 > gx2 else 0.0) + (1.0 if px1 < gx1 else 0.0)), 0.0])
    d_eh = np.array([0.0, (1.0 if py2 > gy2 else 0.0) - (1.0 if py1 < gy1 else 0.0),
                     0.0, 0.5 * ((1.0 if py2 > gy2 else 0.0) + (1.0 if py1 < gy1 else 0.0))])
    if c2 > 0:
        center_term = rho2 / c2
        d_c2 = 2 * ew * d_ew + 2 * eh * d_eh
        d_center = d_rho2 / c2 - rho2 * d_c2 / (c2 * c2)
    else:
        center_term = 0.0
        d_center = np.zeros(4)

    k = 4.0 / (math.pi * math.pi)
    delta = math.atan2(gt_box.w, gt_box.h) - math.atan2(pred_box.w, pred_box.h)
    v = k * delta * delta
    wh2 = pred_box.w * pred_box.w + pred_box.h * pred_box.h
    d_delta = np.array([0.0, 0.0, -pred_box.h / wh2, pred_box.w / wh2])
    d_v = 2 * k * delta * d_delta

    denom = 1.0 - iou_v + v
    if denom > 0:
        aspect_term = v * v / denom
        d_aspect = (2 * v * d_v * denom - v * v * (d_v - d_iou)) / (denom * denom)
    else:
        aspect_term = 0.0
        d_aspect = np.zeros(4)

    value = 1.0 - iou_v + center_term + aspect_term
    grad = -d_iou + d_center + d_aspect
    return value, grad


def total_loss(pred: Predictions, t: TargetAssignment) -> LossBreakdown:
    """Sum the three parts; box gradients land on responsible slots only."""
    loss1, d_conf = confidence_loss(pred, t)
    loss2, d_class = class_loss(pred, t)
    loss3 = 0.0
    d_box = np.zeros_like(pred.boxes)
    for idx in np.argwhere(t.obj_mask == 1.0):
        i, j = int(idx[0]), int(idx[1])
        pb = Box(*pred.boxes[i, j])
        gb = Box(*t.truth_boxes[i, j])
        value, grad = ciou_loss(pb, gb)
        loss3 += value
        d_box[i, j] = grad
    total = loss1 + loss2 + loss3
    return LossBreakdown(loss1, loss2, loss3, total, d_conf, d_class, d_box)


def assign_targets(ground_truths, s: int, b: int, c: int, anchors,
                   input_size: int = 416,
                   lambda_noobj: float = LAMBDA_NOOBJ_DEFAULT) -> TargetAssignment:
    """Build an assignment with the center-cell rule: the cell containing a
    truth box's center is responsible, through its best shape-overlap anchor.

    ``ground_truths`` is a sequence of (Box, class_id); ``anchors`` the
    (w, h) priors of this head scale.  A later object overwrites an earlier
    one landing on the same (cell, anchor) slot.  This picker is one
    convention; the loss itself accepts any assignment.
    """
    if len(anchors) != b:
        raise ValueError(f"expected {b} anchors, got {len(anchors)}")
    t = TargetAssignment.empty(s, b, c, lambda_noobj=lambda_noobj)
    cell = input_size / s
    for box, class_id in ground_truths:
        if not 0 <= class_id < c:
            raise ValueError(f"class id {class_id} out of range [0, {c})")
        gx = min(int(box.cx / cell), s - 1)
        gy = min(int(box.cy / cell), s - 1)
        best_ai, best_overlap = 0, -1.0
        for ai, (aw, ah) in enumerate(anchors):
            inter = min(box.w, aw) * min(box.h, ah)
            union = box.w * box.h + aw * ah - inter
            overlap = inter / union if union > 0 else 0.0
            if overlap > best_overlap:
                best_ai, best_overlap = ai, overlap
        i = gy * s + gx
        t.obj_mask[i, best_ai] = 1.0
        t.truth_conf[i, best_ai] = 1.0
        t.truth_class[i, best_ai] = 0.0
        t.truth_class[i, best_ai, class_id] = 1.0
        t.truth_boxes[i, best_ai] = (box.cx, box.cy, box.w, box.h)
    return t
