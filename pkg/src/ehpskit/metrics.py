"""Alignment and per-vertex / per-joint error metrics (reported in millimeters)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .body_model import BodyModelData, MeshResult
from .errors import DegenerateGeometry, EmptyInput, InvalidArgument

M_TO_MM = 1000.0
ALIGNMENTS = ("none", "root_translation", "procrustes")
KINDS = ("PVE", "MPJPE")
PARTS = ("all", "left_hand", "right_hand", "hands", "face")


@dataclass(frozen=True)
class AlignmentMode:
    kind: str = "none"
    # Anchor override for root_translation; None picks the part's default
    # (pelvis for all, wrists for hands, neck for face).
    joint_index: int | None = None

    def __post_init__(self):
        if self.kind not in ALIGNMENTS:
            raise InvalidArgument(f"unknown alignment {self.kind!r}; expected one of {ALIGNMENTS}")


@dataclass(frozen=True)
class MetricSpec:
    kind: str = "PVE"
    part: str = "all"
    alignment: AlignmentMode = field(default_factory=AlignmentMode)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown metric kind {self.kind!r}")
        if self.part not in PARTS:
            raise InvalidArgument(f"unknown part {self.part!r}")

    @property
    def name(self) -> str:
        prefix = "PA-" if self.alignment.kind == "procrustes" else ""
        suffix = "" if self.alignment.kind != "none" else "-raw"
        return f"{prefix}{self.kind}[{self.part}]{suffix}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "part": self.part,
            "alignment": self.alignment.kind,
            "joint_index": self.alignment.joint_index,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricSpec":
        return cls(doc["kind"], doc["part"], AlignmentMode(doc["alignment"], doc.get("joint_index")))

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        """Parse ``KIND:part:alignment`` (alignment defaults to root_translation)."""
        bits = text.split(":")
        if len(bits) not in (2, 3):
            raise InvalidArgument(f"metric spec must be KIND:part[:alignment], got {text!r}")
        align = bits[2] if len(bits) == 3 else "root_translation"
        return cls(bits[0].upper(), bits[1], AlignmentMode(align))


# Headline metric battery used when nothing else is requested.
DEFAULT_SPECS = (
    MetricSpec("PVE", "all", AlignmentMode("root_translation")),
    MetricSpec("PVE", "all", AlignmentMode("procrustes")),
    MetricSpec("MPJPE", "all", AlignmentMode("root_translation")),
    MetricSpec("MPJPE", "all", AlignmentMode("procrustes")),
    MetricSpec("PVE", "hands", AlignmentMode("root_translation")),
    MetricSpec("PVE", "hands", AlignmentMode("procrustes")),
    MetricSpec("PVE", "face", AlignmentMode("root_translation")),
    MetricSpec("PVE", "face", AlignmentMode("procrustes")),
)


@dataclass
class MetricReport:
    spec: MetricSpec
    per_instance_mm: np.ndarray
    mean_mm: float
    count: int

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "name": self.spec.name,
            "per_instance_mm": [float(x) for x in self.per_instance_mm],
            "mean_mm": float(self.mean_mm),
            "count": int(self.count),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(
            spec=MetricSpec.from_dict(doc["spec"]),
            per_instance_mm=np.asarray(doc["per_instance_mm"], dtype=np.float64),
            mean_mm=float(doc["mean_mm"]),
            count=int(doc["count"]),
        )


def umeyama_align(source, target, with_scale: bool = True):
    """Least-squares similarity ``target ~ s * R @ source + t``.

    Closed form from the SVD of the cross-covariance with reflection
    correction. Returns ``(s, R, t)``.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidArgument(f"source {src.shape} and target {dst.shape} must both be (N, 3)")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need at least 3 points, got {n}")

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs * xs).sum() / n
    scale_ref = max(var_s, (xd * xd).sum() / n)
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    tol = 1e-12 * max(scale_ref, np.finfo(float).tiny)
    if var_s <= tol or np.sum(d > tol) < 2:
        raise DegenerateGeometry(
            f"rank-deficient cross-covariance (singular values {d.tolist()})"
        )
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = (u * sign) @ vt
    s = float((d * sign).sum() / var_s) if with_scale else 1.0
    t = mu_d - s * rot @ mu_s
    return s, rot, t


def position_error(pred, gt, alignment: AlignmentMode | str = "none", align_anchor=None) -> float:
    """Mean L2 distance in mm after the requested alignment.

    ``align_anchor`` is ``(pred_anchor, gt_anchor)``, required for root_translation.
    """
    if isinstance(alignment, str):
        alignment = AlignmentMode(alignment)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidArgument(f"pred {pred.shape} and gt {gt.shape} must both be (K, 3)")
    if pred.shape[0] == 0:
        raise InvalidArgument("no points to compare")
    if alignment.kind == "root_translation":
        if align_anchor is None:
            raise InvalidArgument("root_translation alignment needs anchor positions")
        pa, ga = (np.asarray(a, dtype=np.float64) for a in align_anchor)
        pred = pred - (pa - ga)
    elif alignment.kind == "procrustes":
        s, rot, t = umeyama_align(pred, gt, with_scale=True)
        pred = s * pred @ rot.T + t
    return float(np.linalg.norm(pred - gt, axis=1).mean() * M_TO_MM)


def part_joints(model: BodyModelData, part: str) -> list[int]:
    if part == "all":
        return list(range(model.num_joints))
    if part in ("left_hand", "right_hand"):
        side = part.split("_")[0]
        return [model.wrist(side)] + model.hand_joints(side)
    if part == "face":
        joints = model.tree.joints_with_label("jaw") + model.tree.joints_with_label("eye")
        if not joints:
            raise InvalidArgument("model has no face joints for MPJPE[face]")
        return joints
    raise InvalidArgument(f"unknown part {part!r}")


def default_anchor(model: BodyModelData, part: str) -> int:
    if part == "all":
        return model.pelvis_joint
    if part == "left_hand":
        return model.wrist("left")
    if part == "right_hand":
        return model.wrist("right")
    if part == "face":
        return model.face_anchor()
    raise InvalidArgument(f"unknown part {part!r}")


def _single_part(pred: MeshResult, gt: MeshResult, model: BodyModelData, spec: MetricSpec, part: str) -> float:
    if spec.kind == "PVE":
        if part not in model.part_vertex_masks:
            raise InvalidArgument(f"model has no vertex mask for part {part!r}")
        idx = model.part_vertex_masks[part]
        if idx.size == 0:
            raise InvalidArgument(f"vertex mask for part {part!r} is empty")
        p, g = pred.vertices[idx], gt.vertices[idx]
    else:
        idx = part_joints(model, part)
        p, g = pred.joints[idx], gt.joints[idx]
    anchor = None
    if spec.alignment.kind == "root_translation":
        j = spec.alignment.joint_index
        if j is None:
            j = default_anchor(model, part)
        if not 0 <= j < model.num_joints:
            raise InvalidArgument(f"anchor joint {j} out of range")
        anchor = (pred.joints[j], gt.joints[j])
    return position_error(p, g, spec.alignment, anchor)


def instance_metrics(pred: MeshResult, gt: MeshResult, model: BodyModelData, specs) -> list[float]:
    if pred.vertices.shape != gt.vertices.shape or pred.joints.shape != gt.joints.shape:
        raise InvalidArgument("pred and gt come from different topologies")
    out = []
    for spec in specs:
        if spec.part == "hands":
            left = _single_part(pred, gt, model, spec, "left_hand")
            right = _single_part(pred, gt, model, spec, "right_hand")
            out.append(0.5 * (left + right))
        else:
            out.append(_single_part(pred, gt, model, spec, spec.part))
    return out


def detection_normalized(error_mm: float, f1: float) -> float:
    """NMVE / NMJE: an error divided by the detection F1 score."""
    if not 0.0 < f1 <= 1.0:
        raise InvalidArgument(f"F1 must lie in (0, 1], got {f1}")
    return error_mm / f1


def aggregate(per_instance_mm, spec: MetricSpec | None = None) -> MetricReport:
    values = np.asarray(per_instance_mm, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyInput("cannot aggregate zero instances")
    # fsum is correctly rounded, so the mean does not depend on chunking.
    mean = math.fsum(values.tolist()) / values.size
    return MetricReport(spec or MetricSpec(), values, mean, int(values.size))


def evaluate_pairs(preds, gts, model: BodyModelData, specs=DEFAULT_SPECS, jobs: int = 1) -> list[MetricReport]:
    """Evaluate matched (pred, gt) meshes; one report per spec.

    Instances fan out over ``jobs`` threads; results are gathered in index
    order so output does not depend on the worker count.
    """
    preds, gts, specs = list(preds), list(gts), list(specs)
    if len(preds) != len(gts):
        raise InvalidArgument(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise EmptyInput("no instances to evaluate")

    def one(i):
        return instance_metrics(preds[i], gts[i], model, specs)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, range(len(preds))))
    else:
        rows = [one(i) for i in range(len(preds))]
    table = np.asarray(rows, dtype=np.float64)
    return [aggregate(table[:, k], spec) for k, spec in enumerate(specs)]
