"""Hand-pose complexity: distance of a hand from its relaxed (zero) pose.

For one hand the body is posed twice, with the given finger rotations and
with zero finger rotations, and the hand-mask vertices are compared after
aligning the wrists. In the default canonical frame every non-hand joint,
shape and expression is zeroed, so only articulation counts. The ``raw``
frame keeps the instance's own body pose and shape.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .body_model import BodyModelData, forward_batch
from .errors import EmptyInput, InvalidArgument

BIN_WIDTH_MM = 2.5
BIN_MAX_MM = 40.0
NUM_BINS = int(BIN_MAX_MM / BIN_WIDTH_MM)  # plus one overflow bin
BIN_EDGES_MM = tuple(i * BIN_WIDTH_MM for i in range(NUM_BINS + 1))
SIDES = ("left", "right")
FRAMES = ("canonical", "raw")


def _hand_setup(model: BodyModelData, side: str):
    joints = model.hand_joints(side)
    key = f"{side}_hand"
    mask = model.part_vertex_masks.get(key)
    if mask is None or mask.size == 0:
        raise InvalidArgument(f"model has no vertices in the {key} mask")
    return joints, mask, model.wrist(side)


def relaxed_distances(model: BodyModelData, hand_thetas, side: str, frame: str = "canonical",
                      states=None) -> np.ndarray:
    """Vectorized :func:`relaxed_distance` over a batch ``(N, H, 3)``; returns mm.

    ``states`` is ``(theta, beta, psi)`` batches, needed only for the raw frame.
    """
    if frame not in FRAMES:
        raise InvalidArgument(f"frame must be one of {FRAMES}, got {frame!r}")
    joints, mask, wrist = _hand_setup(model, side)
    hand = np.asarray(hand_thetas, dtype=np.float64)
    if hand.ndim != 3 or hand.shape[1:] != (len(joints), 3):
        raise InvalidArgument(f"hand pose must be ({len(joints)}, 3) per instance, got {hand.shape[1:]}")
    n = hand.shape[0]
    if frame == "canonical":
        base = np.zeros((n, model.num_joints, 3))
        beta = np.zeros((n, model.shape_dirs.shape[2]))
        psi = None
    else:
        if states is None:
            raise InvalidArgument("raw frame needs the instances' full states")
        base, beta, psi = (np.asarray(a, dtype=np.float64) for a in states)
        base = base.copy()
    posed = base.copy()
    posed[:, joints] = hand
    base[:, joints] = 0.0
    both_theta = np.concatenate([posed, base])
    both_beta = np.concatenate([beta, beta])
    both_psi = None if psi is None else np.concatenate([psi, psi])
    verts, jts = forward_batch(model, both_theta, both_beta, both_psi)
    a, b = verts[:n, mask], verts[n:, mask]
    shift = (jts[:n, wrist] - jts[n:, wrist])[:, None, :]
    return np.linalg.norm(a - shift - b, axis=-1).mean(axis=-1) * 1000.0


def relaxed_distance(model: BodyModelData, hand_theta, side: str, frame: str = "canonical", state=None) -> float:
    """Mean hand-vertex distance (mm) between a hand pose and the relaxed hand."""
    states = None
    if state is not None:
        states = (state.theta[None], state.beta[None], state.psi[None])
    return float(relaxed_distances(model, np.asarray(hand_theta)[None], side, frame, states)[0])


def median(values) -> float:
    """Middle order statistic, or the mean of the two middle ones."""
    v = sorted(float(x) for x in values)
    if not v:
        raise EmptyInput("median of zero samples")
    n = len(v)
    mid = n // 2
    return v[mid] if n % 2 else (v[mid - 1] + v[mid]) / 2.0


def quantile(sorted_values, q: float) -> float:
    """Linear interpolation between order statistics at position q*(n-1)."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyInput("quantile of zero samples")
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo])


def histogram(values) -> list[int]:
    """Counts in [0, 2.5), [2.5, 5), ... [37.5, 40) plus an overflow bin for >= 40 mm."""
    idx = np.minimum(np.floor(np.asarray(values, dtype=np.float64) / BIN_WIDTH_MM).astype(np.int64), NUM_BINS)
    return np.bincount(idx, minlength=NUM_BINS + 1).tolist()


@dataclass
class HandStats:
    dataset_id: str
    n: int
    median_mm: float
    q1_mm: float
    q3_mm: float
    histogram: list[int]

    @classmethod
    def from_samples(cls, dataset_id: str, samples) -> "HandStats":
        v = sorted(float(x) for x in samples)
        if not v:
            raise EmptyInput(f"{dataset_id}: no hand samples")
        return cls(dataset_id, len(v), median(v), quantile(v, 0.25), quantile(v, 0.75), histogram(v))

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "n": self.n,
            "median_mm": self.median_mm,
            "q1_mm": self.q1_mm,
            "q3_mm": self.q3_mm,
            "bin_edges_mm": list(BIN_EDGES_MM),
            "histogram": list(self.histogram),
        }


def hand_samples(records, model: BodyModelData, frame: str = "canonical", jobs: int = 1,
                 chunk: int = 256) -> np.ndarray:
    """Distances for both hands of every hand-supervised record, in record order."""
    records = [r for r in records if r.supervises_hands]
    chunks = [records[i:i + chunk] for i in range(0, len(records), chunk)]
    left, right = model.hand_joints("left"), model.hand_joints("right")

    def one(batch):
        theta = np.stack([r.state.theta for r in batch])
        if theta.shape[1] != model.num_joints:
            raise InvalidArgument(f"records have {theta.shape[1]} joints, model has {model.num_joints}")
        states = None
        if frame == "raw":
            states = (theta, np.stack([r.state.beta for r in batch]), np.stack([r.state.psi for r in batch]))
        dl = relaxed_distances(model, theta[:, left], "left", frame, states)
        dr = relaxed_distances(model, theta[:, right], "right", frame, states)
        return np.stack([dl, dr], axis=1).ravel()

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


def dataset_hand_stats(records, model: BodyModelData, dataset_id: str = "dataset",
                       frame: str = "canonical", jobs: int = 1) -> HandStats:
    return HandStats.from_samples(dataset_id, hand_samples(records, model, frame, jobs))


def rank_by_median(stats) -> list[HandStats]:
    """Most complex first; equal medians fall back to dataset id order."""
    return sorted(stats, key=lambda s: (-s.median_mm, s.dataset_id))


def stats_to_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset_id", "n", "median_mm", "q1_mm", "q3_mm"])
    for s in stats:
        w.writerow([s.dataset_id, s.n, f"{s.median_mm:.3f}", f"{s.q1_mm:.3f}", f"{s.q3_mm:.3f}"])
    return buf.getvalue()


def stats_to_json(stats) -> str:
    return json.dumps({"datasets": [s.to_dict() for s in stats]}, indent=2) + "\n"
