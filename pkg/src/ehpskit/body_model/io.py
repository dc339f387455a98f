"""Body model JSON files.

One JSON document, keys sorted, floats written with shortest round-trip repr
so save -> load is bit-exact. The root's parent is ``null``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument, ParseError
from .core import BodyModelData, KinematicTree, validate_model

REQUIRED_KEYS = (
    "template_vertices", "shape_dirs", "expr_dirs", "joint_regressor", "skin_weights",
    "parents", "part_of_joint", "part_vertex_masks", "wrist_joints", "pelvis_joint", "units",
)


def model_to_dict(model: BodyModelData) -> dict:
    doc = {
        "template_vertices": model.template_vertices.tolist(),
        "shape_dirs": model.shape_dirs.tolist(),
        "expr_dirs": model.expr_dirs.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "parents": list(model.tree.parents),
        "part_of_joint": list(model.tree.part_of_joint),
        "part_vertex_masks": {k: v.tolist() for k, v in model.part_vertex_masks.items()},
        "wrist_joints": {"left": int(model.wrist_joints[0]), "right": int(model.wrist_joints[1])},
        "pelvis_joint": int(model.pelvis_joint),
        "units": "m",
    }
    if model.neck_joint is not None:
        doc["neck_joint"] = int(model.neck_joint)
    return doc


def dumps_model(model: BodyModelData) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_model(model: BodyModelData, path) -> None:
    Path(path).write_text(dumps_model(model) + "\n", encoding="utf-8")


def _array(doc: dict, key: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(doc[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"not a numeric array ({exc})", path=key) from None
    if arr.ndim != ndim:
        raise ParseError(f"expected a {ndim}-d array, got shape {arr.shape}", path=key)
    return arr


def _check_rows(arr: np.ndarray, key: str) -> None:
    for i, row in enumerate(arr):
        if np.any(row < 0):
            raise ParseError("negative weight", path=f"{key}[{i}]")
        s = row.sum()
        if abs(s - 1.0) > 1e-9:
            raise ParseError(f"row sums to {s!r}, expected 1", path=f"{key}[{i}]")


def model_from_dict(doc) -> BodyModelData:
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    for key in REQUIRED_KEYS:
        if key not in doc:
            raise ParseError("missing key", path=key)
    if doc["units"] != "m":
        raise ParseError(f"unsupported units {doc['units']!r}", path="units")

    template = _array(doc, "template_vertices", 2)
    shape_dirs = _array(doc, "shape_dirs", 3)
    expr_dirs = _array(doc, "expr_dirs", 3)
    regressor = _array(doc, "joint_regressor", 2)
    weights = _array(doc, "skin_weights", 2)
    _check_rows(regressor, "joint_regressor")
    _check_rows(weights, "skin_weights")

    try:
        tree = KinematicTree(tuple(doc["parents"]), tuple(doc["part_of_joint"]))
    except (InvalidArgument, TypeError) as exc:
        raise ParseError(str(exc), path="parents") from None

    masks_doc = doc["part_vertex_masks"]
    if not isinstance(masks_doc, dict):
        raise ParseError("expected an object", path="part_vertex_masks")
    masks = {}
    for part, idx in masks_doc.items():
        arr = np.asarray(idx)
        if arr.ndim != 1 or (arr.size and arr.dtype.kind not in "iu"):
            raise ParseError("expected a list of vertex indices", path=f"part_vertex_masks.{part}")
        masks[part] = arr.astype(np.int64)

    wrists = doc["wrist_joints"]
    try:
        wrist_joints = (int(wrists["left"]), int(wrists["right"]))
    except (KeyError, TypeError, ValueError):
        raise ParseError("expected {left, right} joint indices", path="wrist_joints") from None

    model = BodyModelData(
        template_vertices=template,
        shape_dirs=shape_dirs,
        expr_dirs=expr_dirs,
        joint_regressor=regressor,
        skin_weights=weights,
        tree=tree,
        part_vertex_masks=masks,
        wrist_joints=wrist_joints,
        pelvis_joint=int(doc["pelvis_joint"]),
        neck_joint=None if doc.get("neck_joint") is None else int(doc["neck_joint"]),
    )
    try:
        validate_model(model)
    except InvalidArgument as exc:
        msg = str(exc)
        path, _, rest = msg.partition(": ")
        raise ParseError(rest or msg, path=path if rest else None) from None
    return model


def load_model(path) -> BodyModelData:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text ({exc})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return model_from_dict(doc)
