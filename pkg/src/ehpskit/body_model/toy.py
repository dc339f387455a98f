"""Deterministic synthetic body models so nothing depends on licensed assets."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument
from .core import (
    CANONICAL_LEFT_WRIST,
    CANONICAL_NECK,
    CANONICAL_PARENTS,
    CANONICAL_PARTS,
    CANONICAL_RIGHT_WRIST,
    NUM_BETAS,
    NUM_EXPR,
    BodyModelData,
    KinematicTree,
    validate_model,
)

MAX_NONZEROS = 4


def _minimal_layout(num_joints: int, rng: np.random.Generator):
    """Random tree with the canonical label schema.

    Returns (parents, parts, left_wrist, right_wrist, neck). Hand joints form a
    chain hanging off each wrist; with fewer than 7 joints there are none.
    """
    J = num_joints
    per_hand = max(0, (J - 3) // 4)
    n_body = J - 1 - 2 * per_hand
    parents: list[int | None] = [None]
    parts = ["root"]
    for j in range(1, n_body + 1):
        parents.append(int(rng.integers(0, j)))
        parts.append("body")
    if n_body >= 2:
        left, right = n_body - 1, n_body
    else:
        left = right = 1
    neck = 1 if n_body >= 3 else 0
    for side, wrist in (("left_hand", left), ("right_hand", right)):
        prev = wrist
        for _ in range(per_hand):
            parents.append(prev)
            parts.append(side)
            prev = len(parents) - 1
    return parents, parts, left, right, neck


def gen_toy_model(
    seed: int,
    num_vertices: int = 200,
    num_joints: int = 55,
    layout: str = "canonical",
) -> BodyModelData:
    """Build a random but valid body model.

    Every joint owns at least two vertices; skinning and regression rows have
    at most four non-zeros. Hands and face get non-empty, disjoint masks.
    """
    if layout not in ("canonical", "minimal"):
        raise InvalidArgument(f"layout must be 'canonical' or 'minimal', got {layout!r}")
    if layout == "canonical":
        num_joints = 55
    if num_joints < 2:
        raise InvalidArgument("num_joints must be at least 2")
    if num_vertices < 2 * num_joints:
        raise InvalidArgument(f"need at least {2 * num_joints} vertices for {num_joints} joints")

    rng = np.random.default_rng(seed)
    J, V = num_joints, num_vertices
    if layout == "canonical":
        parents, parts = list(CANONICAL_PARENTS), list(CANONICAL_PARTS)
        left, right, neck = CANONICAL_LEFT_WRIST, CANONICAL_RIGHT_WRIST, CANONICAL_NECK
    else:
        parents, parts, left, right, neck = _minimal_layout(J, rng)
    tree = KinematicTree(tuple(parents), tuple(parts))

    anchors = np.zeros((J, 3))
    anchors[0] = rng.normal(0.0, 0.05, 3)
    for j in range(1, J):
        anchors[j] = anchors[parents[j]] + rng.normal(0.0, 0.08, 3)

    owner = np.concatenate([np.arange(2 * J) % J, rng.integers(0, J, V - 2 * J)])
    template = anchors[owner] + rng.normal(0.0, 0.02, (V, 3))

    skin_weights = np.zeros((V, J))
    for v in range(V):
        chain = [int(owner[v])]
        while len(chain) < MAX_NONZEROS and parents[chain[-1]] is not None:
            chain.append(parents[chain[-1]])
        k = int(rng.integers(1, len(chain) + 1))
        w = rng.dirichlet(np.ones(k)) + np.eye(k)[0]
        skin_weights[v, chain[:k]] = w / w.sum()

    regressor = np.zeros((J, V))
    for j in range(J):
        owned = np.flatnonzero(owner == j)
        pick = rng.choice(owned, size=min(MAX_NONZEROS, owned.size), replace=False)
        w = rng.uniform(0.2, 1.0, pick.size)
        regressor[j, pick] = w / w.sum()

    face_joints = [j for j, p in enumerate(parts) if p in ("jaw", "eye")] or [neck]
    masks = {}
    for name, side, wrist in (("left_hand", "left_hand", left), ("right_hand", "right_hand", right)):
        hand = [j for j, p in enumerate(parts) if p == side]
        if hand:
            masks[name] = np.flatnonzero(np.isin(owner, hand))
        else:
            mine = np.flatnonzero(owner == wrist)
            if left == right:
                half = mine.size // 2
                mine = mine[:half] if name == "left_hand" else mine[half:]
            masks[name] = mine
    masks["face"] = np.flatnonzero(np.isin(owner, face_joints))
    masks["all"] = np.arange(V)
    masks = {k: np.asarray(v, dtype=np.int64) for k, v in masks.items()}

    shape_dirs = rng.normal(0.0, 0.01, (V, 3, NUM_BETAS))
    expr_dirs = np.zeros((V, 3, NUM_EXPR))
    expr_dirs[masks["face"]] = rng.normal(0.0, 0.005, (masks["face"].size, 3, NUM_EXPR))

    model = BodyModelData(
        template_vertices=template,
        shape_dirs=shape_dirs,
        expr_dirs=expr_dirs,
        joint_regressor=regressor,
        skin_weights=skin_weights,
        tree=tree,
        part_vertex_masks=masks,
        wrist_joints=(left, right),
        pelvis_joint=0,
        neck_joint=neck,
    )
    validate_model(model)
    return model


def with_shape_basis(model: BodyModelData, template=None, shape_dirs=None) -> BodyModelData:
    """Copy of ``model`` with its template and/or shape basis replaced."""
    out = BodyModelData(
        template_vertices=model.template_vertices if template is None else np.asarray(template, dtype=np.float64),
        shape_dirs=model.shape_dirs if shape_dirs is None else np.asarray(shape_dirs, dtype=np.float64),
        expr_dirs=model.expr_dirs,
        joint_regressor=model.joint_regressor,
        skin_weights=model.skin_weights,
        tree=model.tree,
        part_vertex_masks=model.part_vertex_masks,
        wrist_joints=model.wrist_joints,
        pelvis_joint=model.pelvis_joint,
        neck_joint=model.neck_joint,
    )
    validate_model(out)
    return out


def gen_gendered_variant(model: BodyModelData, seed: int, strength: float = 0.3) -> BodyModelData:
    """Stand-in for a gendered model sharing ``model``'s topology.

    The shape basis is a random mix of the neutral one plus off-span noise,
    and the template is perturbed, so no adapter reaches zero loss.
    """
    rng = np.random.default_rng(seed)
    mix = np.eye(NUM_BETAS) + strength * rng.normal(0.0, 1.0 / np.sqrt(NUM_BETAS), (NUM_BETAS, NUM_BETAS))
    dirs = np.einsum("vcb,bk->vck", model.shape_dirs, mix)
    dirs = dirs + strength * rng.normal(0.0, 0.002, dirs.shape)
    template = model.template_vertices + rng.normal(0.0, 0.002 * strength, model.template_vertices.shape)
    return with_shape_basis(model, template=template, shape_dirs=dirs)
