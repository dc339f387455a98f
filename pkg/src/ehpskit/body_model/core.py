"""Shape blendshapes + linear blend skinning body model.

All stage functions accept optional leading batch dimensions so the adapter
trainer can push many (pose, shape) pairs through a single call. Units are
meters throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument

PART_LABELS = ("root", "body", "jaw", "eye", "left_hand", "right_hand")
NUM_BETAS = 10
NUM_EXPR = 10
SMALL_ANGLE = 1e-8
ROW_SUM_TOL = 1e-9

# Canonical 55-joint whole-body layout: 1 global + 21 body + jaw + 2 eyes + 15 + 15 hand joints.
CANONICAL_PARENTS: tuple[int | None, ...] = (
    None, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
    15, 15, 15,
    20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35, 20, 37, 38,
    21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50, 21, 52, 53,
)
CANONICAL_PARTS: tuple[str, ...] = (
    ("root",) + ("body",) * 21 + ("jaw",) + ("eye",) * 2
    + ("left_hand",) * 15 + ("right_hand",) * 15
)
CANONICAL_LEFT_WRIST = 20
CANONICAL_RIGHT_WRIST = 21
CANONICAL_NECK = 12


@dataclass(frozen=True)
class KinematicTree:
    parents: tuple[int | None, ...]
    part_of_joint: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(None if p is None else int(p) for p in self.parents))
        object.__setattr__(self, "part_of_joint", tuple(self.part_of_joint))
        self.validate()

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def validate(self) -> None:
        if len(self.parents) != len(self.part_of_joint):
            raise InvalidArgument("parents and part_of_joint lengths differ")
        if not self.parents:
            raise InvalidArgument("kinematic tree has no joints")
        roots = [j for j, p in enumerate(self.parents) if p is None]
        if roots != [0]:
            raise InvalidArgument(f"tree must have exactly one root at index 0, got roots {roots}")
        for j, p in enumerate(self.parents):
            if p is not None and not 0 <= p < j:
                raise InvalidArgument(f"joint {j} has parent {p}; parents must precede children")
        for j, label in enumerate(self.part_of_joint):
            if label not in PART_LABELS:
                raise InvalidArgument(f"joint {j} has unknown part label {label!r}")

    def joints_with_label(self, label: str) -> list[int]:
        return [j for j, lab in enumerate(self.part_of_joint) if lab == label]

    def children(self, joint: int) -> list[int]:
        return [j for j, p in enumerate(self.parents) if p == joint]


@dataclass(frozen=True, eq=False)
class BodyModelData:
    template_vertices: np.ndarray  # (V, 3)
    shape_dirs: np.ndarray  # (V, 3, 10)
    expr_dirs: np.ndarray  # (V, 3, 10)
    joint_regressor: np.ndarray  # (J, V)
    skin_weights: np.ndarray  # (V, J)
    tree: KinematicTree
    part_vertex_masks: dict[str, np.ndarray]
    wrist_joints: tuple[int, int]  # (left, right)
    pelvis_joint: int = 0
    neck_joint: int | None = None

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.tree.num_joints

    def __eq__(self, other):
        if not isinstance(other, BodyModelData):
            return NotImplemented
        arrays = ("template_vertices", "shape_dirs", "expr_dirs", "joint_regressor", "skin_weights")
        return (
            all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.tree == other.tree
            and self.part_vertex_masks.keys() == other.part_vertex_masks.keys()
            and all(np.array_equal(m, other.part_vertex_masks[k]) for k, m in self.part_vertex_masks.items())
            and tuple(self.wrist_joints) == tuple(other.wrist_joints)
            and self.pelvis_joint == other.pelvis_joint
            and self.neck_joint == other.neck_joint
        )

    def hand_joints(self, side: str) -> list[int]:
        if side not in ("left", "right"):
            raise InvalidArgument(f"side must be 'left' or 'right', got {side!r}")
        return self.tree.joints_with_label(f"{side}_hand")

    def wrist(self, side: str) -> int:
        if side == "left":
            return self.wrist_joints[0]
        if side == "right":
            return self.wrist_joints[1]
        raise InvalidArgument(f"side must be 'left' or 'right', got {side!r}")

    def face_anchor(self) -> int:
        return self.pelvis_joint if self.neck_joint is None else self.neck_joint


@dataclass
class FullPoseState:
    theta: np.ndarray  # (J, 3) axis-angle radians
    beta: np.ndarray = field(default_factory=lambda: np.zeros(NUM_BETAS))
    psi: np.ndarray = field(default_factory=lambda: np.zeros(NUM_EXPR))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)

    @classmethod
    def zeros(cls, num_joints: int) -> "FullPoseState":
        return cls(theta=np.zeros((num_joints, 3)))

    def validate(self, model: BodyModelData | None = None) -> None:
        if self.theta.ndim != 2 or self.theta.shape[1] != 3:
            raise InvalidArgument(f"theta must be (J, 3), got {self.theta.shape}")
        if model is not None and self.theta.shape[0] != model.num_joints:
            raise InvalidArgument(
                f"theta has {self.theta.shape[0]} joints, model has {model.num_joints}"
            )
        if self.beta.shape != (NUM_BETAS,):
            raise InvalidArgument(f"beta must have {NUM_BETAS} entries, got {self.beta.shape}")
        if self.psi.shape != (NUM_EXPR,):
            raise InvalidArgument(f"psi must have {NUM_EXPR} entries, got {self.psi.shape}")
        if self.translation.shape != (3,):
            raise InvalidArgument(f"translation must be a 3-vector, got {self.translation.shape}")
        for name in ("theta", "beta", "psi", "translation"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidArgument(f"{name} contains non-finite values")

    def copy(self) -> "FullPoseState":
        return FullPoseState(self.theta.copy(), self.beta.copy(), self.psi.copy(), self.translation.copy())


@dataclass
class MeshResult:
    vertices: np.ndarray  # (V, 3)
    joints: np.ndarray  # (J, 3) posed joints


def rodrigues(axis_angle) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3).

    Uses R = I + a*K + b*K^2 with K the cross-product matrix of the axis-angle
    vector, a = sin(t)/t and b = (1 - cos(t))/t^2. Below an angle of 1e-8 rad
    the second-order series values a = 1, b = 1/2 are used.
    """
    w = np.asarray(axis_angle, dtype=np.float64)
    if w.shape[-1:] != (3,):
        raise InvalidArgument(f"axis-angle must end in a 3-vector axis, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("axis-angle contains non-finite values")
    sq = np.einsum("...i,...i->...", w, w)
    angle = np.sqrt(sq)
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    # K^2 = w w^T - |w|^2 I
    out = b[..., None, None] * (w[..., :, None] * w[..., None, :])
    diag = 1.0 - b * sq
    out[..., 0, 0] += diag
    out[..., 1, 1] += diag
    out[..., 2, 2] += diag
    out[..., 0, 1] -= a * z
    out[..., 0, 2] += a * y
    out[..., 1, 0] += a * z
    out[..., 1, 2] -= a * x
    out[..., 2, 0] -= a * y
    out[..., 2, 1] += a * x
    return out


def shape_mesh(model: BodyModelData, beta, psi) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if beta.shape[-1:] != (model.shape_dirs.shape[2],):
        raise InvalidArgument(f"beta must have {model.shape_dirs.shape[2]} coefficients, got {beta.shape}")
    if psi.shape[-1:] != (model.expr_dirs.shape[2],):
        raise InvalidArgument(f"psi must have {model.expr_dirs.shape[2]} coefficients, got {psi.shape}")
    V = model.num_vertices
    offsets = beta @ model.shape_dirs.reshape(V * 3, -1).T + psi @ model.expr_dirs.reshape(V * 3, -1).T
    return model.template_vertices + offsets.reshape(offsets.shape[:-1] + (V, 3))


def regress_joints(model: BodyModelData, rest_vertices) -> np.ndarray:
    rest_vertices = np.asarray(rest_vertices, dtype=np.float64)
    if rest_vertices.shape[-2:] != (model.joint_regressor.shape[1], 3):
        raise InvalidArgument(
            f"expected (..., {model.joint_regressor.shape[1]}, 3) vertices, got {rest_vertices.shape}"
        )
    return model.joint_regressor @ rest_vertices


def forward_kinematics(tree: KinematicTree, rest_joints, theta) -> np.ndarray:
    """World transforms (..., J, 4, 4) of every joint.

    Local rotation is ``rodrigues(theta_j)``, local translation the rest offset
    from the parent (the rest position itself for the root).
    """
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    J = tree.num_joints
    if theta.shape[-2:] != (J, 3) or rest_joints.shape[-2:] != (J, 3):
        raise InvalidArgument(
            f"theta {theta.shape} and rest_joints {rest_joints.shape} must both end in ({J}, 3)"
        )
    tree.validate()
    batch = np.broadcast_shapes(theta.shape[:-2], rest_joints.shape[:-2])
    rots = rodrigues(np.broadcast_to(theta, batch + (J, 3)))
    rest = np.broadcast_to(rest_joints, batch + (J, 3))

    parents = tree.parents
    offsets = rest.copy()
    for j in range(1, J):
        offsets[..., j, :] = rest[..., j, :] - rest[..., parents[j], :]

    local = np.zeros(batch + (J, 4, 4))
    local[..., :3, :3] = rots
    local[..., :3, 3] = offsets
    local[..., 3, 3] = 1.0

    world = np.empty_like(local)
    world[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, J):
        world[..., j, :, :] = world[..., parents[j], :, :] @ local[..., j, :, :]
    return world


def skin(model: BodyModelData, rest_vertices, rest_joints, world_transforms) -> np.ndarray:
    weights = model.skin_weights
    sums = weights.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise InvalidArgument(f"skin weight row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1")
    rest_vertices = np.asarray(rest_vertices, dtype=np.float64)
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    world = np.asarray(world_transforms, dtype=np.float64)
    if rest_vertices.shape[-2:] != (model.num_vertices, 3):
        raise InvalidArgument(f"rest vertices must end in ({model.num_vertices}, 3), got {rest_vertices.shape}")
    if world.shape[-3:] != (model.num_joints, 4, 4):
        raise InvalidArgument(f"world transforms must end in ({model.num_joints}, 4, 4), got {world.shape}")

    rot = world[..., :3, :3]
    # relative transform: world_j composed with translate(-rest_joint_j)
    trans = world[..., :3, 3] - (rot @ rest_joints[..., None])[..., 0]
    rel = np.concatenate([rot, trans[..., None]], axis=-1)  # (..., J, 3, 4)
    batch = rel.shape[:-3]
    J, V = model.num_joints, model.num_vertices
    # one GEMM over the flattened batch: (V, J) @ (J, batch * 12)
    flat = np.moveaxis(rel.reshape((-1, J, 12)), 1, 0).reshape(J, -1)
    blended = np.moveaxis((weights @ flat).reshape(V, -1, 12), 0, 1)
    blended = blended.reshape(batch + (V, 3, 4))
    return (blended[..., :3] @ rest_vertices[..., None])[..., 0] + blended[..., 3]


def forward(model: BodyModelData, state: FullPoseState) -> MeshResult:
    state.validate(model)
    verts, joints = forward_batch(
        model, state.theta[None], state.beta[None], state.psi[None], state.translation[None]
    )
    return MeshResult(vertices=verts[0], joints=joints[0])


def forward_batch(model: BodyModelData, theta, beta, psi=None, translation=None):
    """Batched forward pass; returns posed ``(vertices (B, V, 3), joints (B, J, 3))``."""
    theta = np.asarray(theta, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    n = theta.shape[0]
    psi = np.zeros((n, model.expr_dirs.shape[2])) if psi is None else np.asarray(psi, dtype=np.float64)
    rest_v = shape_mesh(model, beta, psi)
    rest_j = regress_joints(model, rest_v)
    world = forward_kinematics(model.tree, rest_j, theta)
    verts = skin(model, rest_v, rest_j, world)
    joints = world[..., :3, 3]
    if translation is not None:
        t = np.asarray(translation, dtype=np.float64)[..., None, :]
        verts = verts + t
        joints = joints + t
    return verts, joints


def validate_model(model: BodyModelData) -> None:
    """Raise InvalidArgument naming the first violated invariant."""
    V = model.template_vertices.shape[0]
    J = model.tree.num_joints
    expect = {
        "template_vertices": (V, 3),
        "shape_dirs": (V, 3, model.shape_dirs.shape[2] if model.shape_dirs.ndim == 3 else -1),
        "expr_dirs": (V, 3, model.expr_dirs.shape[2] if model.expr_dirs.ndim == 3 else -1),
        "joint_regressor": (J, V),
        "skin_weights": (V, J),
    }
    for name, shape in expect.items():
        arr = getattr(model, name)
        if arr.shape != shape:
            raise InvalidArgument(f"{name}: expected shape {shape}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument(f"{name}: non-finite values")
    for name in ("joint_regressor", "skin_weights"):
        arr = getattr(model, name)
        neg = np.argwhere(arr < 0)
        if neg.size:
            raise InvalidArgument(f"{name}[{int(neg[0][0])}]: negative entry")
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise InvalidArgument(f"{name}[{int(bad[0])}]: row sums to {sums[bad[0]]!r}, expected 1")
    for side, j in zip(("left", "right"), model.wrist_joints):
        if not 0 <= j < J:
            raise InvalidArgument(f"wrist_joints.{side}: joint {j} out of range")
    for name in ("pelvis_joint", "neck_joint"):
        j = getattr(model, name)
        if j is not None and not 0 <= j < J:
            raise InvalidArgument(f"{name}: joint {j} out of range")
    masks = model.part_vertex_masks
    for part in ("left_hand", "right_hand", "face", "all"):
        if part not in masks:
            raise InvalidArgument(f"part_vertex_masks.{part}: missing")
    for part, idx in masks.items():
        if idx.size and (idx.min() < 0 or idx.max() >= V):
            raise InvalidArgument(f"part_vertex_masks.{part}: vertex index out of range")
        if np.unique(idx).size != idx.size:
            raise InvalidArgument(f"part_vertex_masks.{part}: duplicate vertex indices")
    everything = set(masks["all"].tolist())
    exclusive = ("left_hand", "right_hand", "face")
    for i, a in enumerate(exclusive):
        sa = set(masks[a].tolist())
        if not sa <= everything:
            raise InvalidArgument(f"part_vertex_masks.{a}: not a subset of 'all'")
        for b in exclusive[i + 1:]:
            if sa & set(masks[b].tolist()):
                raise InvalidArgument(f"part_vertex_masks: {a} and {b} overlap")
