from .core import (
    CANONICAL_PARENTS,
    CANONICAL_PARTS,
    NUM_BETAS,
    NUM_EXPR,
    PART_LABELS,
    BodyModelData,
    FullPoseState,
    KinematicTree,
    MeshResult,
    forward,
    forward_batch,
    forward_kinematics,
    regress_joints,
    rodrigues,
    shape_mesh,
    skin,
    validate_model,
)
from .io import dumps_model, load_model, model_from_dict, model_to_dict, save_model
from .toy import gen_gendered_variant, gen_toy_model, with_shape_basis

__all__ = [
    "CANONICAL_PARENTS", "CANONICAL_PARTS", "NUM_BETAS", "NUM_EXPR", "PART_LABELS",
    "BodyModelData", "FullPoseState", "KinematicTree", "MeshResult",
    "forward", "forward_batch", "forward_kinematics", "regress_joints", "rodrigues",
    "shape_mesh", "skin", "validate_model",
    "dumps_model", "load_model", "model_from_dict", "model_to_dict", "save_model",
    "gen_gendered_variant", "gen_toy_model", "with_shape_basis",
]
