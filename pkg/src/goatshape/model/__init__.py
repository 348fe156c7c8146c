"""Parametric model core: template, kinematics, blend skinning, container."""

from .kinematics import Pose, PoseJacobian, joint_transforms, skinning_transforms
from .template import Template, MEASUREMENT_RULES
from .builder import TemplateBuildConfig, build_procedural_template, JOINT_NAMES
from .lbs import (
    LbsResult,
    lbs_beta_gradient,
    lbs_forward,
    lbs_forward_full,
    lbs_inverse,
    regress_joints,
    shaped_rest_vertices,
)
from .container import load_model, save_model

__all__ = [
    "Pose",
    "PoseJacobian",
    "joint_transforms",
    "skinning_transforms",
    "Template",
    "MEASUREMENT_RULES",
    "TemplateBuildConfig",
    "build_procedural_template",
    "JOINT_NAMES",
    "LbsResult",
    "lbs_beta_gradient",
    "lbs_forward",
    "lbs_forward_full",
    "lbs_inverse",
    "regress_joints",
    "shaped_rest_vertices",
    "load_model",
    "save_model",
]
