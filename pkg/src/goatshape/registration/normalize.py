"""Pose normalization: undo the fitted pose to recover a canonical shape."""

from __future__ import annotations

import numpy as np

from ..model.lbs import lbs_forward, lbs_inverse
from ..shapespace import NormalizedShape


def normalize_to_tpose(template, registration) -> NormalizedShape:
    """Inverse-skin the deformed registration result back to the rest pose
    and express it as a displacement from the template.

    The canonical shape is expressed in the subject's metric scale: the
    fitted scan-to-model scale is divided back out about the mesh centroid,
    and the result is re-centered on the template centroid. The displacement
    field is therefore exactly zero-mean (position carries no shape
    information), while true size variation stays in the field.
    """
    posed = lbs_forward(template, registration.pose)
    deformed = posed.vertices + registration.displacement
    unposed = lbs_inverse(template, deformed, registration.pose)
    rest = template.rest_mesh.vertices
    centered = unposed - unposed.mean(axis=0)
    subject = centered / registration.rigid.scale + rest.mean(axis=0)
    disp = subject - rest
    disp = disp - disp.mean(axis=0)
    return NormalizedShape(disp.ravel(), registration.scan_id)
