"""Dynamic PlenOctrees with Fourier-compressed time-varying leaf payloads."""

from .camera import Camera, CameraRig, Ray, generate_ray, make_rig, project
from .fourier import (
    FourierBasisSpec,
    dft_paper,
    fit_fourier,
    idft_basis,
    reconstruct_series,
)
from .metrics import mae, psnr, ssim
from .octree import (
    Aabb,
    FourierOctree,
    FPOConfig,
    Octree,
    TreeTopology,
    broadcast,
    from_occupancy,
    lookup,
    prune,
    union_topology,
)
from .render import RaySegment, composite, render, traverse
from .sh import Direction, SHCoeffs, decode_color, eval_sh_basis, fit_sh

__all__ = [
    "Aabb",
    "Camera",
    "CameraRig",
    "Direction",
    "FourierBasisSpec",
    "FourierOctree",
    "FPOConfig",
    "Octree",
    "Ray",
    "RaySegment",
    "SHCoeffs",
    "TreeTopology",
    "broadcast",
    "composite",
    "decode_color",
    "dft_paper",
    "eval_sh_basis",
    "fit_fourier",
    "fit_sh",
    "from_occupancy",
    "generate_ray",
    "idft_basis",
    "lookup",
    "mae",
    "make_rig",
    "project",
    "prune",
    "psnr",
    "reconstruct_series",
    "render",
    "ssim",
    "traverse",
    "union_topology",
]
