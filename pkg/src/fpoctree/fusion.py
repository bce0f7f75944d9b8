"""Coarse-to-fine tree construction from a scene oracle.

Coarse stage: carve a visual hull from silhouettes, then fill each hull leaf
from direction-sampled queries. Fine stage: render dense views against the
current tree and fold high-transmittance observations into each leaf with a
transmittance-weighted running mean. View order is the rig order; the update
is order-sensitive, so a fixed rig makes the pass deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraRig, camera_rays, project
from .octree import Octree
from .render import render_rays
from .sh import eval_sh_basis, fibonacci_directions, logit, n_sh_coeffs

QUERY_T_THRESHOLD = 1e-3
FOUR_PI = 4.0 * math.pi


@dataclass
class FusionState:
    """Per-leaf running update weight and update count."""

    weight: float = 0.0
    count: int = 0


@dataclass(frozen=True)
class FusionObservation:
    """One view's aggregated observation of a leaf."""

    t_obs: float
    sigma_obs: float
    rgb_obs: np.ndarray
    view_dir: np.ndarray


@dataclass(frozen=True)
class StaticLeaf:
    """Contract-level leaf payload used by the scalar update rule."""

    sigma: float
    sh: np.ndarray


def observation_sh(view_dir: np.ndarray, rgb: np.ndarray, lmax: int) -> np.ndarray:
    """Single-sample SH projection estimate of an observed color.

    4*pi * Y(d) (x) logit(rgb): the unbiased one-direction estimate of the
    orthonormal projection, matching the coarse stage's logit-space fit.
    """
    basis = eval_sh_basis(lmax, np.asarray(view_dir, dtype=float))
    return FOUR_PI * basis[..., :, None] * logit(rgb)[..., None, :]


def update_leaf(state: FusionState, leaf: StaticLeaf, obs: FusionObservation):
    """Transmittance-weighted running update of one leaf.

    sigma <- (W sigma + T sigma_obs) / (W + T), same per SH entry with the
    observation projected by observation_sh; then C <- C + 1 and
    W <- ((C-1)/C) W + (1/C) T.
    """
    w, t = state.weight, obs.t_obs
    if w + t == 0.0:
        raise ValueError("update weight W + T must be positive")
    sigma = (w * leaf.sigma + t * obs.sigma_obs) / (w + t)
    lmax = int(math.isqrt(leaf.sh.shape[0])) - 1
    sh_obs = observation_sh(obs.view_dir, obs.rgb_obs, lmax)
    sh = (w * leaf.sh + t * sh_obs) / (w + t)
    count = state.count + 1
    weight = ((count - 1) / count) * w + t / count
    return FusionState(weight, count), StaticLeaf(sigma, sh)


def _dilate(mask: np.ndarray, px: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(px):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def carve(oracle, rig: CameraRig, t: int, grid_n: int, dilation_px: int = 1) -> np.ndarray:
    """Visual hull occupancy: voxel centers projecting inside every silhouette."""
    if len(rig) == 0:
        raise ValueError("rig must hold at least one camera")
    box = oracle.bbox()
    cell = box.side / grid_n
    axis = np.arange(grid_n) + 0.5
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    centers = box.bmin + np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) * cell
    occupied = np.ones(centers.shape[0], dtype=bool)
    for cam in rig:
        sil = oracle.silhouette(cam, t)
        if not sil.any():
            raise ValueError("empty silhouette; nothing to carve")
        sil = _dilate(sil, dilation_px)
        pix, depth = project(cam, centers)
        px = np.floor(pix[:, 0]).astype(np.int64)
        py = np.floor(pix[:, 1]).astype(np.int64)
        ok = (depth > 0) & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        inside = np.zeros(centers.shape[0], dtype=bool)
        inside[ok] = sil[py[ok], px[ok]]
        occupied &= inside
    if not occupied.any():
        raise ValueError("visual hull is empty")
    return occupied.reshape(grid_n, grid_n, grid_n)


def fill_leaf_payloads(tree: Octree, oracle, t: int, dirs_per_leaf: int = 64) -> Octree:
    """Direction-sampled payloads for every leaf: mean density + SH color fit."""
    from .sh import sh_design_matrix, sh_projection_solver

    n_coeffs = n_sh_coeffs(tree.lmax)
    if dirs_per_leaf < n_coeffs:
        raise ValueError(
            f"need at least {n_coeffs} samples for lmax={tree.lmax}, "
            f"got {dirs_per_leaf}"
        )
    dirs = fibonacci_directions(dirs_per_leaf)
    centers = tree.topo.leaf_centers()
    n_leaves = centers.shape[0]
    sig_sum = np.zeros(n_leaves)
    logits = np.empty((n_leaves, dirs_per_leaf, 3))
    for k, d in enumerate(dirs):
        s, rgb = oracle.query(centers, np.tile(d, (n_leaves, 1)), t)
        sig_sum += s
        logits[:, k, :] = logit(rgb)
    solver = sh_projection_solver(sh_design_matrix(dirs, tree.lmax))
    return Octree(tree.topo, tree.lmax, sig_sum / dirs_per_leaf, solver(logits))


def coarse_fill(tree: Octree, oracle, t: int, dirs_per_leaf: int = 64) -> Octree:
    """Coarse stage: fill a zero-initialized hull tree from sparse-view queries."""
    return fill_leaf_payloads(tree, oracle, t, dirs_per_leaf)


def fine_pass(
    tree: Octree,
    oracle,
    rig: CameraRig,
    t: int,
    query_T_threshold: float = QUERY_T_THRESHOLD,
    background=(0.0, 0.0, 0.0),
):
    """Fine stage: per view, render the current tree, gather observations for
    leaves seen with transmittance above the query threshold, and apply the
    running update once per (leaf, view).

    Returns (updated tree, per-view updated-leaf counts).
    """
    sigma = tree.sigma.copy()
    sh = tree.sh.copy()
    working = Octree(tree.topo, tree.lmax, sigma, sh)
    n_leaves = tree.n_leaves
    weight = np.zeros(n_leaves)
    count = np.zeros(n_leaves, dtype=np.int64)
    centers = tree.topo.leaf_centers()
    per_view: list[int] = []

    for cam in rig:
        origins, dirs = camera_rays(cam)
        _, (ridx, leaf, t_entry) = render_rays(
            working, origins, dirs, background=background, capture=True
        )
        keep = t_entry > query_T_threshold
        leaf = leaf[keep]
        t_entry = t_entry[keep]
        if leaf.size == 0:
            per_view.append(0)
            continue
        touched = np.unique(leaf)
        t_sum = np.bincount(leaf, weights=t_entry, minlength=n_leaves)[touched]
        hits = np.bincount(leaf, minlength=n_leaves)[touched]
        t_mean = t_sum / hits

        view_dirs = centers[touched] - cam.position
        view_dirs /= np.linalg.norm(view_dirs, axis=1, keepdims=True)
        sig_obs, rgb_obs = oracle.query(centers[touched], view_dirs, t)
        sh_obs = observation_sh(view_dirs, rgb_obs, tree.lmax)

        w = weight[touched]
        denom = w + t_mean
        sigma[touched] = (w * sigma[touched] + t_mean * sig_obs) / denom
        sh[touched] = (
            w[:, None, None] * sh[touched] + t_mean[:, None, None] * sh_obs
        ) / denom[:, None, None]
        count[touched] += 1
        weight[touched] = ((count[touched] - 1) * w + t_mean) / count[touched]
        per_view.append(int(touched.size))

    return working, per_view
