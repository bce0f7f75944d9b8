"""Octree volume rendering: exact per-leaf ray segments, emission-absorption.

Leaves hold piecewise-constant fields, so per-segment integrals are closed
form; rays advance cell by cell (existing leaf or empty sibling cube), which
skips empty space at the coarsest granularity the tree offers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import Camera, Ray, camera_rays
from .octree import Octree, TreeTopology, descend_cells
from .sh import eval_sh_basis, sigmoid

DEFAULT_EARLY_STOP = 1e-4


@dataclass(frozen=True)
class RaySegment:
    """One ray-leaf crossing: leaf index, segment length, entry parameter."""

    leaf: int
    delta: float
    t_entry: float


def ray_box_intervals(bbox, origins: np.ndarray, dirs: np.ndarray):
    """Slab intersection; returns (t_enter, t_exit) arrays (empty iff enter >= exit)."""
    o = np.atleast_2d(origins)
    d = np.atleast_2d(dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (bbox.bmin - o) / d
        tb = (bbox.bmax - o) / d
    zero = d == 0.0
    inside = (o >= bbox.bmin) & (o <= bbox.bmax)
    lo = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    hi = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    return lo.max(axis=1), hi.min(axis=1)


def _traverse_batch(topo: TreeTopology, origins, dirs, t_near, t_far, visit) -> None:
    """Walk every ray through the tree, calling visit once per leaf crossing.

    visit(ray_idx, leaf_idx, t0, t1) receives parallel arrays for the subset of
    rays crossing a leaf this step; it may return a bool mask (aligned with
    ray_idx) of rays to keep active, enabling early termination.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    n_rays = o.shape[0]
    depth_max = topo.max_depth
    ncell = 1 << depth_max
    bmin = topo.bbox.bmin
    cellw = topo.bbox.side / ncell

    enter, exit_ = ray_box_intervals(topo.bbox, o, d)
    t_cur = np.maximum(enter, np.broadcast_to(t_near, (n_rays,)))
    t_end = np.minimum(exit_, np.broadcast_to(t_far, (n_rays,)))
    idx = np.flatnonzero(t_cur < t_end)
    if idx.size == 0:
        return

    with np.errstate(divide="ignore"):
        inv = 1.0 / d
    icoords = np.zeros((n_rays, 3), dtype=np.int64)
    p0 = o[idx] + t_cur[idx, None] * d[idx]
    icoords[idx] = np.clip(
        np.floor((p0 - bmin) / cellw).astype(np.int64), 0, ncell - 1
    )

    max_iter = 6 * ncell + 16
    for _ in range(max_iter):
        if idx.size == 0:
            return
        sub_ic = icoords[idx]
        leaf, depth = descend_cells(topo, sub_ic)
        shift = (depth_max - depth)[:, None]
        lo_idx = (sub_ic >> shift) << shift
        hi_idx = lo_idx + (1 << shift)
        wlo = bmin + lo_idx * cellw
        whi = bmin + hi_idx * cellw
        sub_o, sub_d, sub_inv = o[idx], d[idx], inv[idx]
        with np.errstate(invalid="ignore"):
            t_ax = np.where(
                sub_d > 0,
                (whi - sub_o) * sub_inv,
                np.where(sub_d < 0, (wlo - sub_o) * sub_inv, np.inf),
            )
        t_exit = t_ax.min(axis=1)
        seg_end = np.minimum(t_exit, t_end[idx])

        keep = np.ones(idx.size, dtype=bool)
        emit = (leaf >= 0) & (seg_end > t_cur[idx])
        if emit.any():
            res = visit(idx[emit], leaf[emit], t_cur[idx][emit], seg_end[emit])
            if res is not None:
                keep[emit] &= res

        # Step into the neighbor cell: exit axes move analytically, the rest
        # are re-derived from the exit point (clamped into the old cell).
        p_next = sub_o + t_exit[:, None] * sub_d
        new_ic = np.floor((p_next - bmin) / cellw).astype(np.int64)
        np.clip(new_ic, lo_idx, hi_idx - 1, out=new_ic)
        stepping = t_ax <= t_exit[:, None]
        pos_step = stepping & (sub_d > 0)
        neg_step = stepping & (sub_d < 0)
        new_ic[pos_step] = hi_idx[pos_step]
        new_ic[neg_step] = lo_idx[neg_step] - 1

        icoords[idx] = new_ic
        t_cur[idx] = t_exit
        keep &= (t_exit < t_end[idx]) & np.all(
            (new_ic >= 0) & (new_ic < ncell), axis=1
        )
        idx = idx[keep]


def trace_segments(topo: TreeTopology, origins, dirs, t_near=0.0, t_far=math.inf):
    """All leaf crossings as flat arrays (ray_idx, leaf_idx, t0, t1).

    Per ray, entries appear in increasing t; rays are interleaved.
    """
    out_r, out_l, out_t0, out_t1 = [], [], [], []

    def visit(ridx, leaf, t0, t1):
        out_r.append(ridx.copy())
        out_l.append(leaf.copy())
        out_t0.append(t0.copy())
        out_t1.append(t1.copy())
        return None

    _traverse_batch(topo, origins, dirs, t_near, t_far, visit)
    if not out_r:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0), np.zeros(0)
    return (
        np.concatenate(out_r),
        np.concatenate(out_l),
        np.concatenate(out_t0),
        np.concatenate(out_t1),
    )


def traverse(tree, ray: Ray) -> list[RaySegment]:
    """Ordered leaf crossings of one ray; empty list when nothing is hit."""
    topo = tree if isinstance(tree, TreeTopology) else tree.topo
    _, leaf, t0, t1 = trace_segments(
        topo, ray.origin[None], ray.dir[None], ray.t_near, ray.t_far
    )
    return [
        RaySegment(int(l), float(b - a), float(a)) for l, a, b in zip(leaf, t0, t1)
    ]


def composite(
    segments,
    leaf_eval,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
):
    """Emission-absorption compositing of ordered segments.

    leaf_eval maps a leaf index to (sigma, rgb). Returns the composited color
    and the per-segment entry transmittance list; traversal stops once the
    running transmittance drops below early_stop_T.
    """
    T = 1.0
    color = np.zeros(3)
    transmittances: list[float] = []
    for seg in segments:
        if T < early_stop_T:
            break
        sigma, rgb = leaf_eval(seg.leaf)
        alpha = 1.0 - math.exp(-max(float(sigma), 0.0) * seg.delta)
        transmittances.append(T)
        color += T * alpha * np.asarray(rgb, dtype=float)
        T *= 1.0 - alpha
    color += T * np.asarray(background, dtype=float)
    return color, transmittances


def render_rays(
    tree: Octree,
    origins: np.ndarray,
    dirs: np.ndarray,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
    capture: bool = False,
):
    """Composite a ray batch against a static tree.

    Returns rgb [M, 3] (float64); with capture=True additionally returns flat
    arrays (ray_idx, leaf_idx, entry_transmittance) of every composited
    segment. SH colors decode along each ray's direction.
    """
    dirs = np.atleast_2d(dirs)
    m = dirs.shape[0]
    basis = eval_sh_basis(tree.lmax, dirs)
    color = np.zeros((m, 3))
    trans = np.ones(m)
    sigma = np.maximum(tree.sigma, 0.0)
    caps_r, caps_l, caps_t = [], [], []

    def visit(ridx, leaf, t0, t1):
        alpha = -np.expm1(-sigma[leaf] * (t1 - t0))
        rgb = sigmoid(np.einsum("mbc,mb->mc", tree.sh[leaf], basis[ridx]))
        t_entry = trans[ridx]
        if capture:
            caps_r.append(ridx.copy())
            caps_l.append(leaf.copy())
            caps_t.append(t_entry.copy())
        color[ridx] += (t_entry * alpha)[:, None] * rgb
        trans[ridx] = t_entry * (1.0 - alpha)
        return trans[ridx] >= early_stop_T

    _traverse_batch(tree.topo, origins, dirs, 0.0, math.inf, visit)
    color += trans[:, None] * np.asarray(background, dtype=float)
    if not capture:
        return color
    if caps_r:
        caps = (np.concatenate(caps_r), np.concatenate(caps_l), np.concatenate(caps_t))
    else:
        caps = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    return color, caps


def render(
    tree: Octree,
    cam: Camera,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
    threads: int = 1,
) -> np.ndarray:
    """Render a full image [H, W, 3] float32 in [0, 1].

    Pixels are independent, so multithreading over row blocks changes nothing
    in the output.
    """
    origins, dirs = camera_rays(cam)
    if threads > 1 and cam.height >= 2 * threads:
        bounds = np.linspace(0, origins.shape[0], threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(
                    lambda se: render_rays(
                        tree, origins[se[0] : se[1]], dirs[se[0] : se[1]],
                        background, early_stop_T,
                    ),
                    zip(bounds[:-1], bounds[1:]),
                )
            )
        rgb = np.concatenate(parts)
    else:
        rgb = render_rays(tree, origins, dirs, background, early_stop_T)
    return rgb.reshape(cam.height, cam.width, 3).astype(np.float32)


def render_dense_march(
    tree: Octree,
    cam: Camera,
    step: float,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
) -> np.ndarray:
    """Fixed-step marcher over the same leaf fields, with no empty-space skipping.

    Benchmark baseline: every step pays a point lookup whether or not the
    sample lands in a leaf.
    """
    origins, dirs = camera_rays(cam)
    basis = eval_sh_basis(tree.lmax, dirs)
    m = dirs.shape[0]
    enter, exit_ = ray_box_intervals(tree.bbox, origins, dirs)
    enter = np.maximum(enter, 0.0)
    color = np.zeros((m, 3))
    trans = np.ones(m)
    sigma = np.maximum(tree.sigma, 0.0)
    n = 1 << tree.topo.max_depth
    cellw = tree.bbox.side / n
    bmin = tree.bbox.bmin

    idx = np.flatnonzero(enter < exit_)
    t = enter.copy()
    while idx.size:
        delta = np.minimum(step, exit_[idx] - t[idx])
        p = origins[idx] + (t[idx] + 0.5 * delta)[:, None] * dirs[idx]
        ic = np.floor((p - bmin) / cellw).astype(np.int64)
        inb = np.all((ic >= 0) & (ic < n), axis=1)
        leaf = np.full(idx.size, -1, dtype=np.int64)
        if inb.any():
            leaf[inb], _ = descend_cells(tree.topo, ic[inb])
        hit = leaf >= 0
        if hit.any():
            h_idx = idx[hit]
            alpha = -np.expm1(-sigma[leaf[hit]] * delta[hit])
            rgb = sigmoid(
                np.einsum("mbc,mb->mc", tree.sh[leaf[hit]], basis[h_idx])
            )
            color[h_idx] += (trans[h_idx] * alpha)[:, None] * rgb
            trans[h_idx] *= 1.0 - alpha
        t[idx] += step
        idx = idx[(t[idx] < exit_[idx]) & (trans[idx] >= early_stop_T)]
    color += trans[:, None] * np.asarray(background, dtype=float)
    return color.reshape(cam.height, cam.width, 3).astype(np.float32)
