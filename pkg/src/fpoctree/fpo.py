"""Fourier tree assembly, per-frame evaluation, and coefficient fine-tuning.

The union topology hosts one coefficient block per leaf: a density series and
one series per SH entry, transformed frame-wise. Both forward transforms are
linear, so assembly streams one broadcast frame at a time and accumulates
coefficient outer products without materializing full per-leaf series.

Fine-tuning runs gradient descent on the stored coefficients only (topology
frozen) against ground-truth pixels, with the chain rule written out through
compositing, the sigmoid color decode, the SH sum, and the linear time basis.
The density clamp at zero passes no gradient below the clamp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, camera_rays
from .errors import NumericError
from .fourier import fourier_fit_matrix, idft_matrix, idft_weights
from .octree import (
    FourierOctree,
    FPOConfig,
    Octree,
    broadcast,
    rebuild_with_leaf_mask,
    union_topology,
)
from .render import DEFAULT_EARLY_STOP, render
from .sh import eval_sh_basis, n_sh_coeffs, sigmoid



@dataclass(frozen=True)
class FinetuneConfig:
    """Optimizer settings for coefficient refinement."""

    steps: int
    step_size: float = 1e-2
    rays_per_batch: int = 512
    optimizer: str = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.rays_per_batch < 1:
            raise ValueError("rays_per_batch must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def build_fpo(
    frame_trees: list[Octree],
    config: FPOConfig,
    paper_dft: bool = False,
    topology=None,
) -> FourierOctree:
    """Union the per-frame trees and transform each leaf's payload series.

    With paper_dft the literal 1/T-normalized summation replaces the
    least-squares fit (kept for fidelity comparisons; it attenuates non-DC
    content). A precomputed union topology can be passed to skip re-deriving
    it.
    """
    if len(frame_trees) != config.T:
        raise ValueError(f"expected {config.T} frame trees, got {len(frame_trees)}")
    if any(t.lmax != config.lmax for t in frame_trees):
        raise ValueError("frame tree band limit does not match config")
    topo = topology if topology is not None else union_topology(frame_trees)
    n_leaves = topo.n_leaves
    basis_count = n_sh_coeffs(config.lmax)
    if paper_dft:
        analysis1 = (idft_matrix(config.n1, config.T) / config.T).T
        analysis2 = (idft_matrix(config.n2, config.T) / config.T).T
    else:
        analysis1 = fourier_fit_matrix(config.n1, config.T)
        analysis2 = fourier_fit_matrix(config.n2, config.T)
    k_sigma = np.zeros((n_leaves, config.n1))
    k_z = np.zeros((n_leaves, config.n2, basis_count, 3))
    for t, tree in enumerate(frame_trees, start=1):
        frame = broadcast(tree, topo)
        k_sigma += frame.sigma[:, None] * analysis1[:, t - 1]
        k_z += frame.sh[:, None, :, :] * analysis2[None, :, t - 1, None, None]
    return FourierOctree(topo, config, k_sigma, k_z)


def eval_at_frame(fpo: FourierOctree, t: int) -> Octree:
    """Materialize the static tree at frame t; density clamps at zero."""
    cfg = fpo.config
    if not 1 <= t <= cfg.T:
        raise ValueError(f"frame {t} outside 1..{cfg.T}")
    w1 = idft_weights(cfg.n1, t, cfg.T)
    w2 = idft_weights(cfg.n2, t, cfg.T)
    sigma = np.maximum(fpo.k_sigma @ w1, 0.0)
    z = np.einsum("lnbc,n->lbc", fpo.k_z, w2)
    return Octree(fpo.topo, cfg.lmax, sigma, z)


def sigma_reconstruction(fpo: FourierOctree) -> np.ndarray:
    """Unclamped density reconstruction at every frame, [n_leaves, T]."""
    return fpo.k_sigma @ idft_matrix(fpo.config.n1, fpo.config.T).T


def prune_fpo(fpo: FourierOctree, threshold: float = 1e-3):
    """Drop leaves whose reconstructed density stays below the threshold at
    every frame. Returns (pruned tree, removed count)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    keep = (sigma_reconstruction(fpo) >= threshold).any(axis=1)
    new_topo, kept = rebuild_with_leaf_mask(fpo.topo, keep)
    cfg = fpo.config
    pruned = FourierOctree(
        new_topo,
        cfg,
        fpo.k_sigma[kept] if len(kept) else np.zeros((0, cfg.n1)),
        fpo.k_z[kept]
        if len(kept)
        else np.zeros((0, cfg.n2, n_sh_coeffs(cfg.lmax), 3)),
    )
    return pruned, int(fpo.n_leaves - len(kept))


def loss(fpo: FourierOctree, dataset_items, background=(0.0, 0.0, 0.0)) -> float:
    """Summed squared RGB error of rendered vs ground-truth images.

    dataset_items: iterable of (camera, frame, image [H, W, 3]).
    """
    items = list(dataset_items)
    if not items:
        raise ValueError("dataset is empty")
    total = 0.0
    by_frame: dict[int, list] = {}
    for cam, t, img in items:
        img = np.asarray(img, dtype=float)
        if img.shape != (cam.height, cam.width, 3):
            raise ValueError("image dimensions do not match the camera")
        by_frame.setdefault(int(t), []).append((cam, img))
    for t, pairs in by_frame.items():
        frame_tree = eval_at_frame(fpo, t)
        for cam, img in pairs:
            rendered = render(frame_tree, cam, background=background).astype(float)
            total += float(np.sum((rendered - img) ** 2))
    return total


@dataclass
class RayBatch:
    """Rays with per-ray frame indices and target colors."""

    origins: np.ndarray
    dirs: np.ndarray
    frames: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]


def _grouped_exclusive_sum(values: np.ndarray, group_first: np.ndarray) -> np.ndarray:
    """Per-group exclusive prefix sums for contiguous groups."""
    cs = np.cumsum(values)
    excl = cs - values
    starts = np.flatnonzero(group_first)
    sizes = np.diff(np.r_[starts, len(values)])
    base = np.repeat(excl[starts], sizes)
    return excl - base


def forward_rays(
    fpo: FourierOctree,
    batch: RayBatch,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
    want_grad: bool = False,
):
    """Composite a ray batch straight from Fourier coefficients.

    Returns (colors [M, 3], grad_pack or None); grad_pack carries everything
    the backward pass needs. The same code path serves loss evaluation and
    gradient computation so finite differences check the exact function the
    gradient differentiates. Rays terminate during traversal once their
    transmittance drops below early_stop_T, exactly like the renderer.
    """
    from .render import _traverse_batch

    cfg = fpo.config
    m = len(batch)
    bg = np.asarray(background, dtype=float)
    rows1 = idft_matrix(cfg.n1, cfg.T)[batch.frames - 1]
    rows2 = idft_matrix(cfg.n2, cfg.T)[batch.frames - 1]
    trans = np.ones(m)
    segs: list[tuple] = []

    def visit(ridx, leaf, t0, t1):
        w1 = rows1[ridx]
        sigma_raw = np.einsum("sn,sn->s", fpo.k_sigma[leaf], w1)
        alpha = -np.expm1(-np.maximum(sigma_raw, 0.0) * (t1 - t0))
        t_entry = trans[ridx]
        segs.append((ridx.copy(), leaf.copy(), (t1 - t0).copy(), sigma_raw,
                     alpha, t_entry.copy()))
        trans[ridx] = t_entry * (1.0 - alpha)
        return trans[ridx] >= early_stop_T

    _traverse_batch(fpo.topo, batch.origins, batch.dirs, 0.0, np.inf, visit)

    if segs:
        ridx = np.concatenate([s[0] for s in segs])
        order = np.argsort(ridx, kind="stable")
        ridx = ridx[order]
        leaf = np.concatenate([s[1] for s in segs])[order]
        delta = np.concatenate([s[2] for s in segs])[order]
        sigma_raw = np.concatenate([s[3] for s in segs])[order]
        alpha = np.concatenate([s[4] for s in segs])[order]
        t_entry = np.concatenate([s[5] for s in segs])[order]
    else:
        ridx = leaf = np.zeros(0, dtype=np.int64)
        delta = sigma_raw = alpha = t_entry = np.zeros(0)

    w1 = rows1[ridx]
    w2 = rows2[ridx]
    basis = eval_sh_basis(cfg.lmax, batch.dirs)
    y_seg = basis[ridx]
    z_seg = np.einsum("snbc,sn->sbc", fpo.k_z[leaf], w2)
    s_val = np.einsum("sbc,sb->sc", z_seg, y_seg)
    rgb = sigmoid(s_val)
    weight = t_entry * alpha

    colors = np.zeros((m, 3))
    for ch in range(3):
        colors[:, ch] = np.bincount(ridx, weights=weight * rgb[:, ch], minlength=m)
    colors += trans[:, None] * bg

    if not want_grad:
        return colors, None
    pack = dict(
        ridx=ridx, leaf=leaf, delta=delta, w1=w1, w2=w2, sigma_raw=sigma_raw,
        alpha=alpha, t_entry=t_entry, y_seg=y_seg, rgb=rgb, weight=weight,
        colors=colors, bg=bg,
    )
    return colors, pack


def grad(
    fpo: FourierOctree,
    batch: RayBatch,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
):
    """Analytic gradient of the summed squared error over a ray batch.

    Returns (loss, d_loss/d_k_sigma, d_loss/d_k_z); untouched leaves get zero
    gradient, and gradients accumulate additively over rays.
    """
    cfg = fpo.config
    n_leaves = fpo.n_leaves
    basis_count = n_sh_coeffs(cfg.lmax)
    colors, pack = forward_rays(fpo, batch, background, early_stop_T, want_grad=True)
    err = colors - batch.targets
    loss_value = float(np.sum(err * err))
    g_sigma = np.zeros((n_leaves, cfg.n1))
    g_z = np.zeros((n_leaves, cfg.n2, basis_count, 3))
    if pack["ridx"].size == 0:
        return loss_value, g_sigma, g_z

    ridx = pack["ridx"]
    e_seg = 2.0 * err[ridx]
    first = np.r_[True, ridx[1:] != ridx[:-1]]
    wc = pack["weight"][:, None] * pack["rgb"]
    prefix_incl = np.empty_like(wc)
    for ch in range(3):
        prefix_incl[:, ch] = _grouped_exclusive_sum(wc[:, ch], first) + wc[:, ch]
    suffix = colors[ridx] - prefix_incl
    t_next = pack["t_entry"] * (1.0 - pack["alpha"])
    dc_dsigma = pack["delta"][:, None] * (t_next[:, None] * pack["rgb"] - suffix)
    d_sigma = np.einsum("sc,sc->s", e_seg, dc_dsigma)
    d_sigma *= pack["sigma_raw"] >= 0.0

    leaf = pack["leaf"]
    flat1 = (leaf[:, None] * cfg.n1 + np.arange(cfg.n1)).ravel()
    g_sigma = np.bincount(
        flat1, weights=(d_sigma[:, None] * pack["w1"]).ravel(),
        minlength=n_leaves * cfg.n1,
    ).reshape(n_leaves, cfg.n1)

    dc = e_seg * pack["weight"][:, None]
    ds = dc * pack["rgb"] * (1.0 - pack["rgb"])
    dz = pack["y_seg"][:, :, None] * ds[:, None, :]
    dkz = pack["w2"][:, :, None, None] * dz[:, None, :, :]
    block = cfg.n2 * basis_count * 3
    flat2 = (leaf[:, None] * block + np.arange(block)).ravel()
    g_z = np.bincount(
        flat2, weights=dkz.reshape(len(leaf), block).ravel(),
        minlength=n_leaves * block,
    ).reshape(n_leaves, cfg.n2, basis_count, 3)
    return loss_value, g_sigma, g_z


class _PixelSource:
    """Flattened (camera, frame, image) table with cached per-camera rays."""

    def __init__(self, dataset_items):
        self.items = []
        self._ray_cache: dict[int, tuple] = {}
        for cam, t, img in dataset_items:
            img = np.asarray(img, dtype=float)
            if img.shape != (cam.height, cam.width, 3):
                raise ValueError("image dimensions do not match the camera")
            self.items.append((cam, int(t), img.reshape(-1, 3)))
        if not self.items:
            raise ValueError("dataset is empty")
        self.sizes = np.array([it[2].shape[0] for it in self.items])

    def rays_of(self, cam: Camera):
        key = id(cam)
        if key not in self._ray_cache:
            self._ray_cache[key] = camera_rays(cam)
        return self._ray_cache[key]

    def sample(self, rng: np.random.Generator, count: int) -> RayBatch:
        pick = rng.integers(0, len(self.items), count)
        pix = rng.integers(0, self.sizes[pick])
        origins = np.empty((count, 3))
        dirs = np.empty((count, 3))
        frames = np.empty(count, dtype=np.int64)
        targets = np.empty((count, 3))
        for item_idx in np.unique(pick):
            sel = pick == item_idx
            cam, t, img = self.items[item_idx]
            o, d = self.rays_of(cam)
            origins[sel] = o[pix[sel]]
            dirs[sel] = d[pix[sel]]
            frames[sel] = t
            targets[sel] = img[pix[sel]]
        return RayBatch(origins, dirs, frames, targets)


def finetune(
    fpo: FourierOctree,
    dataset_items,
    cfg: FinetuneConfig,
    background=(0.0, 0.0, 0.0),
    early_stop_T: float = DEFAULT_EARLY_STOP,
):
    """Refine coefficients with seeded random ray batches; topology is frozen.

    Returns (tuned tree, per-step batch loss array). Aborts with NumericError
    if the loss turns non-finite.
    """
    source = _PixelSource(dataset_items)
    rng = np.random.default_rng(cfg.seed)
    if not (np.isfinite(fpo.k_sigma).all() and np.isfinite(fpo.k_z).all()):
        raise NumericError("non-finite coefficients; refusing to optimize")
    k_sigma = fpo.k_sigma.copy()
    k_z = fpo.k_z.copy()
    working = FourierOctree(fpo.topo, fpo.config, k_sigma, k_z)
    losses = np.zeros(cfg.steps)

    if cfg.optimizer == "adam":
        m_s = np.zeros_like(k_sigma)
        v_s = np.zeros_like(k_sigma)
        m_z = np.zeros_like(k_z)
        v_z = np.zeros_like(k_z)

    for step in range(cfg.steps):
        batch = source.sample(rng, cfg.rays_per_batch)
        loss_value, g_s, g_z = grad(working, batch, background, early_stop_T)
        if not np.isfinite(loss_value):
            raise NumericError(
                f"non-finite loss at step {step}: {loss_value!r}; aborting"
            )
        losses[step] = loss_value
        if cfg.optimizer == "sgd":
            k_sigma -= cfg.step_size * g_s
            k_z -= cfg.step_size * g_z
        else:
            m_s = cfg.beta1 * m_s + (1 - cfg.beta1) * g_s
            v_s = cfg.beta2 * v_s + (1 - cfg.beta2) * g_s * g_s
            m_z = cfg.beta1 * m_z + (1 - cfg.beta1) * g_z
            v_z = cfg.beta2 * v_z + (1 - cfg.beta2) * g_z * g_z
            bias1 = 1 - cfg.beta1 ** (step + 1)
            bias2 = 1 - cfg.beta2 ** (step + 1)
            k_sigma -= cfg.step_size * (m_s / bias1) / (
                np.sqrt(v_s / bias2) + cfg.eps
            )
            k_z -= cfg.step_size * (m_z / bias1) / (np.sqrt(v_z / bias2) + cfg.eps)
    return working, losses
