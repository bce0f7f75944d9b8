"""Analytic dynamic scenes: view-dependent point queries, exact silhouettes,
and ground-truth images from a dense fixed-step march through the field.

These stand in for a generalizable scene network: everything downstream
(carving, fusion, Fourier compression, fine-tuning) only sees this interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .camera import Camera, camera_rays
from .octree import Aabb, Octree, from_occupancy
from .render import DEFAULT_EARLY_STOP

GT_STEP_FRACTION = 1e-3  # march step as a fraction of the box side


class DynamicOracle(Protocol):
    """Per-frame scene contract; query is deterministic and zero outside bbox."""

    def query(self, points: np.ndarray, dirs: np.ndarray, t: int): ...

    def silhouette(self, cam: Camera, t: int) -> np.ndarray: ...

    def ground_truth(self, cam: Camera, t: int, background=(0, 0, 0)) -> np.ndarray: ...

    def bbox(self) -> Aabb: ...

    def frames(self) -> int: ...


class _AnalyticScene:
    """Shared silhouette/ground-truth machinery over support spheres."""

    _bbox: Aabb
    T: int

    def bbox(self) -> Aabb:
        return self._bbox

    def frames(self) -> int:
        return self.T

    def query_one(self, p, d, t: int):
        sigma, rgb = self.query(np.asarray(p, dtype=float)[None],
                                np.asarray(d, dtype=float)[None], t)
        return float(sigma[0]), rgb[0]

    def support_spheres(self, t: int):
        raise NotImplementedError

    def _check_frame(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"frame {t} outside 1..{self.T}")

    def _support_intervals(self, origins, dirs, t: int):
        """Per-ray (t_in, t_out) covering every support sphere hit; t_in=inf misses."""
        centers, radii = self.support_spheres(t)
        t_in = np.full(origins.shape[0], np.inf)
        t_out = np.full(origins.shape[0], -np.inf)
        for c, r in zip(centers, radii):
            oc = c - origins
            b = np.einsum("md,md->m", dirs, oc)
            disc = b * b - (np.einsum("md,md->m", oc, oc) - r * r)
            hit = disc >= 0.0
            root = np.sqrt(np.maximum(disc, 0.0))
            near = b - root
            far = b + root
            hit &= far > 0.0
            t_in[hit] = np.minimum(t_in[hit], np.maximum(near[hit], 0.0))
            t_out[hit] = np.maximum(t_out[hit], far[hit])
        return t_in, t_out

    def silhouette(self, cam: Camera, t: int) -> np.ndarray:
        """Pixels whose rays meet the nonzero-density support, exactly."""
        self._check_frame(t)
        origins, dirs = camera_rays(cam)
        t_in, t_out = self._support_intervals(origins, dirs, t)
        return (t_in < t_out).reshape(cam.height, cam.width)

    def ground_truth(self, cam: Camera, t: int, background=(0.0, 0.0, 0.0),
                     early_stop_T: float = DEFAULT_EARLY_STOP) -> np.ndarray:
        """Emission-absorption march at step GT_STEP_FRACTION * bbox side."""
        self._check_frame(t)
        origins, dirs = camera_rays(cam)
        step = GT_STEP_FRACTION * self._bbox.side
        t_in, t_out = self._support_intervals(origins, dirs, t)
        color = np.zeros((origins.shape[0], 3))
        trans = np.ones(origins.shape[0])
        idx = np.flatnonzero(t_in < t_out)
        tcur = t_in.copy()
        while idx.size:
            delta = np.minimum(step, t_out[idx] - tcur[idx])
            p = origins[idx] + (tcur[idx] + 0.5 * delta)[:, None] * dirs[idx]
            sigma, rgb = self.query(p, dirs[idx], t)
            alpha = -np.expm1(-sigma * delta)
            color[idx] += (trans[idx] * alpha)[:, None] * rgb
            trans[idx] *= 1.0 - alpha
            tcur[idx] += step
            idx = idx[(tcur[idx] < t_out[idx]) & (trans[idx] >= early_stop_T)]
        color += trans[:, None] * np.asarray(background, dtype=float)
        return color.reshape(cam.height, cam.width, 3).astype(np.float32)


class PulsatingSphere(_AnalyticScene):
    """Uniform-density ball whose radius oscillates over the frame range.

    Color is a position-keyed base plus an optional view-dependent lobe
    w * max(0, d . n)^k on the outward normal; all channels stay in [0, 1].
    """

    def __init__(
        self,
        center=(0.0, 0.0, 0.0),
        r0: float = 0.6,
        amplitude: float = 0.15,
        sigma_max: float = 30.0,
        T: int = 20,
        period: float | None = None,
        base_color=(0.45, 0.5, 0.55),
        color_gain=(0.2, 0.15, 0.1),
        lobe_weight: float = 0.2,
        lobe_power: float = 4.0,
        bbox_scale: float = 1.4,
    ):
        if not r0 > amplitude >= 0:
            raise ValueError("need r0 > amplitude >= 0")
        if T < 1:
            raise ValueError("need T >= 1")
        self.center = np.asarray(center, dtype=float)
        self.r0 = float(r0)
        self.amplitude = float(amplitude)
        self.sigma_max = float(sigma_max)
        self.T = int(T)
        self.period = float(period) if period else float(T)
        self.base_color = np.asarray(base_color, dtype=float)
        self.color_gain = np.asarray(color_gain, dtype=float)
        self.lobe_weight = float(lobe_weight)
        self.lobe_power = float(lobe_power)
        self._bbox = Aabb.cube(self.center, 2.0 * (r0 + amplitude) * bbox_scale)

    def radius(self, t: int) -> float:
        return self.r0 + self.amplitude * math.sin(2.0 * math.pi * t / self.period)

    def support_spheres(self, t: int):
        return self.center[None, :], np.array([self.radius(t)])

    def query(self, points: np.ndarray, dirs: np.ndarray, t: int):
        self._check_frame(t)
        rel = np.atleast_2d(points) - self.center
        r = np.linalg.norm(rel, axis=1)
        inside = r < self.radius(t)
        sigma = np.where(inside, self.sigma_max, 0.0)
        n = rel / np.maximum(r, 1e-12)[:, None]
        rgb = self.base_color + self.color_gain * n
        if self.lobe_weight != 0.0:
            cos = np.maximum(0.0, np.einsum("md,md->m", np.atleast_2d(dirs), n))
            rgb = rgb + self.lobe_weight * (cos ** self.lobe_power)[:, None]
        return sigma, np.clip(rgb, 0.0, 1.0)


@dataclass(frozen=True)
class BlobSpec:
    """One Gaussian-falloff blob on a circular orbit in the z=z_offset plane."""

    orbit_radius: float
    phase: float
    z_offset: float
    scale: float  # Gaussian falloff scale s; support is cut at 3s
    sigma_max: float
    color: tuple


_PALETTE = ((0.85, 0.3, 0.25), (0.25, 0.75, 0.35), (0.3, 0.4, 0.85),
            (0.8, 0.7, 0.2), (0.7, 0.3, 0.7))


def default_blobs(count: int, orbit_radius: float = 0.45, scale: float = 0.16,
                  sigma_max: float = 24.0) -> list[BlobSpec]:
    """Procedural blob set with distinct orbits and palette colors."""
    blobs = []
    for j in range(count):
        blobs.append(
            BlobSpec(
                orbit_radius=orbit_radius * (1.0 + 0.2 * (j % 3 - 1)),
                phase=2.0 * math.pi * j / count,
                z_offset=0.18 * orbit_radius * ((j % 2) * 2 - 1) if count > 2 else 0.0,
                scale=scale,
                sigma_max=sigma_max,
                color=_PALETTE[j % len(_PALETTE)],
            )
        )
    return blobs


class OrbitingBlobs(_AnalyticScene):
    """Gaussian density blobs orbiting a common center; per-blob constant colors."""

    CUTOFF = 3.0  # support radius in units of the Gaussian scale

    def __init__(self, blobs: list[BlobSpec], T: int = 20,
                 period: float | None = None, center=(0.0, 0.0, 0.0),
                 bbox_scale: float = 1.25):
        if len(blobs) < 2:
            raise ValueError("need at least two blobs")
        if len({(b.orbit_radius, b.phase, b.z_offset) for b in blobs}) < len(blobs):
            raise ValueError("blob orbits must be distinct")
        self.blobs = list(blobs)
        self.T = int(T)
        self.period = float(period) if period else float(T)
        self.center = np.asarray(center, dtype=float)
        reach = max(
            math.hypot(b.orbit_radius, b.z_offset) + self.CUTOFF * b.scale
            for b in blobs
        )
        self._bbox = Aabb.cube(self.center, 2.0 * reach * bbox_scale)
        self._colors = np.array([b.color for b in blobs], dtype=float)

    def blob_centers(self, t: int) -> np.ndarray:
        ang = 2.0 * math.pi * t / self.period
        return np.array(
            [
                self.center
                + [
                    b.orbit_radius * math.cos(ang + b.phase),
                    b.orbit_radius * math.sin(ang + b.phase),
                    b.z_offset,
                ]
                for b in self.blobs
            ]
        )

    def support_spheres(self, t: int):
        centers = self.blob_centers(t)
        radii = np.array([self.CUTOFF * b.scale for b in self.blobs])
        return centers, radii

    def query(self, points: np.ndarray, dirs: np.ndarray, t: int):
        self._check_frame(t)
        pts = np.atleast_2d(points)
        centers = self.blob_centers(t)
        parts = np.zeros((pts.shape[0], len(self.blobs)))
        for j, b in enumerate(self.blobs):
            d2 = np.sum((pts - centers[j]) ** 2, axis=1)
            cut = (self.CUTOFF * b.scale) ** 2
            parts[:, j] = np.where(
                d2 < cut, b.sigma_max * np.exp(-0.5 * d2 / (b.scale ** 2)), 0.0
            )
        sigma = parts.sum(axis=1)
        safe = np.maximum(sigma, 1e-300)
        rgb = (parts @ self._colors) / safe[:, None]
        rgb[sigma == 0.0] = 0.5
        return sigma, rgb


def bake_frame_tree(oracle, t: int, grid_n: int, lmax: int,
                    dirs_per_leaf: int = 64) -> Octree:
    """Dense reference build: occupy voxels with interior density, then fill each
    leaf with a direction-averaged density and an SH fit of sampled colors."""
    from .fusion import fill_leaf_payloads

    box = oracle.bbox()
    cell = box.side / grid_n
    axis = np.arange(grid_n) + 0.5
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    centers = box.bmin + np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) * cell
    probe_dir = np.tile(np.array([[0.0, 0.0, 1.0]]), (centers.shape[0], 1))
    sigma, _ = oracle.query(centers, probe_dir, t)
    occupied = (sigma > 0.0).reshape(grid_n, grid_n, grid_n)
    tree = from_occupancy(box, grid_n, occupied, lmax)
    return fill_leaf_payloads(tree, oracle, t, dirs_per_leaf)
