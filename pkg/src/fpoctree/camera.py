"""Pinhole cameras and deterministic rig layouts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sh import fibonacci_directions


@dataclass
class Camera:
    """Pinhole camera; pose maps camera coordinates into the world.

    Camera frame: +z optical axis, +x right, +y down (pixel rows grow with y).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.position = np.asarray(self.position, dtype=float)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.rotation.shape != (3, 3) or self.position.shape != (3,):
            raise ValueError("pose must be a 3x3 rotation and 3-vector position")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError("rotation is not orthonormal")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        d = np.asarray(self.dir, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "dir", d)
        if not self.t_near < self.t_far:
            raise ValueError("need t_near < t_far")


def generate_ray(cam: Camera, px: int, py: int) -> Ray:
    """Ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height}")
    d_cam = np.array(
        [(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0]
    )
    d = cam.rotation @ d_cam
    return Ray(cam.position.copy(), d / np.linalg.norm(d))


def camera_rays(cam: Camera):
    """Origins and unit directions for every pixel, row-major; [H*W, 3] each."""
    px, py = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    d_cam = np.stack(
        [
            (px.ravel() + 0.5 - cam.cx) / cam.fx,
            (py.ravel() + 0.5 - cam.cy) / cam.fy,
            np.ones(cam.width * cam.height),
        ],
        axis=-1,
    )
    dirs = d_cam @ cam.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.position, dirs.shape).copy()
    return origins, dirs


def project(cam: Camera, points: np.ndarray):
    """World points to continuous pixel coords; returns (pix [., 2], depth [.]).

    Pixel (px, py)'s center sits at continuous coordinate (px + 0.5, py + 0.5).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    local = (pts - cam.position) @ cam.rotation
    z = local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * local[:, 0] / z + cam.cx
        v = cam.fy * local[:, 1] / z + cam.cy
    return np.stack([u, v], axis=-1), z


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation aiming the +z axis from position at target."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("camera position coincides with target")
    z = forward / norm
    up = np.asarray(up, dtype=float)
    if abs(np.dot(z, up) / np.linalg.norm(up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


@dataclass
class CameraRig:
    """A deterministic set of cameras aimed at one target point."""

    cameras: list[Camera]
    pattern: str
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)


def make_rig(
    count: int,
    radius: float,
    center=(0.0, 0.0, 0.0),
    pattern: str = "uniform-sphere",
    width: int = 128,
    height: int = 128,
    fov_deg: float = 50.0,
) -> CameraRig:
    """Cameras on a Fibonacci sphere or an equatorial ring, all aimed at center."""
    if count < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    if pattern == "uniform-sphere":
        offsets = fibonacci_directions(count) * radius
    elif pattern == "ring":
        angles = 2.0 * math.pi * np.arange(count) / count
        offsets = radius * np.stack(
            [np.cos(angles), np.sin(angles), np.zeros(count)], axis=-1
        )
    else:
        raise ValueError(f"unknown rig pattern {pattern!r}")
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
    cams = []
    for off in offsets:
        pos = center + off
        cams.append(
            Camera(
                width,
                height,
                fx=f,
                fy=f,
                cx=width / 2.0,
                cy=height / 2.0,
                rotation=look_at_rotation(pos, center),
                position=pos,
            )
        )
    return CameraRig(cams, pattern, radius, center)
