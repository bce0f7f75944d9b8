"""Ground-truth dataset directory layout shared by the CLI commands.

    <root>/frames/<t>/<view>.png  (+ .raw float32 dump)
    <root>/silhouettes/<t>/<view>.png
    <root>/cameras.txt            one camera per line:
        width height fx fy cx cy  then the 3x4 [R|t] pose, row-major
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera
from .image_io import read_png, read_raw, write_png, write_raw


def save_cameras(path, cameras) -> None:
    lines = []
    for cam in cameras:
        pose = np.hstack([cam.rotation, cam.position[:, None]])
        nums = [cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy]
        nums += [float(v) for v in pose.reshape(-1)]
        lines.append(" ".join(repr(v) for v in nums))
    Path(path).write_text("\n".join(lines) + "\n")


def load_cameras(path) -> list[Camera]:
    cams = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 18:
            raise ValueError("camera line must hold 18 numbers")
        pose = np.array(vals[6:]).reshape(3, 4)
        cams.append(
            Camera(int(vals[0]), int(vals[1]), vals[2], vals[3], vals[4], vals[5],
                   pose[:, :3], pose[:, 3])
        )
    return cams


@dataclass
class Dataset:
    """In-memory view of a dataset directory."""

    root: Path
    cameras: list[Camera]
    frames: list[int]
    images: dict  # (t, view) -> float32 [H, W, 3]
    silhouettes: dict  # (t, view) -> bool [H, W]

    @property
    def n_views(self) -> int:
        return len(self.cameras)


def write_dataset(oracle, rig, out_dir, frames=None, background=(0, 0, 0)) -> int:
    """Render and store ground truth + silhouettes for every (frame, view).

    Returns the number of images written. Deterministic: identical inputs give
    byte-identical raw dumps.
    """
    root = Path(out_dir)
    frames = list(frames) if frames is not None else list(range(1, oracle.frames() + 1))
    count = 0
    for t in frames:
        fdir = root / "frames" / str(t)
        sdir = root / "silhouettes" / str(t)
        fdir.mkdir(parents=True, exist_ok=True)
        sdir.mkdir(parents=True, exist_ok=True)
        for v, cam in enumerate(rig):
            img = oracle.ground_truth(cam, t, background=background)
            write_png(fdir / f"{v}.png", img)
            write_raw(fdir / f"{v}.raw", img)
            write_png(sdir / f"{v}.png", oracle.silhouette(cam, t))
            count += 1
    save_cameras(root / "cameras.txt", list(rig))
    return count


def load_dataset(root) -> Dataset:
    root = Path(root)
    cam_file = root / "cameras.txt"
    if not cam_file.exists():
        raise FileNotFoundError(f"no cameras.txt under {root}")
    cameras = load_cameras(cam_file)
    frame_dirs = sorted(
        (p for p in (root / "frames").iterdir() if p.is_dir()),
        key=lambda p: int(p.name),
    )
    frames = [int(p.name) for p in frame_dirs]
    images = {}
    silhouettes = {}
    for t, fdir in zip(frames, frame_dirs):
        for v in range(len(cameras)):
            raw = fdir / f"{v}.raw"
            images[(t, v)] = (
                read_raw(raw) if raw.exists() else read_png(fdir / f"{v}.png")
            )
            sil = root / "silhouettes" / str(t) / f"{v}.png"
            if sil.exists():
                silhouettes[(t, v)] = read_png(sil) > 0.5
    return Dataset(root, cameras, frames, images, silhouettes)
