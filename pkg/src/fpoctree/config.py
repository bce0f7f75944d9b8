"""Plain-text run configuration: key = value sections, INI syntax.

Sections and defaults (all optional; unknown keys rejected):

    [scene]      kind = pulsating-sphere | orbiting-blobs, center, radius,
                 amplitude, sigma, frames, count, blob-scale, lobe-weight,
                 lobe-power, base-color, color-gain
    [images]     width, height, background
    [rig.coarse] count, radius, pattern        (defaults 6, uniform-sphere)
    [rig.fine]   count, radius, pattern        (defaults 100, uniform-sphere)
    [rig.dataset] count, radius, pattern       (defaults 10, uniform-sphere)
    [fpo]        n1, n2, lmax, grid
    [finetune]   steps, step-size, rays-per-batch, optimizer, seed
    [thresholds] prune, query
    [run]        coarse-dirs, seed, deterministic, paper-dft

Command-line flags override file values, which override defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraRig, make_rig
from .fpo import FinetuneConfig
from .octree import FPOConfig
from .scenes import OrbitingBlobs, PulsatingSphere, default_blobs


@dataclass(frozen=True)
class RigSpec:
    count: int
    radius: float
    pattern: str = "uniform-sphere"


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "pulsating-sphere"
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    amplitude: float = 0.12
    sigma: float = 30.0
    frames: int = 20
    count: int = 3
    blob_scale: float = 0.16
    lobe_weight: float = 0.2
    lobe_power: float = 4.0
    base_color: tuple = (0.45, 0.5, 0.55)
    color_gain: tuple = (0.2, 0.15, 0.1)


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    width: int = 128
    height: int = 128
    background: tuple = (0.0, 0.0, 0.0)
    rig_coarse: RigSpec = field(default_factory=lambda: RigSpec(6, 2.6))
    rig_fine: RigSpec = field(default_factory=lambda: RigSpec(100, 2.6))
    rig_dataset: RigSpec = field(default_factory=lambda: RigSpec(10, 2.9))
    n1: int = 31
    n2: int = 5
    lmax: int = 2
    grid: int = 64
    finetune_steps: int = 2000
    finetune_step_size: float = 1e-2
    finetune_rays: int = 512
    finetune_optimizer: str = "adam"
    prune_threshold: float = 1e-3
    query_threshold: float = 1e-3
    coarse_dirs: int = 64
    seed: int = 0
    deterministic: bool = False
    paper_dft: bool = False
    threads: int = 1

    def fpo_config(self) -> FPOConfig:
        return FPOConfig(
            T=self.scene.frames, n1=self.n1, n2=self.n2,
            lmax=self.lmax, grid_n=self.grid,
        )

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            steps=self.finetune_steps,
            step_size=self.finetune_step_size,
            rays_per_batch=self.finetune_rays,
            optimizer=self.finetune_optimizer,
            seed=self.seed,
        )

    def make_oracle(self):
        s = self.scene
        if s.kind == "pulsating-sphere":
            return PulsatingSphere(
                center=s.center, r0=s.radius, amplitude=s.amplitude,
                sigma_max=s.sigma, T=s.frames, base_color=s.base_color,
                color_gain=s.color_gain, lobe_weight=s.lobe_weight,
                lobe_power=s.lobe_power,
            )
        if s.kind == "orbiting-blobs":
            blobs = default_blobs(s.count, orbit_radius=s.radius,
                                  scale=s.blob_scale, sigma_max=s.sigma)
            return OrbitingBlobs(blobs, T=s.frames, center=s.center)
        raise ValueError(f"unknown scene kind {s.kind!r}")

    def rig(self, spec: RigSpec) -> CameraRig:
        return make_rig(
            spec.count, spec.radius, center=self.scene.center,
            pattern=spec.pattern, width=self.width, height=self.height,
        )


def _vector(text: str, n: int) -> tuple:
    parts = [float(v) for v in text.split()]
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return tuple(parts)


_SCENE_KEYS = {
    "kind", "center", "radius", "amplitude", "sigma", "frames", "count",
    "blob-scale", "lobe-weight", "lobe-power", "base-color", "color-gain",
}


def _parse_scene(sec) -> SceneSpec:
    unknown = set(sec) - _SCENE_KEYS
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")
    base = SceneSpec()
    return SceneSpec(
        kind=sec.get("kind", base.kind),
        center=_vector(sec.get("center", "0 0 0"), 3),
        radius=sec.getfloat("radius", base.radius),
        amplitude=sec.getfloat("amplitude", base.amplitude),
        sigma=sec.getfloat("sigma", base.sigma),
        frames=sec.getint("frames", base.frames),
        count=sec.getint("count", base.count),
        blob_scale=sec.getfloat("blob-scale", base.blob_scale),
        lobe_weight=sec.getfloat("lobe-weight", base.lobe_weight),
        lobe_power=sec.getfloat("lobe-power", base.lobe_power),
        base_color=_vector(sec.get("base-color", "0.45 0.5 0.55"), 3),
        color_gain=_vector(sec.get("color-gain", "0.2 0.15 0.1"), 3),
    )


def _parse_rig(sec, default: RigSpec) -> RigSpec:
    return RigSpec(
        count=sec.getint("count", default.count),
        radius=sec.getfloat("radius", default.radius),
        pattern=sec.get("pattern", default.pattern),
    )


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)
    base = RunConfig()
    kwargs = {}
    if parser.has_section("scene"):
        kwargs["scene"] = _parse_scene(parser["scene"])
    if parser.has_section("images"):
        sec = parser["images"]
        kwargs["width"] = sec.getint("width", base.width)
        kwargs["height"] = sec.getint("height", base.height)
        kwargs["background"] = _vector(sec.get("background", "0 0 0"), 3)
    for name, attr, dflt in (
        ("rig.coarse", "rig_coarse", base.rig_coarse),
        ("rig.fine", "rig_fine", base.rig_fine),
        ("rig.dataset", "rig_dataset", base.rig_dataset),
    ):
        if parser.has_section(name):
            kwargs[attr] = _parse_rig(parser[name], dflt)
    if parser.has_section("fpo"):
        sec = parser["fpo"]
        kwargs["n1"] = sec.getint("n1", base.n1)
        kwargs["n2"] = sec.getint("n2", base.n2)
        kwargs["lmax"] = sec.getint("lmax", base.lmax)
        kwargs["grid"] = sec.getint("grid", base.grid)
    if parser.has_section("finetune"):
        sec = parser["finetune"]
        kwargs["finetune_steps"] = sec.getint("steps", base.finetune_steps)
        kwargs["finetune_step_size"] = sec.getfloat(
            "step-size", base.finetune_step_size
        )
        kwargs["finetune_rays"] = sec.getint(
            "rays-per-batch", base.finetune_rays
        )
        kwargs["finetune_optimizer"] = sec.get(
            "optimizer", base.finetune_optimizer
        )
    if parser.has_section("thresholds"):
        sec = parser["thresholds"]
        kwargs["prune_threshold"] = sec.getfloat("prune", base.prune_threshold)
        kwargs["query_threshold"] = sec.getfloat("query", base.query_threshold)
    if parser.has_section("run"):
        sec = parser["run"]
        kwargs["coarse_dirs"] = sec.getint("coarse-dirs", base.coarse_dirs)
        kwargs["seed"] = sec.getint("seed", base.seed)
        kwargs["deterministic"] = sec.getboolean(
            "deterministic", base.deterministic
        )
        kwargs["paper_dft"] = sec.getboolean("paper-dft", base.paper_dft)
    return replace(base, **kwargs)


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Apply parsed CLI flags (highest precedence)."""
    kwargs = {}
    if getattr(args, "frames", None) is not None:
        kwargs["scene"] = replace(cfg.scene, frames=args.frames)
    for flag in ("n1", "n2", "lmax", "seed", "threads"):
        v = getattr(args, flag, None)
        if v is not None:
            kwargs[flag] = v
    if getattr(args, "grid", None) is not None:
        kwargs["grid"] = args.grid
    if getattr(args, "paper_dft", False):
        kwargs["paper_dft"] = True
    if getattr(args, "deterministic", False):
        kwargs["deterministic"] = True
        kwargs["threads"] = 1
    return replace(cfg, **kwargs)
