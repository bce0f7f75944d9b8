"""Command-line pipeline driver.

Exit codes: 0 success, 2 configuration problems, 3 data problems (missing or
corrupt files), 4 numeric failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import fpo_io
from .camera import Camera, make_rig
from .config import RunConfig, apply_overrides, load_config
from .dataset import load_cameras, load_dataset, save_cameras, write_dataset
from .errors import NumericError
from .fpo import (
    FinetuneConfig,
    build_fpo,
    eval_at_frame,
    finetune,
    prune_fpo,
    sigma_reconstruction,
)
from .fourier import idft_matrix
from .image_io import read_png, read_raw, write_png, write_raw
from .metrics import mae, psnr, ssim
from .octree import FourierOctree, union_topology
from .pipeline import build_dynamic_tree
from .render import render, render_dense_march

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _threads_from(args) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    env = os.environ.get("FPOCT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValueError(f"bad FPOCT_THREADS value {env!r}") from exc
    return 1


def _run_config(args) -> RunConfig:
    from dataclasses import replace

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = apply_overrides(cfg, args)
    if not cfg.deterministic:
        cfg = replace(cfg, threads=_threads_from(args))
    return cfg


def _load_fpo(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return fpo_io.load(path)


def _parse_frames(spec: str, T: int) -> list[int]:
    if spec in (None, "", "all"):
        return list(range(1, T + 1))
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        frames = list(range(int(lo), int(hi) + 1))
    else:
        frames = [int(spec)]
    for t in frames:
        if not 1 <= t <= T:
            raise ValueError(f"frame {t} outside 1..{T}")
    return frames


def _eval_static(tree, t: int):
    if isinstance(tree, FourierOctree):
        return eval_at_frame(tree, t)
    if t != 1:
        raise ValueError("static trees only have frame 1")
    return tree


# --- subcommands -----------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    cfg = _run_config(args)
    oracle = cfg.make_oracle()
    rig = cfg.rig(cfg.rig_dataset)
    out = Path(args.out)
    frames = _parse_frames(args.frames_spec, oracle.frames())
    count = write_dataset(oracle, rig, out, frames=frames,
                          background=cfg.background)
    print(f"wrote {count} images over {len(frames)} frames x {len(rig)} views")
    bad = 0
    for t in frames:
        for v, cam in enumerate(rig):
            img = read_raw(out / "frames" / str(t) / f"{v}.raw")
            sil = read_png(out / "silhouettes" / str(t) / f"{v}.png") > 0.5
            fg = np.abs(img - np.asarray(cfg.background, np.float32)).sum(axis=2) > 0.5
            grown = sil.copy()
            grown[1:] |= sil[:-1]
            grown[:-1] |= sil[1:]
            grown[:, 1:] |= sil[:, :-1]
            grown[:, :-1] |= sil[:, 1:]
            bad += int(np.count_nonzero(fg & ~grown))
        print(f"frame {t}: {len(rig)} views")
    print("silhouette consistency: OK" if bad == 0 else
          f"silhouette consistency: {bad} stray pixels")
    return 0


def cmd_build(args) -> int:
    cfg = _run_config(args)
    oracle = cfg.make_oracle()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fpo, frame_trees, timings = build_dynamic_tree(oracle, cfg)
    fpo, removed = prune_fpo(fpo, cfg.prune_threshold)
    model = out / "model.fpo"
    nbytes = fpo_io.save(fpo, model)
    for stage in ("carve", "coarse", "fine", "prune", "union", "transform"):
        print(f"time {stage}: {timings.get(stage, 0.0):.3f}s")
    print(f"dynamic-prune removed {removed} leaves")
    print(f"saved {model} ({nbytes} bytes, {fpo.n_leaves} leaves, "
          f"{fpo_io.bytes_per_leaf(fpo)} bytes/leaf)")
    if args.dataset:
        ds = load_dataset(args.dataset)
        rows = ["frame,view,psnr_db"]
        for t in ds.frames:
            tree = eval_at_frame(fpo, t)
            for v, cam in enumerate(ds.cameras):
                img = render(tree, cam, background=cfg.background,
                             threads=cfg.threads)
                rows.append(f"{t},{v},{psnr(img, ds.images[(t, v)]):.4f}")
        report = out / "report.csv"
        report.write_text("\n".join(rows) + "\n")
        print(f"wrote {report}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _run_config(args)
    tree = _load_fpo(args.fpo)
    if not isinstance(tree, FourierOctree):
        raise fpo_io.FpoFileError("fine-tuning needs a fourier tree")
    ds = load_dataset(args.dataset)
    holdout = max(0, args.holdout_every)
    train, held = [], []
    for (t, v), img in sorted(ds.images.items()):
        item = (ds.cameras[v], t, img)
        if holdout and v % holdout == 0:
            held.append(item)
        else:
            train.append(item)
    if not train:
        raise ValueError("holdout split leaves no training views")
    ft = FinetuneConfig(
        steps=args.steps if args.steps is not None else cfg.finetune_steps,
        step_size=args.lr if args.lr is not None else cfg.finetune_step_size,
        rays_per_batch=args.batch if args.batch is not None else cfg.finetune_rays,
        optimizer=args.optimizer or cfg.finetune_optimizer,
        seed=cfg.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def metric_rows(model, items, tag):
        rows = []
        by_frame = {}
        for cam, t, img in items:
            by_frame.setdefault(t, []).append((cam, img))
        for t, pairs in sorted(by_frame.items()):
            rendered_tree = eval_at_frame(model, t)
            for cam, img in pairs:
                got = render(rendered_tree, cam, background=cfg.background,
                             threads=cfg.threads)
                rows.append((tag, t, psnr(got, img), ssim(got, img),
                             mae(got, img)))
        return rows

    before_rows = metric_rows(tree, train, "train-before")
    before_held = metric_rows(tree, held, "holdout-before") if held else []
    tic = time.perf_counter()
    tuned, losses = finetune(tree, train, ft, background=cfg.background)
    wall = time.perf_counter() - tic
    after_rows = metric_rows(tuned, train, "train-after")
    after_held = metric_rows(tuned, held, "holdout-after") if held else []

    model = out / "tuned.fpo"
    fpo_io.save(tuned, model)
    loss_csv = out / "loss.csv"
    with open(loss_csv, "w") as f:
        f.write("step,loss,psnr_estimate\n")
        for i, l in enumerate(losses):
            mse = l / (ft.rays_per_batch * 3)
            est = 99.0 if mse < 1e-10 else 10.0 * np.log10(1.0 / mse)
            f.write(f"{i},{l:.8g},{est:.4f}\n")
    table = out / "metrics.csv"
    with open(table, "w") as f:
        f.write("split,frame,psnr_db,ssim,mae\n")
        for tag, t, p, s, m in (before_rows + before_held + after_rows + after_held):
            f.write(f"{tag},{t},{p:.4f},{s:.6f},{m:.6f}\n")

    def mean_psnr(rows):
        return float(np.mean([r[2] for r in rows])) if rows else float("nan")

    print(f"fine-tuned {ft.steps} steps in {wall:.1f}s")
    print(f"train PSNR: {mean_psnr(before_rows):.2f} -> {mean_psnr(after_rows):.2f} dB")
    if held:
        print(f"holdout PSNR: {mean_psnr(before_held):.2f} -> "
              f"{mean_psnr(after_held):.2f} dB")
    print(f"saved {model}, {loss_csv}, {table}")
    return 0


def _render_cameras(args, cfg) -> list[Camera]:
    if args.cameras:
        cams = load_cameras(args.cameras)
        if args.view is not None:
            cams = [cams[args.view]]
        return cams
    rig = make_rig(args.orbit, args.orbit_radius, center=cfg.scene.center,
                   pattern="ring", width=cfg.width, height=cfg.height)
    return list(rig)


def cmd_render(args) -> int:
    cfg = _run_config(args)
    tree = _load_fpo(args.fpo)
    T = tree.config.T if isinstance(tree, FourierOctree) else 1
    frames = _parse_frames(args.frames_spec, T)
    cams = _render_cameras(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for t in frames:
        static = _eval_static(tree, t)
        for v, cam in enumerate(cams):
            img = render(static, cam, background=cfg.background,
                         threads=cfg.threads)
            write_png(out / f"frame{t:04d}_view{v:03d}.png", img)
            write_raw(out / f"frame{t:04d}_view{v:03d}.raw", img)
            n += 1
    print(f"rendered {n} images to {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    tree = _load_fpo(args.fpo)
    static = _eval_static(tree, args.frame) if isinstance(tree, FourierOctree) \
        else tree
    cam = make_rig(1, args.orbit_radius, center=cfg.scene.center,
                   pattern="ring", width=args.resolution,
                   height=args.resolution).cameras[0]
    rays = args.resolution * args.resolution
    cell = static.bbox.side / (1 << static.topo.max_depth)
    reference = render(static, cam, background=cfg.background)
    step = cell / 2.0
    while psnr(render_dense_march(static, cam, step, background=cfg.background),
               reference) < args.match_db and step > cell / 64.0:
        step /= 2.0

    records = []
    for mode in ("octree", "dense-march"):
        times = []
        for trial in range(args.trials):
            tic = time.perf_counter()
            if mode == "octree":
                render(static, cam, background=cfg.background)
            else:
                render_dense_march(static, cam, step, background=cfg.background)
            dt = time.perf_counter() - tic
            times.append(dt)
            records.append({"mode": mode, "trial": trial, "seconds": dt,
                            "rays_per_s": rays / dt, "frames_per_s": 1.0 / dt,
                            "resolution": args.resolution})
        med = float(np.median(times))
        records.append({"mode": mode, "summary": True,
                        "median_seconds": med, "rays_per_s": rays / med,
                        "frames_per_s": 1.0 / med,
                        "dispersion": float(np.std(times)),
                        "resolution": args.resolution})
    oct_med = next(r for r in records if r.get("summary") and r["mode"] == "octree")
    den_med = next(r for r in records
                   if r.get("summary") and r["mode"] == "dense-march")
    records.append({"summary": True, "mode": "comparison",
                    "speedup": den_med["median_seconds"] / oct_med["median_seconds"],
                    "dense_step": step,
                    "match_db": args.match_db})
    text = "\n".join(json.dumps(r) for r in records)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    oracle = cfg.make_oracle()
    sweep = [int(v) for v in args.sweep.split(",")]
    fpo_base, frame_trees, _ = build_dynamic_tree(oracle, cfg, log=lambda *_: None)
    topo = fpo_base.topo
    from .octree import broadcast

    series = np.stack([broadcast(tr, topo).sigma for tr in frame_trees], axis=1)
    eval_rig = cfg.rig(cfg.rig_dataset)
    eval_frames = list(range(1, oracle.frames() + 1,
                             max(1, oracle.frames() // 4)))
    rows = ["n1,series_mse,psnr_db,file_bytes,bytes_per_leaf"]
    import tempfile
    from dataclasses import replace

    for n1 in sweep:
        sub = replace(cfg, n1=n1)
        model = build_fpo(frame_trees, sub.fpo_config(),
                          paper_dft=cfg.paper_dft, topology=topo)
        mse = float(np.mean((sigma_reconstruction(model) - series) ** 2))
        vals = []
        for t in eval_frames:
            tree = eval_at_frame(model, t)
            for cam in list(eval_rig)[:3]:
                vals.append(psnr(render(tree, cam, background=cfg.background,
                                        threads=cfg.threads),
                                 oracle.ground_truth(cam, t,
                                                     background=cfg.background)))
        with tempfile.NamedTemporaryFile(suffix=".fpo") as tmp:
            nbytes = fpo_io.save(model, tmp.name)
        rows.append(f"{n1},{mse:.8g},{float(np.mean(vals)):.4f},{nbytes},"
                    f"{fpo_io.bytes_per_leaf(model)}")
    text = "\n".join(rows)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _read_image(path: Path):
    if path.suffix == ".raw":
        return read_raw(path)
    return read_png(path)


def cmd_metrics(args) -> int:
    a = Path(args.a)
    b = Path(args.b)
    pairs = []
    if a.is_dir() != b.is_dir():
        raise ValueError("metrics needs two files or two directories")
    if a.is_dir():
        for pa in sorted(a.rglob("*.raw")) + sorted(a.rglob("*.png")):
            rel = pa.relative_to(a)
            pb = b / rel
            if pb.exists():
                pairs.append((pa, pb))
        if not pairs:
            raise FileNotFoundError("no matching image pairs")
    else:
        pairs = [(a, b)]
    print("a,b,psnr_db,ssim,mae")
    scores = []
    for pa, pb in pairs:
        ia, ib = _read_image(pa), _read_image(pb)
        row = (psnr(ia, ib), ssim(ia, ib), mae(ia, ib))
        scores.append(row)
        print(f"{pa},{pb},{row[0]:.4f},{row[1]:.6f},{row[2]:.6f}")
    if len(pairs) > 1:
        m = np.mean(np.array(scores), axis=0)
        print(f"mean,,{m[0]:.4f},{m[1]:.6f},{m[2]:.6f}")
    return 0


def cmd_export(args) -> int:
    cfg = _run_config(args)
    tree = _load_fpo(args.fpo)
    T = tree.config.T if isinstance(tree, FourierOctree) else 1
    t = args.frame
    if not 1 <= t <= T:
        raise ValueError(f"frame {t} outside 1..{T}")
    cams = _render_cameras(args, cfg)
    cam = cams[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.fpo").write_bytes(Path(args.fpo).read_bytes())
    save_cameras(out / "camera.txt", [cam])
    static = _eval_static(tree, t)
    img = render(static, cam, background=cfg.background, threads=cfg.threads)
    write_png(out / "reference.png", img)
    write_raw(out / "reference.raw", img)
    payload = np.concatenate(
        [static.sigma[:, None], static.sh.reshape(static.n_leaves, -1)], axis=1
    ).astype("<f4")
    header = np.array([static.n_leaves, payload.shape[1]], dtype="<u4")
    (out / f"payload_frame{t}.raw").write_bytes(
        header.tobytes() + payload.tobytes()
    )
    manifest = {
        "fpo": "model.fpo",
        "camera": "camera.txt",
        "frame": t,
        "width": cam.width,
        "height": cam.height,
        "background": list(cfg.background),
        "reference_png": "reference.png",
        "reference_raw": "reference.raw",
        "payload_dump": f"payload_frame{t}.raw",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"exported fixture to {out}")
    return 0


def cmd_info(args) -> int:
    tree = _load_fpo(args.fpo)
    topo = tree.topo
    nbytes = Path(args.fpo).stat().st_size
    kind = "fourier" if isinstance(tree, FourierOctree) else "static"
    print(f"kind: {kind}")
    print(f"bbox: min {topo.bbox.bmin.tolist()} max {topo.bbox.bmax.tolist()}")
    print(f"grid: {1 << topo.max_depth}  max_depth: {topo.max_depth}")
    if isinstance(tree, FourierOctree):
        c = tree.config
        print(f"lmax: {c.lmax}  T: {c.T}  n1: {c.n1}  n2: {c.n2}")
    else:
        print(f"lmax: {tree.lmax}")
    print(f"nodes: {topo.n_nodes}  leaves: {topo.n_leaves}")
    bpl = fpo_io.bytes_per_leaf(tree)
    print(f"bytes_per_leaf: {bpl} ({bpl // 4} floats)")
    expect = 64 + topo.n_nodes * 32 + topo.n_leaves * bpl
    print(f"file_bytes: {nbytes} (layout expects {expect}: "
          f"{'OK' if nbytes == expect else 'MISMATCH'})")
    return 0


# --- parser ------------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--frames", dest="frames", type=int,
                    help="override the scene frame count")
    sp.add_argument("--n1", type=int)
    sp.add_argument("--n2", type=int)
    sp.add_argument("--lmax", type=int)
    sp.add_argument("--grid", type=int)
    sp.add_argument("--paper-dft", action="store_true",
                    help="use the literal 1/T-normalized forward transform")
    sp.add_argument("--deterministic", action="store_true",
                    help="single-threaded, fixed-seed execution")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int,
                    help="worker threads (FPOCT_THREADS as fallback)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpoctree",
        description="Dynamic PlenOctree pipeline: datasets, fusion builds, "
                    "Fourier compression, fine-tuning, rendering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="render ground-truth image sets")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-range", dest="frames_spec", default="all")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("build", help="build a dynamic tree from the scene")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", help="dataset dir for the PSNR report")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("finetune", help="optimize coefficients against images")
    _add_common(p)
    p.add_argument("--fpo", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--holdout-every", type=int, default=0,
                   help="hold out every Nth view (0 = none)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("render", help="render frames to PNG + raw dumps")
    _add_common(p)
    p.add_argument("--fpo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-range", dest="frames_spec", default="all")
    p.add_argument("--cameras", help="cameras.txt to render from")
    p.add_argument("--view", type=int, help="render only this view index from --cameras")
    p.add_argument("--orbit", type=int, default=12,
                   help="ring camera count when no --cameras given")
    p.add_argument("--orbit-radius", type=float, default=2.9)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="octree vs dense-march throughput")
    _add_common(p)
    p.add_argument("--fpo", required=True)
    p.add_argument("--out")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--orbit-radius", type=float, default=2.9)
    p.add_argument("--match-db", type=float, default=50.0,
                   help="dense-march must match the exact render this closely")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="sweep the density coefficient count")
    _add_common(p)
    p.add_argument("--sweep", default="5,11,21,31")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="compare images or image directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export", help="write a viewer parity fixture")
    _add_common(p)
    p.add_argument("--fpo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--cameras")
    p.add_argument("--view", type=int)
    p.add_argument("--orbit", type=int, default=1)
    p.add_argument("--orbit-radius", type=float, default=2.9)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("info", help="print header and storage accounting")
    p.add_argument("--fpo", required=True)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fpo_io.FpoFileError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, IndexError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
