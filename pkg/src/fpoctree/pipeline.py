"""End-to-end orchestration: per-frame construction, union, transform."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import RunConfig
from .fpo import build_fpo
from .fusion import carve, coarse_fill, fine_pass
from .octree import Octree, from_occupancy, prune, union_topology


def build_frame_tree(oracle, t: int, cfg: RunConfig):
    """carve -> coarse fill -> fine pass -> prune for one frame.

    Returns (pruned tree, stage timing dict, stats dict).
    """
    timings = {}
    tic = time.perf_counter()
    occupancy = carve(
        oracle, cfg.rig(cfg.rig_coarse), t, cfg.grid, dilation_px=1
    )
    timings["carve"] = time.perf_counter() - tic

    tic = time.perf_counter()
    tree = from_occupancy(oracle.bbox(), cfg.grid, occupancy, cfg.lmax)
    tree = coarse_fill(tree, oracle, t, dirs_per_leaf=cfg.coarse_dirs)
    timings["coarse"] = time.perf_counter() - tic

    tic = time.perf_counter()
    tree, per_view = fine_pass(
        tree, oracle, cfg.rig(cfg.rig_fine), t,
        query_T_threshold=cfg.query_threshold, background=cfg.background,
    )
    timings["fine"] = time.perf_counter() - tic

    tic = time.perf_counter()
    tree, removed = prune(tree, cfg.prune_threshold)
    timings["prune"] = time.perf_counter() - tic
    stats = {
        "hull_leaves": int(occupancy.sum()),
        "kept_leaves": tree.n_leaves,
        "pruned_leaves": removed,
        "updates_per_view": per_view,
    }
    return tree, timings, stats


def build_dynamic_tree(oracle, cfg: RunConfig, log=print):
    """Build per-frame trees (parallel over frames), union, transform.

    Returns (fourier tree, frame trees, timing dict).
    """
    frames = list(range(1, oracle.frames() + 1))
    totals = {"carve": 0.0, "coarse": 0.0, "fine": 0.0, "prune": 0.0}
    frame_trees: list[Octree] = [None] * len(frames)

    def build_one(i_t):
        i, t = i_t
        tree, timings, stats = build_frame_tree(oracle, t, cfg)
        return i, tree, timings, stats

    workers = max(1, cfg.threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build_one, enumerate(frames)))
    else:
        results = [build_one(it) for it in enumerate(frames)]
    for i, tree, timings, stats in results:
        frame_trees[i] = tree
        for k, v in timings.items():
            totals[k] += v
        log(
            f"frame {frames[i]}: hull {stats['hull_leaves']} -> "
            f"kept {stats['kept_leaves']} (pruned {stats['pruned_leaves']})"
        )

    tic = time.perf_counter()
    topo = union_topology(frame_trees)
    totals["union"] = time.perf_counter() - tic

    tic = time.perf_counter()
    fpo = build_fpo(
        frame_trees, cfg.fpo_config(), paper_dft=cfg.paper_dft, topology=topo
    )
    totals["transform"] = time.perf_counter() - tic
    return fpo, frame_trees, totals
