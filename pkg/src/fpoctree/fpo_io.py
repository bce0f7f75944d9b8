"""Canonical .fpo serialization shared by the engine and the viewer.

Little-endian layout:

    header (64 bytes):
        magic "FPOC" | version u32 = 1 | kind u32 (0 static, 1 fourier)
        bbox 6 x f32 (min xyz, max xyz)
        lmax, grid_n, T, n1, n2 u32  (static trees carry n1 = n2 = T = 1)
        node_count, leaf_count u32
    node table: node_count x 8 slots, each u32:
        0xFFFFFFFF empty | high bit set: leaf index in low 31 bits | else node index
    leaf payload block: leaf_count x payload_len f32, where payload_len is
        1 + (lmax+1)^2 * 3 for static trees (sigma, then SH in (lm, channel) order)
        n1 + n2 * (lmax+1)^2 * 3 for fourier trees (sigma coefficients, then
        SH coefficients in (i, lm, channel) order)

Loading validates the header, the exact byte count, and full tree integrity
(in-range references, no cycles or sharing, every leaf referenced once), so a
mutated file yields a structured error rather than a crash.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .octree import (
    Aabb,
    EMPTY,
    FourierOctree,
    FPOConfig,
    Octree,
    TreeTopology,
    decode_leaf,
    validate_topology,
)
from .sh import n_sh_coeffs

MAGIC = b"FPOC"
VERSION = 1
KIND_STATIC = 0
KIND_FOURIER = 1
HEADER_LEN = 64
_HEADER_FMT = "<4sII6fIIIIIII"
_SLOT_EMPTY = 0xFFFFFFFF
_LEAF_BIT = 0x80000000
MAX_GRID = 1 << 20


class FpoFileError(ValueError):
    """Base class for .fpo file problems."""


class CorruptHeaderError(FpoFileError):
    pass


class TruncatedPayloadError(FpoFileError):
    pass


class IntegrityError(FpoFileError):
    pass


def static_payload_len(lmax: int) -> int:
    return 1 + n_sh_coeffs(lmax) * 3


def fourier_payload_len(n1: int, n2: int, lmax: int) -> int:
    return n1 + n2 * n_sh_coeffs(lmax) * 3


def bytes_per_leaf(tree) -> int:
    if isinstance(tree, FourierOctree):
        c = tree.config
        return 4 * fourier_payload_len(c.n1, c.n2, c.lmax)
    return 4 * static_payload_len(tree.lmax)


def _encode_children(children: np.ndarray) -> np.ndarray:
    out = np.empty(children.shape, dtype=np.uint32)
    out[children == EMPTY] = _SLOT_EMPTY
    node_mask = children >= 0
    out[node_mask] = children[node_mask].astype(np.uint32)
    leaf_mask = children <= -2
    out[leaf_mask] = (-(children[leaf_mask] + 2)).astype(np.uint32) | _LEAF_BIT
    return out


def save(tree, path) -> int:
    """Write a static or fourier tree; returns the byte count written."""
    topo = tree.topo
    if topo.n_leaves >= 2 ** 31:
        raise ValueError("leaf count exceeds the 31-bit index space")
    if isinstance(tree, FourierOctree):
        kind = KIND_FOURIER
        cfg = tree.config
        lmax, grid_n, frames, n1, n2 = cfg.lmax, cfg.grid_n, cfg.T, cfg.n1, cfg.n2
        payload = np.concatenate(
            [tree.k_sigma, tree.k_z.reshape(topo.n_leaves, -1)], axis=1
        )
    else:
        kind = KIND_STATIC
        lmax, frames, n1, n2 = tree.lmax, 1, 1, 1
        grid_n = 1 << topo.max_depth
        payload = np.concatenate(
            [tree.sigma[:, None], tree.sh.reshape(topo.n_leaves, -1)], axis=1
        )
    header = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        kind,
        *np.asarray(topo.bbox.bmin, dtype=np.float32),
        *np.asarray(topo.bbox.bmax, dtype=np.float32),
        lmax,
        grid_n,
        frames,
        n1,
        n2,
        topo.n_nodes,
        topo.n_leaves,
    )
    blob = (
        header
        + _encode_children(topo.children).astype("<u4").tobytes()
        + payload.astype("<f4").tobytes()
    )
    Path(path).write_bytes(blob)
    return len(blob)


def _leaf_geometry(children: np.ndarray, n_leaves: int):
    """Derive per-leaf (depth, cell coords) by walking the node table."""
    depth = np.zeros(n_leaves, dtype=np.int64)
    coord = np.zeros((n_leaves, 3), dtype=np.int64)
    stack = [(0, 0, 0, 0, 0)]
    while stack:
        node, d, cx, cy, cz = stack.pop()
        for o in range(8):
            slot = int(children[node, o])
            if slot == EMPTY:
                continue
            nc = ((cx << 1) | (o >> 2), (cy << 1) | ((o >> 1) & 1),
                  (cz << 1) | (o & 1))
            if slot >= 0:
                stack.append((slot, d + 1, *nc))
            else:
                li = decode_leaf(slot)
                depth[li] = d + 1
                coord[li] = nc
    return depth, coord


def load(path):
    """Read a tree back; raises a structured FpoFileError on any defect."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_LEN:
        raise CorruptHeaderError("file shorter than the header")
    (magic, version, kind, x0, y0, z0, x1, y1, z1,
     lmax, grid_n, frames, n1, n2, node_count, leaf_count) = struct.unpack(
        _HEADER_FMT, blob[:HEADER_LEN]
    )
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported version {version}")
    if kind not in (KIND_STATIC, KIND_FOURIER):
        raise CorruptHeaderError(f"unknown kind {kind}")
    if lmax > 4:
        raise CorruptHeaderError(f"band limit {lmax} out of range")
    if not 2 <= grid_n <= MAX_GRID or grid_n & (grid_n - 1):
        raise CorruptHeaderError(f"grid size {grid_n} is not a power of two")
    if kind == KIND_STATIC and (frames, n1, n2) != (1, 1, 1):
        raise CorruptHeaderError("static kind requires T = n1 = n2 = 1")
    if min(frames, n1, n2) < 1:
        raise CorruptHeaderError("T, n1 and n2 must be >= 1")
    if node_count < 1:
        raise CorruptHeaderError("node count must be >= 1")
    if leaf_count >= 2 ** 31:
        raise CorruptHeaderError("leaf count exceeds the 31-bit index space")
    bounds = np.array([x0, y0, z0, x1, y1, z1], dtype=float)
    if not np.isfinite(bounds).all():
        raise CorruptHeaderError("non-finite bounding box")
    bmin, bmax = bounds[:3], bounds[3:]
    ext = bmax - bmin
    if not np.all(ext > 0) or np.max(np.abs(ext - ext[0])) > 1e-5 * abs(ext[0]):
        raise CorruptHeaderError("bounding box is not a positive cube")
    bmax = bmin + ext.max()  # exact cube in memory despite f32 storage

    if kind == KIND_FOURIER:
        payload_len = fourier_payload_len(n1, n2, lmax)
    else:
        payload_len = static_payload_len(lmax)
    expect = HEADER_LEN + node_count * 32 + leaf_count * payload_len * 4
    if len(blob) < expect:
        raise TruncatedPayloadError(
            f"truncated payload: file holds {len(blob)} bytes, layout needs {expect}"
        )
    if len(blob) > expect:
        raise IntegrityError(f"{len(blob) - expect} trailing bytes after payload")

    raw = np.frombuffer(
        blob, dtype="<u4", count=node_count * 8, offset=HEADER_LEN
    ).reshape(node_count, 8).astype(np.int64)
    children = np.empty((node_count, 8), dtype=np.int64)
    empty_mask = raw == _SLOT_EMPTY
    leaf_mask = (raw & _LEAF_BIT).astype(bool) & ~empty_mask
    node_mask = ~empty_mask & ~leaf_mask
    children[empty_mask] = EMPTY
    children[leaf_mask] = -(raw[leaf_mask] & ~_LEAF_BIT) - 2
    children[node_mask] = raw[node_mask]

    max_depth = int(grid_n).bit_length() - 1
    try:
        validate_topology(children, leaf_count, max_depth)
    except ValueError as exc:
        raise IntegrityError(str(exc)) from None

    with np.errstate(invalid="ignore"):
        payload = np.frombuffer(
            blob, dtype="<f4", count=leaf_count * payload_len,
            offset=HEADER_LEN + node_count * 32,
        ).reshape(leaf_count, payload_len).astype(float)
    if not np.isfinite(payload).all():
        raise IntegrityError("non-finite leaf payload values")

    depth, coord = _leaf_geometry(children, leaf_count)
    topo = TreeTopology(Aabb(bmin, bmax), children, depth, coord, max_depth)
    basis_count = n_sh_coeffs(lmax)
    if kind == KIND_STATIC:
        sigma = payload[:, 0]
        if (sigma < 0).any():
            raise IntegrityError("negative density in a static tree")
        sh = payload[:, 1:].reshape(leaf_count, basis_count, 3)
        return Octree(topo, lmax, sigma, sh)
    cfg = FPOConfig(T=frames, n1=n1, n2=n2, lmax=lmax, grid_n=grid_n)
    k_sigma = payload[:, :n1]
    k_z = payload[:, n1:].reshape(leaf_count, n2, basis_count, 3)
    return FourierOctree(topo, cfg, k_sigma, k_z)
