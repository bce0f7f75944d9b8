"""Sparse octrees over a cube domain with contiguous per-leaf payload arrays.

Child slot encoding (shared with the .fpo file layout in spirit): a slot value
>= 0 is an internal node index, -1 is empty space, and v <= -2 encodes leaf
index -(v + 2). Node 0 is always the root. Nodes and leaves are numbered in
depth-first preorder over child octants, which makes serialization canonical.

Octant index = (x_high << 2) | (y_high << 1) | z_high. Point containment is
half-open per axis ([cell_min, cell_max)) with the global max face closed, so
every in-box point maps to exactly one cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sh import n_sh_coeffs

EMPTY = -1


def encode_leaf(i: int) -> int:
    return -(i + 2)


def decode_leaf(v: int) -> int:
    return -(v + 2)


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box; octree domains must be cubes."""

    bmin: np.ndarray
    bmax: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "bmin", np.asarray(self.bmin, dtype=float))
        object.__setattr__(self, "bmax", np.asarray(self.bmax, dtype=float))
        if self.bmin.shape != (3,) or self.bmax.shape != (3,):
            raise ValueError("bounds must be 3-vectors")
        if not np.all(self.bmax > self.bmin):
            raise ValueError("max must exceed min componentwise")

    @property
    def extent(self) -> np.ndarray:
        return self.bmax - self.bmin

    @property
    def side(self) -> float:
        ext = self.extent
        if np.max(np.abs(ext - ext[0])) > 1e-9:
            raise ValueError("octree domain must be a cube")
        return float(ext[0])

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @classmethod
    def cube(cls, center, side: float) -> "Aabb":
        center = np.asarray(center, dtype=float)
        h = 0.5 * side
        return cls(center - h, center + h)


@dataclass(frozen=True)
class FPOConfig:
    """Shape of a Fourier tree: coefficient counts, band limit, frames, grid."""

    T: int
    n1: int = 31
    n2: int = 5
    lmax: int = 2
    grid_n: int = 128

    def __post_init__(self) -> None:
        if self.n1 < 1 or self.n2 < 1 or self.T < 1:
            raise ValueError("n1, n2 and T must be >= 1")
        if self.grid_n < 2 or self.grid_n & (self.grid_n - 1):
            raise ValueError("grid_n must be a power of two >= 2")
        if not 0 <= self.lmax <= 4:
            raise ValueError("lmax must be in [0, 4]")


class TreeTopology:
    """Structure-only view of a tree: node table plus per-leaf cell geometry."""

    def __init__(
        self,
        bbox: Aabb,
        children: np.ndarray,
        leaf_depth: np.ndarray,
        leaf_coord: np.ndarray,
        max_depth: int,
    ):
        self.bbox = bbox
        self.children = np.ascontiguousarray(children, dtype=np.int64)
        self.leaf_depth = np.asarray(leaf_depth, dtype=np.int64)
        self.leaf_coord = np.asarray(leaf_coord, dtype=np.int64)
        self.max_depth = int(max_depth)
        if self.children.ndim != 2 or self.children.shape[1] != 8:
            raise ValueError("children must have shape [n_nodes, 8]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @property
    def n_nodes(self) -> int:
        return self.children.shape[0]

    @property
    def n_leaves(self) -> int:
        return self.leaf_depth.shape[0]

    def leaf_sizes(self) -> np.ndarray:
        return self.bbox.side / (2.0 ** self.leaf_depth.astype(float))

    def leaf_centers(self) -> np.ndarray:
        size = self.leaf_sizes()[:, None]
        return self.bbox.bmin + (self.leaf_coord.astype(float) + 0.5) * size

    def leaf_min_corners(self) -> np.ndarray:
        size = self.leaf_sizes()[:, None]
        return self.bbox.bmin + self.leaf_coord.astype(float) * size


@dataclass
class Octree:
    """Static tree: per-leaf density and SH color coefficients."""

    topo: TreeTopology
    lmax: int
    sigma: np.ndarray
    sh: np.ndarray

    def __post_init__(self) -> None:
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.sh = np.asarray(self.sh, dtype=float)
        n = self.topo.n_leaves
        if self.sigma.shape != (n,):
            raise ValueError(f"sigma must have shape ({n},)")
        if self.sh.shape != (n, n_sh_coeffs(self.lmax), 3):
            raise ValueError("sh shape does not match lmax/leaf count")

    @property
    def bbox(self) -> Aabb:
        return self.topo.bbox

    @property
    def n_leaves(self) -> int:
        return self.topo.n_leaves

    @classmethod
    def zero_payload(cls, topo: TreeTopology, lmax: int) -> "Octree":
        n = topo.n_leaves
        return cls(topo, lmax, np.zeros(n), np.zeros((n, n_sh_coeffs(lmax), 3)))


@dataclass
class FourierOctree:
    """Dynamic tree: per-leaf coefficient blocks for density and SH series."""

    topo: TreeTopology
    config: FPOConfig
    k_sigma: np.ndarray
    k_z: np.ndarray

    def __post_init__(self) -> None:
        self.k_sigma = np.asarray(self.k_sigma, dtype=float)
        self.k_z = np.asarray(self.k_z, dtype=float)
        n = self.topo.n_leaves
        c = self.config
        if self.k_sigma.shape != (n, c.n1):
            raise ValueError(f"k_sigma must have shape ({n}, {c.n1})")
        if self.k_z.shape != (n, c.n2, n_sh_coeffs(c.lmax), 3):
            raise ValueError("k_z shape does not match config/leaf count")

    @property
    def bbox(self) -> Aabb:
        return self.topo.bbox

    @property
    def n_leaves(self) -> int:
        return self.topo.n_leaves


def _morton_keys(coords: np.ndarray, depth: int) -> np.ndarray:
    """Interleave (x, y, z) cell coords into preorder sort keys."""
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    keys = np.zeros(len(coords), dtype=np.int64)
    for b in range(depth):
        oct_bits = (((x >> b) & 1) << 2) | (((y >> b) & 1) << 1) | ((z >> b) & 1)
        keys |= oct_bits.astype(np.int64) << (3 * b)
    return keys


def from_occupancy(bbox: Aabb, grid_n: int, occupied: np.ndarray, lmax: int) -> Octree:
    """Build a tree whose leaves are exactly the occupied voxels, zero payloads.

    ``occupied`` is a boolean [N, N, N] grid indexed [ix, iy, iz]; leaves sit
    at uniform depth log2(N).
    """
    bbox.side  # raises unless cube
    occupied = np.asarray(occupied, dtype=bool)
    if grid_n < 2 or grid_n & (grid_n - 1):
        raise ValueError("grid_n must be a power of two >= 2")
    if occupied.shape != (grid_n, grid_n, grid_n):
        raise ValueError(f"occupancy grid must be {grid_n}^3")
    coords = np.argwhere(occupied)
    if len(coords) == 0:
        raise ValueError("occupancy grid is empty; nothing to model")
    depth = int(grid_n).bit_length() - 1
    keys = _morton_keys(coords, depth)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    coords = coords[order]

    children_rows: list[list[int]] = []

    def build(lo: int, hi: int, level: int, prefix: int) -> int:
        idx = len(children_rows)
        children_rows.append([EMPTY] * 8)
        shift = 3 * (depth - 1 - level)
        for o in range(8):
            base = prefix | (o << shift)
            lo2 = int(np.searchsorted(keys, base, side="left"))
            hi2 = int(np.searchsorted(keys, base + (1 << shift), side="left"))
            if lo2 == hi2:
                continue
            if level == depth - 1:
                children_rows[idx][o] = encode_leaf(lo2)
            else:
                children_rows[idx][o] = build(lo2, hi2, level + 1, base)
        return idx

    build(0, len(keys), 0, 0)
    topo = TreeTopology(
        bbox,
        np.array(children_rows, dtype=np.int64),
        np.full(len(coords), depth, dtype=np.int64),
        coords,
        depth,
    )
    return Octree.zero_payload(topo, lmax)


def descend_cells(topo: TreeTopology, icoords: np.ndarray):
    """Locate the deepest existing cell for integer coords at 2^max_depth scale.

    Returns (leaf_idx [M] with -1 for empty cells, cell_depth [M]). Inputs are
    assumed in range [0, 2^max_depth).
    """
    m = icoords.shape[0]
    ix, iy, iz = icoords[:, 0], icoords[:, 1], icoords[:, 2]
    flat = topo.children.ravel()
    node = np.zeros(m, dtype=np.int64)
    leaf = np.full(m, -1, dtype=np.int64)
    depth = np.zeros(m, dtype=np.int64)
    idx = np.arange(m)
    for level in range(topo.max_depth):
        if idx.size == 0:
            break
        shift = topo.max_depth - level - 1
        octant = (
            (((ix[idx] >> shift) & 1) << 2)
            | (((iy[idx] >> shift) & 1) << 1)
            | ((iz[idx] >> shift) & 1)
        )
        slot = flat[node[idx] * 8 + octant]
        depth[idx] = level + 1
        is_node = slot >= 0
        is_leaf = slot <= -2
        leaf[idx[is_leaf]] = -(slot[is_leaf] + 2)
        node[idx[is_node]] = slot[is_node]
        idx = idx[is_node]
    return leaf, depth


def point_cell_coords(topo: TreeTopology, points: np.ndarray):
    """Map points to integer coords at 2^max_depth scale; also returns inside mask."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    side = topo.bbox.side
    s = (points - topo.bbox.bmin) / side
    inside = np.all((s >= 0.0) & (s <= 1.0), axis=1)
    n = 1 << topo.max_depth
    icoords = np.clip(np.floor(s * n).astype(np.int64), 0, n - 1)
    return icoords, inside


def lookup(tree, points: np.ndarray) -> np.ndarray:
    """Leaf index containing each point, or -1 when the point is in no leaf.

    Accepts a single point [3] or a batch [M, 3]; returns scalar or [M].
    """
    topo = tree.topo if not isinstance(tree, TreeTopology) else tree
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    icoords, inside = point_cell_coords(topo, pts)
    leaf = np.full(icoords.shape[0], -1, dtype=np.int64)
    if inside.any():
        found, _ = descend_cells(topo, icoords[inside])
        leaf[inside] = found
    return int(leaf[0]) if single else leaf


_COVERED = -2  # recursion state: inside some input's leaf


def _child_state(topo: TreeTopology, state: int, octant: int) -> int:
    """Advance one input tree's state into a child octant.

    States: node index >= 0, _COVERED (inside an ancestor leaf), EMPTY (absent).
    """
    if state == EMPTY or state == _COVERED:
        return state
    slot = topo.children[state, octant]
    if slot >= 0:
        return int(slot)
    if slot == EMPTY:
        return EMPTY
    return _COVERED


def union_topology(trees) -> TreeTopology:
    """Coarsest topology refining every input tree.

    A cell becomes a union leaf iff some input occupies it (as a leaf at that
    cell or an ancestor) and no input subdivides it. Inputs must share one
    bounding box (and band limit, for payload trees).
    """
    if not trees:
        raise ValueError("need at least one tree")
    topos = [t if isinstance(t, TreeTopology) else t.topo for t in trees]
    ref = topos[0]
    for t in topos[1:]:
        if not (
            np.array_equal(t.bbox.bmin, ref.bbox.bmin)
            and np.array_equal(t.bbox.bmax, ref.bbox.bmax)
        ):
            raise ValueError("trees must share a bounding box")
    lmaxes = {t.lmax for t in trees if isinstance(t, (Octree, FourierOctree))}
    if len(lmaxes) > 1:
        raise ValueError("trees must share a band limit")

    children_rows: list[list[int]] = []
    leaf_depth: list[int] = []
    leaf_coord: list[tuple[int, int, int]] = []

    def rec(states: list[int], level: int, cx: int, cy: int, cz: int) -> int:
        idx = len(children_rows)
        children_rows.append([EMPTY] * 8)
        for o in range(8):
            child = [_child_state(topos[i], s, o) for i, s in enumerate(states)]
            if all(s == EMPTY for s in child):
                continue
            ncx = (cx << 1) | (o >> 2)
            ncy = (cy << 1) | ((o >> 1) & 1)
            ncz = (cz << 1) | (o & 1)
            if any(s >= 0 for s in child):
                children_rows[idx][o] = rec(child, level + 1, ncx, ncy, ncz)
            else:
                children_rows[idx][o] = encode_leaf(len(leaf_depth))
                leaf_depth.append(level + 1)
                leaf_coord.append((ncx, ncy, ncz))
        return idx

    rec([0] * len(topos), 0, 0, 0, 0)
    max_depth = max(leaf_depth, default=max(t.max_depth for t in topos))
    return TreeTopology(
        ref.bbox,
        np.array(children_rows, dtype=np.int64),
        np.array(leaf_depth, dtype=np.int64),
        np.array(leaf_coord, dtype=np.int64).reshape(-1, 3),
        max_depth,
    )


def broadcast(tree: Octree, topo: TreeTopology) -> Octree:
    """Re-home payloads onto a refining topology.

    Where a source leaf was split, every descendant copies its payload; cells
    the source never occupied get zeros. Raises if the target is coarser than
    the source anywhere the source has structure.
    """
    n = topo.n_leaves
    b = n_sh_coeffs(tree.lmax)
    sigma = np.zeros(n)
    sh = np.zeros((n, b, 3))
    src_topo = tree.topo

    def src_child(state, octant):
        # state: node idx >= 0, ('leaf', i) coverage, or EMPTY
        if state == EMPTY or isinstance(state, tuple):
            return state
        slot = src_topo.children[state, octant]
        if slot >= 0:
            return int(slot)
        if slot == EMPTY:
            return EMPTY
        return ("leaf", decode_leaf(int(slot)))

    def rec(src_state, dst_node: int) -> None:
        for o in range(8):
            s = src_child(src_state, o)
            d = topo.children[dst_node, o]
            if d == EMPTY:
                if s != EMPTY:
                    raise ValueError("topology does not cover the source tree")
                continue
            if d >= 0:
                rec(s, int(d))
                continue
            li = decode_leaf(int(d))
            if isinstance(s, int) and s >= 0:
                raise ValueError("topology is coarser than the source tree")
            if isinstance(s, tuple):
                sigma[li] = tree.sigma[s[1]]
                sh[li] = tree.sh[s[1]]

    rec(0, 0)
    return Octree(topo, tree.lmax, sigma, sh)


def rebuild_with_leaf_mask(topo: TreeTopology, keep: np.ndarray):
    """Rebuild the topology keeping only masked leaves; collapse empty nodes.

    Returns (new topology, kept original leaf indices in new leaf order).
    """
    subtree_keep = np.zeros(topo.n_nodes, dtype=bool)

    def mark(node: int) -> bool:
        any_kept = False
        for o in range(8):
            slot = topo.children[node, o]
            if slot >= 0:
                any_kept |= mark(int(slot))
            elif slot <= -2 and keep[decode_leaf(int(slot))]:
                any_kept = True
        subtree_keep[node] = any_kept
        return any_kept

    mark(0)

    children_rows: list[list[int]] = []
    kept_leaves: list[int] = []

    def build(node: int) -> int:
        idx = len(children_rows)
        children_rows.append([EMPTY] * 8)
        for o in range(8):
            slot = topo.children[node, o]
            if slot >= 0 and subtree_keep[int(slot)]:
                children_rows[idx][o] = build(int(slot))
            elif slot <= -2:
                li = decode_leaf(int(slot))
                if keep[li]:
                    children_rows[idx][o] = encode_leaf(len(kept_leaves))
                    kept_leaves.append(li)
        return idx

    build(0)
    kept = np.array(kept_leaves, dtype=np.int64)
    new_topo = TreeTopology(
        topo.bbox,
        np.array(children_rows, dtype=np.int64),
        topo.leaf_depth[kept] if len(kept) else np.zeros(0, dtype=np.int64),
        topo.leaf_coord[kept] if len(kept) else np.zeros((0, 3), dtype=np.int64),
        topo.max_depth,
    )
    return new_topo, kept


def prune(tree: Octree, sigma_threshold: float = 1e-3):
    """Drop leaves with density below the threshold; collapse empty nodes.

    Returns (pruned tree, removed leaf count); surviving payloads unchanged.
    """
    if sigma_threshold < 0:
        raise ValueError("threshold must be >= 0")
    keep = tree.sigma >= sigma_threshold
    new_topo, kept = rebuild_with_leaf_mask(tree.topo, keep)
    pruned = Octree(
        new_topo,
        tree.lmax,
        tree.sigma[kept] if len(kept) else np.zeros(0),
        tree.sh[kept] if len(kept) else np.zeros((0, n_sh_coeffs(tree.lmax), 3)),
    )
    return pruned, int(tree.n_leaves - len(kept))


def validate_topology(children: np.ndarray, n_leaves: int, max_depth: int) -> None:
    """Structural integrity: a rooted tree, every node/leaf referenced once."""
    n_nodes = children.shape[0]
    if n_nodes < 1:
        raise ValueError("tree must have a root node")
    seen_node = np.zeros(n_nodes, dtype=bool)
    seen_leaf = np.zeros(n_leaves, dtype=bool)
    stack = [(0, 0)]
    seen_node[0] = True
    while stack:
        node, depth = stack.pop()
        for o in range(8):
            slot = int(children[node, o])
            if slot == EMPTY:
                continue
            if depth >= max_depth:
                raise ValueError("tree deeper than declared max depth")
            if slot >= 0:
                if slot >= n_nodes:
                    raise ValueError("child node index out of range")
                if seen_node[slot]:
                    raise ValueError("node referenced more than once")
                seen_node[slot] = True
                stack.append((slot, depth + 1))
            else:
                li = decode_leaf(slot)
                if li >= n_leaves:
                    raise ValueError("leaf index out of range")
                if seen_leaf[li]:
                    raise ValueError("leaf referenced more than once")
                seen_leaf[li] = True
    if not seen_node.all():
        raise ValueError("unreachable internal nodes present")
    if not seen_leaf.all():
        raise ValueError("unreferenced leaves present")
