"""Octree structure: construction, lookup, union, broadcast, prune."""
import numpy as np
import pytest

from fpoctree.octree import (
    Aabb,
    FPOConfig,
    Octree,
    broadcast,
    decode_leaf,
    from_occupancy,
    lookup,
    prune,
    union_topology,
    validate_topology,
)

BOX = Aabb.cube((0.0, 0.0, 0.0), 2.0)


def sphere_occupancy(n, radius=0.8, center=(0.0, 0.0, 0.0)):
    cell = 2.0 / n
    axis = -1.0 + (np.arange(n) + 0.5) * cell
    x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
    c = np.asarray(center)
    return (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= radius ** 2


def random_tree(rng, n=8, fill=0.3, lmax=1):
    occ = rng.random((n, n, n)) < fill
    occ.flat[rng.integers(0, n ** 3)] = True  # never empty
    tree = from_occupancy(BOX, n, occ, lmax)
    tree.sigma = rng.uniform(0.0, 3.0, tree.n_leaves)
    tree.sh = rng.normal(size=tree.sh.shape)
    return tree


def leaf_boxes(tree):
    lo = tree.topo.leaf_min_corners()
    return lo, lo + tree.topo.leaf_sizes()[:, None]


def brute_force_lookup(tree, p):
    lo, hi = leaf_boxes(tree)
    inside = np.all((p >= lo) & (p < hi), axis=1)
    hits = np.flatnonzero(inside)
    return int(hits[0]) if hits.size else -1


def test_single_voxel_construction():
    occ = np.zeros((2, 2, 2), dtype=bool)
    occ[1, 0, 1] = True
    tree = from_occupancy(BOX, 2, occ, 2)
    assert tree.topo.n_nodes == 1
    assert tree.n_leaves == 1
    assert tree.topo.leaf_depth[0] == 1
    assert np.allclose(tree.topo.leaf_centers()[0], [0.5, -0.5, 0.5])


def test_full_grid_construction():
    tree = from_occupancy(BOX, 4, np.ones((4, 4, 4), dtype=bool), 1)
    assert tree.n_leaves == 64
    assert np.allclose(tree.topo.leaf_sizes(), 0.5)
    validate_topology(tree.topo.children, tree.n_leaves, tree.topo.max_depth)


def test_sphere_leaf_count_matches_brute_force():
    occ = sphere_occupancy(64)
    tree = from_occupancy(BOX, 64, occ, 1)
    assert tree.n_leaves == int(occ.sum())


def test_empty_occupancy_rejected():
    with pytest.raises(ValueError, match="empty"):
        from_occupancy(BOX, 4, np.zeros((4, 4, 4), dtype=bool), 1)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        from_occupancy(BOX, 6, np.ones((6, 6, 6), dtype=bool), 1)


def test_lookup_outside_bbox():
    tree = from_occupancy(BOX, 2, np.ones((2, 2, 2), dtype=bool), 1)
    assert lookup(tree, np.array([5.0, 0.0, 0.0])) == -1


def test_lookup_center_of_known_voxel():
    occ = np.zeros((4, 4, 4), dtype=bool)
    occ[2, 1, 3] = True
    tree = from_occupancy(BOX, 4, occ, 1)
    center = tree.topo.leaf_centers()[0]
    assert lookup(tree, center) == 0


def test_lookup_matches_exhaustive_scan():
    rng = np.random.default_rng(41)
    tree = random_tree(rng, n=8, fill=0.4)
    pts = rng.uniform(-1.2, 1.2, size=(10000, 3))
    got = lookup(tree, pts)
    for p, g in zip(pts[:500], got[:500]):
        assert g == brute_force_lookup(tree, p)
    # spot the rest in bulk via vectorized oracle
    lo, hi = leaf_boxes(tree)
    inside = (pts[:, None, :] >= lo[None]) & (pts[:, None, :] < hi[None])
    oracle = np.where(inside.all(axis=2).any(axis=1),
                      inside.all(axis=2).argmax(axis=1), -1)
    assert np.array_equal(got, oracle)


def test_tree_integrity_traversal_count():
    rng = np.random.default_rng(42)
    for _ in range(5):
        tree = random_tree(rng)
        validate_topology(tree.topo.children, tree.n_leaves, tree.topo.max_depth)


def test_union_with_itself_is_identity():
    rng = np.random.default_rng(43)
    tree = random_tree(rng)
    topo = union_topology([tree, tree])
    assert np.array_equal(topo.children, tree.topo.children)
    assert np.array_equal(topo.leaf_coord, tree.topo.leaf_coord)


def test_union_takes_deeper_leaves():
    # A: one leaf at depth 1; B: the same octant refined to depth 2.
    occ_a = np.zeros((2, 2, 2), dtype=bool)
    occ_a[0, 0, 0] = True
    a = from_occupancy(BOX, 2, occ_a, 1)
    occ_b = np.zeros((4, 4, 4), dtype=bool)
    occ_b[:2, :2, :2] = True
    b = from_occupancy(BOX, 4, occ_b, 1)
    topo = union_topology([a, b])
    assert topo.n_leaves == 8
    assert np.all(topo.leaf_depth == 2)


def test_union_region_is_set_union():
    rng = np.random.default_rng(44)
    a = random_tree(rng, n=4, fill=0.3)
    b = random_tree(rng, n=8, fill=0.2)
    topo = union_topology([a, b])
    pts = rng.uniform(-1.0, 1.0, size=(100000, 3))
    in_union = lookup(topo, pts) >= 0
    in_a = lookup(a, pts) >= 0
    in_b = lookup(b, pts) >= 0
    assert np.array_equal(in_union, in_a | in_b)


def test_union_commutative_associative_idempotent():
    rng = np.random.default_rng(45)
    trees = [random_tree(rng, n=4, fill=0.4) for _ in range(3)]

    def sig(topo):
        return (topo.children.tobytes(), topo.leaf_coord.tobytes(),
                topo.leaf_depth.tobytes())

    ab = union_topology(trees[:2])
    ba = union_topology(trees[:2][::-1])
    assert sig(ab) == sig(ba)
    abc = union_topology(trees)
    ab_c = union_topology([ab, trees[2]])
    assert sig(abc) == sig(ab_c)
    assert sig(union_topology([trees[0], trees[0]])) == sig(
        union_topology([trees[0]])
    )


def test_union_bbox_mismatch_rejected():
    rng = np.random.default_rng(46)
    a = random_tree(rng)
    occ = np.ones((2, 2, 2), dtype=bool)
    b = from_occupancy(Aabb.cube((0, 0, 0), 4.0), 2, occ, 1)
    with pytest.raises(ValueError, match="bounding box"):
        union_topology([a, b])


def test_broadcast_identity():
    rng = np.random.default_rng(47)
    tree = random_tree(rng)
    out = broadcast(tree, tree.topo)
    assert np.array_equal(out.sigma, tree.sigma)
    assert np.array_equal(out.sh, tree.sh)


def test_broadcast_copies_split_payload():
    occ_a = np.zeros((2, 2, 2), dtype=bool)
    occ_a[1, 1, 0] = True
    a = from_occupancy(BOX, 2, occ_a, 1)
    a.sigma[:] = 3.0
    a.sh[:] = 0.25
    occ_b = np.zeros((4, 4, 4), dtype=bool)
    occ_b[2:, 2:, :2] = True
    b = from_occupancy(BOX, 4, occ_b, 1)
    topo = union_topology([a, b])
    out = broadcast(a, topo)
    assert out.n_leaves == 8
    assert np.allclose(out.sigma, 3.0)
    assert np.allclose(out.sh, 0.25)


def test_broadcast_zero_fills_missing_cells():
    rng = np.random.default_rng(48)
    a = random_tree(rng, n=4, fill=0.3)
    b = random_tree(rng, n=4, fill=0.3)
    topo = union_topology([a, b])
    out = broadcast(a, topo)
    pts = rng.uniform(-1.0, 1.0, size=(20000, 3))
    li_out = lookup(out, pts)
    li_a = lookup(a, pts)
    hit = li_out >= 0
    in_a = li_a >= 0
    assert np.array_equal(
        out.sigma[li_out[hit & in_a]], a.sigma[li_a[hit & in_a]]
    )
    only_new = hit & ~in_a
    assert np.all(out.sigma[li_out[only_new]] == 0.0)


def test_broadcast_payload_field_preserved_pointwise():
    rng = np.random.default_rng(49)
    a = random_tree(rng, n=8, fill=0.3)
    b = random_tree(rng, n=8, fill=0.3)
    topo = union_topology([a, b])
    out = broadcast(a, topo)
    pts = rng.uniform(-1.0, 1.0, size=(20000, 3))
    li_out = lookup(out, pts)
    li_a = lookup(a, pts)
    sig_out = np.where(li_out >= 0, out.sigma[np.maximum(li_out, 0)], 0.0)
    sig_a = np.where(li_a >= 0, a.sigma[np.maximum(li_a, 0)], 0.0)
    assert np.array_equal(sig_out, sig_a)


def test_broadcast_rejects_coarser_topology():
    occ_fine = np.zeros((4, 4, 4), dtype=bool)
    occ_fine[:2, :2, :2] = True
    fine = from_occupancy(BOX, 4, occ_fine, 1)
    occ_coarse = np.zeros((2, 2, 2), dtype=bool)
    occ_coarse[0, 0, 0] = True
    coarse = from_occupancy(BOX, 2, occ_coarse, 1)
    with pytest.raises(ValueError, match="coarser|cover"):
        broadcast(fine, coarse.topo)


def test_prune_empty_result():
    rng = np.random.default_rng(50)
    tree = random_tree(rng)
    tree.sigma[:] = 0.0
    out, removed = prune(tree, 1e-3)
    assert out.n_leaves == 0
    assert removed == tree.n_leaves


def test_prune_no_change_when_above_threshold():
    rng = np.random.default_rng(51)
    tree = random_tree(rng)
    tree.sigma += 1.0
    out, removed = prune(tree, 1e-3)
    assert removed == 0
    assert np.array_equal(out.topo.children, tree.topo.children)
    assert np.array_equal(out.sigma, tree.sigma)


def test_prune_keeps_survivors_untouched():
    rng = np.random.default_rng(52)
    tree = random_tree(rng)
    tree.sigma[rng.random(tree.n_leaves) < 0.5] = 0.0
    out, removed = prune(tree, 1e-3)
    assert removed == int((tree.sigma < 1e-3).sum())
    kept = tree.sigma >= 1e-3
    assert np.array_equal(out.sigma, tree.sigma[kept])
    assert np.array_equal(out.sh, tree.sh[kept])
    validate_topology(out.topo.children, out.n_leaves, out.topo.max_depth)
    # surviving leaves occupy the same cells
    pts = out.topo.leaf_centers()
    assert np.array_equal(lookup(tree, pts), np.flatnonzero(kept))


def test_fpo_config_validation():
    with pytest.raises(ValueError):
        FPOConfig(T=0)
    with pytest.raises(ValueError):
        FPOConfig(T=4, grid_n=12)
    with pytest.raises(ValueError):
        FPOConfig(T=4, lmax=9)
    cfg = FPOConfig(T=4)
    assert (cfg.n1, cfg.n2, cfg.lmax) == (31, 5, 2)


def test_validate_topology_catches_cycles():
    children = np.full((2, 8), -1, dtype=np.int64)
    children[0, 0] = 1
    children[1, 0] = 1  # node referenced twice
    with pytest.raises(ValueError):
        validate_topology(children, 0, 4)


def test_leaf_geometry_consistency():
    rng = np.random.default_rng(53)
    tree = random_tree(rng, n=8)
    centers = tree.topo.leaf_centers()
    assert np.array_equal(lookup(tree, centers), np.arange(tree.n_leaves))
    assert np.allclose(tree.topo.leaf_sizes(), 2.0 / 8)


def test_decode_leaf_round_trip():
    from fpoctree.octree import encode_leaf

    for i in (0, 1, 7, 123456):
        assert decode_leaf(encode_leaf(i)) == i
