import numpy as np
import pytest
from hypothesis import given, strategies as st

from dissipmem.lattice import (HomologyTracker, LatticeError, Model, StabilizerConfig,
                               build_geometry, cycle_check, flip_site, observables,
                               violated_count)

from reference import (ising2d_syndrome, toric2d_homology, toric2d_syndrome,
                       toric4d_syndrome)

REF_SYNDROME = {Model.ISING2D: ising2d_syndrome, Model.TORIC2D: toric2d_syndrome,
                Model.TORIC4D: toric4d_syndrome}


@pytest.mark.parametrize("model,N,sites,stabs,z,deg", [
    ("ising2d", 3, 9, 18, 4, 2),
    ("ising2d", 6, 36, 72, 4, 2),
    ("toric2d", 4, 32, 16, 2, 4),
    ("toric4d", 2, 96, 64, 4, 6),
    ("toric4d", 3, 486, 324, 4, 6),
])
def test_counts(model, N, sites, stabs, z, deg):
    g = build_geometry(model, N)
    assert (g.n_sites, g.n_stabilizers, g.z, g.degree) == (sites, stabs, z, deg)


def test_toric4d_five_has_3750_faces():
    g = build_geometry("toric4d", 5)
    assert g.n_sites == 3750
    assert g.n_stabilizers == 2500


@pytest.mark.parametrize("model,N", [("ising2d", 3), ("ising2d", 5), ("toric2d", 2),
                                     ("toric2d", 4), ("toric4d", 2), ("toric4d", 3),
                                     ("ising1d", 5)])
def test_incidence_tables_are_mutually_consistent(model, N):
    g = build_geometry(model, N)
    for s in range(g.n_sites):
        assert len(set(g.site_to_stabs[s])) == g.z
        for t in g.site_to_stabs[s]:
            assert s in g.stab_to_sites[t]
    for t in range(g.n_stabilizers):
        assert len(set(g.stab_to_sites[t])) == g.degree
        for s in g.stab_to_sites[t]:
            assert t in g.site_to_stabs[s]


def test_toric2d_star_edges_list_the_star():
    g = build_geometry("toric2d", 4)
    for t in range(g.n_stabilizers):
        for e in g.stab_to_sites[t]:
            assert list(g.site_to_stabs[e]).count(t) == 1


def test_tables_are_read_only():
    g = build_geometry("ising2d", 3)
    with pytest.raises(ValueError):
        g.site_to_stabs[0, 0] = 1


@pytest.mark.parametrize("model,N", [("ising2d", 2), ("ising2d", 1), ("toric2d", 1),
                                     ("nope", 3), ("toric4d", 2.5)])
def test_rejects_bad_sizes(model, N):
    with pytest.raises(LatticeError):
        build_geometry(model, N)


def test_single_flip_ising():
    g = build_geometry("ising2d", 3)
    c = StabilizerConfig(g)
    assert violated_count(c, 0) == 0
    flip_site(c, 0)
    assert violated_count(c, 0) == 4
    # neighbours of (0,0) on the 3x3 torus: (1,0), (2,0), (0,1), (0,2)
    for nb in (1, 2, 3, 6):
        assert violated_count(c, nb) == 1
    assert c.sum_syndrome == 4
    flip_site(c, 0)
    assert c == StabilizerConfig(g)
    assert c.sum_syndrome == 0


def test_flip_out_of_range():
    c = StabilizerConfig(build_geometry("ising2d", 3))
    with pytest.raises(IndexError):
        c.flip(9)
    with pytest.raises(IndexError):
        violated_count(c, -1)


def test_toric4d_single_face():
    g = build_geometry("toric4d", 3)
    c = StabilizerConfig(g)
    c.flip(17)
    assert c.sum_syndrome == 4
    assert np.array_equal(c.syndrome, toric4d_syndrome(c.bits, 3))
    assert cycle_check(c)
    assert observables(c)["mean_stabilizer"] == pytest.approx((324 - 8) / 324, abs=1e-15)


def test_reference_observables():
    g = build_geometry("ising2d", 4)
    c = StabilizerConfig(g)
    assert observables(c) == {"magnetization": 1.0, "mean_stabilizer": 1.0, "probe": 1}
    c = StabilizerConfig(g, np.ones(16))
    ob = observables(c)
    assert ob["magnetization"] == -1.0 and ob["mean_stabilizer"] == 1.0


def test_cycle_check_detects_hand_injected_star():
    c = StabilizerConfig(build_geometry("toric2d", 3))
    c.flip(4)
    assert cycle_check(c)
    c.syndrome[0] ^= 1
    c.tallies[1] = c.syndrome.sum()
    assert not cycle_check(c)


def test_cycle_check_toric4d_hand_injected_edge():
    c = StabilizerConfig(build_geometry("toric4d", 2))
    c.syndrome[5] = 1
    assert not cycle_check(c)


def test_cycle_check_rejects_ising():
    with pytest.raises(LatticeError):
        cycle_check(StabilizerConfig(build_geometry("ising2d", 3)))


@pytest.mark.parametrize("model,N", [("ising2d", 3), ("toric2d", 3), ("toric4d", 2)])
def test_exhaustive_single_and_pair_flips(model, N):
    g = build_geometry(model, N)
    ref = REF_SYNDROME[Model(model)]
    for s in range(g.n_sites):
        c = StabilizerConfig(g)
        c.flip(s)
        assert np.array_equal(c.syndrome, ref(c.bits, N))
        for s2 in range(0, g.n_sites, 7):
            d = c.copy().flip(s2)
            assert np.array_equal(d.syndrome, ref(d.bits, N))


@pytest.mark.parametrize("model,N", [("ising2d", 5), ("toric2d", 5), ("toric4d", 3)])
def test_long_random_sweep_matches_recount(model, N):
    g = build_geometry(model, N)
    rng = np.random.default_rng(7)
    c = StabilizerConfig(g)
    ref = REF_SYNDROME[Model(model)]
    seq = rng.integers(0, g.n_sites, 200_000)
    for k, s in enumerate(seq):
        c.flip(int(s))
        if k % 50_000 == 0:
            assert c.is_consistent()
    assert c.is_consistent()
    assert np.array_equal(c.syndrome, ref(c.bits, N))
    if g.model is not Model.ISING2D:
        assert cycle_check(c)


def test_toric4d_many_random_sequences_keep_cycles():
    g = build_geometry("toric4d", 3)
    rng = np.random.default_rng(11)
    for _ in range(200):
        c = StabilizerConfig(g)
        for s in rng.integers(0, g.n_sites, 40):
            c.flip(int(s))
        assert cycle_check(c)


models = st.sampled_from([("ising2d", 3), ("ising2d", 4), ("toric2d", 3),
                          ("toric2d", 4), ("toric4d", 2)])


@given(models, st.lists(st.integers(0, 10_000), max_size=60))
def test_incremental_equals_scratch(mn, flips):
    model, N = mn
    g = build_geometry(model, N)
    c = StabilizerConfig(g)
    for f in flips:
        c.flip(f % g.n_sites)
    assert c.is_consistent()
    assert np.array_equal(c.syndrome, REF_SYNDROME[Model(model)](c.bits, N))
    assert np.all((c.counts >= 0) & (c.counts <= g.z))


@given(models, st.integers(0, 10_000), st.integers(0, 10_000),
       st.lists(st.integers(0, 10_000), max_size=20))
def test_flips_commute_and_are_involutions(mn, a, b, prefix):
    g = build_geometry(*mn)
    c = StabilizerConfig(g)
    for f in prefix:
        c.flip(f % g.n_sites)
    a, b = a % g.n_sites, b % g.n_sites
    ab = c.copy().flip(a).flip(b)
    ba = c.copy().flip(b).flip(a)
    assert ab == ba and np.array_equal(ab.syndrome, ba.syndrome)
    assert c.copy().flip(a).flip(a) == c


@given(models, st.data())
def test_serialization_round_trip(mn, data):
    g = build_geometry(*mn)
    bits = data.draw(st.lists(st.integers(0, 1), min_size=g.n_sites, max_size=g.n_sites))
    c = StabilizerConfig(g, bits)
    blob = c.to_bytes()
    assert len(blob) == c.nbytes_dump
    back = StabilizerConfig.from_bytes(blob)
    assert back == c and np.array_equal(back.syndrome, c.syndrome)
    assert StabilizerConfig.from_bytes(blob, g) == c


def test_serialization_header_checks():
    c = StabilizerConfig(build_geometry("ising2d", 3))
    blob = c.to_bytes()
    assert len(blob) == 16 + 2
    with pytest.raises(LatticeError):
        StabilizerConfig.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(LatticeError):
        StabilizerConfig.from_bytes(blob[:5])
    with pytest.raises(LatticeError):
        StabilizerConfig.from_bytes(blob, build_geometry("ising2d", 4))


def test_wrong_bit_shape():
    with pytest.raises(LatticeError):
        StabilizerConfig(build_geometry("ising2d", 3), np.zeros(8))


def _random_cycle(g, rng, n_flips):
    """Flip random edges, then close the chain by flipping a path between anyons."""
    N = g.N
    c = StabilizerConfig(g)
    tracker = HomologyTracker(g)
    for e in rng.integers(0, g.n_sites, n_flips):
        c.flip(int(e))
        tracker.update(int(e))
    # pair anyons greedily along x-then-y walks (any path works for closure)
    while c.sum_syndrome:
        a, b = c.violated_stabilizers()[:2]
        (xa, ya), (xb, yb) = g.vertex_coords(int(a)), g.vertex_coords(int(b))
        x, y = xa, ya
        while x != xb:
            e = 2 * (y * N + x)
            c.flip(e)
            tracker.update(e)
            x = (x + 1) % N
        while y != yb:
            e = 2 * (y * N + x) + 1
            c.flip(e)
            tracker.update(e)
            y = (y + 1) % N
    return c, tracker


@pytest.mark.parametrize("N", [2, 3, 4, 5])
def test_homology_tracker_matches_gf2_classification(N):
    g = build_geometry("toric2d", N)
    rng = np.random.default_rng(N)
    seen = set()
    for _ in range(60):
        c, tracker = _random_cycle(g, rng, int(rng.integers(0, 3 * N)))
        ref = toric2d_homology(c.bits, N)
        assert tracker.label == ref
        assert HomologyTracker.from_bits(g, c.bits).label == ref
        seen.add(ref)
    assert len(seen) == 4


def test_homology_only_changes_on_cut_edges():
    g = build_geometry("toric2d", 4)
    cx, cy = g.cut_edges
    tracker = HomologyTracker(g)
    for e in range(g.n_sites):
        before = tracker.label
        tracker.update(e)
        changed = tracker.label != before
        assert changed == (e in set(cx) | set(cy))
        tracker.update(e)


def test_cut_edges_only_for_toric2d():
    with pytest.raises(LatticeError):
        build_geometry("ising2d", 3).cut_edges


def test_vertex_coordinates_round_trip():
    for model, N in (("ising2d", 4), ("toric4d", 3)):
        g = build_geometry(model, N)
        for v in range(g.n_vertices):
            assert g.vertex_index(g.vertex_coords(v)) == v
