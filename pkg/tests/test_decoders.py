import numpy as np
import pytest
from hypothesis import given, strategies as st

from dissipmem.decoders import (DecodeOutcome, DecoderError, InvalidSyndromeError,
                                MatchingProblem, Pairing, apply_correction,
                                correction_path, decode, decode_majority, decode_mwpm,
                                decode_toric, majority_flip_set, overlap_estimate,
                                overlap_stderr, torus_delta)
from dissipmem.lattice import HomologyTracker, StabilizerConfig, build_geometry

from reference import brute_min_matching, toric2d_homology, torus_l1


def ising(N, down):
    g = build_geometry("ising2d", N)
    bits = np.zeros(g.n_sites, dtype=np.uint8)
    bits[list(down)] = 1
    return StabilizerConfig(g, bits)


def test_majority_examples():
    out = decode_majority(ising(3, []))
    assert (out.label, out.tie_flag, out.weight) == (0, False, 0)
    out = decode_majority(ising(3, range(5)))
    assert out.label == 1 and out.weight == 4
    out = decode_majority(ising(4, range(8)))
    assert out.tie_flag and out.label == 0


def test_majority_rejects_toric():
    with pytest.raises(DecoderError):
        decode_majority(StabilizerConfig(build_geometry("toric2d", 3)))


@given(st.sampled_from([3, 4, 5]), st.data())
def test_majority_global_flip_swaps_label(N, data):
    g = build_geometry("ising2d", N)
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=g.n_sites,
                                       max_size=g.n_sites)), dtype=np.uint8)
    a = decode_majority(StabilizerConfig(g, bits))
    b = decode_majority(StabilizerConfig(g, 1 - bits))
    if a.tie_flag:
        assert b.tie_flag and a.label == b.label == 0
    else:
        assert a.label == 1 - b.label and a.weight == b.weight


@given(st.sampled_from([3, 5]), st.data())
def test_majority_correction_reaches_code_space(N, data):
    g = build_geometry("ising2d", N)
    bits = data.draw(st.lists(st.integers(0, 1), min_size=g.n_sites, max_size=g.n_sites))
    c = StabilizerConfig(g, bits)
    label = decode_majority(c).label
    apply_correction(c, None, majority_flip_set(c))
    assert c.sum_syndrome == 0
    assert c.n_flipped == (0 if label == 0 else g.n_sites)


def test_torus_delta_tie_goes_positive():
    assert torus_delta(0, 2, 4) == 2
    assert torus_delta(2, 0, 4) == 2
    assert torus_delta(0, 3, 4) == -1
    assert torus_delta(1, 1, 5) == 0


def test_mwpm_examples():
    p = decode_mwpm(MatchingProblem((), 5))
    assert p.pairs == () and p.weight == 0
    p = decode_mwpm(MatchingProblem(((0, 0), (4, 0)), 5))
    assert p.pairs == ((0, 1),) and p.weight == 1
    with pytest.raises(InvalidSyndromeError):
        decode_mwpm(MatchingProblem(((0, 0), (1, 0), (2, 2)), 5))


def test_mwpm_six_anyons_against_all_fifteen_pairings():
    rng = np.random.default_rng(0)
    pts = [tuple(int(v) for v in rng.integers(0, 7, 2)) for _ in range(6)]
    assert decode_mwpm(MatchingProblem(tuple(pts), 7)).weight == brute_min_matching(pts, 7)


def test_mwpm_lexicographic_tie_break():
    # a square of side 1: two optimal pairings of weight 2, the smaller wins
    p = decode_mwpm(MatchingProblem(((0, 0), (1, 0), (0, 1), (1, 1)), 6))
    assert p.weight == 2 and p.pairs == ((0, 1), (2, 3))


def test_mwpm_against_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(300):
        N = int(rng.integers(2, 8))
        k = 2 * int(rng.integers(0, 6))
        pts = [tuple(int(v) for v in rng.integers(0, N, 2)) for _ in range(k)]
        pairing = decode_mwpm(MatchingProblem(tuple(pts), N))
        assert pairing.weight == brute_min_matching(pts, N)
        assert sum(torus_l1(pts[a], pts[b], N) for a, b in pairing.pairs) == pairing.weight
        assert sorted(i for pr in pairing.pairs for i in pr) == list(range(k))


def test_blossom_fallback_is_optimal():
    rng = np.random.default_rng(5)
    N = 9
    pts = tuple(tuple(int(v) for v in rng.integers(0, N, 2)) for _ in range(22))
    big = decode_mwpm(MatchingProblem(pts, N))
    assert not big.exact
    from dissipmem.decoders import _matching_dp
    exact_weight, _ = _matching_dp(MatchingProblem(pts, N).distance_matrix())
    assert big.weight == exact_weight


@given(st.integers(2, 9), st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)),
                                   min_size=3, max_size=3))
def test_distance_is_a_metric(N, pts):
    prob = MatchingProblem(tuple(pts), N)
    d = prob.distance_matrix()
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    assert d[0, 2] <= d[0, 1] + d[1, 2]
    assert d[0, 1] == prob.distance(0, 1) == torus_l1(prob.positions[0], prob.positions[1], N)


@pytest.mark.parametrize("N", [3, 4, 5])
def test_correction_path_is_shortest_and_connects(N):
    g = build_geometry("toric2d", N)
    for a in range(g.n_vertices):
        for b in range(g.n_vertices):
            va, vb = g.vertex_coords(a), g.vertex_coords(b)
            path = correction_path(va, vb, N)
            assert len(path) == torus_l1(va, vb, N)
            c = StabilizerConfig(g)
            for e in path:
                c.flip(e)
            expect = sorted({a, b}) if a != b else []
            assert list(c.violated_stabilizers()) == expect


def test_empty_and_adjacent_corrections():
    g = build_geometry("toric2d", 4)
    c = StabilizerConfig(g)
    apply_correction(c, HomologyTracker(g), Pairing((), 0))
    assert c == StabilizerConfig(g)
    c.flip(5)
    out = decode_toric(c)
    assert out.weight == 1 and out.label == (0, 0)
    tr = HomologyTracker.from_bits(g, c.bits)
    apply_correction(c, tr, decode_mwpm(MatchingProblem.from_config(c)))
    assert c.sum_syndrome == 0 and c.n_flipped == 0


@pytest.mark.parametrize("N", [4, 6])
def test_opposite_half_loop_winds_in_x(N):
    # error runs from (N/2, 0) onwards to (0, 0) through x = N-1 -> 0; the
    # correction takes the + route from (0, 0) to (N/2, 0): together they wrap
    g = build_geometry("toric2d", N)
    c = StabilizerConfig(g)
    for x in range(N // 2, N):
        c.flip(2 * x)
    assert {g.vertex_coords(int(v)) for v in c.violated_stabilizers()} == {(0, 0), (N // 2, 0)}
    out = decode_toric(c)
    assert out.winding_x == 1 and out.winding_y == 0
    work = c.copy()
    apply_correction(work, None, decode_mwpm(MatchingProblem.from_config(work)))
    assert toric2d_homology(work.bits, N) == (1, 0)


def _y_then_x(a, b, N):
    x, y = a
    edges = []
    dy = torus_delta(a[1], b[1], N)
    for _ in range(abs(dy)):
        if dy > 0:
            edges.append(2 * (y * N + x) + 1)
            y = (y + 1) % N
        else:
            y = (y - 1) % N
            edges.append(2 * (y * N + x) + 1)
    dx = torus_delta(a[0], b[0], N)
    for _ in range(abs(dx)):
        if dx > 0:
            edges.append(2 * (y * N + x))
            x = (x + 1) % N
        else:
            x = (x - 1) % N
            edges.append(2 * (y * N + x))
    return edges


def test_label_independent_of_routing():
    rng = np.random.default_rng(3)
    for _ in range(300):
        N = int(rng.integers(3, 8))
        g = build_geometry("toric2d", N)
        c = StabilizerConfig(g)
        for e in rng.integers(0, g.n_sites, int(rng.integers(1, 2 * N))):
            c.flip(int(e))
        label = decode_toric(c).label
        prob = MatchingProblem.from_config(c)
        work = c.copy()
        for i, j in decode_mwpm(prob).pairs:
            for e in _y_then_x(prob.positions[i], prob.positions[j], N):
                work.flip(e)
        assert work.sum_syndrome == 0
        assert HomologyTracker.from_bits(g, work.bits).label == label
        assert toric2d_homology(work.bits, N) == label


def test_random_corrections_clear_syndrome():
    rng = np.random.default_rng(8)
    for N in (3, 4, 5, 6):
        g = build_geometry("toric2d", N)
        for _ in range(500):
            c = StabilizerConfig(g)
            for e in rng.integers(0, g.n_sites, int(rng.integers(0, 3 * N))):
                c.flip(int(e))
            tracker = HomologyTracker.from_bits(g, c.bits)
            apply_correction(c, tracker, decode_mwpm(MatchingProblem.from_config(c)))
            assert c.sum_syndrome == 0 and c.is_consistent()
            assert tracker.label == toric2d_homology(c.bits, N)


def test_residual_syndrome_is_an_error():
    g = build_geometry("toric2d", 4)
    c = StabilizerConfig(g).flip(0)
    with pytest.raises(DecoderError):
        apply_correction(c, None, Pairing((), 0))


def test_decode_dispatch():
    assert decode(ising(3, [0])).label == 0
    assert decode(StabilizerConfig(build_geometry("toric2d", 3))).label == (0, 0)
    with pytest.raises(DecoderError):
        decode(StabilizerConfig(build_geometry("toric4d", 2)))


def test_overlap_estimates():
    zeros = [DecodeOutcome(0, 0)] * 4
    assert overlap_estimate(zeros) == 1.0
    half = zeros[:2] + [DecodeOutcome(1, 3)] * 2
    assert overlap_estimate(half) == 0.5
    assert overlap_stderr(half) == pytest.approx(0.25)
    tc = [DecodeOutcome((1, 0), 2, winding_x=1), DecodeOutcome((0, 1), 2, winding_y=1),
          DecodeOutcome((0, 0), 0)]
    assert overlap_estimate(tc, "toric2d") == pytest.approx(2 / 3)
    assert overlap_estimate(tc, "toric2d", "winding_x") == pytest.approx(2 / 3)
    with pytest.raises(DecoderError):
        overlap_estimate([])
    with pytest.raises(DecoderError):
        overlap_estimate(zeros, "toric4d")


def test_outcome_row_columns():
    row = DecodeOutcome((1, 0), 3, winding_x=1).row(7)
    assert row == {"traj_index": 7, "label": "10", "weight": 3, "tie_flag": 0,
                   "winding_x": 1, "winding_y": 0}
