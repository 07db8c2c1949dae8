"""Single-shot decoders and overlap estimates.

The Ising memory is decoded by a global majority vote.  The 2D toric code is
decoded by minimum-weight perfect matching of violated stars under the torus
L1 metric, followed by a shortest-path correction routed along x first, then y.
The logical outcome is the pair of winding parities of error plus correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from numba import njit

from .lattice import HomologyTracker, Model, StabilizerConfig

EXACT_MATCHING_LIMIT = 20
CSV_COLUMNS = ("traj_index", "label", "weight", "tie_flag", "winding_x", "winding_y")


class DecoderError(ValueError):
    pass


class InvalidSyndromeError(DecoderError):
    pass


@dataclass(frozen=True)
class DecodeOutcome:
    """Result of one decoding.

    ``label`` is 0/1 for Ising (1 means the majority flipped) and the
    ``(winding_x, winding_y)`` pair for the toric code.
    """

    label: object
    weight: int
    tie_flag: bool = False
    winding_x: int = 0
    winding_y: int = 0

    def row(self, traj_index: int) -> dict:
        label = self.label
        if isinstance(label, tuple):
            label = f"{label[0]}{label[1]}"
        return {"traj_index": traj_index, "label": label, "weight": self.weight,
                "tie_flag": int(self.tie_flag), "winding_x": self.winding_x,
                "winding_y": self.winding_y}


def decode_majority(config: StabilizerConfig) -> DecodeOutcome:
    """Global majority vote; ties (even ``n_sites`` only) decode to label 0."""
    if config.geometry.model not in (Model.ISING2D, Model.ISING1D):
        raise DecoderError("majority decoding needs an Ising configuration")
    n = config.geometry.n_sites
    down = config.n_flipped
    up = n - down
    if up == down:
        return DecodeOutcome(0, down, tie_flag=True)
    if up > down:
        return DecodeOutcome(0, down)
    return DecodeOutcome(1, up)


def majority_flip_set(config: StabilizerConfig) -> np.ndarray:
    """Sites flipped by the majority correction (the minority domain)."""
    out = decode_majority(config)
    target = 1 if out.label == 0 else 0
    return np.flatnonzero(config.bits == target)


def torus_delta(a: int, b: int, N: int) -> int:
    """Signed shortest step from ``a`` to ``b`` on a ring; ``N / 2`` goes to +."""
    d = (b - a) % N
    return d if d <= N - d else d - N


@dataclass(frozen=True)
class MatchingProblem:
    """Anyon positions ``(x, y)`` on an ``N x N`` torus."""

    positions: tuple
    N: int

    def __post_init__(self):
        object.__setattr__(self, "positions",
                           tuple((int(x) % self.N, int(y) % self.N)
                                 for x, y in self.positions))

    @classmethod
    def from_config(cls, config: StabilizerConfig) -> "MatchingProblem":
        g = config.geometry
        if g.model is not Model.TORIC2D:
            raise DecoderError("matching is only implemented for toric2d")
        return cls(tuple(g.vertex_coords(int(v)) for v in config.violated_stabilizers()),
                   g.N)

    def __len__(self):
        return len(self.positions)

    def distance(self, i: int, j: int) -> int:
        (xa, ya), (xb, yb) = self.positions[i], self.positions[j]
        return abs(torus_delta(xa, xb, self.N)) + abs(torus_delta(ya, yb, self.N))

    def distance_matrix(self) -> np.ndarray:
        p = np.array(self.positions, dtype=np.int64).reshape(-1, 2)
        d = np.abs(p[:, None, :] - p[None, :, :]) % self.N
        return np.minimum(d, self.N - d).sum(axis=2)


@dataclass(frozen=True)
class Pairing:
    pairs: tuple
    weight: int
    exact: bool = True


@njit(cache=True)
def _matching_dp(dist):
    # best[mask]: min cost to pair the anyons in mask (lowest index always
    # paired first, partner chosen as the smallest optimal index)
    n = dist.shape[0]
    full = (1 << n) - 1
    big = np.iinfo(np.int64).max // 4
    best = np.full(1 << n, big, dtype=np.int64)
    choice = np.full(1 << n, -1, dtype=np.int64)
    best[0] = 0
    for mask in range(1, full + 1):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        rest = mask ^ (1 << i)
        for j in range(i + 1, n):
            if (rest >> j) & 1:
                c = dist[i, j] + best[rest ^ (1 << j)]
                if c < best[mask]:
                    best[mask] = c
                    choice[mask] = j
    pairs = np.empty((n // 2, 2), dtype=np.int64)
    mask = full
    k = 0
    while mask:
        i = 0
        while not (mask >> i) & 1:
            i += 1
        j = choice[mask]
        pairs[k, 0] = i
        pairs[k, 1] = j
        k += 1
        mask ^= (1 << i) | (1 << j)
    return best[full], pairs


def _blossom(dist: np.ndarray) -> tuple:
    n = dist.shape[0]
    graph = nx.Graph()
    top = int(dist.max()) + 1
    for i in range(n):
        for j in range(i + 1, n):
            graph.add_edge(i, j, weight=top - int(dist[i, j]))
    mate = nx.max_weight_matching(graph, maxcardinality=True)
    return tuple(sorted(tuple(sorted(e)) for e in mate))


def decode_mwpm(problem: MatchingProblem) -> Pairing:
    """Minimum total torus-L1 perfect matching.

    Exact dynamic programming over subsets up to ``EXACT_MATCHING_LIMIT``
    anyons, with ties broken towards the lexicographically smallest pairing.
    Larger instances use the blossom algorithm (also exact, but ties are broken
    by the graph library).
    """
    n = len(problem)
    if n % 2:
        raise InvalidSyndromeError(f"odd number of anyons ({n})")
    if n == 0:
        return Pairing((), 0)
    dist = problem.distance_matrix()
    if n <= EXACT_MATCHING_LIMIT:
        weight, pairs = _matching_dp(dist)
        return Pairing(tuple((int(a), int(b)) for a, b in pairs), int(weight))
    pairs = _blossom(dist)
    weight = sum(int(dist[a, b]) for a, b in pairs)
    return Pairing(pairs, weight, exact=False)


def correction_path(a: tuple, b: tuple, N: int) -> list:
    """Edges of the shortest x-then-y path from vertex ``a`` to vertex ``b``."""
    x, y = a
    edges = []
    dx = torus_delta(a[0], b[0], N)
    step = 1 if dx > 0 else -1
    for _ in range(abs(dx)):
        if step > 0:
            edges.append(2 * (y * N + x))
            x = (x + 1) % N
        else:
            x = (x - 1) % N
            edges.append(2 * (y * N + x))
    dy = torus_delta(a[1], b[1], N)
    step = 1 if dy > 0 else -1
    for _ in range(abs(dy)):
        if step > 0:
            edges.append(2 * (y * N + x) + 1)
            y = (y + 1) % N
        else:
            y = (y - 1) % N
            edges.append(2 * (y * N + x) + 1)
    return edges


def apply_correction(config: StabilizerConfig, tracker, pairing):
    """Apply a correction in place and return ``(config, tracker)``.

    For the toric code ``pairing`` is a :class:`Pairing` (positions taken from
    the current syndrome); for Ising it is an array of sites to flip.
    """
    g = config.geometry
    if g.model is Model.TORIC2D:
        problem = MatchingProblem.from_config(config)
        for i, j in pairing.pairs:
            for e in correction_path(problem.positions[i], problem.positions[j], g.N):
                config.flip(e)
                if tracker is not None:
                    tracker.update(e)
    else:
        for s in np.asarray(pairing, dtype=np.int64):
            config.flip(int(s))
    if config.sum_syndrome != 0:
        raise DecoderError(f"{config.sum_syndrome} stabilizers still violated")
    return config, tracker


def decode_toric(config: StabilizerConfig) -> DecodeOutcome:
    """Match, correct a copy, and report the winding parities of the cycle."""
    work = config.copy()
    tracker = HomologyTracker.from_bits(work.geometry, work.bits)
    pairing = decode_mwpm(MatchingProblem.from_config(work))
    apply_correction(work, tracker, pairing)
    wx, wy = tracker.label
    return DecodeOutcome((wx, wy), pairing.weight, winding_x=wx, winding_y=wy)


def decode(config: StabilizerConfig) -> DecodeOutcome:
    model = config.geometry.model
    if model in (Model.ISING2D, Model.ISING1D):
        return decode_majority(config)
    if model is Model.TORIC2D:
        return decode_toric(config)
    raise DecoderError(f"no decoder for {model.value}")


def overlap_values(outcomes, protocol: str = "ising",
                   relevant: str = "winding_y") -> np.ndarray:
    """Per-trajectory overlap with the initial state (each 0 or 1)."""
    outcomes = list(outcomes)
    if not outcomes:
        raise DecoderError("no outcomes to average")
    if protocol == "ising":
        return np.array([o.label == 0 for o in outcomes], dtype=np.float64)
    if protocol == "toric2d":
        if relevant not in ("winding_x", "winding_y"):
            raise DecoderError(f"unknown winding {relevant!r}")
        return np.array([getattr(o, relevant) == 0 for o in outcomes], dtype=np.float64)
    raise DecoderError(f"unknown protocol {protocol!r}")


def overlap_estimate(outcomes, protocol: str = "ising",
                     relevant: str = "winding_y") -> float:
    """Ensemble overlap ``Tr[rho_i rho_f]``.

    Ising (start all up): fraction decoded to label 0.  Toric code (start in the
    equal superposition of sectors (0,0) and (1,0)): an odd ``relevant``
    winding maps the state to an orthogonal one, so the overlap is the
    fraction of trajectories with even winding.
    """
    return float(overlap_values(outcomes, protocol, relevant).mean())


def overlap_stderr(outcomes, protocol: str = "ising",
                   relevant: str = "winding_y") -> float:
    v = overlap_values(outcomes, protocol, relevant)
    if v.size < 2:
        return float("nan")
    p = v.mean()
    return float(np.sqrt(p * (1 - p) / v.size))
