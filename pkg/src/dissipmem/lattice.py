"""Lattice geometries and stabilizer configurations.

Index conventions (frozen; results are seed-reproducible only under them):

* Vertices are indexed row-major.  In 2D a vertex ``(x, y)`` has index
  ``y * N + x``; in 4D ``(v0, v1, v2, v3)`` has index
  ``((v0 * N + v1) * N + v2) * N + v3``.
* ``ising2d``: spin ``s`` sits on vertex ``s``.  Bond stabilizers are
  ``2 * v`` (to ``x + 1``) and ``2 * v + 1`` (to ``y + 1``).
* ``toric2d``: edges are the sites, ``2 * v`` horizontal (to ``x + 1``) and
  ``2 * v + 1`` vertical (to ``y + 1``).  Star stabilizer ``v`` sits on vertex
  ``v``.
* ``toric4d``: faces are the sites, ``6 * v + f`` with ``f`` indexing the
  direction pairs ``(0,1), (0,2), (0,3), (1,2), (1,3), (2,3)``.  Edge stabilizers
  are ``4 * v + i``.  Face ``(v, (i, j))`` touches edges ``(v, i)``, ``(v, j)``,
  ``(v + e_j, i)`` and ``(v + e_i, j)``.
* ``ising1d``: ring of spins, bond ``j`` couples ``j`` and ``j + 1``.  Only used
  by the exact oracle.

Site bits are 1 when flipped relative to the all-satisfied reference
configuration (all spins up / no error string).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from . import _kernels


class Model(str, enum.Enum):
    ISING2D = "ising2d"
    TORIC2D = "toric2d"
    TORIC4D = "toric4d"
    ISING1D = "ising1d"


_MIN_SIZE = {Model.ISING2D: 3, Model.TORIC2D: 2, Model.TORIC4D: 2, Model.ISING1D: 3}
_MODEL_TAG = {Model.ISING2D: 1, Model.TORIC2D: 2, Model.TORIC4D: 3, Model.ISING1D: 4}
_TAG_MODEL = {v: k for k, v in _MODEL_TAG.items()}

FACE_PAIRS = tuple(combinations(range(4), 2))

_HEADER = struct.Struct("<4sBBHII")
_MAGIC = b"DMCF"
_ENDIAN_MARK = 0xFEFF


class LatticeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Incidence structure between flippable sites and stabilizers.

    ``site_to_stabs`` has shape ``(n_sites, z)`` and ``stab_to_sites`` has shape
    ``(n_stabilizers, degree)``.  Both arrays are read-only.
    """

    model: Model
    N: int
    site_to_stabs: np.ndarray
    stab_to_sites: np.ndarray
    dim: int = field(default=2)

    @property
    def n_sites(self) -> int:
        return self.site_to_stabs.shape[0]

    @property
    def n_stabilizers(self) -> int:
        return self.stab_to_sites.shape[0]

    @property
    def z(self) -> int:
        return self.site_to_stabs.shape[1]

    @property
    def degree(self) -> int:
        return self.stab_to_sites.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.N**self.dim

    def vertex_coords(self, v: int) -> tuple[int, ...]:
        """Coordinates of vertex ``v``; 2D returns ``(x, y)``."""
        N = self.N
        if self.dim == 2:
            return (v % N, v // N)
        if self.dim == 4:
            return tuple(int(c) for c in np.unravel_index(v, (N,) * 4))
        return (v,)

    def vertex_index(self, coords) -> int:
        N = self.N
        if self.dim == 2:
            x, y = coords
            return (y % N) * N + (x % N)
        if self.dim == 4:
            return int(np.ravel_multi_index(tuple(c % N for c in coords), (N,) * 4))
        return coords[0] % N

    @cached_property
    def cut_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Toric2D only: edges crossing the two non-contractible cuts.

        The first array holds horizontal edges from ``x = N - 1`` to ``x = 0``
        (they measure winding in x), the second holds vertical edges from
        ``y = N - 1`` to ``y = 0`` (winding in y).
        """
        if self.model is not Model.TORIC2D:
            raise LatticeError("cut edges are only defined for toric2d")
        N = self.N
        xs = np.array([2 * (y * N + N - 1) for y in range(N)], dtype=np.int64)
        ys = np.array([2 * ((N - 1) * N + x) + 1 for x in range(N)], dtype=np.int64)
        return xs, ys


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _invert(site_to_stabs: np.ndarray, n_stabs: int) -> np.ndarray:
    members: list[list[int]] = [[] for _ in range(n_stabs)]
    for s, row in enumerate(site_to_stabs):
        for t in row:
            members[t].append(s)
    degrees = {len(m) for m in members}
    if len(degrees) != 1:
        raise LatticeError(f"irregular stabilizer degrees {sorted(degrees)}")
    return np.array(members, dtype=np.int64)


def _ising2d(N: int) -> LatticeGeometry:
    s2t = np.empty((N * N, 4), dtype=np.int64)
    for y in range(N):
        for x in range(N):
            v = y * N + x
            left = y * N + (x - 1) % N
            down = ((y - 1) % N) * N + x
            s2t[v] = (2 * v, 2 * v + 1, 2 * left, 2 * down + 1)
    return LatticeGeometry(Model.ISING2D, N, _readonly(s2t),
                           _readonly(_invert(s2t, 2 * N * N)), dim=2)


def _toric2d(N: int) -> LatticeGeometry:
    s2t = np.empty((2 * N * N, 2), dtype=np.int64)
    for y in range(N):
        for x in range(N):
            v = y * N + x
            s2t[2 * v] = (v, y * N + (x + 1) % N)
            s2t[2 * v + 1] = (v, ((y + 1) % N) * N + x)
    t2s = np.empty((N * N, 4), dtype=np.int64)
    for y in range(N):
        for x in range(N):
            v = y * N + x
            left = y * N + (x - 1) % N
            down = ((y - 1) % N) * N + x
            t2s[v] = (2 * v, 2 * v + 1, 2 * left, 2 * down + 1)
    return LatticeGeometry(Model.TORIC2D, N, _readonly(s2t), _readonly(t2s), dim=2)


def _toric4d(N: int) -> LatticeGeometry:
    shape = (N,) * 4
    n_v = N**4
    coords = np.stack(np.unravel_index(np.arange(n_v), shape), axis=1)
    unit = np.eye(4, dtype=np.int64)

    def shifted(direction):
        return np.ravel_multi_index(tuple((coords + unit[direction]).T % N), shape)

    plus = [shifted(i) for i in range(4)]
    s2t = np.empty((6 * n_v, 4), dtype=np.int64)
    verts = np.arange(n_v)
    for f, (i, j) in enumerate(FACE_PAIRS):
        rows = 6 * verts + f
        s2t[rows, 0] = 4 * verts + i
        s2t[rows, 1] = 4 * verts + j
        s2t[rows, 2] = 4 * plus[j] + i
        s2t[rows, 3] = 4 * plus[i] + j
    return LatticeGeometry(Model.TORIC4D, N, _readonly(s2t),
                           _readonly(_invert(s2t, 4 * n_v)), dim=4)


def _ising1d(N: int) -> LatticeGeometry:
    s2t = np.array([(j, (j - 1) % N) for j in range(N)], dtype=np.int64)
    return LatticeGeometry(Model.ISING1D, N, _readonly(s2t),
                           _readonly(_invert(s2t, N)), dim=1)


_BUILDERS = {Model.ISING2D: _ising2d, Model.TORIC2D: _toric2d,
             Model.TORIC4D: _toric4d, Model.ISING1D: _ising1d}


def build_geometry(model, N: int) -> LatticeGeometry:
    """Build the periodic lattice for ``model`` with linear size ``N``.

    Parameters
    ----------
    model : Model or str
        One of ``ising2d``, ``toric2d``, ``toric4d`` (and ``ising1d`` for the
        exact-diagonalization checks).
    N : int
        Linear size.  Ising lattices need ``N >= 3`` so that every spin has
        distinct neighbours; toric codes accept ``N >= 2``.
    """
    try:
        model = Model(model)
    except ValueError:
        raise LatticeError(f"unknown model {model!r}") from None
    if int(N) != N or N < _MIN_SIZE[model]:
        raise LatticeError(f"{model.value} needs N >= {_MIN_SIZE[model]}, got {N}")
    return _BUILDERS[model](int(N))


class StabilizerConfig:
    """Site bits plus an incrementally maintained syndrome.

    ``counts[s]`` is the number of violated stabilizers adjacent to site ``s``.
    ``tallies`` holds ``[popcount(bits), popcount(syndrome)]``.
    """

    def __init__(self, geometry: LatticeGeometry, bits=None):
        self.geometry = geometry
        if bits is None:
            self.bits = np.zeros(geometry.n_sites, dtype=np.uint8)
        else:
            bits = np.asarray(bits)
            if bits.shape != (geometry.n_sites,):
                raise LatticeError(
                    f"expected {geometry.n_sites} site bits, got shape {bits.shape}")
            self.bits = (bits != 0).astype(np.uint8)
        self.syndrome = np.zeros(geometry.n_stabilizers, dtype=np.uint8)
        self.counts = np.zeros(geometry.n_sites, dtype=np.int16)
        self.tallies = np.zeros(2, dtype=np.int64)
        self.recompute()

    def recompute(self) -> None:
        g = self.geometry
        _kernels.recompute(self.bits, self.syndrome, self.counts, self.tallies,
                           g.site_to_stabs, g.stab_to_sites)

    def copy(self) -> "StabilizerConfig":
        new = StabilizerConfig.__new__(StabilizerConfig)
        new.geometry = self.geometry
        new.bits = self.bits.copy()
        new.syndrome = self.syndrome.copy()
        new.counts = self.counts.copy()
        new.tallies = self.tallies.copy()
        return new

    def flip(self, s: int) -> "StabilizerConfig":
        g = self.geometry
        if not 0 <= s < g.n_sites:
            raise IndexError(f"site {s} out of range [0, {g.n_sites})")
        _kernels.flip_site(int(s), self.bits, self.syndrome, self.counts,
                           self.tallies, g.site_to_stabs, g.stab_to_sites)
        return self

    @property
    def sum_syndrome(self) -> int:
        return int(self.tallies[1])

    @property
    def n_flipped(self) -> int:
        return int(self.tallies[0])

    @property
    def magnetization(self) -> float:
        n = self.geometry.n_sites
        return (n - 2 * self.n_flipped) / n

    @property
    def mean_stabilizer(self) -> float:
        m = self.geometry.n_stabilizers
        return (m - 2 * self.sum_syndrome) / m

    def spin(self, s: int) -> int:
        return 1 - 2 * int(self.bits[s])

    def violated_stabilizers(self) -> np.ndarray:
        return np.flatnonzero(self.syndrome)

    def is_consistent(self) -> bool:
        """Compare the cached syndrome state against a from-scratch recount."""
        fresh = StabilizerConfig(self.geometry, self.bits)
        return (np.array_equal(fresh.syndrome, self.syndrome)
                and np.array_equal(fresh.counts, self.counts)
                and np.array_equal(fresh.tallies, self.tallies))

    def __eq__(self, other):
        if not isinstance(other, StabilizerConfig):
            return NotImplemented
        return (self.geometry.model is other.geometry.model
                and self.geometry.N == other.geometry.N
                and np.array_equal(self.bits, other.bits))

    def to_bytes(self) -> bytes:
        g = self.geometry
        header = _HEADER.pack(_MAGIC, _MODEL_TAG[g.model], 1, _ENDIAN_MARK, g.N,
                              g.n_sites)
        return header + np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, geometry: LatticeGeometry | None = None):
        """Inverse of :meth:`to_bytes`; rebuilds the geometry when not given."""
        if len(data) < _HEADER.size:
            raise LatticeError("truncated config dump")
        magic, tag, _version, mark, N, n_sites = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise LatticeError(f"bad magic {magic!r}")
        if mark != _ENDIAN_MARK:
            raise LatticeError("endianness marker mismatch")
        model = _TAG_MODEL[tag]
        if geometry is None:
            geometry = build_geometry(model, N)
        elif geometry.model is not model or geometry.N != N:
            raise LatticeError("dump does not match the supplied geometry")
        packed = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
        bits = np.unpackbits(packed, count=n_sites, bitorder="little")
        return cls(geometry, bits)

    @property
    def nbytes_dump(self) -> int:
        return _HEADER.size + (self.geometry.n_sites + 7) // 8


def flip_site(config: StabilizerConfig, s: int) -> StabilizerConfig:
    return config.flip(s)


def violated_count(config: StabilizerConfig, s: int) -> int:
    if not 0 <= s < config.geometry.n_sites:
        raise IndexError(f"site {s} out of range")
    return int(config.counts[s])


def observables(config: StabilizerConfig, probe: int = 0) -> dict:
    return {
        "magnetization": config.magnetization,
        "mean_stabilizer": config.mean_stabilizer,
        "probe": config.spin(probe),
    }


def cycle_check(config: StabilizerConfig) -> bool:
    """Check the closure constraint of a toric-code syndrome.

    Toric2D: the number of violated stars is even.  Toric4D: every vertex has
    an even number of incident violated edges.
    """
    g = config.geometry
    if g.model is Model.TORIC2D:
        return int(config.syndrome.sum()) % 2 == 0
    if g.model is Model.TORIC4D:
        syn = config.syndrome.reshape(g.n_vertices, 4).astype(np.int64)
        parity = syn.sum(axis=1)
        shape = (g.N,) * 4
        for i in range(4):
            # edge (v - e_i, i) ends at v
            grid = syn[:, i].reshape(shape)
            parity += np.roll(grid, 1, axis=i).reshape(-1)
        return bool(np.all(parity % 2 == 0))
    raise LatticeError(f"cycle_check is not defined for {g.model.value}")


class HomologyTracker:
    """Winding parities of an accumulated toric2d flip chain.

    ``winding_x`` counts (mod 2) flips of horizontal edges that cross the cut
    between ``x = N - 1`` and ``x = 0``; ``winding_y`` likewise for vertical
    edges crossing ``y = N - 1 -> 0``.  For a chain with empty boundary these
    equal its homology class.
    """

    def __init__(self, geometry: LatticeGeometry):
        cx, cy = geometry.cut_edges
        self.geometry = geometry
        self._cut_x = frozenset(int(e) for e in cx)
        self._cut_y = frozenset(int(e) for e in cy)
        self.winding_x = 0
        self.winding_y = 0

    def update(self, edge: int) -> None:
        if edge in self._cut_x:
            self.winding_x ^= 1
        elif edge in self._cut_y:
            self.winding_y ^= 1

    @classmethod
    def from_bits(cls, geometry: LatticeGeometry, bits) -> "HomologyTracker":
        tr = cls(geometry)
        cx, cy = geometry.cut_edges
        bits = np.asarray(bits)
        tr.winding_x = int(bits[cx].sum() % 2)
        tr.winding_y = int(bits[cy].sum() % 2)
        return tr

    @property
    def label(self) -> tuple[int, int]:
        return (self.winding_x, self.winding_y)
