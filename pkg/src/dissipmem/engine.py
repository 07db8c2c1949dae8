"""Stochastic evolution of stabilizer configurations.

Two unravelings of the same uniformized jump channel are provided.  In the
``global`` scheme every global step applies exactly ``n_sites`` single jumps and
advances time by ``dt = 1 / total_rate``.  In the ``constant_rate`` scheme jumps
arrive as a Poisson process of rate ``n_sites * total_rate``.

A single jump picks a site uniformly and one uniform number ``v`` on
``[0, total_rate)``: noise flip if ``v < noise``, field flip (only if the site
is flipped) on the next ``field_rate`` slice, and a correction flip if the
remainder is below ``r(k)``.  Anything else is a do-nothing jump.

Randomness: each trajectory owns a xoshiro256** stream seeded from
``SeedSequence([seed, traj_index])``, so results depend only on
``(config, seed, traj_index)`` and never on scheduling.
"""

from __future__ import annotations

import enum
import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import _kernels
from .lattice import LatticeGeometry, StabilizerConfig
from .rates import RateTable

THREADS_ENV = "DISSIPMEM_THREADS"
_MAX_RECORD_ELEMENTS = 2**31

_CKPT_MAGIC = b"DMEM1"
_CKPT = struct.Struct("<BQQQQd4Q4Q")


class Scheme(str, enum.Enum):
    GLOBAL = "global"
    CONSTANT_RATE = "constant_rate"


_SCHEME_TAG = {Scheme.GLOBAL: 1, Scheme.CONSTANT_RATE: 2}


class CapacityError(MemoryError):
    pass


class EnsembleError(RuntimeError):
    """Some trajectories failed; ``failures`` maps index to exception."""

    def __init__(self, failures: dict, results: list):
        self.failures = failures
        self.results = results
        idx = ", ".join(str(i) for i in sorted(failures))
        super().__init__(f"{len(failures)} trajectories failed: {idx}")


class RNGStream:
    """xoshiro256** state keyed by ``(seed, traj_index)``."""

    def __init__(self, seed: int = 0, traj_index: int = 0, state=None):
        if state is not None:
            self.state = np.array(state, dtype=np.uint64)
        else:
            ss = np.random.SeedSequence([int(seed), int(traj_index)])
            self.state = ss.generate_state(4, np.uint64)
        if not self.state.any():
            raise ValueError("xoshiro256** state must not be all zero")


@dataclass(frozen=True)
class BernoulliStart:
    """Initial ensemble with each site flipped independently with ``p_flip``."""

    p_flip: float

    def __post_init__(self):
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError("p_flip must lie in [0, 1]")


@dataclass(frozen=True)
class EngineConfig:
    scheme: Scheme = Scheme.GLOBAL
    seed: int = 0
    n_trajectories: int = 1
    t_max: float = 1.0
    record_stride: int = 1
    burn_in: float = 0.0
    probes: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "probes", tuple(int(p) for p in self.probes))
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def n_steps(t: float, dt: float) -> int:
    """Number of whole global steps of length ``dt`` that fit into ``t``."""
    return int(math.floor(t / dt + 1e-9))


@dataclass
class TrajectoryRecord:
    traj_index: int
    times: np.ndarray
    n_flipped: np.ndarray
    n_violated: np.ndarray
    probe_bits: np.ndarray
    final: StabilizerConfig
    jump_counts: dict
    events: int
    outcome: Any = None
    extra: dict = field(default_factory=dict)

    @property
    def magnetization(self) -> np.ndarray:
        n = self.final.geometry.n_sites
        return (n - 2.0 * self.n_flipped) / n

    @property
    def mean_stabilizer(self) -> np.ndarray:
        m = self.final.geometry.n_stabilizers
        return (m - 2.0 * self.n_violated) / m

    @property
    def probe(self) -> np.ndarray:
        """Probe spins as +-1, shape ``(n_records, n_probes)``."""
        return 1 - 2 * self.probe_bits.astype(np.int8)

    def to_bytes(self) -> bytes:
        parts = [
            struct.pack("<QQ", self.traj_index, self.events),
            self.times.astype("<f8").tobytes(),
            self.n_flipped.astype("<i8").tobytes(),
            self.n_violated.astype("<i8").tobytes(),
            self.probe_bits.astype(np.uint8).tobytes(),
            self.final.to_bytes(),
            struct.pack("<4Q", *(self.jump_counts[k] for k in _JUMP_KEYS)),
        ]
        return b"".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


_JUMP_KEYS = ("noise", "correction", "field", "idle")


def _kernel_args(config: StabilizerConfig, rates: RateTable):
    g = config.geometry
    if rates.z != g.z:
        raise ValueError(f"rate table z={rates.z} does not match lattice z={g.z}")
    return (config.bits, config.syndrome, config.counts, config.tallies,
            g.site_to_stabs, g.stab_to_sites, rates.rate_array(), rates.noise,
            rates.field_rate, rates.total_rate)


class Trajectory:
    """Mutable single-trajectory state: configuration, clock and RNG stream."""

    def __init__(self, config: StabilizerConfig, rates: RateTable, seed: int = 0,
                 traj_index: int = 0, rng: RNGStream | None = None):
        self.config = config
        self.rates = rates
        self.seed = int(seed)
        self.traj_index = int(traj_index)
        self.rng = rng if rng is not None else RNGStream(seed, traj_index)
        self.time = 0.0
        self.events = 0
        self.steps = 0
        self.jcounts = np.zeros(4, dtype=np.int64)
        self._args = _kernel_args(config, rates)

    @property
    def jump_counts(self) -> dict:
        return dict(zip(_JUMP_KEYS, (int(c) for c in self.jcounts)))

    def single_jump(self) -> StabilizerConfig:
        _kernels.apply_jumps(1, *self._args, self.rng.state, self.jcounts)
        self.events += 1
        return self.config

    def global_step(self, n: int = 1) -> StabilizerConfig:
        n_sites = self.config.geometry.n_sites
        _kernels.apply_jumps(n * n_sites, *self._args, self.rng.state, self.jcounts)
        self.events += n * n_sites
        self.steps += n
        self.time += n * self.rates.dt
        return self.config

    def evolve_constant_rate(self, t: float) -> int:
        """Advance by time ``t`` with Poisson-distributed event count; returns it."""
        if t < 0:
            raise ValueError("t must be non-negative")
        k = 0
        if t > 0:
            k = _kernels.poisson_interval(t, *self._args, self.rng.state, self.jcounts)
        self.events += k
        self.time += t
        return k

    def checkpoint(self, scheme: Scheme = Scheme.GLOBAL) -> bytes:
        head = _CKPT.pack(_SCHEME_TAG[Scheme(scheme)], self.seed, self.traj_index,
                          self.events, self.steps, self.time,
                          *(int(x) for x in self.rng.state),
                          *(int(x) for x in self.jcounts))
        return _CKPT_MAGIC + head + self.config.to_bytes()

    @classmethod
    def from_checkpoint(cls, data: bytes, rates: RateTable,
                        geometry: LatticeGeometry | None = None) -> "Trajectory":
        if not data.startswith(_CKPT_MAGIC):
            raise ValueError("not a trajectory checkpoint")
        off = len(_CKPT_MAGIC)
        vals = _CKPT.unpack_from(data, off)
        _tag, seed, idx, events, steps, time = vals[:6]
        rng = RNGStream(state=vals[6:10])
        config = StabilizerConfig.from_bytes(data[off + _CKPT.size:], geometry)
        traj = cls(config, rates, seed=seed, traj_index=idx, rng=rng)
        traj.events, traj.steps, traj.time = events, steps, time
        traj.jcounts[:] = vals[10:14]
        return traj


def single_jump(config: StabilizerConfig, rates: RateTable,
                rng: RNGStream) -> StabilizerConfig:
    jc = np.zeros(4, dtype=np.int64)
    _kernels.apply_jumps(1, *_kernel_args(config, rates), rng.state, jc)
    return config


def global_step(config: StabilizerConfig, rates: RateTable, rng: RNGStream,
                n: int = 1) -> StabilizerConfig:
    """Apply ``n`` global steps (``n * n_sites`` single jumps, time ``n * dt``)."""
    jc = np.zeros(4, dtype=np.int64)
    _kernels.apply_jumps(n * config.geometry.n_sites, *_kernel_args(config, rates),
                         rng.state, jc)
    return config


def evolve_constant_rate(config: StabilizerConfig, rates: RateTable, rng: RNGStream,
                         t: float) -> StabilizerConfig:
    if t < 0:
        raise ValueError("t must be non-negative")
    if t > 0:
        jc = np.zeros(4, dtype=np.int64)
        _kernels.poisson_interval(t, *_kernel_args(config, rates), rng.state, jc)
    return config


def initial_config(initial, geometry: LatticeGeometry | None,
                   rng: RNGStream) -> StabilizerConfig:
    if isinstance(initial, StabilizerConfig):
        return initial.copy()
    if isinstance(initial, BernoulliStart):
        if geometry is None:
            raise ValueError("a BernoulliStart needs a geometry")
        bits = np.zeros(geometry.n_sites, dtype=np.uint8)
        _kernels.bernoulli_bits(bits, initial.p_flip, rng.state)
        return StabilizerConfig(geometry, bits)
    raise TypeError(f"unsupported initial state {type(initial).__name__}")


def run_trajectory(initial, rates: RateTable, config: EngineConfig, traj_index: int,
                   geometry: LatticeGeometry | None = None) -> TrajectoryRecord:
    """Run one seeded trajectory and record observables.

    Burn-in is simulated first and not recorded.  Samples are then taken every
    ``record_stride`` global steps over ``t_max``, giving
    ``floor(t_max / (record_stride * dt)) + 1`` records.  ``final`` is the
    configuration at ``burn_in + t_max`` (rounded down to whole steps).
    """
    if geometry is None and isinstance(initial, StabilizerConfig):
        geometry = initial.geometry
    rng = RNGStream(config.seed, traj_index)
    state = initial_config(initial, geometry, rng)
    g = state.geometry
    probes = np.array(config.probes, dtype=np.int64)
    if probes.size and (probes.min() < 0 or probes.max() >= g.n_sites):
        raise ValueError("probe site out of range")

    dt = rates.dt
    burn = n_steps(config.burn_in, dt)
    total = n_steps(config.t_max, dt)
    n_rec = total // config.record_stride + 1
    tail = total - (n_rec - 1) * config.record_stride
    if n_rec * max(1, probes.size) > _MAX_RECORD_ELEMENTS:
        raise CapacityError(f"{n_rec} records x {probes.size} probes is too large")
    try:
        pop = np.empty(n_rec, dtype=np.int64)
        syn = np.empty(n_rec, dtype=np.int64)
        probe_bits = np.empty((n_rec, probes.size), dtype=np.uint8)
    except MemoryError as exc:
        raise CapacityError(str(exc)) from exc

    jc = np.zeros(4, dtype=np.int64)
    args = _kernel_args(state, rates)
    if config.scheme is Scheme.GLOBAL:
        _kernels.run_global(burn, n_rec, config.record_stride, tail, *args, rng.state,
                            jc, probes, pop, syn, probe_bits)
        events = (burn + total) * g.n_sites
    else:
        events = _kernels.run_poisson(burn * dt, n_rec, config.record_stride * dt,
                                      tail * dt, *args, rng.state, jc, probes, pop,
                                      syn, probe_bits)
    times = (burn + np.arange(n_rec, dtype=np.float64) * config.record_stride) * dt
    return TrajectoryRecord(int(traj_index), times, pop, syn, probe_bits, state,
                            dict(zip(_JUMP_KEYS, (int(c) for c in jc))), int(events))


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(initial, rates: RateTable, config: EngineConfig,
                 geometry: LatticeGeometry | None = None,
                 postprocess: Callable[[TrajectoryRecord], Any] | None = None,
                 n_threads: int | None = None) -> list:
    """Run trajectories ``0 .. n_trajectories - 1``, ordered by index.

    ``postprocess`` is applied to each record inside the worker (e.g. decoding
    and dropping the time series).  The result does not depend on ``n_threads``.
    """
    n_threads = default_threads() if n_threads is None else max(1, int(n_threads))

    def work(i):
        rec = run_trajectory(initial, rates, config, i, geometry=geometry)
        return postprocess(rec) if postprocess is not None else rec

    def guarded(i):
        try:
            return True, work(i)
        except Exception as exc:  # reported per trajectory below
            return False, exc

    indices = range(config.n_trajectories)
    if n_threads == 1:
        outcomes = [guarded(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(guarded, indices))
    results = [val if ok else None for ok, val in outcomes]
    failures = {i: val for i, (ok, val) in enumerate(outcomes) if not ok}
    if failures:
        raise EnsembleError(failures, results)
    return results


def first_passage_time(initial, rates: RateTable, seed: int, traj_index: int,
                       t_max: float, geometry: LatticeGeometry | None = None):
    """Time until the magnetization first becomes positive, or ``None`` if censored.

    Checked after every global step, so the resolution is ``rates.dt``.
    """
    if geometry is None and isinstance(initial, StabilizerConfig):
        geometry = initial.geometry
    rng = RNGStream(seed, traj_index)
    state = initial_config(initial, geometry, rng)
    threshold = (state.geometry.n_sites + 1) // 2
    if state.n_flipped < threshold:
        return 0.0
    jc = np.zeros(4, dtype=np.int64)
    steps = _kernels.first_passage(n_steps(t_max, rates.dt), threshold,
                                   *_kernel_args(state, rates), rng.state, jc)
    return None if steps < 0 else steps * rates.dt


def occupation_distribution(initial: StabilizerConfig, rates: RateTable, n_events: int,
                            seed: int = 0, traj_index: int = 0,
                            burn_events: int = 0) -> np.ndarray:
    """Empirical distribution of configurations visited by the jump chain.

    The configuration index is ``sum(bits[s] << s)``.  Every event (including
    do-nothing ones) contributes one count, so the result estimates the
    stationary distribution of the uniformized chain, which equals that of the
    continuous-time dynamics.  Limited to 24 sites.
    """
    n = initial.geometry.n_sites
    if n > 24:
        raise CapacityError(f"{n} sites is too many for a full occupation histogram")
    rng = RNGStream(seed, traj_index)
    state = initial.copy()
    args = _kernel_args(state, rates)
    jc = np.zeros(4, dtype=np.int64)
    if burn_events:
        _kernels.apply_jumps(int(burn_events), *args, rng.state, jc)
    hist = np.zeros(2**n, dtype=np.int64)
    _kernels.occupation_histogram(int(n_events), *args, rng.state, jc, hist)
    return hist / hist.sum()
