"""Exact small-system checks.

Quantum side: dense Lindbladians on at most 64-dimensional Hilbert spaces,
vectorized by row stacking, ``vec(A rho B) = (A kron B^T) vec(rho)``, so a jump
``L`` contributes ``L kron conj(L) - (L^dag L kron 1 + 1 kron (L^dag L)^T) / 2``.
Qubit 0 is the most significant bit of a basis index.

Classical side: rate matrices on configuration space, built from lattice
coordinates independently of the engine's incidence tables.  Column ``i`` holds
the outflow of state ``i`` (``dp/dt = Q p``).  Site ``s`` is bit ``s`` of a
classical state index, matching the engine's occupation histogram.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .lattice import Model
from .rates import RateTable, Variant, inverse_temperature

MAX_DIM = 64

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": _I2, "X": _X, "Y": _Y, "Z": _Z}


class OracleError(ValueError):
    pass


class DimensionError(OracleError):
    pass


def pauli(label: str, n: int | None = None) -> np.ndarray:
    """Tensor product of Paulis, e.g. ``pauli("XIZ")``; qubit 0 leftmost."""
    n = len(label) if n is None else n
    if len(label) != n:
        raise OracleError(f"label {label!r} does not have {n} factors")
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


def single(op: str, site: int, n: int) -> np.ndarray:
    return pauli("".join(op if j == site else "I" for j in range(n)))


def basis_bits(n: int) -> np.ndarray:
    """Rows are the bit patterns of basis states, qubit 0 first."""
    idx = np.arange(2**n)
    return ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int64)


@dataclass
class Jump:
    label: str
    rate: float
    op: np.ndarray

    @property
    def scaled(self) -> np.ndarray:
        return math.sqrt(self.rate) * self.op


@dataclass
class Liouvillian:
    dim: int
    matrix: np.ndarray
    jumps: list = field(default_factory=list, repr=False)
    hamiltonian: np.ndarray | None = field(default=None, repr=False)
    _spectrum: np.ndarray | None = field(default=None, repr=False)

    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            self._spectrum = linalg.eigvals(self.matrix)
        return self._spectrum

    def trace_residual(self) -> float:
        vec_id = np.eye(self.dim).reshape(-1)
        return float(np.abs(vec_id @ self.matrix).max(initial=0.0))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.matrix @ rho.reshape(-1)).reshape(self.dim, self.dim)

    def evolve(self, rho: np.ndarray, t: float) -> np.ndarray:
        return (linalg.expm(self.matrix * t) @ rho.reshape(-1)).reshape(self.dim, self.dim)


def _as_jump(item, k: int) -> Jump:
    if isinstance(item, Jump):
        return item
    if isinstance(item, tuple):
        label, rate, op = item
        return Jump(str(label), float(rate), np.asarray(_dense(op), dtype=complex))
    return Jump(f"L{k}", 1.0, np.asarray(_dense(item), dtype=complex))


def _dense(op):
    return op.toarray() if sparse.issparse(op) else op


def dissipator(op: np.ndarray) -> np.ndarray:
    d = op.shape[0]
    one = np.eye(d)
    ldl = op.conj().T @ op
    return np.kron(op, op.conj()) - 0.5 * (np.kron(ldl, one) + np.kron(one, ldl.T))


def build_liouvillian(hilbert_dim: int, jump_list, hamiltonian=None,
                      tol: float = 1e-12) -> Liouvillian:
    """Dense Lindblad superoperator for the given jumps.

    Parameters
    ----------
    hilbert_dim : int
        Hilbert-space dimension ``d`` (at most 64).
    jump_list : iterable
        Operators, or ``(label, rate, operator)`` tuples / :class:`Jump`; the
        operator enters as ``sqrt(rate) * operator``.
    hamiltonian : array, optional
        Coherent part ``-i[H, rho]``; left out by default.
    """
    d = int(hilbert_dim)
    if d < 1 or d > MAX_DIM:
        raise DimensionError(f"Hilbert dimension {d} outside [1, {MAX_DIM}]")
    jumps = [_as_jump(item, k) for k, item in enumerate(jump_list)]
    M = np.zeros((d * d, d * d), dtype=complex)
    for j in jumps:
        if j.op.shape != (d, d):
            raise OracleError(f"jump {j.label} has shape {j.op.shape}, expected {(d, d)}")
        if j.rate < 0:
            raise OracleError(f"jump {j.label} has negative rate")
        M += dissipator(j.scaled)
    if hamiltonian is not None:
        H = np.asarray(_dense(hamiltonian), dtype=complex)
        if H.shape != (d, d):
            raise OracleError("Hamiltonian shape mismatch")
        one = np.eye(d)
        M += -1j * (np.kron(H, one) - np.kron(one, H.T))
    L = Liouvillian(d, M, jumps, hamiltonian)
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if L.trace_residual() > tol * scale:
        raise OracleError(f"not trace preserving (residual {L.trace_residual():.2e})")
    return L


@dataclass
class ZeroModes:
    count: int
    basis: list
    steady_states: list
    residual: float
    ill_conditioned: bool
    eigenvalues: np.ndarray = field(repr=False)


def zero_modes(liouvillian: Liouvillian, tol: float = 1e-9) -> ZeroModes:
    """Count eigenvalues within ``tol`` of zero and return a null-space basis.

    The basis comes from an SVD (robust for degenerate zero modes).  If the
    null-space dimension differs from the eigenvalue count, or the basis does
    not annihilate the generator to ``tol``, ``ill_conditioned`` is set.
    """
    M = liouvillian.matrix
    ev = liouvillian.spectrum()
    count = int(np.sum(np.abs(ev) < tol))
    ns = linalg.null_space(M, rcond=tol / max(1.0, float(np.abs(M).max(initial=1.0))))
    d = liouvillian.dim
    basis = [ns[:, k].reshape(d, d) for k in range(ns.shape[1])]
    residual = float(np.abs(M @ ns).max(initial=0.0))
    states = []
    for B in basis:
        for part in (0.5 * (B + B.conj().T), 0.5j * (B - B.conj().T)):
            tr = np.trace(part).real
            if abs(tr) > 1e-8:
                states.append(part / tr)
    return ZeroModes(count, basis, states, residual,
                     ill_conditioned=ns.shape[1] != count or residual > tol,
                     eigenvalues=ev)


# ---------------------------------------------------------------- classical


@dataclass
class ClassicalGenerator:
    Q: sparse.csc_matrix
    n_sites: int
    states: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def column_sum_residual(self) -> float:
        return float(np.abs(np.asarray(self.Q.sum(axis=0))).max())

    def is_irreducible(self) -> bool:
        n, _ = csgraph.connected_components(self.Q, directed=True, connection="strong")
        return n == 1


def _generator(n_states: int, src, dst, rate, n_sites: int, states, label):
    src = np.asarray(src)
    dst = np.asarray(dst)
    rate = np.asarray(rate, dtype=np.float64)
    keep = rate > 0
    src, dst, rate = src[keep], dst[keep], rate[keep]
    out = np.bincount(src, weights=rate, minlength=n_states)
    rows = np.concatenate([dst, np.arange(n_states)])
    cols = np.concatenate([src, np.arange(n_states)])
    vals = np.concatenate([rate, -out])
    Q = sparse.csc_matrix((vals, (rows, cols)), shape=(n_states, n_states))
    return ClassicalGenerator(Q, n_sites, states, label)


def _ising_bonds(model: Model, N: int) -> list:
    if model is Model.ISING1D:
        return [(j, (j + 1) % N) for j in range(N)]
    bonds = []
    for y in range(N):
        for x in range(N):
            v = y * N + x
            bonds.append((v, y * N + (x + 1) % N))
            bonds.append((v, ((y + 1) % N) * N + x))
    return bonds


def ising_generator(rates: RateTable, N: int) -> ClassicalGenerator:
    """Single-spin-flip rate matrix on all ``2**n`` spin configurations."""
    model = rates.model
    if model not in (Model.ISING2D, Model.ISING1D):
        raise OracleError("ising_generator needs an Ising rate table")
    n = N * N if model is Model.ISING2D else N
    if n > 20:
        raise DimensionError(f"{n} sites exceeds the 20-site classical cap")
    states = np.arange(2**n, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n)[None, :]) & 1
    bonds = np.array(_ising_bonds(model, N))
    violated = bits[:, bonds[:, 0]] ^ bits[:, bonds[:, 1]]
    k = np.zeros((states.size, n), dtype=np.int64)
    np.add.at(k.T, bonds[:, 0], violated.T)
    np.add.at(k.T, bonds[:, 1], violated.T)
    r = np.asarray(rates.rates)[k] + rates.noise + rates.field_rate * bits
    src = np.repeat(states, n)
    dst = (states[:, None] ^ (1 << np.arange(n))[None, :]).reshape(-1)
    return _generator(states.size, src, dst, r.reshape(-1), n, states,
                      f"{model.value} N={N}")


def ising_energy(states: np.ndarray, model: Model, N: int) -> np.ndarray:
    """Energy ``2 * (violated bonds)`` relative to the ordered state."""
    n = N * N if model is Model.ISING2D else N
    bits = (states[:, None] >> np.arange(n)[None, :]) & 1
    bonds = np.array(_ising_bonds(model, N))
    return 2.0 * (bits[:, bonds[:, 0]] ^ bits[:, bonds[:, 1]]).sum(axis=1)


def toric_syndrome_generator(rates: RateTable, N: int) -> ClassicalGenerator:
    """Star-syndrome dynamics of the 2D toric code on the even-parity sector.

    Each edge toggles its two end stars at rate ``kappa * k + noise`` where
    ``k`` counts excited end stars.  States are the syndrome patterns with an
    even number of excitations; ``states[i]`` holds the pattern bits.
    """
    if rates.model is not Model.TORIC2D:
        raise OracleError("toric_syndrome_generator needs a toric2d rate table")
    n = N * N
    if n > 20:
        raise DimensionError(f"{n} stars exceeds the 20-star cap")
    all_codes = np.arange(2**n, dtype=np.int64)
    parity = np.array([bin(c).count("1") % 2 for c in all_codes])
    states = all_codes[parity == 0]
    index = -np.ones(2**n, dtype=np.int64)
    index[states] = np.arange(states.size)
    edges = []
    for y in range(N):
        for x in range(N):
            v = y * N + x
            edges.append((v, y * N + (x + 1) % N))
            edges.append((v, ((y + 1) % N) * N + x))
    src, dst, rate = [], [], []
    for a, b in edges:
        ka = (states >> a) & 1
        kb = (states >> b) & 1
        r = rates.kappa * (ka + kb) + rates.noise
        src.append(np.arange(states.size))
        dst.append(index[states ^ ((1 << a) | (1 << b))])
        rate.append(r)
    gen = _generator(states.size, np.concatenate(src), np.concatenate(dst),
                     np.concatenate(rate), 2 * n, states, f"toric2d stars N={N}")
    return gen


def stationary_distribution(gen: ClassicalGenerator) -> np.ndarray:
    """Unique stationary vector by a direct sparse solve."""
    if not gen.is_irreducible():
        raise OracleError("generator is reducible; the stationary state is not unique")
    A = gen.Q.tolil(copy=True)
    A[gen.dim - 1, :] = np.ones(gen.dim)
    b = np.zeros(gen.dim)
    b[-1] = 1.0
    p = splinalg.spsolve(A.tocsc(), b)
    p = np.maximum(p.real, 0.0)
    return p / p.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class GibbsCheck:
    tv: float
    beta: float
    stationary: np.ndarray = field(repr=False)
    gibbs: np.ndarray = field(repr=False)


def gibbs_check(model, N: int, rates: RateTable) -> GibbsCheck:
    """Stationary state of the classical generator against Boltzmann weights."""
    model = Model(model)
    if rates.noise <= 0:
        raise OracleError("zero noise gives a reducible generator")
    if rates.model is not model:
        raise OracleError("rate table and model disagree")
    beta = inverse_temperature(model, rates.kappa, rates.noise)
    if model in (Model.ISING2D, Model.ISING1D):
        gen = ising_generator(rates, N)
        energy = ising_energy(gen.states, model, N)
    elif model is Model.TORIC2D:
        gen = toric_syndrome_generator(rates, N)
        energy = 2.0 * np.array([bin(int(c)).count("1") for c in gen.states])
    else:
        raise OracleError(f"no classical generator for {model.value}")
    p = stationary_distribution(gen)
    w = np.exp(-beta * (energy - energy.min()))
    g = w / w.sum()
    return GibbsCheck(total_variation(p, g), beta, p, g)


# ------------------------------------------------------------- symmetries


@dataclass
class SymmetryReport:
    left_residual: float
    right_residual: float
    both_residual: float
    strong: bool
    weak: bool
    sector_dims: dict
    sector_zero_modes: dict


def _sector_basis(ops_vals):
    # orthonormal basis of the joint +-1 eigenspace of commuting involutions
    mats = [m for m, _ in ops_vals]
    dim = mats[0].shape[0]
    proj = np.eye(dim, dtype=complex)
    for m, val in ops_vals:
        proj = proj @ (0.5 * (np.eye(dim) + val * m))
    u, s, _ = linalg.svd(proj)
    return u[:, s > 0.5]


def symmetry_blocks(liouvillian: Liouvillian, parity_op, tol: float = 1e-12,
                    zero_tol: float = 1e-9) -> SymmetryReport:
    """Strong/weak symmetry test and sector decomposition for one parity ``P``.

    Strong: ``L`` commutes with both ``P rho`` and ``rho P``; sectors are the
    four joint eigenspaces of left and right multiplication.  Weak only: ``L``
    commutes with ``P rho P^dag``; sectors are its two eigenspaces.
    """
    P = np.asarray(_dense(parity_op), dtype=complex)
    d = liouvillian.dim
    if P.shape != (d, d):
        raise OracleError("parity operator has the wrong shape")
    if not np.allclose(P @ P, np.eye(d), atol=1e-12):
        raise OracleError("parity operator is not an involution")
    one = np.eye(d)
    Pl = np.kron(P, one)
    Pr = np.kron(one, P.T)
    Pb = np.kron(P, P.conj())
    M = liouvillian.matrix
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))

    def comm(A):
        return float(np.abs(M @ A - A @ M).max(initial=0.0)) / scale

    rl, rr, rb = comm(Pl), comm(Pr), comm(Pb)
    strong = rl < tol and rr < tol
    weak = rb < tol
    dims, zeros = {}, {}
    if strong:
        sectors = {(a, b): [(Pl, a), (Pr, b)] for a in (1, -1) for b in (1, -1)}
    elif weak:
        sectors = {(a,): [(Pb, a)] for a in (1, -1)}
    else:
        sectors = {}
    for key, spec in sectors.items():
        B = _sector_basis(spec)
        dims[key] = B.shape[1]
        if B.shape[1]:
            block = B.conj().T @ M @ B
            zeros[key] = int(np.sum(np.abs(linalg.eigvals(block)) < zero_tol))
        else:
            zeros[key] = 0
    return SymmetryReport(rl, rr, rb, strong, weak, dims, zeros)


# ---------------------------------------------------------- model builders


def appendix_model(extra: str | None = None, gamma: float = 0.1) -> list:
    """Two-qubit model ``L = X_2 (1 - Z_1 Z_2) / 2`` with an optional extra jump.

    ``extra`` is ``"Z1"`` (dephasing of qubit 1) or ``"X1"``.
    """
    L = pauli("IX") @ (np.eye(4) - pauli("ZZ")) / 2
    jumps = [Jump("L", 1.0, L)]
    if extra == "Z1":
        jumps.append(Jump("Z1", gamma, pauli("ZI")))
    elif extra == "X1":
        jumps.append(Jump("X1", gamma, pauli("XI")))
    elif extra is not None:
        raise OracleError(f"unknown extra jump {extra!r}")
    return jumps


def ising_ring_jumps(n: int, rates: RateTable, dephasing: float = 0.0,
                     padded: bool = False) -> list:
    """Jump operators of the Ising ring in the computational basis.

    For site ``j`` with ``k`` violated adjacent bonds the correction jump is
    ``sqrt(r(k)) X_j P_{j,k}`` (``P_{j,k}`` projects onto such configurations);
    noise is ``sqrt(noise) X_j`` and dephasing ``sqrt(dephasing) Z_j``.  With
    ``padded`` every site also gets do-nothing jumps ``sqrt(R - r(k)) P_{j,k}``
    with ``R = max_k r(k)``, so that ``sum L^dag L`` is proportional to 1.
    """
    if n < 2:
        raise OracleError("ring needs at least two sites")
    if n > 6:
        raise DimensionError("ring larger than 6 sites exceeds the dense cap")
    bits = basis_bits(n)
    jumps = []
    r = np.asarray(rates.rates)
    z = len(r) - 1
    for j in range(n):
        left = bits[:, (j - 1) % n] ^ bits[:, j]
        right = bits[:, j] ^ bits[:, (j + 1) % n]
        k = left + right if n > 2 else 2 * left
        k = np.minimum(k, z)
        Xj = single("X", j, n)
        for kk in range(z + 1):
            diag = (k == kk).astype(complex)
            if not diag.any():
                continue
            Pjk = np.diag(diag)
            if r[kk] > 0:
                jumps.append(Jump(f"corr{j},{kk}", float(r[kk]), Xj @ Pjk))
            if padded and r.max() - r[kk] > 0:
                jumps.append(Jump(f"idle{j},{kk}", float(r.max() - r[kk]), Pjk))
        if rates.noise > 0:
            jumps.append(Jump(f"noise{j}", rates.noise, Xj))
        if dephasing > 0:
            jumps.append(Jump(f"deph{j}", dephasing, single("Z", j, n)))
    return jumps


def ising_ring_rates(kappa: float, noise: float) -> RateTable:
    return RateTable.for_model(Model.ISING1D, kappa, noise, Variant.DETAILED_BALANCE)


# ------------------------------------------------------- channel spectrum


def padded_total(jumps, dim: int, tol: float = 1e-10) -> float:
    """``K`` with ``sum L^dag L = K * 1``; raises if the set is not padded."""
    S = np.zeros((dim, dim), dtype=complex)
    for j in jumps:
        op = _as_jump(j, 0).scaled
        S += op.conj().T @ op
    K = float(np.trace(S).real / dim)
    if np.abs(S - K * np.eye(dim)).max() > tol * max(1.0, K):
        raise OracleError("jump set is not padded: sum L^dag L is not proportional to 1")
    return K


def channel_superoperator(jumps, dim: int) -> tuple[np.ndarray, float]:
    """Single-jump channel ``Lambda(rho) = sum L rho L^dag / K`` and ``K``."""
    K = padded_total(jumps, dim)
    S = np.zeros((dim * dim, dim * dim), dtype=complex)
    for j in jumps:
        op = _as_jump(j, 0).scaled
        S += np.kron(op, op.conj())
    if K == 0:
        return np.eye(dim * dim, dtype=complex), 0.0
    return S / K, K


@dataclass
class SpectrumCheck:
    mismatch: float
    K: float
    n_eigenvalues: int


def channel_spectrum_check(jumps, dim: int) -> SpectrumCheck:
    """Compare ``Spec(L)`` with ``K Spec(Lambda) - K`` after optimal pairing."""
    jumps = [_as_jump(j, k) for k, j in enumerate(jumps)]
    Lam, K = channel_superoperator(jumps, dim)
    L = build_liouvillian(dim, jumps)
    a = L.spectrum()
    b = K * linalg.eigvals(Lam) - K
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = optimize.linear_sum_assignment(cost)
    return SpectrumCheck(float(cost[rows, cols].max(initial=0.0)), K, a.size)


def random_padded_jumps(dim: int, n_jumps: int, rng: np.random.Generator) -> list:
    """Random complex jumps plus one padding jump ``sqrt(c - sum L^dag L)``."""
    ops = [(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / 2
           for _ in range(n_jumps)]
    S = sum(op.conj().T @ op for op in ops)
    c = float(np.linalg.eigvalsh(S).max()) * 1.1
    pad = linalg.sqrtm(c * np.eye(dim) - S)
    pad = 0.5 * (pad + pad.conj().T)
    return [Jump(f"R{k}", 1.0, op) for k, op in enumerate(ops)] + [Jump("pad", 1.0, pad)]


# ------------------------------------------------------- noiseless subsystem


def ring_code_basis(n: int) -> list:
    zero = np.zeros(2**n, dtype=complex)
    one = np.zeros(2**n, dtype=complex)
    zero[0] = 1.0
    one[-1] = 1.0
    return [zero, one]


def majority_decoder_kraus(n: int) -> list:
    """Kraus operators ``U_r P_r`` of the ring's majority decoder.

    Each domain pattern ``r`` pairs a configuration ``x`` with its global flip.
    The member with a majority of zeros maps to the all-zero state and its
    partner to the all-one state.  On ties (even ``n``) the domain that does
    not contain site 0 is flipped.
    """
    bits = basis_bits(n)
    d = 2**n
    full = d - 1
    kraus = []
    for x in range(d):
        xbar = full ^ x
        if x > xbar:
            continue
        ones = int(bits[x].sum())
        zero_rep = x if (2 * ones < n or (2 * ones == n and bits[x, 0] == 0)) else xbar
        other = full ^ zero_rep
        K = np.zeros((d, d), dtype=complex)
        K[0, zero_rep] = 1.0
        K[full, other] = 1.0
        kraus.append(K)
    return kraus


@dataclass
class NoiselessReport:
    logical_channel: np.ndarray
    coherence: float
    coherence_rate: float
    population_flip: float
    population_rate: float
    trace_distance: float
    t: float


def _trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(a - b)).sum())


def noiseless_subsystem_check(liouvillian: Liouvillian, code_basis, t: float = 10.0,
                              decoder_kraus=None) -> NoiselessReport:
    """Evolve the logical matrix units and decode back to a 2x2 logical matrix.

    ``logical_channel[2 i + j]`` is the decoded logical matrix for input
    ``|i><j|``.  The coherence is ``|rho_01|`` of the decoded ``|+>`` state,
    its rate ``-ln(2 |rho_01|) / t``.  The population flip is the decoded
    weight on ``|1>`` for input ``|0>``, with rate ``-ln(1 - 2 p) / (2 t)``.
    """
    d = liouvillian.dim
    V = np.column_stack(code_basis)
    prop = linalg.expm(liouvillian.matrix * t)
    kraus = decoder_kraus if decoder_kraus is not None else [np.eye(d)]
    chan = np.zeros((4, 2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            rho = np.outer(V[:, i], V[:, j].conj())
            out = (prop @ rho.reshape(-1)).reshape(d, d)
            dec = sum(K @ out @ K.conj().T for K in kraus)
            chan[2 * i + j] = V.conj().T @ dec @ V
    plus_in = 0.5 * np.ones((2, 2), dtype=complex)
    plus_out = 0.5 * chan.sum(axis=0)
    coh = float(abs(plus_out[0, 1]))
    p_flip = float(chan[0][1, 1].real)

    def rate(x):
        return -math.log(x) / t if x > 0 else float("inf")

    return NoiselessReport(chan, coh, rate(2 * coh) if t > 0 else 0.0, p_flip,
                           0.5 * rate(1 - 2 * p_flip) if t > 0 else 0.0,
                           _trace_distance(plus_out, plus_in), t)


def ring_noiseless_report(n: int, kappa: float = 1.0, noise: float = 0.1,
                          dephasing: float = 0.0, t: float = 10.0) -> NoiselessReport:
    rates = ising_ring_rates(kappa, noise)
    L = build_liouvillian(2**n, ising_ring_jumps(n, rates, dephasing))
    return noiseless_subsystem_check(L, ring_code_basis(n), t, majority_decoder_kraus(n))


# ------------------------------------------------------------ report


@dataclass
class CheckResult:
    name: str
    params: dict
    residual: float
    tolerance: float
    passed: bool
    comparison: str = "<"


def _check(name, params, residual, tol, comparison="<") -> CheckResult:
    ok = residual < tol if comparison == "<" else residual > tol
    return CheckResult(name, params, float(residual), float(tol), bool(ok), comparison)


def run_verification() -> list:
    """The default exact-verification suite; every entry has a pass flag."""
    out = []
    p = {"model": "ising2d", "N": 3, "kappa": 1.0, "noise": 0.02}
    db = RateTable.for_model("ising2d", 1.0, 0.02)
    out.append(_check("gibbs_ising_detailed_balance", p,
                      gibbs_check("ising2d", 3, db).tv, 1e-10))
    mr = RateTable.for_model("ising2d", 1.0, 0.02, Variant.MAJORITY_RULE)
    out.append(_check("gibbs_ising_majority_rule_deviates", {**p, "variant": "majority_rule"},
                      gibbs_check("ising2d", 3, mr).tv, 1e-3, ">"))
    tc = RateTable.for_model("toric2d", 1.0, 0.01)
    out.append(_check("gibbs_toric2d_stars", {"model": "toric2d", "N": 2, "kappa": 1.0,
                                              "noise": 0.01},
                      gibbs_check("toric2d", 2, tc).tv, 1e-10))
    zm = zero_modes(build_liouvillian(4, appendix_model()))
    out.append(_check("appendix_zero_modes", {"extra": None, "expected": 4},
                      abs(zm.count - 4), 0.5))
    zm = zero_modes(build_liouvillian(4, appendix_model("Z1", 0.1)))
    out.append(_check("appendix_zero_modes_dephased", {"extra": "Z1", "expected": 2},
                      abs(zm.count - 2), 0.5))
    ring = ising_ring_jumps(2, ising_ring_rates(1.0, 0.1), padded=True)
    out.append(_check("channel_spectrum_ring2", {"n": 2, "kappa": 1.0, "noise": 0.1},
                      channel_spectrum_check(ring, 4).mismatch, 1e-10))
    rng = np.random.default_rng(12345)
    worst = max(channel_spectrum_check(random_padded_jumps(4, 3, rng), 4).mismatch
                for _ in range(10))
    out.append(_check("channel_spectrum_random", {"draws": 10, "dim": 4}, worst, 1e-10))
    rr = ising_ring_rates(1.0, 0.1)
    flipP = pauli("XXXX")
    rep = symmetry_blocks(build_liouvillian(16, ising_ring_jumps(4, rr)), flipP)
    out.append(_check("strong_symmetry_bitflip", {"n": 4},
                      max(rep.left_residual, rep.right_residual), 1e-12))
    rep = symmetry_blocks(build_liouvillian(16, ising_ring_jumps(4, rr, dephasing=0.05)),
                          flipP)
    out.append(_check("strong_symmetry_broken_by_dephasing", {"n": 4, "dephasing": 0.05},
                      max(rep.left_residual, rep.right_residual), 1e-12, ">"))
    out.append(_check("weak_symmetry_with_dephasing", {"n": 4, "dephasing": 0.05},
                      rep.both_residual, 1e-12))
    return out


def report_json(results) -> str:
    payload = {"checks": [asdict(r) for r in results],
               "passed": all(r.passed for r in results)}
    return json.dumps(payload, indent=2, sort_keys=True)


def exhaustive_pairings(items):
    """All perfect matchings of ``items`` (used as a brute-force reference)."""
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    for k in range(1, len(items)):
        rest = items[1:k] + items[k + 1:]
        for tail in exhaustive_pairings(rest):
            yield [(first, items[k])] + tail
