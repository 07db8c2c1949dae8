"""Compiled inner loops: random numbers, incremental flips and jump sweeps.

All kernels operate on plain arrays so that a trajectory is fully described by
``(bits, syndrome, counts, tallies, rng_state)``.  ``tallies[0]`` holds the
number of flipped sites and ``tallies[1]`` the number of violated stabilizers.

The generator is xoshiro256** (Blackman & Vigna).  Its 256-bit state is seeded
per trajectory from ``numpy.random.SeedSequence([seed, traj_index])``.
"""

import numpy as np
from numba import njit, uint64, int64

_TWO_M53 = 1.0 / 9007199254740992.0
_MASK32 = 0xFFFFFFFF

# jump-count slots
NOISE, CORRECTION, FIELD, IDLE = 0, 1, 2, 3


@njit(inline="always")
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@njit(inline="always")
def next_u64(s):
    result = _rotl(s[1] * uint64(5), 7) * uint64(9)
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(inline="always")
def next_double(s):
    return float(next_u64(s) >> uint64(11)) * _TWO_M53


@njit(inline="always")
def next_below(s, n):
    # Lemire's multiply-shift on the top 32 bits, with rejection (exactly uniform).
    n32 = uint64(n)
    m = (next_u64(s) >> uint64(32)) * n32
    low = m & uint64(_MASK32)
    if low < n32:
        thresh = (uint64(0x100000000) - n32) % n32
        while low < thresh:
            m = (next_u64(s) >> uint64(32)) * n32
            low = m & uint64(_MASK32)
    return int64(m >> uint64(32))


@njit(inline="always")
def _flip(s, bits, syn, cnt, tallies, s2t, t2s):
    b = bits[s] ^ 1
    bits[s] = b
    if b:
        tallies[0] += 1
    else:
        tallies[0] -= 1
    for a in range(s2t.shape[1]):
        t = s2t[s, a]
        v = syn[t] ^ 1
        syn[t] = v
        d = 1 if v else -1
        tallies[1] += d
        for c in range(t2s.shape[1]):
            cnt[t2s[t, c]] += d


@njit(nogil=True, cache=True)
def flip_site(s, bits, syn, cnt, tallies, s2t, t2s):
    _flip(s, bits, syn, cnt, tallies, s2t, t2s)


@njit(nogil=True, cache=True)
def recompute(bits, syn, cnt, tallies, s2t, t2s):
    """Rebuild syndrome, counts and tallies from ``bits`` by a full parity scan."""
    syn[:] = 0
    for t in range(t2s.shape[0]):
        p = 0
        for c in range(t2s.shape[1]):
            p ^= bits[t2s[t, c]]
        syn[t] = p
    tallies[0] = 0
    tallies[1] = 0
    for s in range(bits.shape[0]):
        tallies[0] += bits[s]
        k = 0
        for a in range(s2t.shape[1]):
            k += syn[s2t[s, a]]
        cnt[s] = k
    for t in range(syn.shape[0]):
        tallies[1] += syn[t]


@njit(nogil=True, cache=True)
def advance(n_max, duration, bits, syn, cnt, tallies, s2t, t2s, rate_by_count, noise,
            field, r_total, rng, jcounts, hist):
    """Core jump loop shared by every driver.

    With ``duration < 0`` exactly ``n_max`` jumps are applied.  Otherwise jumps
    arrive as a Poisson process of rate ``n * r_total`` on ``[0, duration)``; the
    overshooting arrival is discarded, which is exact by memorylessness.  If
    ``hist`` is non-empty, the configuration code ``sum(bits[s] << s)`` is
    counted after every event.  Returns the number of events applied.

    The jump body lives here (not in a helper) because passing arrays into a
    separate compiled function per jump costs refcount traffic on every call.
    """
    n = bits.shape[0]
    poisson = duration >= 0.0
    total_rate = n * r_total
    track = hist.shape[0] > 0
    code = 0
    if track:
        for s in range(n):
            code |= int64(bits[s]) << s
    t = 0.0
    k = 0
    while True:
        if poisson:
            t += -np.log1p(-next_double(rng)) / total_rate
            if t >= duration:
                break
        elif k >= n_max:
            break
        k += 1
        s = next_below(rng, n)
        v = next_double(rng) * r_total
        flip = True
        if v < noise:
            jcounts[0] += 1
        elif v < noise + field:
            if bits[s] == 1:
                jcounts[2] += 1
            else:
                jcounts[3] += 1
                flip = False
        elif v - noise - field < rate_by_count[cnt[s]]:
            jcounts[1] += 1
        else:
            jcounts[3] += 1
            flip = False
        if flip:
            _flip(s, bits, syn, cnt, tallies, s2t, t2s)
            if track:
                code ^= int64(1) << s
        if track:
            hist[code] += 1
    return k


@njit(nogil=True, cache=True)
def apply_jumps(n_jumps, bits, syn, cnt, tallies, s2t, t2s, rate_by_count, noise,
                field, r_total, rng, jcounts):
    advance(n_jumps, -1.0, bits, syn, cnt, tallies, s2t, t2s, rate_by_count, noise,
            field, r_total, rng, jcounts, np.zeros(0, dtype=np.int64))


@njit(nogil=True, cache=True)
def poisson_interval(duration, bits, syn, cnt, tallies, s2t, t2s, rate_by_count,
                     noise, field, r_total, rng, jcounts):
    """Apply jumps at Poisson arrival times on ``[0, duration)``; returns the count."""
    return advance(0, duration, bits, syn, cnt, tallies, s2t, t2s, rate_by_count,
                   noise, field, r_total, rng, jcounts, np.zeros(0, dtype=np.int64))


@njit(nogil=True, cache=True)
def run_global(burn_steps, n_records, stride, tail_steps, bits, syn, cnt, tallies,
               s2t, t2s, rate_by_count, noise, field, r_total, rng, jcounts,
               probes, out_pop, out_syn, out_probe):
    n = bits.shape[0]
    apply_jumps(burn_steps * n, bits, syn, cnt, tallies, s2t, t2s, rate_by_count,
                noise, field, r_total, rng, jcounts)
    for r in range(n_records):
        if r > 0:
            apply_jumps(stride * n, bits, syn, cnt, tallies, s2t, t2s,
                        rate_by_count, noise, field, r_total, rng, jcounts)
        out_pop[r] = tallies[0]
        out_syn[r] = tallies[1]
        for p in range(probes.shape[0]):
            out_probe[r, p] = bits[probes[p]]
    apply_jumps(tail_steps * n, bits, syn, cnt, tallies, s2t, t2s, rate_by_count,
                noise, field, r_total, rng, jcounts)


@njit(nogil=True, cache=True)
def run_poisson(burn_time, n_records, record_dt, tail_time, bits, syn, cnt, tallies,
                s2t, t2s, rate_by_count, noise, field, r_total, rng, jcounts,
                probes, out_pop, out_syn, out_probe):
    events = 0
    if burn_time > 0.0:
        events += poisson_interval(burn_time, bits, syn, cnt, tallies, s2t, t2s,
                                   rate_by_count, noise, field, r_total, rng, jcounts)
    for r in range(n_records):
        if r > 0:
            events += poisson_interval(record_dt, bits, syn, cnt, tallies, s2t, t2s,
                                       rate_by_count, noise, field, r_total, rng,
                                       jcounts)
        out_pop[r] = tallies[0]
        out_syn[r] = tallies[1]
        for p in range(probes.shape[0]):
            out_probe[r, p] = bits[probes[p]]
    if tail_time > 0.0:
        events += poisson_interval(tail_time, bits, syn, cnt, tallies, s2t, t2s,
                                   rate_by_count, noise, field, r_total, rng, jcounts)
    return events


@njit(nogil=True, cache=True)
def first_passage(max_steps, pop_threshold, bits, syn, cnt, tallies, s2t, t2s,
                  rate_by_count, noise, field, r_total, rng, jcounts):
    """Global steps until the flipped-site count drops below ``pop_threshold``.

    Returns the number of completed global steps, or -1 if ``max_steps`` ran out.
    """
    n = bits.shape[0]
    for step in range(1, max_steps + 1):
        apply_jumps(n, bits, syn, cnt, tallies, s2t, t2s, rate_by_count, noise,
                    field, r_total, rng, jcounts)
        if tallies[0] < pop_threshold:
            return step
    return -1


@njit(nogil=True, cache=True)
def bernoulli_bits(bits, p, rng):
    for s in range(bits.shape[0]):
        bits[s] = 1 if next_double(rng) < p else 0


@njit(nogil=True, cache=True)
def occupation_histogram(n_events, bits, syn, cnt, tallies, s2t, t2s, rate_by_count,
                         noise, field, r_total, rng, jcounts, hist):
    """Count the configuration index after every event (uniformized chain).

    Only meaningful for ``n_sites <= 30``; the index is ``sum(bits[s] << s)``.
    """
    advance(n_events, -1.0, bits, syn, cnt, tallies, s2t, t2s, rate_by_count, noise,
            field, r_total, rng, jcounts, hist)
