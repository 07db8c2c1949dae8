import math

import numpy as np
import pytest
from scipy import linalg, stats

from dissipmem import engine
from dissipmem.engine import (BernoulliStart, CapacityError, EngineConfig, EnsembleError,
                              RNGStream, Scheme, Trajectory, evolve_constant_rate,
                              first_passage_time, global_step, run_ensemble,
                              run_trajectory, single_jump)
from dissipmem.lattice import StabilizerConfig, build_geometry
from dissipmem.oracle import ising_generator
from dissipmem.rates import RateTable

G33 = build_geometry("ising2d", 3)


def ising_rates(noise, **kw):
    return RateTable.for_model("ising2d", 1.0, noise, **kw)


def test_rng_streams_are_keyed():
    a = RNGStream(1, 0).state
    assert np.array_equal(a, RNGStream(1, 0).state)
    assert not np.array_equal(a, RNGStream(1, 1).state)
    assert not np.array_equal(a, RNGStream(2, 0).state)
    with pytest.raises(ValueError):
        RNGStream(state=[0, 0, 0, 0])


def test_zero_noise_reference_is_absorbing():
    c = StabilizerConfig(G33)
    rng = RNGStream(0, 0)
    r = ising_rates(0.0)
    for _ in range(100):
        single_jump(c, r, rng)
    global_step(c, r, rng, n=50)
    assert c == StabilizerConfig(G33)


def test_k4_site_flips_whenever_selected():
    # one flipped spin at zero noise: its neighbours have k=1 (rate 0), so the
    # only possible move is the k=4 flip, taken whenever site 0 is selected
    r = ising_rates(0.0)
    traj = Trajectory(StabilizerConfig(G33).flip(0), r, seed=3)
    fixed = 0
    n = 18_000
    for _ in range(n):
        traj.single_jump()
        if traj.config.n_flipped == 0:
            fixed += 1
            traj.config.flip(0)
        assert traj.config.n_flipped == 1 and traj.config.bits[0] == 1
    p = 1 / 9
    assert abs(fixed / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_k3_flip_frequency():
    r = ising_rates(0.02)
    start = StabilizerConfig(G33).flip(0).flip(1)
    assert start.counts[0] == 3
    traj = Trajectory(start.copy(), r, seed=5)
    n = 300_000
    hits = 0
    for _ in range(n):
        before = traj.config.bits.copy()
        traj.single_jump()
        diff = np.flatnonzero(before != traj.config.bits)
        if diff.size:
            if diff[0] == 0:
                hits += 1
            traj.config.flip(int(diff[0]))
    p = (1 / 9) * (r.kappa_tilde + r.noise) / r.total_rate
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_single_error_survival_one_global_step():
    # survival of an isolated error through one global step at zero noise is
    # exactly (8/9)^9: the error site must avoid all nine selections
    r = ising_rates(0.0)
    trials = 20_000
    survived = 0
    for i in range(trials):
        c = StabilizerConfig(G33).flip(4)
        global_step(c, r, RNGStream(17, i))
        survived += c.n_flipped == 1
    p = (8 / 9) ** 9
    assert abs(survived / trials - p) < 4 * math.sqrt(p * (1 - p) / trials)


def test_time_bookkeeping():
    r = ising_rates(0.02)
    traj = Trajectory(StabilizerConfig(G33), r)
    traj.global_step(100)
    assert traj.time == pytest.approx(100 / 1.02)
    assert traj.events == 900
    cfg = EngineConfig(t_max=100 / 1.02, record_stride=1)
    rec = run_trajectory(StabilizerConfig(G33), r, cfg, 0)
    assert rec.times.size == 101
    assert rec.times[-1] == pytest.approx(100 / 1.02)
    assert np.all(np.diff(rec.times) > 0)


def test_series_length_formula():
    r = ising_rates(0.1)
    cfg = EngineConfig(t_max=50.0, record_stride=10)
    rec = run_trajectory(StabilizerConfig(G33), r, cfg, 0)
    assert rec.times.size == math.floor(50.0 / (10 / 1.1)) + 1


def test_constant_rate_zero_time_and_event_mean():
    r = ising_rates(0.02)
    c = StabilizerConfig(G33).flip(2)
    assert evolve_constant_rate(c, r, RNGStream(0, 0), 0.0) == c
    counts = np.array([Trajectory(StabilizerConfig(G33), r, seed=9, traj_index=i)
                       .evolve_constant_rate(1.0) for i in range(10_000)])
    assert abs(counts.mean() - 9.18) < 3 * math.sqrt(9.18 / counts.size)
    assert counts.var() == pytest.approx(9.18, rel=0.1)


@pytest.mark.parametrize("model,N,noise,t,obs", [
    ("ising2d", 3, 0.3, 4.0, "magnetization"),
    ("toric2d", 2, 0.2, 2.0, "mean_stabilizer"),
])
def test_schemes_are_indistinguishable(model, N, noise, t, obs):
    g = build_geometry(model, N)
    r = RateTable.for_model(model, 1.0, noise)
    samples = []
    for scheme in (Scheme.GLOBAL, Scheme.CONSTANT_RATE):
        cfg = EngineConfig(scheme=scheme, seed=21 if scheme is Scheme.GLOBAL else 22,
                           n_trajectories=3000, t_max=t, record_stride=1000)
        recs = run_ensemble(StabilizerConfig(g), r, cfg,
                            postprocess=lambda rec: float(getattr(rec.final, obs)))
        samples.append(np.array(recs))
    assert stats.ks_2samp(*samples).pvalue > 0.01


def test_determinism_and_digest():
    r = ising_rates(0.05)
    cfg = EngineConfig(seed=99, t_max=30.0, record_stride=3, probes=(0, 4))
    a = run_trajectory(StabilizerConfig(G33), r, cfg, 7)
    b = run_trajectory(StabilizerConfig(G33), r, cfg, 7)
    c = run_trajectory(StabilizerConfig(G33), r, cfg, 8)
    assert a.to_bytes() == b.to_bytes() and a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_zero_noise_ferromagnet_stays_put():
    rec = run_trajectory(StabilizerConfig(build_geometry("ising2d", 5)), ising_rates(0.0),
                         EngineConfig(t_max=20.0), 0)
    assert np.all(rec.magnetization == 1.0)
    assert rec.jump_counts["noise"] == 0 and rec.jump_counts["correction"] == 0


def _final_abs_m(N, n_traj, seed=4):
    g = build_geometry("ising2d", N)
    cfg = EngineConfig(seed=seed, n_trajectories=n_traj, t_max=800.0, record_stride=100)
    return np.array(run_ensemble(StabilizerConfig(g), ising_rates(0.02), cfg,
                                 postprocess=lambda rec: abs(rec.final.magnetization)))


@pytest.mark.xfail(strict=True, reason="equilibrium |m| at beta=0.4915 is 0.899, so "
                   "about a third of a 9x9 ensemble sits below 0.9; see the ledger")
def test_ising_9x9_fraction_above_09():
    assert np.mean(_final_abs_m(9, 1000) > 0.9) >= 0.99


def test_ordered_quench_reaches_onsager_magnetization():
    beta = math.log(51) / 8
    onsager = (1 - math.sinh(2 * beta) ** -4) ** 0.125
    m = _final_abs_m(32, 400)
    assert abs(m.mean() - onsager) < 4 * m.std(ddof=1) / math.sqrt(m.size) + 0.005
    m9 = _final_abs_m(9, 1000)
    assert np.mean(m9 > 0.5) >= 0.97


def test_serial_equals_parallel():
    r = ising_rates(0.05)
    cfg = EngineConfig(seed=5, n_trajectories=16, t_max=20.0, record_stride=2)
    d1 = [x.digest() for x in run_ensemble(StabilizerConfig(G33), r, cfg, n_threads=1)]
    d4 = [x.digest() for x in run_ensemble(StabilizerConfig(G33), r, cfg, n_threads=4)]
    assert d1 == d4


def test_threads_env(monkeypatch):
    monkeypatch.setenv(engine.THREADS_ENV, "3")
    assert engine.default_threads() == 3


def test_ensemble_initial_mean_and_error_scaling():
    g = build_geometry("ising2d", 4)
    r = ising_rates(0.2)
    errs = []
    for M in (100, 1000, 10_000):
        cfg = EngineConfig(seed=1, n_trajectories=M, t_max=2.0, record_stride=1)
        m = np.array(run_ensemble(BernoulliStart(0.3), r, cfg, geometry=g,
                                  postprocess=lambda rec: rec.magnetization[[0, -1]]))
        if M == 100:
            start = StabilizerConfig(g)
        errs.append(2 * m[:, 1].std(ddof=1) / math.sqrt(M))
    assert errs[0] / errs[1] == pytest.approx(math.sqrt(10), rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(math.sqrt(10), rel=0.2)
    cfg = EngineConfig(seed=1, n_trajectories=50, t_max=2.0)
    recs = run_ensemble(start, r, cfg)
    assert np.mean([rec.magnetization[0] for rec in recs]) == 1.0


def test_checkpoint_resume_is_exact():
    r = ising_rates(0.05)
    a = Trajectory(StabilizerConfig(build_geometry("ising2d", 4)), r, seed=8, traj_index=2)
    a.global_step(10)
    blob = a.checkpoint()
    assert blob.startswith(b"DMEM1")
    b = Trajectory.from_checkpoint(blob, r)
    a.global_step(25)
    b.global_step(25)
    assert a.config == b.config and a.jump_counts == b.jump_counts
    assert a.time == b.time and a.events == b.events
    with pytest.raises(ValueError):
        Trajectory.from_checkpoint(b"junk" + blob, r)


def test_rate_model_mismatch():
    with pytest.raises(ValueError):
        Trajectory(StabilizerConfig(G33), RateTable.for_model("toric2d", 1, 0.1))


def test_engine_config_validation():
    for kw in (dict(t_max=0), dict(record_stride=0), dict(burn_in=-1),
               dict(n_trajectories=0), dict(seed=-1)):
        with pytest.raises(ValueError):
            EngineConfig(**kw)


def test_capacity_error():
    cfg = EngineConfig(t_max=1e12, record_stride=1)
    with pytest.raises(CapacityError):
        run_trajectory(StabilizerConfig(G33), ising_rates(0.1), cfg, 0)


def test_probe_out_of_range_reported_per_trajectory():
    cfg = EngineConfig(t_max=1.0, n_trajectories=3, probes=(99,))
    with pytest.raises(EnsembleError) as err:
        run_ensemble(StabilizerConfig(G33), ising_rates(0.1), cfg)
    assert sorted(err.value.failures) == [0, 1, 2]


def test_padding_fractions():
    # from the reference state with zero corrections possible, events split into
    # noise (noise / R) and do-nothing (rest) exactly in expectation
    r = ising_rates(0.25)
    traj = Trajectory(StabilizerConfig(build_geometry("ising2d", 12)), r, seed=2)
    traj.single_jump()
    jc = traj.jump_counts
    assert sum(jc.values()) == 1
    rec = run_trajectory(StabilizerConfig(G33), r, EngineConfig(t_max=2000.0), 0)
    total = sum(rec.jump_counts.values())
    assert total == rec.events
    frac = rec.jump_counts["noise"] / total
    assert frac == pytest.approx(0.25 / 1.25, abs=4 * math.sqrt(0.16 / total))


def test_field_drives_spins_up():
    r = ising_rates(0.0, field_rate=0.5)
    g = build_geometry("ising2d", 4)
    down = StabilizerConfig(g, np.ones(16))
    t = first_passage_time(down, r, 0, 0, t_max=500.0)
    assert t is not None and t > 0
    assert first_passage_time(StabilizerConfig(g), r, 0, 0, 10.0) == 0.0
    rec = run_trajectory(down, r, EngineConfig(t_max=200.0), 0)
    assert rec.final.n_flipped == 0
    assert rec.jump_counts["noise"] == 0 and rec.jump_counts["field"] > 0


def test_first_passage_censoring():
    r = ising_rates(0.0)
    down = StabilizerConfig(G33, np.ones(9))
    assert first_passage_time(down, r, 0, 0, t_max=10.0) is None


def test_transient_matches_exact_generator():
    """Ensemble <m(t)> from the constant-rate scheme against expm(Q t)."""
    r = ising_rates(0.3)
    gen = ising_generator(r, 3)
    p0 = np.zeros(gen.dim)
    p0[0] = 1.0
    pops = np.array([bin(s).count("1") for s in range(gen.dim)])
    mags = (9 - 2 * pops) / 9
    t = 4 * r.dt  # run_trajectory works in whole global steps
    exact = mags @ (linalg.expm(gen.Q.toarray() * t) @ p0)
    cfg = EngineConfig(scheme=Scheme.CONSTANT_RATE, seed=12, n_trajectories=20_000,
                       t_max=t, record_stride=10_000)
    m = np.array(run_ensemble(StabilizerConfig(G33), r, cfg,
                              postprocess=lambda rec: rec.final.magnetization))
    assert abs(m.mean() - exact) < 4 * m.std(ddof=1) / math.sqrt(m.size)


def test_stationary_low_noise_longer_run():
    from dissipmem.oracle import gibbs_check, total_variation

    r = ising_rates(0.02)
    p = engine.occupation_distribution(StabilizerConfig(G33), r, 4 * 10**7, seed=3,
                                       burn_events=10**5)
    assert total_variation(p, gibbs_check("ising2d", 3, r).stationary) < 0.01
