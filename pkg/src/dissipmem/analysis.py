"""Autocorrelation estimates, exponential fits and derived scans.

Lags and times are in units of the sampling interval unless a ``dt`` is given.
Decay rates returned by the fits are in inverse lag units, so ``tau = 1 / gamma``
is in units of the global step when the series is recorded every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats
from sklearn.base import BaseEstimator

from . import engine as _engine
from .lattice import Model, StabilizerConfig, build_geometry
from .rates import RateTable, Variant

WINDOW_FLOOR = 0.05


class FitError(ValueError):
    """No usable window, or the data do not decay."""


class ResolutionError(ValueError):
    """An overlap equals one exactly: more trajectories are needed."""


@dataclass
class AutocorrEstimate:
    lags: np.ndarray
    chi: np.ndarray
    variance_at_zero: float
    n_samples: int
    per_series: np.ndarray | None = field(default=None, repr=False)


def _lag_products(x: np.ndarray, max_lag: int) -> np.ndarray:
    # sum_t x[t] x[t+k] for k = 0..max_lag, rows independently, via FFT
    n = x.shape[-1]
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, size, axis=-1)
    acf = np.fft.irfft(f * np.conj(f), size, axis=-1)
    return acf[..., : max_lag + 1]


def autocorrelation(series, max_lag: int, dt: float = 1.0,
                    keep_per_series: bool = False) -> AutocorrEstimate:
    """Mean-subtracted, unbiased lag-product autocorrelation.

    Parameters
    ----------
    series : array_like
        One series, or a 2D array with one stationary series per row.  The
        estimate is the average of the per-row estimates.
    max_lag : int
        Largest lag.  Every series must be at least ``10 * max_lag`` long.
    dt : float
        Sampling interval; sets the units of ``lags``.
    """
    x = np.atleast_2d(np.asarray(series, dtype=np.float64))
    n = x.shape[1]
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if n < 10 * max(max_lag, 1):
        raise ValueError(f"series of length {n} is too short for max_lag={max_lag}")
    flat = np.ptp(x, axis=1) == 0
    x = x - x.mean(axis=1, keepdims=True)
    x[flat] = 0.0  # the mean of a constant row need not round back to it
    raw = _lag_products(x, max_lag)
    per = raw / (n - np.arange(max_lag + 1))
    per[np.abs(per) < 1e-300] = 0.0
    chi = per.mean(axis=0)
    # exact zero for constant input (FFT round-off otherwise leaves ~1e-17)
    if not np.any(x):
        chi = np.zeros_like(chi)
        per = np.zeros_like(per)
    return AutocorrEstimate(np.arange(max_lag + 1) * dt, chi, float(chi[0]), x.size,
                            per if keep_per_series else None)


def fit_window(chi: np.ndarray, floor: float = WINDOW_FLOOR) -> tuple[int, int]:
    """Default window ``[1, hi)``: stop where chi drops below ``floor * chi[0]``."""
    chi = np.asarray(chi)
    if chi.size < 2 or not chi[0] > 0:
        raise FitError("autocorrelation has no positive variance")
    bad = np.flatnonzero((chi[1:] <= 0) | (chi[1:] < floor * chi[0]))
    hi = int(bad[0]) + 1 if bad.size else chi.size
    if hi - 1 < 2:
        raise FitError("no positive decay window (fewer than two lags above the floor)")
    return 1, hi


@dataclass
class ExpFit:
    """Sum-of-exponentials fit ``sum_i c_i exp(-gamma_i t)``.

    Rates are sorted ascending.  ``residual`` is the Euclidean norm of the
    linear-space residual over the window.
    """

    amplitudes: tuple
    rates: tuple
    residual: float
    window: tuple
    degenerate: bool = False
    converged: bool = True
    message: str = ""

    @property
    def gamma1(self) -> float:
        return self.rates[0]

    @property
    def gamma2(self) -> float:
        return self.rates[-1]

    @property
    def tau(self) -> float:
        return 1.0 / self.rates[0]

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return sum(c * np.exp(-g * t) for c, g in zip(self.amplitudes, self.rates))

    def to_dict(self) -> dict:
        return {"amplitudes": list(self.amplitudes), "rates": list(self.rates),
                "residual": self.residual, "window": list(self.window),
                "degenerate": self.degenerate, "converged": self.converged,
                "message": self.message}


def _window_data(estimate: AutocorrEstimate, window):
    lo, hi = fit_window(estimate.chi) if window is None else window
    t = np.asarray(estimate.lags[lo:hi], dtype=np.float64)
    y = np.asarray(estimate.chi[lo:hi], dtype=np.float64)
    if t.size < 2:
        raise FitError(f"window [{lo}, {hi}) holds fewer than two points")
    bad = np.flatnonzero(y <= 0)
    if bad.size:
        raise FitError(f"chi is non-positive at lag index {lo + int(bad[0])}; "
                       f"shrink the window below it")
    return (lo, hi), t, y


def fit_single_exp(estimate: AutocorrEstimate, window=None) -> ExpFit:
    """Straight-line fit of ``ln chi`` against lag over the window."""
    win, t, y = _window_data(estimate, window)
    slope, intercept = np.polyfit(t, np.log(y), 1)
    gamma = -slope
    if not gamma > 0:
        raise FitError(f"no decay in window (fitted rate {gamma:.3g})")
    c = math.exp(intercept)
    res = float(np.linalg.norm(y - c * np.exp(-gamma * t)))
    return ExpFit((c,), (gamma,), res, win)


def _slope_rate(t, y):
    if t.size < 2:
        return float("nan")
    return -np.polyfit(t, np.log(y), 1)[0]


def fit_double_exp(estimate: AutocorrEstimate, window=None,
                   max_nfev: int = 2000, rel_gap: float = 0.05) -> ExpFit:
    """Nonlinear least-squares fit of ``c1 exp(-g1 t) + c2 exp(-g2 t)``.

    Parameters are optimized in log space (so they stay positive) against the
    linear-space residual.  The result never has a larger residual than the
    single-exponential fit on the same window: if the single fit is better, or
    the two rates merge, or one amplitude vanishes, the single-exponential
    result is returned with ``degenerate=True``.
    """
    win, t, y = _window_data(estimate, window)
    # everything below runs on chi / chi[lo], so rescaling chi rescales only
    # the amplitudes
    scale = y[0]
    normed = AutocorrEstimate(estimate.lags, estimate.chi / scale, 1.0, estimate.n_samples)
    single = fit_single_exp(normed, win)
    yn = y / scale
    k = max(2, t.size // 4)
    g_fast = _slope_rate(t[:k], yn[:k])
    g_slow = _slope_rate(t[t.size // 2:], yn[t.size // 2:])
    g_ref = single.rates[0]
    if not (np.isfinite(g_slow) and g_slow > 0):
        g_slow = g_ref
    if not (np.isfinite(g_fast) and g_fast > 0):
        g_fast = 3 * g_ref
    g_slow = min(g_slow, g_ref)
    g_fast = max(g_fast, 3 * g_slow)
    basis = np.exp(-np.outer(t, [g_slow, g_fast]))
    amps = np.linalg.lstsq(basis, yn, rcond=None)[0]
    amps = np.maximum(amps, 1e-3 * max(yn[0], 1e-12))

    def resid(p):
        c1, g1, c2, g2 = np.exp(p)
        return c1 * np.exp(-g1 * t) + c2 * np.exp(-g2 * t) - yn

    # keep rates within four decades of the single-exponential rate
    lower = np.log([1e-9, g_ref * 1e-4, 1e-9, g_ref * 1e-4])
    upper = np.log([1e3, g_ref * 1e4, 1e3, g_ref * 1e4])
    p0 = np.clip(np.log([amps[0], g_slow, amps[1], g_fast]), lower + 1e-9, upper - 1e-9)
    converged, message = True, ""
    try:
        sol = optimize.least_squares(resid, p0, bounds=(lower, upper), method="trf",
                                     max_nfev=max_nfev, x_scale="jac",
                                     ftol=1e-14, xtol=1e-14, gtol=1e-14)
        p = sol.x
        converged = bool(sol.success)
        message = sol.message
    except (ValueError, FloatingPointError) as exc:
        p, converged, message = p0, False, str(exc)
    c1, g1, c2, g2 = np.exp(p)
    if g1 > g2:
        c1, g1, c2, g2 = c2, g2, c1, g1
    c1 *= scale
    c2 *= scale
    model = c1 * np.exp(-g1 * t) + c2 * np.exp(-g2 * t)
    res = float(np.linalg.norm(y - model))
    total = abs(c1) + abs(c2)
    degenerate = (abs(g2 - g1) <= rel_gap * g2 or min(c1, c2) < 1e-3 * total
                  or not np.isfinite(res))
    plain = fit_single_exp(estimate, win)
    if degenerate or res > plain.residual:
        why = "rates merged or amplitude vanished" if degenerate else \
            "single exponential fits better"
        return replace(plain, degenerate=True, converged=converged, message=why)
    return ExpFit((float(c1), float(c2)), (float(g1), float(g2)), res, win,
                  converged=converged, message=str(message))


class _ExpEstimator(BaseEstimator):
    def _estimate(self, lags, chi):
        lags = np.asarray(lags, dtype=np.float64)
        chi = np.asarray(chi, dtype=np.float64)
        return AutocorrEstimate(lags, chi, float(chi[0]), chi.size)

    def predict(self, lags):
        return self.fit_(lags)

    def score(self, lags, chi):
        """Coefficient of determination of the fitted curve."""
        chi = np.asarray(chi, dtype=np.float64)
        r = chi - self.predict(lags)
        return 1.0 - float(r @ r) / float(((chi - chi.mean()) ** 2).sum())


class SingleExpEstimator(_ExpEstimator):
    """Estimator wrapper around :func:`fit_single_exp`."""

    def __init__(self, window=None):
        self.window = window

    def fit(self, lags, chi):
        self.fit_ = fit_single_exp(self._estimate(lags, chi), self.window)
        self.rates_ = np.array(self.fit_.rates)
        self.tau_ = self.fit_.tau
        return self


class DoubleExpEstimator(_ExpEstimator):
    """Estimator wrapper around :func:`fit_double_exp`."""

    def __init__(self, window=None, max_nfev=2000):
        self.window = window
        self.max_nfev = max_nfev

    def fit(self, lags, chi):
        self.fit_ = fit_double_exp(self._estimate(lags, chi), self.window,
                                   self.max_nfev)
        self.rates_ = np.array(self.fit_.rates)
        self.degenerate_ = self.fit_.degenerate
        return self


@dataclass
class ScanPoint:
    noise_rate: float
    tau: float
    tau_err: float
    gamma1: float
    gamma2: float
    residual: float
    n_samples: int
    single: ExpFit | None = None
    double: ExpFit | None = None
    estimate: AutocorrEstimate | None = field(default=None, repr=False)
    error: str | None = None

    def row(self) -> dict:
        return {"noise_rate": self.noise_rate, "tau": self.tau, "tau_err": self.tau_err,
                "gamma1": self.gamma1, "gamma2": self.gamma2, "residual": self.residual,
                "n_samples": self.n_samples}


@dataclass
class ScanResult:
    points: list
    peak: float
    peak_index: int
    interior: bool

    def table(self) -> list:
        return [p.row() for p in self.points]


def bootstrap_tau(per_series: np.ndarray, lags: np.ndarray, n_boot: int = 100,
                  seed: int = 0, window=None) -> float:
    """Spread of the single-exponential tau over resampled trajectories."""
    rng = np.random.default_rng(seed)
    m = per_series.shape[0]
    taus = []
    for _ in range(n_boot):
        idx = rng.integers(0, m, m)
        chi = per_series[idx].mean(axis=0)
        est = AutocorrEstimate(lags, chi, float(chi[0]), 0)
        try:
            taus.append(fit_single_exp(est, window).tau)
        except FitError:
            continue
    return float(np.std(taus, ddof=1)) if len(taus) > 1 else float("nan")


def peak_location(x, y) -> tuple[float, int, bool]:
    """Argmax of ``y`` refined by a parabola through ``log y`` at its neighbours.

    The grid is sorted internally, so the answer does not depend on its order.
    Returns ``(x_peak, index_in_sorted_grid, interior)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    ok = np.isfinite(y) & (y > 0)
    if not ok.any():
        raise FitError("no finite values to locate a peak")
    i = int(np.argmax(np.where(ok, y, -np.inf)))
    interior = 0 < i < x.size - 1 and ok[i - 1] and ok[i + 1]
    if not interior:
        return float(x[i]), i, False
    xs = x[i - 1:i + 2]
    ls = np.log(y[i - 1:i + 2])
    a, b, _ = np.polyfit(xs, ls, 2)
    xp = -b / (2 * a) if a < 0 else x[i]
    return float(np.clip(xp, xs[0], xs[2])), i, True


OBSERVABLES = ("auto", "probe", "aligned_probe", "mean_stabilizer", "magnetization")


def scan_series(record: _engine.TrajectoryRecord, observable: str = "auto",
                model: Model | None = None) -> np.ndarray:
    """Rows of the observable whose autocorrelation a scan measures.

    ``aligned_probe`` multiplies each probe spin by the sign of the global
    magnetization (ties count as +), which keeps the measurement inside one
    symmetry-broken sector: tunnelling of the whole lattice between the two
    ordered states is factored out.  ``auto`` picks ``aligned_probe`` for Ising
    and ``mean_stabilizer`` for the 4D toric code.
    """
    model = record.final.geometry.model if model is None else model
    if observable == "auto":
        observable = "mean_stabilizer" if model is Model.TORIC4D else "aligned_probe"
    if observable == "mean_stabilizer":
        return record.mean_stabilizer[None, :]
    if observable == "magnetization":
        return record.magnetization[None, :]
    if observable == "probe":
        return record.probe.T.astype(np.float64)
    if observable == "aligned_probe":
        n = record.final.geometry.n_sites
        sign = np.where(2 * record.n_flipped <= n, 1.0, -1.0)
        return record.probe.T * sign[None, :]
    raise ValueError(f"unknown observable {observable!r}")


def critical_scan(model, noise_grid, engine_config: _engine.EngineConfig, N: int,
                  kappa: float = 1.0, variant=Variant.DETAILED_BALANCE,
                  max_lag: int | None = None, n_boot: int = 100,
                  n_threads: int | None = None, keep_estimates: bool = False,
                  observable: str = "auto", global_steps: int | None = None,
                  burn_in_steps: int | None = None) -> ScanResult:
    """Autocorrelation time against noise rate at fixed ``kappa``.

    Each grid point runs an ensemble from the ordered reference configuration
    (with the configured burn-in), computes the autocorrelation of
    ``observable`` (see :func:`scan_series`), and fits single and double
    exponentials.  Failed points are kept with ``error`` set.

    With ``global_steps`` the run length (and ``burn_in_steps``, default 10% of
    it) is fixed in global steps rather than time, so every grid point has the
    same number of samples; ``t_max`` and ``burn_in`` of ``engine_config`` are
    then replaced per point.
    """
    model = Model(model)
    geometry = build_geometry(model, N)
    grid = sorted(float(v) for v in noise_grid)
    points = []
    for noise in grid:
        rates = RateTable.for_model(model, kappa, noise, variant)
        cfg = engine_config
        if global_steps is not None:
            burn = global_steps // 10 if burn_in_steps is None else burn_in_steps
            cfg = replace(engine_config, t_max=global_steps * rates.dt,
                          burn_in=burn * rates.dt)
        try:
            records = _engine.run_ensemble(
                StabilizerConfig(geometry), rates, cfg, n_threads=n_threads,
                postprocess=lambda r: scan_series(r, observable, model))
            series = np.vstack(records)
            lag = max_lag if max_lag is not None else series.shape[1] // 10
            est = autocorrelation(series, lag, keep_per_series=True)
            single = fit_single_exp(est)
            double = fit_double_exp(est)
            err = bootstrap_tau(est.per_series, est.lags, n_boot,
                                seed=engine_config.seed) if n_boot > 1 else float("nan")
            points.append(ScanPoint(noise, single.tau, err, double.gamma1,
                                    double.gamma2, double.residual, est.n_samples,
                                    single, double, est if keep_estimates else None))
        except (FitError, ValueError, _engine.EnsembleError) as exc:
            nan = float("nan")
            points.append(ScanPoint(noise, nan, nan, nan, nan, nan, 0, error=str(exc)))
    taus = [p.tau for p in points]
    try:
        peak, idx, interior = peak_location(grid, taus)
    except FitError:
        peak, idx, interior = float("nan"), -1, False
    return ScanResult(points, peak, idx, interior)


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    slope_ci: tuple
    weighted: bool

    @property
    def c(self) -> float:
        return -self.slope

    @property
    def c_ci(self) -> tuple:
        return (-self.slope_ci[1], -self.slope_ci[0])

    def excludes_zero(self) -> bool:
        return self.slope_ci[0] > 0 or self.slope_ci[1] < 0


def overlap_scaling_fit(sizes, overlaps, n_traj=None, level: float = 0.95) -> ScalingFit:
    """Fit ``ln(1 - overlap) = intercept + slope * N``.

    With ``n_traj`` the points are weighted by their binomial variance
    ``p / ((1 - p) n)`` and the interval uses the normal quantile; otherwise
    ordinary least squares with a Student-t interval.
    """
    N = np.asarray(sizes, dtype=np.float64)
    p = np.asarray(overlaps, dtype=np.float64)
    if N.size != p.size or N.size < 2:
        raise ValueError("need at least two (N, overlap) points")
    if np.any(p >= 1):
        raise ResolutionError("an overlap equals 1; increase the trajectory count")
    if np.any(p < 0):
        raise ValueError("overlaps must be non-negative")
    y = np.log1p(-p)
    X = np.column_stack([np.ones_like(N), N])
    if n_traj is not None:
        n = np.broadcast_to(np.asarray(n_traj, dtype=np.float64), N.shape)
        var = np.maximum(p, 0.5 / n) / ((1 - p) * n)
        w = 1.0 / var
        cov = np.linalg.inv(X.T @ (X * w[:, None]))
        beta = cov @ (X.T @ (w * y))
        se = math.sqrt(cov[1, 1])
        q = stats.norm.ppf(0.5 + level / 2)
        weighted = True
    else:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        dof = N.size - 2
        r = y - X @ beta
        if dof > 0:
            s2 = float(r @ r) / dof
            se = math.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
            q = stats.t.ppf(0.5 + level / 2, dof)
        else:
            se, q = float("inf"), 1.0
        weighted = False
    slope = float(beta[1])
    return ScalingFit(slope, float(beta[0]), (slope - q * se, slope + q * se), weighted)


@dataclass
class Equilibration:
    time: float | None
    index: int | None
    m_ss: float
    censored: bool


def equilibration_time(times, series, eps: float, tail_fraction: float = 0.2,
                       sustain: int = 10) -> Equilibration:
    """First time after which ``|series - m_ss| < eps`` for ``sustain`` samples.

    ``m_ss`` is the mean over the last ``tail_fraction`` of the series.  If the
    condition is never met the result is censored (``time`` is ``None``).
    """
    t = np.asarray(times, dtype=np.float64)
    s = np.asarray(series, dtype=np.float64)
    if t.shape != s.shape or s.ndim != 1:
        raise ValueError("times and series must be 1D of equal length")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_tail = max(1, int(round(tail_fraction * s.size)))
    m_ss = float(s[-n_tail:].mean())
    close = np.abs(s - m_ss) < eps
    if s.size >= sustain:
        run = np.convolve(close.astype(np.int64), np.ones(sustain, dtype=np.int64),
                          mode="valid")
        hits = np.flatnonzero(run == sustain)
        if hits.size:
            i = int(hits[0])
            return Equilibration(float(t[i] - t[0]), i, m_ss, False)
    return Equilibration(None, None, m_ss, True)


def growth_exponent(sizes, values) -> float:
    """Log-log slope of ``values`` against ``sizes``."""
    return float(np.polyfit(np.log(sizes), np.log(values), 1)[0])
