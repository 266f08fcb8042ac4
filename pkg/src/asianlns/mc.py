"""Monte-Carlo verification engine.

Exact-increment GBM simulation with trapezoidal averaging, control-variate
pricing against the closed-form geometric average option, density
estimators built from integration-by-parts identities (no kernel smoothing
and no differentiation of indicator payoffs), and the estimator of the
squared weighted norm of the likelihood ratio that feeds the projection
error bound.

Reproducibility contract: paths are generated in fixed-size chunks, each
from its own counter-based Philox substream keyed by (seed, stream, chunk).
The ``batches`` knob only controls worker parallelism; results are
bit-identical for a given (seed, paths, dt) regardless of it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .model import MarketParams, mean_average
from .basis import WeightParams, weight_density
from .pricer import SeriesApproximation

#: paths per RNG substream; part of the determinism contract (changing it
#: changes which substream drives which path, hence the stream of numbers)
CHUNK_PATHS = 32768

THREADS_ENV_VAR = "ASIANLNS_THREADS"


def _default_batches() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV_VAR, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class McConfig:
    """Simulation budget and reproducibility settings."""

    paths: int = 200_000
    dt: float = 1e-3
    seed: int = 0
    batches: int = 0  # 0 -> resolve from ASIANLNS_THREADS (default 1)

    def __post_init__(self):
        if self.paths < 1:
            raise ValidationError(f"paths must be >= 1, got {self.paths}", module="mc")
        if not (self.dt > 0.0) or not math.isfinite(self.dt):
            raise ValidationError(f"dt must be > 0, got {self.dt}", module="mc")
        if self.batches < 0:
            raise ValidationError("batches must be >= 0", module="mc")
        if self.batches == 0:
            object.__setattr__(self, "batches", _default_batches())


@dataclass(frozen=True)
class McEstimate:
    """Point estimate with its standard error and 95% interval."""

    value: float
    std_error: float
    ci95: tuple
    n_effective: int
    config: McConfig

    @staticmethod
    def from_stats(n: int, mean: float, m2: float, config: McConfig) -> "McEstimate":
        se = math.sqrt(m2 / (n - 1) / n) if n > 1 else math.inf
        return McEstimate(value=mean, std_error=se,
                          ci95=(mean - 1.96 * se, mean + 1.96 * se),
                          n_effective=n, config=config)


@dataclass(frozen=True)
class PathBatch:
    """Terminal samples of a set of simulated paths.

    average and geo_average are trapezoidal discretizations of the
    continuous arithmetic and geometric means; the arithmetic one dominates
    the geometric one pathwise.
    """

    terminal: np.ndarray = field(repr=False)      # S_T
    average: np.ndarray = field(repr=False)       # A_T
    geo_average: np.ndarray = field(repr=False)   # Q_T
    brownian: np.ndarray = field(repr=False)      # B_T

    @property
    def n(self) -> int:
        return self.terminal.shape[0]


def _chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    key = np.array([np.uint64(seed % (1 << 64)),
                    np.uint64(((stream & 0xFFFFFFFF) << 32) | chunk)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _simulate_chunk(market: MarketParams, steps: int, dt: float, n: int,
                    rng: np.random.Generator) -> PathBatch:
    sq = math.sqrt(dt)
    drift = market.r - 0.5 * market.sigma**2
    log_s0 = math.log(market.S0)

    zacc = np.zeros(n)       # running sum of standard normals
    asum = np.zeros(n)       # sum of S over grid points 1..steps
    lsum = np.zeros(n)       # sum of log S over grid points 1..steps
    logs = np.full(n, log_s0)
    s = np.full(n, market.S0)
    for k in range(1, steps + 1):
        zacc += rng.standard_normal(n)
        logs = log_s0 + drift * (k * dt) + market.sigma * sq * zacc
        s = np.exp(logs)
        asum += s
        lsum += logs

    average = (asum + 0.5 * (market.S0 - s)) / steps
    geo_average = np.exp((lsum + 0.5 * (log_s0 - logs)) / steps)
    return PathBatch(terminal=s, average=average, geo_average=geo_average,
                     brownian=sq * zacc)


def _steps_for(market: MarketParams, config: McConfig) -> tuple:
    if config.dt > market.T:
        raise ValidationError(f"dt={config.dt} exceeds expiry T={market.T}", module="mc")
    steps = max(1, round(market.T / config.dt))
    return steps, market.T / steps


def iter_path_batches(market: MarketParams, config: McConfig,
                      stream: int = 0) -> Iterator[PathBatch]:
    """Yield PathBatch chunks in deterministic chunk order.

    Chunks are computed in parallel when config.batches > 1 but always
    yielded (and therefore reduced by callers) in chunk-index order.
    """
    steps, dt = _steps_for(market, config)
    nchunks = (config.paths + CHUNK_PATHS - 1) // CHUNK_PATHS
    sizes = [min(CHUNK_PATHS, config.paths - c * CHUNK_PATHS) for c in range(nchunks)]

    def run(c: int) -> PathBatch:
        return _simulate_chunk(market, steps, dt, sizes[c],
                               _chunk_rng(config.seed, stream, c))

    if config.batches > 1 and nchunks > 1:
        with ThreadPoolExecutor(max_workers=config.batches) as pool:
            yield from pool.map(run, range(nchunks))
    else:
        for c in range(nchunks):
            yield run(c)


def simulate(market: MarketParams, config: McConfig, stream: int = 0) -> PathBatch:
    """Simulate all paths and concatenate the terminal samples."""
    parts = list(iter_path_batches(market, config, stream=stream))
    return PathBatch(terminal=np.concatenate([p.terminal for p in parts]),
                     average=np.concatenate([p.average for p in parts]),
                     geo_average=np.concatenate([p.geo_average for p in parts]),
                     brownian=np.concatenate([p.brownian for p in parts]))


def geometric_price_closed_form(market: MarketParams) -> float:
    """Exact price of the continuously sampled geometric-average call.

    log Q_T is normal with mean log S0 + (r - sigma^2/2) T / 2 and variance
    sigma^2 T / 3, so the price is a Black-Scholes-type expression.  K = 0
    short-circuits to the discounted mean of Q_T.
    """
    m = math.log(market.S0) + 0.5 * (market.r - 0.5 * market.sigma**2) * market.T
    s = market.sigma * math.sqrt(market.T / 3.0)
    disc = math.exp(-market.r * market.T)
    fwd = math.exp(m + 0.5 * s * s)
    if market.K == 0.0:
        return disc * fwd
    d1 = (m + s * s - math.log(market.K)) / s
    d2 = (m - math.log(market.K)) / s
    return disc * (fwd * norm.cdf(d1) - market.K * norm.cdf(d2))


def _merge_stats(nA, meanA, m2A, nB, meanB, m2B):
    """Chan/Welford parallel merge; works elementwise on arrays."""
    n = nA + nB
    delta = meanB - meanA
    mean = meanA + delta * (nB / n)
    m2 = m2A + m2B + delta * delta * (nA * nB / n)
    return n, mean, m2


def _accumulate(values_iter) -> tuple:
    """Merge (n, mean, M2) over an iterator of value arrays (in order)."""
    n, mean, m2 = 0, 0.0, 0.0
    for vals in values_iter:
        nb = vals.shape[-1]
        mb = vals.mean(axis=-1)
        m2b = vals.var(axis=-1) * nb
        if n == 0:
            n, mean, m2 = nb, mb, m2b
        else:
            n, mean, m2 = _merge_stats(n, mean, m2, nb, mb, m2b)
    return n, mean, m2


def price_cv(market: MarketParams, config: McConfig) -> McEstimate:
    """Control-variate price estimate.

    Per path: exp(-rT) [ (A_T - K)^+ - (Q_T - K)^+ ] plus the closed-form
    geometric price.  The geometric payoff is a unit-coefficient control
    variate; its discretization bias largely offsets the bias of the
    discrete average, so no beta fitting is used.
    """
    disc = math.exp(-market.r * market.T)
    geo = geometric_price_closed_form(market)

    def vals():
        for p in iter_path_batches(market, config):
            yield disc * (np.maximum(p.average - market.K, 0.0)
                          - np.maximum(p.geo_average - market.K, 0.0)) + geo

    n, mean, m2 = _accumulate(vals())
    return McEstimate.from_stats(n, float(mean), float(m2), config)


def _arith_malliavin_weight(market: MarketParams, p: PathBatch) -> np.ndarray:
    """Integration-by-parts weight for the arithmetic-average density:
    (2 / sigma^2) ((S_T - S_0) / (T A_T^2) + (sigma^2 - r) / A_T)."""
    sig2 = market.sigma**2
    return (2.0 / sig2) * ((p.terminal - market.S0) / (market.T * p.average**2)
                           + (sig2 - market.r) / p.average)


def _geo_malliavin_weight(market: MarketParams, p: PathBatch) -> np.ndarray:
    """Weight for the geometric-average density: 2 B_T / (sigma T Q_T) + 1 / Q_T."""
    return (2.0 * p.brownian / (market.sigma * market.T * p.geo_average)
            + 1.0 / p.geo_average)


def geo_average_density(market: MarketParams, x) -> np.ndarray:
    """Closed-form log-normal density of the geometric average Q_T."""
    x = np.asarray(x, dtype=float)
    m = math.log(market.S0) + 0.5 * (market.r - 0.5 * market.sigma**2) * market.T
    s = market.sigma * math.sqrt(market.T / 3.0)
    return weight_density(WeightParams(mu=m, nu=s), x)


@dataclass(frozen=True)
class DensityGridEstimate:
    """Per-grid-point Monte-Carlo density estimates."""

    x: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)
    std_error: np.ndarray = field(repr=False)
    n_effective: int
    config: McConfig
    variance_reduction: Optional[np.ndarray] = field(repr=False, default=None)

    def as_estimates(self):
        return [McEstimate(value=float(v), std_error=float(se),
                           ci95=(float(v - 1.96 * se), float(v + 1.96 * se)),
                           n_effective=self.n_effective, config=self.config)
                for v, se in zip(self.value, self.std_error)]


def _check_grid(x_grid) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
        raise ValidationError("density grid must be positive and finite", module="mc")
    return x


def density_malliavin(market: MarketParams, config: McConfig, x_grid,
                      c: Optional[Callable] = None) -> DensityGridEstimate:
    """Density of A_T on a grid from the integration-by-parts identity.

    g(x) = E[(1{A_T >= x} - c(x)) W] for any deterministic c; the default
    c(x) = 1{x <= E[A_T]} pins the estimate to zero for x -> 0 instead of
    leaving pure Monte-Carlo noise there.
    """
    x = _check_grid(x_grid)
    if c is None:
        m1 = mean_average(market)
        cx = (x <= m1).astype(float)
    else:
        cx = np.asarray(c(x), dtype=float)

    def vals():
        for p in iter_path_batches(market, config):
            w = _arith_malliavin_weight(market, p)
            ind = (p.average[None, :] >= x[:, None]).astype(float)
            yield (ind - cx[:, None]) * w[None, :]

    n, mean, m2 = _accumulate(vals())
    se = np.sqrt(m2 / (n - 1) / n)
    return DensityGridEstimate(x=x, value=mean, std_error=se, n_effective=n,
                               config=config)


def density_cv(market: MarketParams, config: McConfig, x_grid,
               c1: Optional[Callable] = None,
               c2: Optional[Callable] = None) -> DensityGridEstimate:
    """Variance-reduced density estimate using the geometric average.

    Adds q(x) minus the geometric-average estimator of q(x) to the plain
    arithmetic estimator; the two integration-by-parts terms are highly
    correlated, which cancels most of the noise.  The per-point variance
    reduction factor against the plain estimator (computed on the same
    paths) is reported; it is NaN where either variance vanishes.
    """
    x = _check_grid(x_grid)
    if c1 is None:
        m1a = mean_average(market)
        c1x = (x <= m1a).astype(float)
    else:
        c1x = np.asarray(c1(x), dtype=float)
    if c2 is None:
        m1q = math.exp(math.log(market.S0) + 0.5 * (market.r - 0.5 * market.sigma**2)
                       * market.T + market.sigma**2 * market.T / 6.0)
        c2x = (x <= m1q).astype(float)
    else:
        c2x = np.asarray(c2(x), dtype=float)
    qx = geo_average_density(market, x)

    def pair_vals():
        for p in iter_path_batches(market, config):
            wa = _arith_malliavin_weight(market, p)
            wq = _geo_malliavin_weight(market, p)
            ind_a = (p.average[None, :] >= x[:, None]).astype(float)
            ind_q = (p.geo_average[None, :] >= x[:, None]).astype(float)
            plain = (ind_a - c1x[:, None]) * wa[None, :]
            cv = plain - (ind_q - c2x[:, None]) * wq[None, :] + qx[:, None]
            yield plain, cv

    n = 0
    stats_plain = stats_cv = None
    for plain, cv in pair_vals():
        nb = plain.shape[-1]
        sp = (nb, plain.mean(-1), plain.var(-1) * nb)
        sc = (nb, cv.mean(-1), cv.var(-1) * nb)
        if n == 0:
            stats_plain, stats_cv, n = sp, sc, nb
        else:
            stats_plain = _merge_stats(*stats_plain, *sp)
            stats_cv = _merge_stats(*stats_cv, *sc)
            n = stats_cv[0]

    _, mean_cv, m2_cv = stats_cv
    _, _, m2_plain = stats_plain
    se = np.sqrt(m2_cv / (n - 1) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        vr = np.where((m2_cv > 0) & (m2_plain > 0), m2_plain / m2_cv, np.nan)
    return DensityGridEstimate(x=x, value=mean_cv, std_error=se, n_effective=n,
                               config=config, variance_reduction=vr)


def likelihood_norm_sq(market: MarketParams, config: McConfig, weight: WeightParams,
                       use_cv: bool = True,
                       tilde_from_weight: bool = False) -> McEstimate:
    """Estimate ||ell||_w^2 = integral of g^2 / w.

    Draws an independent second sample Atilde (disjoint Philox stream of
    the same seed) and evaluates the density estimator at Atilde divided by
    w(Atilde).  With ``use_cv`` the geometric control variate is applied to
    the density part.  The estimator has a finite mean for
    nu^2 > sigma^2 T / 2 but heavy tails (its variance is itself marginally
    divergent at the default nu), so standard errors are indicative rather
    than sharp; this matches the estimator's published behaviour.

    ``tilde_from_weight`` replaces the Atilde draws by i.i.d. draws from
    the weight itself, turning the estimand into integral of g = 1; used as
    a self-test.

    The market must be passed on the same scale as the weight (the library
    convention is the normalized scale S0 = 1).
    """
    if not weight.admissible_for(market):
        raise ValidationError(
            f"nu^2={weight.nu2:.4g} <= sigma^2 T / 2: ||ell||_w^2 is infinite",
            module="mc")
    m1a = mean_average(market)
    m1q = math.exp(math.log(market.S0)
                   + 0.5 * (market.r - 0.5 * market.sigma**2) * market.T
                   + market.sigma**2 * market.T / 6.0)
    steps, dt = _steps_for(market, config)
    nchunks = (config.paths + CHUNK_PATHS - 1) // CHUNK_PATHS

    def vals():
        for c in range(nchunks):
            nsz = min(CHUNK_PATHS, config.paths - c * CHUNK_PATHS)
            p = _simulate_chunk(market, steps, dt, nsz, _chunk_rng(config.seed, 0, c))
            rng_t = _chunk_rng(config.seed, 1, c)
            if tilde_from_weight:
                at = np.exp(weight.mu + weight.nu * rng_t.standard_normal(nsz))
            else:
                at = _simulate_chunk(market, steps, dt, nsz, rng_t).average
            wa = _arith_malliavin_weight(market, p)
            num = ((p.average >= at).astype(float) - (at <= m1a)) * wa
            if use_cv:
                wq = _geo_malliavin_weight(market, p)
                num = num + geo_average_density(market, at) \
                    - ((p.geo_average >= at).astype(float) - (at <= m1q)) * wq
            yield num / weight_density(weight, at)

    n, mean, m2 = _accumulate(vals())
    return McEstimate.from_stats(n, float(mean), float(m2), config)


@dataclass(frozen=True)
class ErrorBound:
    """Projection-error bound sqrt(eps_F * eps_ell) with its Monte-Carlo CI.

    eps_ell is reported raw (it can go negative through Monte-Carlo noise)
    and floored at zero inside the square root.  The CI is the monotone
    image of the eps_ell interval; std_error is the matching delta-method
    scale.  Units follow eps_F (currency), so the bound caps
    |pi - pi^(N)| on the same scale as the price.
    """

    value: float
    std_error: float
    ci95: tuple
    eps_F: float
    eps_ell: float
    norm_estimate: McEstimate


def error_bound(approx: SeriesApproximation, norm_est: McEstimate) -> ErrorBound:
    """Combine the explicit payoff projection error with the estimated
    likelihood projection error into the price-error bound."""
    eps_f = max(approx.eps_payoff, 0.0)
    sum_sq = float(approx.ell @ approx.ell)
    eps_ell = norm_est.value - sum_sq
    lo = max(norm_est.ci95[0] - sum_sq, 0.0)
    hi = max(norm_est.ci95[1] - sum_sq, 0.0)
    value = math.sqrt(eps_f * max(eps_ell, 0.0))
    ci = (math.sqrt(eps_f * lo), math.sqrt(eps_f * hi))
    se = (ci[1] - ci[0]) / (2.0 * 1.96)
    return ErrorBound(value=value, std_error=se, ci95=ci, eps_F=eps_f,
                      eps_ell=eps_ell, norm_estimate=norm_est)


def squared_relative_error(mc_price: McEstimate, series_price: float) -> tuple:
    """SRE = ((mc - series) / series)^2 with the interval induced by the mc CI."""
    rel = (mc_price.value - series_price) / series_price
    lo_r = (mc_price.ci95[0] - series_price) / series_price
    hi_r = (mc_price.ci95[1] - series_price) / series_price
    if lo_r <= 0.0 <= hi_r:
        lo = 0.0
    else:
        lo = min(lo_r**2, hi_r**2)
    return rel * rel, (lo, max(lo_r**2, hi_r**2))


@dataclass(frozen=True)
class TailDiagnostic:
    """Qualitative upper-tail envelope check (diagnostic only).

    The running supremum of the driving Brownian motion dominates the
    average pathwise, giving the non-asymptotic reflection bound

        P(A_T / S0 >= x) <= 2 Phibar((log x - (r - sigma^2/2)^+ T)
                                      / (sigma sqrt(T))),

    whose exponent decays like -log(x)^2 / (2 sigma^2 T); this Gaussian
    tail is what keeps the expansion from diverging.  ``max_ratio`` is the
    largest empirical-survival / bound ratio over the sampled tail points;
    values at or below one (up to Monte-Carlo noise on rare events) mean
    the sample respects the envelope.  The truly asymptotic slope is out of
    reach at simulation scale, so this stays a diagnostic, not a proof.
    """

    max_ratio: float
    n_points: int


def tail_envelope_diagnostic(market: MarketParams, batch: PathBatch,
                             lo_quantile: float = 0.99,
                             hi_quantile: float = 0.9999) -> TailDiagnostic:
    a = np.sort(batch.average / market.S0)
    n = a.shape[0]
    qs = np.linspace(lo_quantile, hi_quantile, 25)
    idx = np.minimum((qs * n).astype(int), n - 2)
    x = a[idx]
    surv = 1.0 - idx / n
    shift = max(market.r - 0.5 * market.sigma**2, 0.0) * market.T
    bound = 2.0 * norm.sf((np.log(x) - shift) / (market.sigma * math.sqrt(market.T)))
    ratio = surv / bound
    return TailDiagnostic(max_ratio=float(np.max(ratio)), n_points=len(x))
