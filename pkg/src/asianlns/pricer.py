"""Series price, payoff/likelihood coefficients and the density approximant.

The discounted payoff F(x) = exp(-rT)(x - K)^+ and the likelihood ratio
ell = g / w are both projected onto the degree-N orthonormal polynomial
basis; the price approximation is the inner product of the two coefficient
vectors.  Everything is computed against the normalized problem (initial
price one, strike K / S0) and rescaled, so the auxiliary weight always
lives on the scale of A_T / S0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.stats import norm

from .basis import OrthonormalBasis, WeightParams, default_weight, orthonormal_basis, weight_density
from .errors import ConditioningWarning, ValidationError
from .model import MarketParams, MomentVector, moments

MAX_ORDER = 40
DEFAULT_ORDER = 20


def _d_values(weight: WeightParams, strike: float, count: int) -> np.ndarray:
    """d_n = (mu + nu^2 n - log K) / nu for n = 0 .. count-1."""
    n = np.arange(count, dtype=float)
    return (weight.mu + weight.nu2 * n - math.log(strike)) / weight.nu


def scaled_payoff_projections(weight: WeightParams, strike: float, N: int) -> np.ndarray:
    """Projections of (x - K)^+ onto the scaled monomials.

    fbar_i = exp(mu + (2i + 1) nu^2 / 2) Phi(d_{i+1}) - K Phi(d_i), the
    closed normal-CDF form of <(x - K)^+, x^i>_w / s_i.  The strike is in
    the same (normalized) units as the weight.  K = 0 reduces to the pure
    weight-moment ratio s_{i+1} / s_i with every Phi equal to one.
    """
    i = np.arange(N + 1, dtype=float)
    lead = np.exp(weight.mu + 0.5 * (2.0 * i + 1.0) * weight.nu2)
    if strike == 0.0:
        return lead
    Phi = norm.cdf(_d_values(weight, strike, N + 2))
    return lead * Phi[1:] - strike * Phi[:-1]


def payoff_coefficients(market: MarketParams, weight: WeightParams,
                        basis: OrthonormalBasis) -> np.ndarray:
    """Coefficients of the discounted payoff against the basis, in currency.

    f = exp(-rT) S0 * cbar @ fbar with the strike normalized to K / S0.
    A zero strike degenerates the payoff to the discounted average, a
    degree-one polynomial: its coefficients beyond degree one vanish
    identically for every degree-graded orthonormal family and are pinned
    to exact zeros instead of being left as cancellation residue.
    """
    if basis.weight != weight:
        raise ValidationError("basis was built for a different weight", module="pricer")
    fbar = scaled_payoff_projections(weight, market.K / market.S0, basis.N)
    f = math.exp(-market.r * market.T) * market.S0 * basis.solve_scaled(fbar)
    if market.K == 0.0 and basis.N >= 2:
        f[2:] = 0.0
    return f


def likelihood_coefficients(moms: MomentVector, basis: OrthonormalBasis) -> np.ndarray:
    """Coefficients of the likelihood ratio: ell = cbar @ relative-moments."""
    if moms.kind != "relative":
        raise ValidationError("likelihood coefficients need relative moments",
                              module="pricer")
    if moms.N != basis.N:
        raise ValidationError("moment vector and basis degree mismatch", module="pricer")
    return basis.solve_scaled(moms.values)


def payoff_norm_sq(market: MarketParams, weight: WeightParams) -> float:
    """Squared weighted norm of the discounted payoff, in currency^2.

    ||F||_w^2 = exp(-2rT) (exp(2mu + 2nu^2) Phi(d_2)
                - 2 K exp(mu + nu^2/2) Phi(d_1) + K^2 Phi(d_0)),
    scaled by S0^2 for the normalized strike K / S0.
    """
    disc2 = math.exp(-2.0 * market.r * market.T)
    k = market.K / market.S0
    if k == 0.0:
        val = disc2 * math.exp(2.0 * weight.mu + 2.0 * weight.nu2)
    else:
        d = norm.cdf(_d_values(weight, k, 3))
        val = disc2 * (math.exp(2.0 * weight.mu + 2.0 * weight.nu2) * d[2]
                       - 2.0 * k * math.exp(weight.mu + 0.5 * weight.nu2) * d[1]
                       + k * k * d[0])
    return market.S0**2 * val


@dataclass(frozen=True)
class DensityApproximant:
    """Truncated series density g^(N)(x) = w(x) sum_n ell_n b_n(x).

    Approximates the density of the *normalized* average A_T / S0.  It
    integrates to one because ell_0 = 1, but may go negative in the tails;
    that is expected and not an error.
    """

    N: int
    weight: WeightParams
    ell: np.ndarray = field(repr=False)
    basis: OrthonormalBasis = field(repr=False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0.0):
            raise ValidationError("density evaluation requires x > 0", module="pricer")
        b = self.basis.evaluate(x)
        return weight_density(self.weight, x) * np.tensordot(self.ell, b, axes=1)


@dataclass(frozen=True)
class SeriesApproximation:
    """Truncated series price with its coefficient vectors.

    Coefficients f are in currency units (already rescaled by S0); ell is
    dimensionless.  ``price`` equals the inner product f . ell exactly as
    computed.  ``eps_payoff`` is the squared projection distance
    ||F||_w^2 - sum f_n^2 (currency^2); for a zero strike it is identically
    zero from degree one on and is stored as exact zero.
    """

    N: int
    f: np.ndarray = field(repr=False)
    ell: np.ndarray = field(repr=False)
    price: float
    payoff_norm_sq: float
    eps_payoff: float
    weight: WeightParams
    market: MarketParams
    basis: OrthonormalBasis = field(repr=False)
    diagnostics: dict = field(repr=False, default_factory=dict)

    @property
    def eps_F(self) -> float:
        """Alias used in error-bound contexts."""
        return self.eps_payoff

    def partial_prices(self) -> np.ndarray:
        """Prices of every truncation 0..N (cumulative partial sums)."""
        return np.cumsum(self.f * self.ell)

    def convergence_diagnostic(self) -> float:
        """|price_N - price_{N-1}|; heuristic only, not an error bound."""
        if self.N == 0:
            return math.nan
        return abs(float(self.f[-1] * self.ell[-1]))

    def eps_payoff_profile(self) -> np.ndarray:
        """eps_F at every truncation order 0..N (non-increasing)."""
        return self.payoff_norm_sq - np.cumsum(self.f**2)

    def density(self) -> DensityApproximant:
        return DensityApproximant(N=self.N, weight=self.weight, ell=self.ell,
                                  basis=self.basis)


def density_approx(approx: SeriesApproximation, x) -> np.ndarray:
    """Evaluate the series density of the normalized average at x > 0."""
    return approx.density()(x)


@lru_cache(maxsize=128)
def _kernel(r: float, sigma: float, T: float, N: int, mu: float, nu: float,
            method: str):
    """Basis and relative moments for a normalized market; cached so that
    re-pricing across strikes only recomputes the payoff coefficients."""
    market = MarketParams(r=r, sigma=sigma, T=T, S0=1.0, K=1.0)
    weight = WeightParams(mu=mu, nu=nu)
    basis = orthonormal_basis(weight, N, method=method)
    moms = moments(market, N, kind="relative", weight=weight)
    return basis, moms


def price(market: MarketParams, N: int = DEFAULT_ORDER,
          weight: Optional[WeightParams] = None,
          method: str = "auto") -> SeriesApproximation:
    """Price the option with the degree-N series.

    The problem is normalized internally (S0 = 1, strike K / S0) and the
    price rescaled by S0.  When ``weight`` is omitted it is calibrated so
    that nu^2 = sigma^2 T / 2 + 1e-4 and the weight matches the first
    moment of the normalized average, which makes ell_1 vanish.  A supplied
    weight must refer to the normalized average and satisfy
    nu^2 > sigma^2 T / 2.
    """
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool) or N < 0:
        raise ValidationError(f"order N must be a non-negative integer, got {N!r}",
                              module="pricer")
    N = int(N)
    if N > MAX_ORDER:
        raise ValidationError(f"order N={N} exceeds the supported maximum {MAX_ORDER}",
                              module="pricer")
    if N > DEFAULT_ORDER:
        warnings.warn(f"order N={N} > {DEFAULT_ORDER}: rounding errors typically "
                      "dominate the added terms", ConditioningWarning, stacklevel=2)

    normalized = market.normalized()
    if weight is None:
        m1 = float(moments(normalized, 1, kind="raw").values[1])
        weight = default_weight(normalized, m1)
    elif not weight.admissible_for(normalized):
        raise ValidationError(
            f"weight nu^2={weight.nu2:.4g} must exceed sigma^2 T / 2 = "
            f"{0.5 * normalized.sigma**2 * normalized.T:.4g}", module="pricer")

    basis, moms = _kernel(market.r, market.sigma, market.T, N,
                          weight.mu, weight.nu, method)
    ell = likelihood_coefficients(moms, basis)
    f = payoff_coefficients(market, weight, basis)
    pi = float(f @ ell)

    norm_sq = payoff_norm_sq(market, weight)
    if market.K == 0.0 and N >= 1:
        # degree-one payoff: the projection is exact, eps_F vanishes identically
        eps_payoff = 0.0
    else:
        eps_payoff = float(norm_sq - f @ f)

    diagnostics = {
        "method": basis.method,
        "jitter": basis.jitter,
        "resolvable_degree": basis.resolvable_degree,
        "tau": market.tau,
        "tau_warning": market.tau_warning,
    }
    return SeriesApproximation(N=N, f=f, ell=ell, price=pi, payoff_norm_sq=norm_sq,
                               eps_payoff=eps_payoff, weight=weight, market=market,
                               basis=basis, diagnostics=diagnostics)


def clear_kernel_cache() -> None:
    """Drop cached basis/moment kernels (used by benchmarks timing cold runs)."""
    _kernel.cache_clear()
