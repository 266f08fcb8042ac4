"""Log-normal weight, Gram matrices and the orthonormal polynomial basis.

The approximation space is L^2 of a log-normal weight w with parameters
(mu, nu).  Orthonormalizing the monomials against w only needs the weight's
moments, which form a Hankel matrix with entries exp(mu (i+j) + (i+j)^2
nu^2 / 2).  Working with the raw Hankel matrix overflows quickly, so the
basis is built from the scaled matrix Mbar_ij = exp(i j nu^2), related to
the raw one by a diagonal similarity with the weight moments
s_i = exp(i mu + i^2 nu^2 / 2).

Two constructions are provided: a Cholesky factorization of Mbar and the
closed-form three-term recurrence.  Both degrade in well-understood
regimes (see ``orthonormal_basis``); ``auto`` picks a workable route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (CholeskyBreakdownError, ConditioningWarning, NumericalError,
                     ValidationError)
from .model import MarketParams, _check_degree

#: reciprocal-condition estimate below which a basis build warns
RCOND_WARN_THRESHOLD = 1e-13

#: pivot ratio d_n / Mbar_nn below which a degree counts as unresolvable in
#: double precision (coefficient noise exceeds ~1e-7 there)
RESOLVABLE_PIVOT_RATIO = 1e-8


@dataclass(frozen=True)
class WeightParams:
    """Parameters (mu, nu) of the auxiliary log-normal density."""

    mu: float
    nu: float

    def __post_init__(self):
        if not (self.nu > 0.0) or not math.isfinite(self.nu):
            raise ValidationError(f"nu must be > 0, got {self.nu}", module="basis")
        if not math.isfinite(self.mu):
            raise ValidationError(f"mu must be finite, got {self.mu}", module="basis")

    @property
    def nu2(self) -> float:
        return self.nu * self.nu

    def admissible_for(self, market: MarketParams) -> bool:
        """Square-integrability condition nu^2 > sigma^2 T / 2 for the likelihood ratio."""
        return self.nu2 > 0.5 * market.sigma**2 * market.T

    def moment(self, n) -> np.ndarray:
        """n-th moment s_n = exp(n mu + n^2 nu^2 / 2) of the weight."""
        n = np.asarray(n, dtype=float)
        return np.exp(n * self.mu + 0.5 * n**2 * self.nu2)


def default_weight(params: MarketParams, first_moment: float) -> WeightParams:
    """Calibrate the weight to the market.

    nu^2 = sigma^2 T / 2 + 1e-4 (the smallest scale satisfying the
    square-integrability condition with a safety margin) and mu is chosen so
    the weight's first moment matches ``first_moment``, the mean of the
    normalized average.  With this pairing the degree-one likelihood
    coefficient vanishes identically.
    """
    if not (first_moment > 0.0) or not math.isfinite(first_moment):
        raise ValidationError(f"first moment must be > 0, got {first_moment}",
                              module="basis")
    nu2 = 0.5 * params.sigma**2 * params.T + 1e-4
    mu = math.log(first_moment) - 0.5 * nu2
    return WeightParams(mu=mu, nu=math.sqrt(nu2))


def weight_density(weight: WeightParams, x) -> np.ndarray:
    """Log-normal density of the weight at x > 0 (vectorized)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValidationError("weight density requires x > 0", module="basis")
    z = (np.log(x) - weight.mu) / weight.nu
    return np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * weight.nu * x)


@dataclass(frozen=True)
class GramMatrix:
    """Moment matrix of the monomials under the weight.

    raw form:    M_ij   = exp(mu (i+j) + (i+j)^2 nu^2 / 2)   (Hankel)
    scaled form: Mbar_ij = exp(i j nu^2),  M = S Mbar S.
    """

    N: int
    entries: np.ndarray = field(repr=False)
    form: str  # 'raw' | 'scaled'

    @cached_property
    def rcond_estimate(self) -> float:
        """Reciprocal 2-norm condition estimate (diagnostic)."""
        try:
            c = np.linalg.cond(self.entries)
        except np.linalg.LinAlgError:  # pragma: no cover
            return 0.0
        return float(1.0 / c) if np.isfinite(c) and c > 0 else 0.0


def gram(weight: WeightParams, N: int, form: str = "scaled") -> GramMatrix:
    """Build the (N+1) x (N+1) Gram matrix of the monomials."""
    N = _check_degree(N)
    if form not in ("raw", "scaled"):
        raise ValidationError(f"unknown gram form {form!r}", module="basis")
    i = np.arange(N + 1, dtype=float)
    with np.errstate(over="ignore"):
        if form == "raw":
            s = np.add.outer(i, i)
            entries = np.exp(weight.mu * s + 0.5 * s**2 * weight.nu2)
        else:
            entries = np.exp(np.outer(i, i) * weight.nu2)
    if not np.all(np.isfinite(entries)):
        raise NumericalError(
            f"gram matrix entries overflow for N={N}, nu^2={weight.nu2:.4g}",
            module="basis")
    return GramMatrix(N=N, entries=entries, form=form)


def _pivot_scan(M: np.ndarray):
    """Cholesky pivots of M computed row by row.

    Returns (pivots, break_index) where pivots[j] is the j-th pivot d_j and
    break_index is the first j with d_j <= 0 (len(M) if none).
    """
    n = M.shape[0]
    L = np.zeros_like(M)
    pivots = np.full(n, np.nan)
    for j in range(n):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        pivots[j] = d
        if not (d > 0.0) or not np.isfinite(d):
            return pivots, j
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return pivots, n


def recurrence_coefficients(weight: WeightParams, N: int):
    """Three-term recurrence coefficients of the orthonormal family.

    b_0 = 1,  b_1 = (x - alpha_0) / beta_1,
    b_n = ((x - alpha_{n-1}) b_{n-1} - beta_{n-1} b_{n-2}) / beta_n,

    with

    alpha_n = exp(mu + nu^2 (n - 1/2)) (exp(nu^2 (n+1)) + exp(nu^2 n) - 1)
    beta_n  = exp(mu + nu^2 (3n - 2) / 2) sqrt(exp(nu^2 n) - 1).

    Returns (alpha[0..N-1], beta[1..N] as beta[0..N-1]).
    """
    N = _check_degree(N)
    mu, nu2 = weight.mu, weight.nu2
    n = np.arange(N, dtype=float)
    with np.errstate(over="ignore"):
        alpha = np.exp(mu + nu2 * (n - 0.5)) * (np.exp(nu2 * (n + 1)) + np.exp(nu2 * n) - 1.0)
        m = np.arange(1, N + 1, dtype=float)
        beta = np.exp(mu + 0.5 * nu2 * (3.0 * m - 2.0)) * np.sqrt(np.expm1(nu2 * m))
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise NumericalError("recurrence coefficients overflow", module="basis")
    return alpha, beta


@dataclass(frozen=True)
class OrthonormalBasis:
    """Degree-N orthonormal polynomial basis under a log-normal weight.

    The canonical representation is the lower-triangular matrix ``cbar``
    of coefficients against the *scaled monomials* u_k(x) = x^k / s_k:

        b_n(x) = sum_k cbar[n, k] u_k(x).

    For a Cholesky construction cbar = Lbar^{-1}; for the recurrence it is
    accumulated directly.  Every b_n has a positive leading coefficient.

    Attributes
    ----------
    jitter : float
        Diagonal regularization added to the scaled Gram matrix before
        factorizing (0.0 on the clean path).  A non-zero jitter means
        coefficients beyond ``resolvable_degree`` are damped rather than
        meaningful.
    resolvable_degree : int
        Largest degree whose Cholesky pivot ratio stays above
        ``RESOLVABLE_PIVOT_RATIO``; coefficient-level comparisons between
        construction methods are only meaningful up to here.  Equals N for
        the recurrence construction (pointwise values remain accurate even
        when small-nu coefficient extraction would not be).
    """

    weight: WeightParams
    N: int
    method: str  # 'cholesky_scaled' | 'recurrence'
    cbar: np.ndarray = field(repr=False)
    chol_factor: Optional[np.ndarray] = field(repr=False, default=None)
    alpha: Optional[np.ndarray] = field(repr=False, default=None)
    beta: Optional[np.ndarray] = field(repr=False, default=None)
    jitter: float = 0.0
    resolvable_degree: int = -1

    def solve_scaled(self, vbar: np.ndarray) -> np.ndarray:
        """Coefficients <g, b_n> from scaled moments vbar_k = <g, x^k>/s_k."""
        vbar = np.asarray(vbar, dtype=float)
        if vbar.shape != (self.N + 1,):
            raise ValidationError("scaled moment vector length mismatch", module="basis")
        return self.cbar @ vbar

    def evaluate(self, x) -> np.ndarray:
        """Evaluate all basis polynomials at x; returns shape (N+1,) + x.shape.

        Uses the scaled-monomial form exp(k (log x - mu) - k^2 nu^2 / 2),
        which stays bounded on the bulk of the weight for any degree.
        """
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0.0):
            raise ValidationError("basis evaluation requires x > 0", module="basis")
        k = np.arange(self.N + 1, dtype=float)
        lx = np.log(x).reshape(-1)
        U = np.exp(np.outer(k, lx - self.weight.mu) - 0.5 * (k**2)[:, None] * self.weight.nu2)
        out = self.cbar @ U
        return out.reshape((self.N + 1,) + x.shape)

    def monomial_coefficients(self) -> np.ndarray:
        """Coefficients against plain monomials (may overflow for large N nu).

        Row n holds the coefficients of b_n in 1, x, ..., x^n.
        """
        k = np.arange(self.N + 1, dtype=float)
        with np.errstate(over="ignore"):
            C = self.cbar / self.weight.moment(k)[None, :]
        if not np.all(np.isfinite(C)):
            raise NumericalError("monomial coefficients overflow; use the scaled form",
                                 module="basis")
        return C

    def gram_identity_error(self) -> float:
        """max |cbar Mbar cbar^T - I|, the orthonormality defect."""
        Mbar = gram(self.weight, self.N, form="scaled").entries
        return float(np.max(np.abs(self.cbar @ Mbar @ self.cbar.T - np.eye(self.N + 1))))


def _cbar_from_cholesky(L: np.ndarray) -> np.ndarray:
    return solve_triangular(L, np.eye(L.shape[0]), lower=True)


def _cbar_from_recurrence(weight: WeightParams, N: int) -> np.ndarray:
    """Accumulate scaled-monomial coefficients along the recurrence.

    Multiplication by x maps u_k to (s_{k+1}/s_k) u_{k+1}; the ratio
    exp(mu + (k + 1/2) nu^2) keeps the accumulation in the scaled domain.
    """
    C = np.zeros((N + 1, N + 1))
    C[0, 0] = 1.0
    if N == 0:
        return C
    alpha, beta = recurrence_coefficients(weight, N)
    k = np.arange(N + 1, dtype=float)
    ratio = np.exp(weight.mu + (k + 0.5) * weight.nu2)
    C[1, 0] = -alpha[0] / beta[0]
    C[1, 1] = ratio[0] / beta[0]
    for n in range(2, N + 1):
        shifted = np.zeros(N + 1)
        shifted[1:n + 1] = C[n - 1, :n] * ratio[:n]
        C[n] = (shifted - alpha[n - 1] * C[n - 1] - beta[n - 2] * C[n - 2]) / beta[n - 1]
    if not np.all(np.isfinite(C)):
        raise NumericalError("recurrence coefficient accumulation overflowed",
                             module="basis")
    return C


def _resolvable_degree(L: np.ndarray, Mdiag: np.ndarray) -> int:
    """Largest leading degree whose pivot ratio L_jj^2 / M_jj stays resolvable."""
    ratios = np.diag(L) ** 2 / Mdiag
    bad = np.nonzero(ratios <= RESOLVABLE_PIVOT_RATIO)[0]
    return int(bad[0]) - 1 if bad.size else L.shape[0] - 1


def orthonormal_basis(weight: WeightParams, N: int,
                      method: str = "auto") -> OrthonormalBasis:
    """Construct the degree-N orthonormal basis.

    method='cholesky_scaled'
        Factorize Mbar; raises CholeskyBreakdownError (with the failing
        pivot index) when rounding makes Mbar numerically indefinite, which
        happens for small nu at moderate degree.
    method='recurrence'
        Closed-form three-term recurrence; accurate for large nu but its
        coefficient accumulation is unstable for small nu.
    method='auto'
        nu^2 > 1: recurrence (Cholesky grading breaks down there first).
        Otherwise Cholesky; on breakdown the factorization is retried with
        an escalating diagonal jitter, which keeps the full degree while
        damping the coefficients that double precision cannot resolve.
        A ConditioningWarning reports the jitter.
    """
    N = _check_degree(N)
    if method not in ("auto", "cholesky_scaled", "recurrence"):
        raise ValidationError(f"unknown basis method {method!r}", module="basis")

    if method == "recurrence" or (method == "auto" and weight.nu2 > 1.0):
        cbar = _cbar_from_recurrence(weight, N)
        alpha, beta = recurrence_coefficients(weight, N) if N else (None, None)
        return OrthonormalBasis(weight=weight, N=N, method="recurrence", cbar=cbar,
                                alpha=alpha, beta=beta, resolvable_degree=N)

    Mbar = gram(weight, N, form="scaled").entries
    Mdiag = np.diag(Mbar).copy()
    try:
        L = np.linalg.cholesky(Mbar)
    except np.linalg.LinAlgError:
        L = None

    if L is not None:
        resolvable = _resolvable_degree(L, Mdiag)
        trailing = L[-1, -1] ** 2 / Mdiag[-1]
        if trailing <= RCOND_WARN_THRESHOLD:
            warnings.warn(
                f"scaled Gram matrix is near the double-precision limit "
                f"(trailing pivot ratio {trailing:.1e}); coefficients beyond "
                f"degree {resolvable} carry rounding noise",
                ConditioningWarning, stacklevel=2)
        return OrthonormalBasis(weight=weight, N=N, method="cholesky_scaled",
                                cbar=_cbar_from_cholesky(L), chol_factor=L,
                                resolvable_degree=resolvable)

    if method == "cholesky_scaled":
        pivots, brk = _pivot_scan(Mbar)
        if brk > N:  # row-by-row scan got luckier than LAPACK; flag the worst pivot
            brk = int(np.argmin(pivots / Mdiag))
        raise CholeskyBreakdownError(
            f"Cholesky breakdown at pivot {brk} (degree {brk}) for nu^2="
            f"{weight.nu2:.4g}, N={N}", pivot_index=brk)

    # auto fallback: jitter ladder from an ulp of the diagonal scale upward.
    scale = float(np.max(Mdiag))
    eps = np.finfo(float).eps
    for decade in range(-16, 4):
        delta = scale * eps * 10.0**decade
        try:
            L = np.linalg.cholesky(Mbar + delta * np.eye(N + 1))
        except np.linalg.LinAlgError:
            continue
        resolvable = _resolvable_degree(L, Mdiag)
        warnings.warn(
            f"Cholesky breakdown (nu^2={weight.nu2:.4g}, N={N}); factorized "
            f"with diagonal jitter {delta:.2e}; coefficients beyond degree "
            f"{resolvable} are damped rounding noise",
            ConditioningWarning, stacklevel=2)
        return OrthonormalBasis(weight=weight, N=N, method="cholesky_scaled",
                                cbar=_cbar_from_cholesky(L), chol_factor=L,
                                jitter=float(delta), resolvable_degree=resolvable)
    raise NumericalError(
        f"scaled Gram matrix could not be factorized even with jitter "
        f"(nu^2={weight.nu2:.4g}, N={N})", module="basis")
