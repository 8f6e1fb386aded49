"""Queueing-theoretic bounds for the block-delay parameter.

A miner's backlog of unprocessed blocks behaves like an M/D/1 queue:
Poisson block arrivals, deterministic per-block processing time tau.
This module computes the stationary distribution of that queue, the
tail bound on the backlog under worst-case withholding, and the
smallest block delay ``zeta`` that keeps the overflow probability
below a target.

All functions are pure; nothing here owns mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "UtilizationError",
    "SaturationError",
    "NoFiniteWithholdTime",
    "RateParams",
    "Md1Distribution",
    "QueueTailBound",
    "md1_stationary",
    "md1_tail",
    "poisson_burst_tail",
    "withhold_success_prob",
    "select_t_star",
    "zeta_bound",
    "choose_zeta",
    "DEFAULT_EPS_GRID",
]


class UtilizationError(ValueError):
    """Arrival rate times service time is >= 1; the queue is unstable."""


class SaturationError(RuntimeError):
    """No block delay up to the configured maximum meets the target."""


class NoFiniteWithholdTime(ValueError):
    """Adversarial rate >= effective honest growth rate; no finite
    withholding horizon drives the success probability to zero."""


# Search grid for the two slack factors: 0.05, 0.10, ..., 3.00.
DEFAULT_EPS_GRID: tuple[float, ...] = tuple(0.05 * k for k in range(1, 61))


@dataclass(frozen=True)
class RateParams:
    """Network rate parameters.

    lam    -- total block rate (blocks/second)
    f_max  -- adversarial mining fraction, in [0, 0.5)
    tau    -- block processing time (seconds)
    delta  -- maximum network delay (seconds)

    ``alpha`` (honest rate) and ``beta`` (adversarial rate) are derived,
    as is ``gamma``, the delay-discounted honest chain-growth rate.
    """

    lam: float
    f_max: float
    tau: float
    delta: float

    def __post_init__(self) -> None:
        if self.lam < 0 or self.tau < 0 or self.delta < 0:
            raise ValueError("rates and times must be non-negative")
        if not 0.0 <= self.f_max < 0.5:
            raise ValueError(f"f_max must be in [0, 0.5), got {self.f_max}")

    @property
    def alpha(self) -> float:
        return (1.0 - self.f_max) * self.lam

    @property
    def beta(self) -> float:
        return self.f_max * self.lam

    @property
    def gamma(self) -> float:
        """Honest chain growth rate discounted by network delay."""
        return self.alpha / (1.0 + self.delta * self.alpha)


@dataclass(frozen=True)
class Md1Distribution:
    """Truncated stationary queue-length distribution of an M/D/1 queue."""

    rho: float
    probabilities: np.ndarray
    cutoff: int
    residual: float

    def tail(self, zeta: int) -> float:
        """Pr[Q >= zeta] under this truncation (residual counted as tail)."""
        if zeta <= 0:
            return 1.0
        if zeta > self.cutoff:
            return self.residual
        return float(self.probabilities[zeta:].sum()) + self.residual


@dataclass(frozen=True)
class QueueTailBound:
    """Decomposed upper bound on Pr[Q(t) >= zeta].

    ``md1_tail`` is the stationary-queue term, ``burst_tail`` the
    short-window Poisson burst term; ``total`` is their sum clamped
    to [0, 1].
    """

    zeta: int
    eps0: float
    eps1: float
    t_star: float
    s0: float
    lambda_bar: float
    md1_tail: float
    burst_tail: float
    total: float


def _md1_masses(rho: float, n: int) -> np.ndarray:
    """First ``n`` stationary masses pi_0..pi_{n-1} of an M/D/1 queue.

    Uses the embedded-chain recursion with Poisson(rho) service-interval
    arrival terms: pi_0 = 1 - rho and

        pi_{j+1} = (pi_j - pi_0 a_j - sum_{k=1}^{j} pi_k a_{j-k+1}) / a_0

    with a_j = e^{-rho} rho^j / j!.  Exact and stable; no special
    functions needed.
    """
    if not 0.0 <= rho < 1.0:
        if rho >= 1.0:
            raise UtilizationError(f"utilization {rho:.6g} >= 1")
        raise ValueError(f"utilization must be non-negative, got {rho}")
    if n <= 0:
        return np.zeros(0)
    p = np.zeros(n)
    p[0] = 1.0 - rho
    if n == 1 or rho == 0.0:
        return p
    a = np.zeros(n + 1)
    a[0] = math.exp(-rho)
    for j in range(1, n + 1):
        a[j] = a[j - 1] * rho / j
    for j in range(n - 1):
        acc = p[j] - p[0] * a[j]
        if j >= 1:
            # sum_{k=1}^{j} pi_k a_{j-k+1}
            acc -= float(np.dot(p[1 : j + 1], a[1 : j + 1][::-1]))
        nxt = acc / a[0]
        p[j + 1] = nxt if nxt > 0.0 else 0.0
    return p


def md1_stationary(rho: float, cutoff: int) -> Md1Distribution:
    """Stationary queue-length distribution of M/D/1 truncated at ``cutoff``.

    Raises UtilizationError for rho >= 1 and ValueError for rho < 0.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    p = _md1_masses(rho, cutoff + 1)
    residual = max(0.0, 1.0 - float(p.sum()))
    return Md1Distribution(rho=rho, probabilities=p, cutoff=cutoff, residual=residual)


def md1_tail(rho: float, zeta: int) -> float:
    """Pr[Q >= zeta] for the stationary M/D/1 queue at utilization rho.

    Computed as the exact complement of the mass below ``zeta``; the
    complement carries no truncation error, so no majorant is needed.
    """
    if zeta < 0:
        raise ValueError(f"zeta must be >= 0, got {zeta}")
    if zeta == 0:
        return 1.0
    p = _md1_masses(rho, zeta)
    return min(1.0, max(0.0, 1.0 - float(p.sum())))


def poisson_burst_tail(mean: float, zeta: int) -> float:
    """Pr[Poisson(mean) >= zeta], stable far into either tail.

    For zeta <= mean the complement of the lower sum is fine; deep in
    the upper tail the lower sum cancels catastrophically, so the tail
    is summed directly by term ratios starting from the log-pmf at
    ``zeta``.  Handles mean up to ~1e4 and zeta up to ~1e5.
    """
    if mean < 0:
        raise ValueError(f"mean must be >= 0, got {mean}")
    if zeta <= 0:
        return 1.0
    if mean == 0.0:
        return 0.0
    if zeta <= mean:
        # Lower sum in log space to survive huge means.
        i = np.arange(zeta, dtype=float)
        logs = i * math.log(mean) - mean - np.array([math.lgamma(k + 1.0) for k in range(zeta)])
        m = logs.max()
        lower = math.exp(m) * float(np.exp(logs - m).sum())
        return min(1.0, max(0.0, 1.0 - lower))
    # Upper series: pmf(zeta) * (1 + mean/(zeta+1) + mean^2/((zeta+1)(zeta+2)) + ...)
    logp = zeta * math.log(mean) - mean - math.lgamma(zeta + 1.0)
    if logp < -745.0:  # exp underflow; true tail below ~1e-323
        return 0.0
    term = 1.0
    total = 1.0
    k = zeta + 1
    while term > 1e-18 * total:
        term *= mean / k
        total += term
        k += 1
    return min(1.0, math.exp(logp) * total)


def _poisson_pmf_array(mean: float, n: int) -> np.ndarray:
    """pmf(0..n-1) of Poisson(mean) by term recursion."""
    pmf = np.zeros(n)
    if mean == 0.0:
        pmf[0] = 1.0
        return pmf
    pmf[0] = math.exp(-mean)
    for k in range(1, n):
        pmf[k] = pmf[k - 1] * mean / k
    return pmf


def withhold_success_prob(alpha: float, beta: float, delta: float, t_w: float) -> float:
    """Probability that a block withheld for ``t_w`` seconds still wins.

    Models the race as the difference of two independent Poisson counts:
    adversarial blocks at rate beta versus delay-discounted honest chain
    growth at rate gamma = alpha / (1 + delta * alpha).  Returns
    Pr[X_A(t_w) - N(t_w) > 0], summed over the joint grid with both
    tails truncated below 1e-12 (the truncated adversary tail is added
    back so the result stays an upper bound).
    """
    if t_w < 0:
        raise ValueError(f"t_w must be >= 0, got {t_w}")
    if alpha < 0 or beta < 0 or delta < 0:
        raise ValueError("rates and delay must be non-negative")
    if beta == 0.0 or t_w == 0.0:
        return 0.0
    gamma = alpha / (1.0 + delta * alpha)
    mu_a = beta * t_w
    mu_h = gamma * t_w
    k_max = int(mu_a + 12.0 * math.sqrt(mu_a) + 30.0)
    pmf_a = _poisson_pmf_array(mu_a, k_max + 1)
    pmf_h = _poisson_pmf_array(mu_h, k_max + 1)
    cdf_h = np.cumsum(pmf_h)
    # Pr[X > N] = sum_k Pr[X=k] Pr[N <= k-1]
    prob = float(np.dot(pmf_a[1:], cdf_h[:-1]))
    residual_a = max(0.0, 1.0 - float(pmf_a.sum()))
    return min(1.0, prob + residual_a)


def select_t_star(
    params: RateParams,
    eta: float,
    grid_step: float | None = None,
) -> float:
    """Smallest withholding horizon beyond which success is improbable.

    Returns the smallest grid point t* such that the withholding success
    probability stays <= eta for every grid time >= t*.  The success
    probability is zero at t=0, rises to a peak, then decays once the
    honest growth rate exceeds the adversarial rate, so the suffix
    condition (not a pointwise one) is what the bound needs.

    Grid step defaults to delta / 10.  Raises NoFiniteWithholdTime when
    beta >= gamma.
    """
    if not 0.0 < eta:
        raise ValueError(f"eta must be positive, got {eta}")
    if eta >= 1.0 or params.beta == 0.0:
        return 0.0
    if params.beta >= params.gamma:
        raise NoFiniteWithholdTime(
            f"beta={params.beta:.6g} >= gamma={params.gamma:.6g}: "
            "withholding success does not decay"
        )
    if grid_step is None:
        grid_step = params.delta / 10.0 if params.delta > 0 else 0.1 / params.lam
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")

    def prob(t: float) -> float:
        return withhold_success_prob(params.alpha, params.beta, params.delta, t)

    # Bracket the decaying branch: double until the probability is
    # comfortably under eta and still decreasing.
    hi = grid_step
    while prob(hi) > eta * 0.5 or prob(2.0 * hi) > prob(hi):
        hi *= 2.0
        if hi > 1e9 / params.lam:
            raise NoFiniteWithholdTime("no horizon found below 1e9 blocks of time")
    # Walk the grid down from hi while the suffix condition holds.
    k = int(math.ceil(hi / grid_step))
    while k > 0 and prob((k - 1) * grid_step) <= eta:
        k -= 1
    return k * grid_step


def zeta_bound(
    params: RateParams,
    zeta: int,
    eps0: float,
    eps1: float,
    t_star: float,
) -> QueueTailBound:
    """Upper bound on Pr[Q(t) >= zeta] for given slack factors.

    The bound is the stationary M/D/1 tail at the inflated arrival rate
    lambda_bar = (1+eps0) alpha + (1+eps1) beta, plus the probability of
    a Poisson burst of zeta or more arrivals in the window
    s0 = max(delta/eps0, t_star/eps1).
    """
    if eps0 <= 0 or eps1 <= 0:
        raise ValueError("slack factors must be positive")
    if zeta < 0:
        raise ValueError(f"zeta must be >= 0, got {zeta}")
    if t_star < 0:
        raise ValueError(f"t_star must be >= 0, got {t_star}")
    lambda_bar = (1.0 + eps0) * params.alpha + (1.0 + eps1) * params.beta
    rho = lambda_bar * params.tau
    if rho >= 1.0:
        raise UtilizationError(
            f"inflated utilization {rho:.6g} >= 1 (lambda_bar={lambda_bar:.6g}); "
            "shrink eps0/eps1"
        )
    s0 = max(params.delta / eps0, t_star / eps1)
    m_tail = md1_tail(rho, zeta)
    b_tail = poisson_burst_tail(lambda_bar * s0, zeta)
    return QueueTailBound(
        zeta=zeta,
        eps0=eps0,
        eps1=eps1,
        t_star=t_star,
        s0=s0,
        lambda_bar=lambda_bar,
        md1_tail=m_tail,
        burst_tail=b_tail,
        total=min(1.0, m_tail + b_tail),
    )


def choose_zeta(
    params: RateParams,
    eta: float,
    target: float,
    zeta_max: int = 10_000,
    eps_grid: tuple[float, ...] = DEFAULT_EPS_GRID,
) -> tuple[int, QueueTailBound]:
    """Smallest zeta whose optimized tail bound is below ``target``.

    For each slack pair (eps0, eps1) on the grid the minimal acceptable
    zeta is found by exponential-then-binary search (the bound is
    non-increasing in zeta); the returned zeta is the minimum over the
    grid, together with the bound of the best pair at that zeta.
    Deterministic for a fixed grid.

    A target >= 1 is trivially met by any zeta, so zeta=1 is returned.
    Raises SaturationError when no zeta <= zeta_max reaches the target.
    """
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    t_star = select_t_star(params, eta) if params.beta > 0 else 0.0
    if target >= 1.0:
        for eps in eps_grid:
            try:
                return 1, zeta_bound(params, 1, eps, eps, t_star)
            except UtilizationError:
                continue
        raise UtilizationError("lambda * tau too close to 1 for every slack pair")

    # Prefix sums of the M/D/1 masses, cached per utilization and grown
    # on demand; the binary searches below probe many zetas at one rho.
    prefix_cache: dict[float, np.ndarray] = {}

    def cached_md1_tail(rho: float, z: int) -> float:
        cum = prefix_cache.get(rho)
        if cum is None or len(cum) < z:
            cum = np.cumsum(_md1_masses(rho, max(2 * z, 64)))
            prefix_cache[rho] = cum
        return min(1.0, max(0.0, 1.0 - float(cum[z - 1])))

    best_zeta: int | None = None

    for e0 in eps_grid:
        for e1 in eps_grid:
            lambda_bar = (1.0 + e0) * params.alpha + (1.0 + e1) * params.beta
            rho = lambda_bar * params.tau
            if rho >= 1.0:
                continue
            mean = lambda_bar * max(params.delta / e0, t_star / e1)

            def ok(z: int) -> bool:
                return cached_md1_tail(rho, z) + poisson_burst_tail(mean, z) < target

            # Minimal acceptable zeta for this pair, but only below the
            # incumbent: larger values cannot improve the minimum.
            cap = min(best_zeta - 1 if best_zeta is not None else zeta_max, zeta_max)
            if cap < 1:
                continue
            lo, hi = 0, 1  # ok(0) is False for target < 1
            while hi <= cap and not ok(hi):
                lo = hi
                hi *= 2
            if hi > cap:
                if not ok(cap):
                    continue
                hi = cap
            while lo + 1 < hi:
                mid = (lo + hi) // 2
                if ok(mid):
                    hi = mid
                else:
                    lo = mid
            best_zeta = hi

    if best_zeta is None:
        raise SaturationError(f"no zeta <= {zeta_max} reaches target {target}")

    # Report the tightest bound among grid pairs at the winning zeta.
    best_bound: QueueTailBound | None = None
    for e0 in eps_grid:
        for e1 in eps_grid:
            try:
                b = zeta_bound(params, best_zeta, e0, e1, t_star)
            except UtilizationError:
                continue
            if best_bound is None or b.total < best_bound.total:
                best_bound = b
    assert best_bound is not None
    return best_zeta, best_bound
