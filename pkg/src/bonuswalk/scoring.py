"""Brier and logarithmic scores for Poisson claim-count forecasts.

Scores are positively oriented (higher is better). The *expected* forms
score a forecast ``P`` against the true distribution ``Q``; the *observed*
forms score it against a realized count. Series over the count are cut at
``k`` where both forecasts have accumulated ``1 - tail`` of their mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ValidationError
from .gamma_poisson import poisson_logpmf, poisson_pmf

DEFAULT_TAIL = 1e-12


def truncation_point(lam: float, tail: float = DEFAULT_TAIL) -> int:
    """Smallest ``k`` with ``P(X > k) <= tail`` for ``X ~ Poisson(lam)``."""
    if lam == 0:
        return 0
    k = int(stats.poisson.isf(tail, lam))
    while stats.poisson.sf(k, lam) > tail:
        k += 1
    return k


@dataclass(frozen=True)
class PoissonForecast:
    """Predictive distribution Poisson(``lambda_hat``) for next year's claim count."""

    lambda_hat: float
    tail: float = DEFAULT_TAIL

    def __post_init__(self):
        if not (math.isfinite(self.lambda_hat) and self.lambda_hat >= 0):
            raise ValidationError(f"lambda_hat must be finite and >= 0, got {self.lambda_hat}")

    @property
    def truncation_k(self) -> int:
        return truncation_point(self.lambda_hat, self.tail)

    def pmf(self, k_max: int) -> np.ndarray:
        return poisson_pmf(self.lambda_hat, np.arange(k_max + 1))

    def logpmf(self, k_max: int) -> np.ndarray:
        return poisson_logpmf(self.lambda_hat, np.arange(k_max + 1))


def _joint_k(p: PoissonForecast, q: PoissonForecast) -> int:
    return max(p.truncation_k, q.truncation_k)


def brier_expected(p: PoissonForecast, q: PoissonForecast) -> float:
    """``2 sum p_i q_i - sum p_i^2 - 1``."""
    k = _joint_k(p, q)
    pp, qq = p.pmf(k), q.pmf(k)
    return float(2 * np.dot(pp, qq) - np.dot(pp, pp) - 1)


def brier_observed(p: PoissonForecast, k: int) -> float:
    """``2 p_k - sum p_j^2 - 1``."""
    pp = p.pmf(p.truncation_k)
    return float(2 * poisson_pmf(p.lambda_hat, k) - np.dot(pp, pp) - 1)


def log_expected(p: PoissonForecast, q: PoissonForecast) -> float:
    """``sum q_i log p_i``; ``-inf`` when ``q`` charges a count ``p`` rules out."""
    k = _joint_k(p, q)
    qq, logp = q.pmf(k), p.logpmf(k)
    with np.errstate(invalid="ignore"):
        terms = np.where(qq > 0, qq * logp, 0.0)
    return float(terms.sum())


def log_observed(p: PoissonForecast, k: int) -> float:
    """``log p_k = k log(lambda_hat) - lambda_hat - log k!``."""
    return float(poisson_logpmf(p.lambda_hat, k))


def brier_divergence(p: PoissonForecast, q: PoissonForecast) -> float:
    """``sum (p_i - q_i)^2`` by direct series."""
    k = _joint_k(p, q)
    return float(np.sum((p.pmf(k) - q.pmf(k)) ** 2))


def kl_divergence(p: PoissonForecast, q: PoissonForecast) -> float:
    """``sum q_i log(q_i / p_i)`` by direct series."""
    k = _joint_k(p, q)
    qq = q.pmf(k)
    logq, logp = q.logpmf(k), p.logpmf(k)
    with np.errstate(invalid="ignore"):
        terms = np.where(qq > 0, qq * (logq - logp), 0.0)
    return float(terms.sum())


def poisson_kl(lam_p: float, lam_q: float) -> float:
    """Closed form of KL(Poisson(lam_q) || Poisson(lam_p))."""
    if lam_q == 0:
        return lam_p
    if lam_p == 0:
        return math.inf
    return lam_q * math.log(lam_q / lam_p) + lam_p - lam_q


# Vectorized forms used for whole portfolios. Every row is summed over the
# same count grid, long enough for the largest lambda involved (the
# truncation point is monotone in lambda).


def _count_grid(*lams: np.ndarray, tail: float) -> np.ndarray:
    top = max((float(a.max()) for a in lams if a.size), default=0.0)
    return np.arange(truncation_point(top, tail) + 1)


def expected_scores(lam_hat, lam_true, tail: float = DEFAULT_TAIL) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``(brier_expected, log_expected)`` for forecast/truth arrays."""
    lam_hat = np.asarray(lam_hat, dtype=float)
    lam_true = np.asarray(lam_true, dtype=float)
    ks = _count_grid(lam_hat, lam_true, tail=tail)
    p = poisson_pmf(lam_hat[:, None], ks)
    q = poisson_pmf(lam_true[:, None], ks)
    logp = poisson_logpmf(lam_hat[:, None], ks)
    brier = 2 * (p * q).sum(axis=1) - (p * p).sum(axis=1) - 1
    with np.errstate(invalid="ignore"):
        log = np.where(q > 0, q * logp, 0.0).sum(axis=1)
    return brier, log


def observed_scores(lam_hat, k, tail: float = DEFAULT_TAIL) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``(brier_observed, log_observed)``."""
    lam_hat = np.asarray(lam_hat, dtype=float)
    k = np.asarray(k)
    p = poisson_pmf(lam_hat[:, None], _count_grid(lam_hat, tail=tail))
    brier = 2 * poisson_pmf(lam_hat, k) - (p * p).sum(axis=1) - 1
    return brier, poisson_logpmf(lam_hat, k)
