"""Gamma mixing prior, Poisson claim counts and the negative binomial marginal.

``beta`` is a *rate*: the prior density is
``x**(alpha - 1) * beta**alpha * exp(-beta * x) / Gamma(alpha)``,
so the prior mean is ``alpha / beta``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats

from .errors import EmptyData, InsufficientDispersion, ValidationError

# series are cut once this much probability mass has been accumulated
SERIES_TAIL = 1e-12


@dataclass(frozen=True)
class GammaPrior:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive and finite, got {value}")

    @property
    def mean(self) -> float:
        return self.alpha / self.beta

    @property
    def variance(self) -> float:
        return self.alpha / self.beta**2

    def quantile(self, q: float) -> float:
        return float(stats.gamma.ppf(q, self.alpha, scale=1.0 / self.beta))


@dataclass(frozen=True)
class ExposureRecord:
    """Claims ``X_i`` observed over ``exposure_years`` (may be fractional)."""

    claims: int
    exposure_years: float

    def __post_init__(self):
        if self.claims < 0:
            raise ValidationError(f"claims must be non-negative, got {self.claims}")
        if not (math.isfinite(self.exposure_years) and self.exposure_years > 0):
            raise ValidationError(f"exposure_years must be positive, got {self.exposure_years}")


def gamma_pdf(prior: GammaPrior, x):
    x = np.asarray(x, dtype=float)
    a, b = prior.alpha, prior.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = (a - 1) * np.log(x) + a * math.log(b) - b * x - special.gammaln(a)
    out = np.exp(logpdf)
    # the log form is nan or inf at x = 0
    at_zero = b if a == 1 else (0.0 if a > 1 else np.inf)
    out = np.where(x == 0, at_zero, out)
    out = np.where(x < 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def poisson_logpmf(lam, k):
    lam = np.asarray(lam, dtype=float)
    k = np.asarray(k)
    return special.xlogy(k, lam) - lam - special.gammaln(k + 1)


def poisson_pmf(lam, k):
    """P(X = k) for X ~ Poisson(lam), evaluated in log space."""
    return np.exp(poisson_logpmf(lam, k))


def neg_binomial_pmf(prior: GammaPrior, t: float, k):
    """Marginal P(X = k) when X | Lambda ~ Poisson(t * Lambda), Lambda ~ prior.

    Negative binomial with ``alpha`` successes and success probability
    ``beta / (t + beta)``.
    """
    if not t > 0:
        raise ValidationError(f"exposure must be positive, got {t}")
    a, b = prior.alpha, prior.beta
    k = np.asarray(k)
    logp = (
        special.gammaln(k + a)
        - special.gammaln(a)
        - special.gammaln(k + 1)
        + a * math.log(b / (t + b))
        + k * math.log(t / (t + b))
    )
    return np.exp(logp)


def neg_binomial_moments(prior: GammaPrior, t: float) -> tuple[float, float]:
    """First two raw moments by direct series summation."""
    total = m1 = m2 = 0.0
    k = 0
    chunk = 256
    while total < 1 - SERIES_TAIL:
        ks = np.arange(k, k + chunk)
        p = neg_binomial_pmf(prior, t, ks)
        total += p.sum()
        m1 += (ks * p).sum()
        m2 += (ks * ks * p).sum()
        k += chunk
    return float(m1), float(m2)


def moment_sums(records: Iterable[ExposureRecord]) -> tuple[int, int, float, float, int]:
    """``(sum X, sum X^2, sum t, sum t^2, n)``; exposure sums are correctly rounded."""
    sx = sx2 = n = 0
    ts = []
    for r in records:
        sx += r.claims
        sx2 += r.claims * r.claims
        ts.append(r.exposure_years)
        n += 1
    return sx, sx2, math.fsum(ts), math.fsum(t * t for t in ts), n


def mom_from_sums(sx, sx2, st, st2) -> tuple[Fraction, Fraction]:
    """Exact solution of the moment system from its four sums.

    Returns ``(alpha, beta)`` as fractions:
    ``alpha / beta = sx / st`` and
    ``1 / beta = (st / st2) * (sx2 / sx - 1) - sx / st``.
    """
    sx, sx2, st, st2 = (Fraction(v) for v in (sx, sx2, st, st2))
    if sx == 0:
        raise EmptyData("no claims in the data; the moment estimator is undefined")
    mean_rate = sx / st
    inv_beta = (st / st2) * (sx2 / sx - 1) - mean_rate
    if inv_beta <= 0:
        raise InsufficientDispersion(
            f"dispersion term is {float(inv_beta):.6g} <= 0: the claims are not "
            "over-dispersed relative to Poisson, so no Gamma mixture fits"
        )
    beta = 1 / inv_beta
    return mean_rate * beta, beta


def estimate_prior_mom(records: Sequence[ExposureRecord]) -> GammaPrior:
    """Method-of-moments estimate of the Gamma prior from claim statistics.

    Raises
    ------
    EmptyData
        No records, or no claims at all.
    InsufficientDispersion
        The data are not over-dispersed, so the implied ``1/beta`` is <= 0.
    """
    sx, sx2, st, st2, n = moment_sums(records)
    if n == 0:
        raise EmptyData("no exposure records")
    alpha, beta = mom_from_sums(sx, sx2, st, st2)
    return GammaPrior(float(alpha), float(beta))


def read_exposure_csv(source) -> list[ExposureRecord]:
    """Read ``claims, exposure_years`` rows from a path or text stream.

    Extra columns are ignored. Lines starting with ``#`` before the header
    are skipped. Errors name the offending line.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return read_exposure_csv(io.StringIO(fh.read()))
    lines = source.read().splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    reader = csv.DictReader(lines[start:])
    if reader.fieldnames is None:
        raise ValidationError("exposure CSV is empty; a header row is required")
    missing = {"claims", "exposure_years"} - set(reader.fieldnames)
    if missing:
        raise ValidationError(f"exposure CSV header lacks columns: {', '.join(sorted(missing))}")
    out = []
    for offset, row in enumerate(reader):
        lineno = start + offset + 2
        try:
            claims = int(row["claims"])
            exposure = float(row["exposure_years"])
            out.append(ExposureRecord(claims, exposure))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return out
