"""Claim-frequency estimators.

``method.1``
    Posterior mean of lambda given only the current class and the number
    of years spent in the system. The likelihood of the observation is an
    entry of the ``t``-th power of the transition matrix, which is only
    available pointwise, so the posterior integrals are done by quadrature
    against the Gamma prior.
``method.2``
    Average last-year claim count of everybody in the same class.
``method.3``
    Gamma-Poisson credibility estimate ``(x + alpha) / (t + beta)`` from the
    individual claim history.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy import special

from . import bms
from .bms import BmsSpec
from .errors import UnreachableState, ValidationError
from .gamma_poisson import GammaPrior, gamma_pdf

SCHEMES = ("gauss-jacobi", "gauss-legendre")
_PANEL_ORDER = 16


@dataclass(frozen=True)
class QuadratureConfig:
    """Quadrature rule for expectations under the Gamma prior.

    The integral is cut at the ``upper_quantile`` of the prior. With
    ``scheme="gauss-jacobi"`` (default) a single Gauss-Jacobi rule with
    weight ``x**(alpha - 1)`` absorbs the non-smooth factor of the prior
    density at zero. ``"gauss-legendre"`` uses composite 16-point
    Gauss-Legendre panels of equal width; it converges slowly whenever
    ``alpha`` is not an integer.
    """

    node_count: int = 256
    upper_quantile: float = 1 - 1e-14
    scheme: str = "gauss-jacobi"

    def __post_init__(self):
        if self.node_count < 16:
            raise ValidationError(f"node_count must be >= 16, got {self.node_count}")
        if not 0.9 < self.upper_quantile < 1:
            raise ValidationError(f"upper_quantile must be in (0.9, 1), got {self.upper_quantile}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")


@dataclass(frozen=True)
class ClassTenureObservation:
    class_index: int
    tenure_steps: int

    def __post_init__(self):
        if self.class_index < 1:
            raise ValidationError(f"class_index must be >= 1, got {self.class_index}")
        if self.tenure_steps < 0:
            raise ValidationError(f"tenure_steps must be >= 0, got {self.tenure_steps}")


@lru_cache(maxsize=64)
def _prior_rule(alpha: float, beta: float, qc: QuadratureConfig) -> tuple[np.ndarray, np.ndarray]:
    prior = GammaPrior(alpha, beta)
    cut = prior.quantile(qc.upper_quantile)
    if qc.scheme == "gauss-jacobi":
        x, w = special.roots_jacobi(qc.node_count, 0.0, alpha - 1.0)
        nodes = cut * (1.0 + x) / 2.0
        # w integrates against (1 + x)**(alpha - 1); rescale to the prior density
        log_scale = alpha * math.log(cut / 2.0) + alpha * math.log(beta) - special.gammaln(alpha)
        weights = w * np.exp(log_scale - beta * nodes)
    else:
        panels = -(-qc.node_count // _PANEL_ORDER)
        x, w = np.polynomial.legendre.leggauss(_PANEL_ORDER)
        edges = np.linspace(0.0, cut, panels + 1)
        half = np.diff(edges)[:, None] / 2.0
        nodes = ((edges[:-1, None] + edges[1:, None]) / 2.0 + half * x).ravel()
        weights = (half * w).ravel() * gamma_pdf(prior, nodes)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def prior_quadrature(prior: GammaPrior, qc: QuadratureConfig | None = None):
    """Nodes and weights with ``sum(w * g(nodes)) ~= E[g(Lambda)]``."""
    return _prior_rule(prior.alpha, prior.beta, qc or QuadratureConfig())


def _posterior_mean(nodes, weights, likelihood) -> float:
    wl = weights * likelihood
    den = wl.sum()
    if not den > 0:
        return math.nan
    return float((wl * nodes).sum() / den)


def estimate_method1(
    spec: BmsSpec,
    prior: GammaPrior,
    obs: ClassTenureObservation,
    qc: QuadratureConfig | None = None,
) -> float:
    """Posterior mean of lambda given class ``c`` after ``t`` years.

    Raises
    ------
    UnreachableState
        If the class cannot be reached in ``t`` steps from the entry class.
    """
    if obs.class_index > spec.n_classes:
        raise ValidationError(f"class {obs.class_index} outside [1, {spec.n_classes}]")
    nodes, weights = prior_quadrature(prior, qc)
    powers = np.linalg.matrix_power(bms.transition_matrices(spec, nodes), obs.tenure_steps)
    likelihood = powers[:, spec.initial_index - 1, obs.class_index - 1]
    est = _posterior_mean(nodes, weights, likelihood)
    if math.isnan(est):
        raise UnreachableState(
            f"class {spec.label(obs.class_index)} is unreachable after {obs.tenure_steps} years"
        )
    return est


@dataclass(frozen=True)
class Method1Curve:
    """``values[t, c - 1]`` is the estimate for class ``c`` after ``t`` years (nan if unreachable)."""

    spec: BmsSpec
    prior: GammaPrior
    values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def reachable(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def estimate(self, class_index: int, t: int) -> float:
        value = self.values[t, class_index - 1]
        if math.isnan(value):
            raise UnreachableState(
                f"class {self.spec.label(class_index)} is unreachable after {t} years"
            )
        return float(value)

    def rows(self):
        for c in range(1, self.spec.n_classes + 1):
            for t in range(self.horizon + 1):
                value = self.values[t, c - 1]
                yield self.spec.label(c), t, value, not math.isnan(value)

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class_label", "year", "lambda_hat", "reachable"])
            for label, t, value, ok in self.rows():
                writer.writerow([label, t, repr(float(value)) if ok else "", str(ok).lower()])


def estimate_method1_curve(
    spec: BmsSpec,
    prior: GammaPrior,
    horizon: int,
    qc: QuadratureConfig | None = None,
) -> Method1Curve:
    """Estimates for every class and every year ``0..horizon``.

    The class distribution at each quadrature node is propagated one year
    at a time, so the whole table costs one sweep over the horizon.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    nodes, weights = prior_quadrature(prior, qc)
    path = bms.class_probability_path(spec, nodes, horizon)  # (t, node, class)
    wl = path * weights[None, :, None]
    den = wl.sum(axis=1)
    num = (wl * nodes[None, :, None]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(den > 0, num / den, np.nan)
    values.setflags(write=False)
    return Method1Curve(spec, prior, values)


@dataclass(frozen=True)
class ClassAverage:
    value: float
    count: int
    fallback: bool = False


def estimate_method2(
    last_year: Iterable[tuple[int, int]],
    n_classes: int | None = None,
    fallback_prior: GammaPrior | None = None,
) -> dict[int, ClassAverage]:
    """Per-class mean of last year's claim counts.

    ``last_year`` holds ``(class_index, claims)`` pairs. When ``n_classes``
    is given, every class ``1..n_classes`` without policyholders gets the
    prior mean of ``fallback_prior`` with ``fallback=True``.
    """
    sums: dict[int, int] = {}
    counts: dict[int, int] = {}
    for c, k in last_year:
        sums[c] = sums.get(c, 0) + int(k)
        counts[c] = counts.get(c, 0) + 1
    out = {c: ClassAverage(sums[c] / counts[c], counts[c]) for c in sorted(counts)}
    if n_classes is not None:
        for c in range(1, n_classes + 1):
            if c not in out:
                if fallback_prior is None:
                    raise ValidationError(f"class {c} is empty and no fallback prior was given")
                out[c] = ClassAverage(fallback_prior.mean, 0, fallback=True)
    return out


def estimate_method3(prior: GammaPrior, x, t):
    """Credibility estimate ``(x + alpha) / (t + beta)``; ``t`` may be fractional."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(x < 0) or np.any(t < 0):
        raise ValidationError("claims and exposure must be non-negative")
    out = (x + prior.alpha) / (t + prior.beta)
    return float(out) if out.ndim == 0 else out
