"""Seeded portfolio simulation and the method-comparison experiment.

Random numbers come from numpy's Philox4x64-10, a counter-based
generator. Policy ``i`` of a run with seed ``s`` owns the stream keyed by
``(i, s)``; the top counter word separates independent uses of the same
key (portfolio draws vs. exposure studies). Streams therefore do not
depend on the portfolio size or on how the work is split across threads.

Experiment layout
-----------------
Each policyholder gets ``lambda ~ Gamma(alpha, beta)``, ``years`` observed
claim years plus one held-out year. The estimators see only:

* prior fit: ``(total claims, tenure)`` pairs of the whole portfolio;
* ``method.1``: final class and tenure;
* ``method.2``: ``(class at the start of the final year, final-year claims)``
  over the portfolio, looked up at the policy's final class;
* ``method.3``: total claims and tenure;
* ``baseline``: nothing beyond the fitted prior mean.

Expected scores compare each forecast with Poisson(true lambda); observed
scores use the held-out year. ``oracle`` forecasts the true lambda and
gives the ceiling of the expected scores.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bms
from .bms import BmsSpec
from .errors import ValidationError
from .estimators import QuadratureConfig, estimate_method1_curve, estimate_method2, estimate_method3
from .gamma_poisson import ExposureRecord, GammaPrior, estimate_prior_mom
from .scoring import DEFAULT_TAIL, expected_scores, observed_scores

METHODS = ("method.1", "method.2", "method.3", "baseline", "oracle")
TENURE_MODES = ("fixed", "mixed")
REPORT_SCHEMA_VERSION = 1

_PORTFOLIO_STREAM = 0
_EXPOSURE_STREAM = 1
_MAX_SEED = 2**64


def policy_rng(seed: int, index: int, stream: int = _PORTFOLIO_STREAM) -> np.random.Generator:
    if not 0 <= seed < _MAX_SEED:
        raise ValidationError(f"seed must be in [0, 2**64), got {seed}")
    return np.random.Generator(np.random.Philox(key=[index, seed], counter=[0, 0, 0, stream]))


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("BONUSWALK_THREADS", "1") or 1)
    return max(1, threads)


def _parallel_map(fn, n: int, threads: int) -> list:
    if threads == 1 or n < 2 * threads:
        return [fn(i) for i in range(n)]
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        chunks = pool.map(lambda lo_hi: [fn(i) for i in range(*lo_hi)], zip(bounds[:-1], bounds[1:]))
        return [item for chunk in chunks for item in chunk]


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: int
    true_lambda: float
    tenure_years: int
    yearly_claims: tuple[int, ...]
    class_trajectory: tuple[int, ...]
    holdout_claims: int

    @property
    def total_claims(self) -> int:
        return sum(self.yearly_claims)


@dataclass(frozen=True)
class ObservedPolicy:
    """What an insurer can see: no true frequency, no held-out year."""

    policy_id: int
    tenure_years: int
    yearly_claims: tuple[int, ...]
    class_trajectory: tuple[int, ...]

    @property
    def total_claims(self) -> int:
        return sum(self.yearly_claims)

    @property
    def final_class(self) -> int:
        return self.class_trajectory[-1]


def withhold_truth(records: Sequence[PolicyRecord]) -> list[ObservedPolicy]:
    return [
        ObservedPolicy(r.policy_id, r.tenure_years, r.yearly_claims, r.class_trajectory)
        for r in records
    ]


@dataclass(frozen=True)
class Portfolio:
    spec: BmsSpec
    prior: GammaPrior
    years: int
    seed: int
    records: tuple[PolicyRecord, ...]
    tenure_mode: str = "fixed"

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def simulate_portfolio(
    spec: BmsSpec,
    prior: GammaPrior,
    n: int,
    years: int,
    seed: int,
    *,
    tenure_mode: str = "fixed",
    fixed_lambda: float | None = None,
    threads: int | None = None,
) -> Portfolio:
    """Simulate ``n`` policyholders for ``years`` years plus one held-out year.

    With ``tenure_mode="mixed"`` each policy's tenure is uniform on
    ``1..years`` instead, so that classes are populated by drivers of
    different seniority (a single cohort leaves the classes it is moving
    into empty, which starves ``method.2``).

    ``fixed_lambda`` replaces the Gamma draw for every policy (test hook);
    the stream layout is unchanged so claim draws stay aligned.
    """
    if n < 1 or years < 1:
        raise ValidationError(f"need n >= 1 and years >= 1, got n={n}, years={years}")
    if tenure_mode not in TENURE_MODES:
        raise ValidationError(f"tenure_mode must be one of {', '.join(TENURE_MODES)}")
    if fixed_lambda is not None and not (math.isfinite(fixed_lambda) and fixed_lambda >= 0):
        raise ValidationError(f"fixed_lambda must be finite and >= 0, got {fixed_lambda}")
    scale = 1.0 / prior.beta

    def one(i: int) -> PolicyRecord:
        rng = policy_rng(seed, i)
        lam = float(rng.gamma(prior.alpha, scale))
        if fixed_lambda is not None:
            lam = float(fixed_lambda)
        draws = rng.poisson(lam, size=years + 1).tolist()
        tenure = years if tenure_mode == "fixed" else int(rng.integers(1, years + 1))
        claims = tuple(draws[:tenure])
        return PolicyRecord(
            policy_id=i,
            true_lambda=lam,
            tenure_years=tenure,
            yearly_claims=claims,
            class_trajectory=tuple(bms.simulate_trajectory(spec, claims)),
            holdout_claims=draws[years],
        )

    records = _parallel_map(one, n, thread_count(threads))
    return Portfolio(spec, prior, years, seed, tuple(records), tenure_mode)


def simulate_exposure_records(
    prior: GammaPrior,
    n: int,
    seed: int,
    exposure_choices: Sequence[float] = (1.0,),
) -> list[ExposureRecord]:
    """Claim statistics with exposures drawn uniformly from ``exposure_choices``."""
    choices = np.asarray(exposure_choices, dtype=float)
    scale = 1.0 / prior.beta
    out = []
    for i in range(n):
        rng = policy_rng(seed, i, _EXPOSURE_STREAM)
        t = float(choices[rng.integers(choices.size)])
        lam = rng.gamma(prior.alpha, scale)
        out.append(ExposureRecord(int(rng.poisson(lam * t)), t))
    return out


@dataclass(frozen=True)
class Estimates:
    prior: GammaPrior
    lambda_hat: dict[str, np.ndarray]
    fallback: dict[str, np.ndarray]


def estimate_all(
    observed: Sequence[ObservedPolicy],
    spec: BmsSpec,
    qc: QuadratureConfig | None = None,
) -> Estimates:
    """Run the prior fit and every estimator on truth-free observations."""
    if not observed:
        raise ValidationError("portfolio is empty")
    prior = estimate_prior_mom([ExposureRecord(p.total_claims, p.tenure_years) for p in observed])
    n = len(observed)
    tenure = np.array([p.tenure_years for p in observed])
    final = np.array([p.final_class for p in observed])
    total = np.array([p.total_claims for p in observed])

    curve = estimate_method1_curve(spec, prior, int(tenure.max()), qc)
    m1 = curve.values[tenure, final - 1]
    m1_fallback = np.isnan(m1)
    m1 = np.where(m1_fallback, prior.mean, m1)

    table = estimate_method2(
        ((p.class_trajectory[-2], p.yearly_claims[-1]) for p in observed),
        n_classes=spec.n_classes,
        fallback_prior=prior,
    )
    m2 = np.array([table[c].value for c in final])
    m2_fallback = np.array([table[c].fallback for c in final])

    m3 = np.asarray(estimate_method3(prior, total, tenure), dtype=float)
    no_fallback = np.zeros(n, dtype=bool)
    return Estimates(
        prior=prior,
        lambda_hat={
            "method.1": m1,
            "method.2": m2,
            "method.3": m3,
            "baseline": np.full(n, prior.mean),
        },
        fallback={
            "method.1": m1_fallback,
            "method.2": m2_fallback,
            "method.3": no_fallback,
            "baseline": no_fallback,
        },
    )


@dataclass(frozen=True)
class MethodScores:
    """Portfolio means of the four scores; ``-inf`` entries are counted, not averaged."""

    method: str
    n_policies: int
    mean_expected_brier: float
    mean_expected_log: float
    mean_observed_brier: float
    mean_observed_log: float
    neg_inf_expected_log: int
    neg_inf_observed_log: int
    fallback_count: int


@dataclass(frozen=True)
class ScoreReport:
    system: str
    n_policies: int
    years: int
    seed: int
    generating_prior: GammaPrior
    estimated_prior: GammaPrior
    quadrature: QuadratureConfig
    tail: float
    tenure_mode: str = "fixed"
    methods: dict[str, MethodScores] = field(default_factory=dict)

    def __getitem__(self, method: str) -> MethodScores:
        return self.methods[method]


def _finite_mean(x: np.ndarray) -> tuple[float, int]:
    finite = np.isfinite(x)
    n_inf = int((~finite).sum())
    if not finite.any():
        return math.nan, n_inf
    # math.fsum: order-independent, correctly rounded
    return math.fsum(x[finite].tolist()) / int(finite.sum()), n_inf


def score_method(method, lam_hat, lam_true, holdout, fallback, tail=DEFAULT_TAIL) -> MethodScores:
    eb, el = expected_scores(lam_hat, lam_true, tail)
    ob, ol = observed_scores(lam_hat, holdout, tail)
    mean_el, inf_el = _finite_mean(el)
    mean_ol, inf_ol = _finite_mean(ol)
    return MethodScores(
        method=method,
        n_policies=int(len(lam_hat)),
        mean_expected_brier=_finite_mean(eb)[0],
        mean_expected_log=mean_el,
        mean_observed_brier=_finite_mean(ob)[0],
        mean_observed_log=mean_ol,
        neg_inf_expected_log=inf_el,
        neg_inf_observed_log=inf_ol,
        fallback_count=int(np.count_nonzero(fallback)),
    )


def run_comparison(
    portfolio: Portfolio,
    qc: QuadratureConfig | None = None,
    tail: float = DEFAULT_TAIL,
) -> ScoreReport:
    """Estimate every policy's frequency by each method and score the forecasts.

    Raises
    ------
    InsufficientDispersion, EmptyData
        When the prior cannot be fitted to the portfolio.
    """
    qc = qc or QuadratureConfig()
    est = estimate_all(withhold_truth(portfolio.records), portfolio.spec, qc)
    lam_true = np.array([r.true_lambda for r in portfolio])
    holdout = np.array([r.holdout_claims for r in portfolio])
    candidates = dict(est.lambda_hat, oracle=lam_true)
    fallbacks = dict(est.fallback, oracle=np.zeros(len(portfolio), dtype=bool))
    scores = {
        m: score_method(m, candidates[m], lam_true, holdout, fallbacks[m], tail) for m in METHODS
    }
    return ScoreReport(
        system=portfolio.spec.name,
        n_policies=len(portfolio),
        years=portfolio.years,
        seed=portfolio.seed,
        generating_prior=portfolio.prior,
        estimated_prior=est.prior,
        quadrature=qc,
        tail=tail,
        tenure_mode=portfolio.tenure_mode,
        methods=scores,
    )


# --- report serialization ---------------------------------------------------

CSV_COLUMNS = (
    "method",
    "n_policies",
    "mean_expected_brier",
    "mean_expected_log",
    "mean_observed_brier",
    "mean_observed_log",
    "neg_inf_expected_log",
    "neg_inf_observed_log",
    "fallback_count",
)


def _select(report: ScoreReport, methods: Sequence[str] | None) -> list[str]:
    if methods is None:
        return [m for m in METHODS if m in report.methods]
    methods = list(methods)
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise ValidationError(
            f"invalid method selection {methods!r}; valid names: {', '.join(METHODS)}"
        )
    return methods


def _num(x: float):
    return None if math.isnan(x) else x


def report_to_dict(report: ScoreReport, methods: Sequence[str] | None = None) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "system": report.system,
        "n_policies": report.n_policies,
        "years": report.years,
        "seed": report.seed,
        "generating_prior": asdict(report.generating_prior),
        "estimated_prior": asdict(report.estimated_prior),
        "quadrature": asdict(report.quadrature),
        "tail": report.tail,
        "tenure_mode": report.tenure_mode,
        "methods": [
            {k: _num(v) if isinstance(v, float) else v for k, v in asdict(report.methods[m]).items()}
            for m in _select(report, methods)
        ],
    }


def report_from_dict(data: dict) -> ScoreReport:
    if data.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValidationError(f"unsupported report schema {data.get('schema_version')!r}")
    methods = {}
    for row in data["methods"]:
        row = {k: (math.nan if v is None else v) for k, v in row.items()}
        methods[row["method"]] = MethodScores(**row)
    return ScoreReport(
        system=data["system"],
        n_policies=data["n_policies"],
        years=data["years"],
        seed=data["seed"],
        generating_prior=GammaPrior(**data["generating_prior"]),
        estimated_prior=GammaPrior(**data["estimated_prior"]),
        quadrature=QuadratureConfig(**data["quadrature"]),
        tail=data["tail"],
        tenure_mode=data["tenure_mode"],
        methods=methods,
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def export_report(
    report: ScoreReport,
    path,
    methods: Sequence[str] | None = None,
    run_id: str | None = None,
) -> list[Path]:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths.

    The CSV starts with ``#`` comment lines carrying the run id and the
    fitted prior, followed by a header row in :data:`CSV_COLUMNS` order.
    """
    selected = _select(report, methods)
    stem = Path(path)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    payload = report_to_dict(report, selected)
    if run_id is not None:
        payload = {"run_id": run_id, **payload}
    try:
        with open(csv_path, "w", newline="") as fh:
            if run_id is not None:
                fh.write(f"# run_id: {run_id}\n")
            fh.write(
                f"# system={report.system} n={report.n_policies} years={report.years} "
                f"seed={report.seed} tenure={report.tenure_mode} alpha_hat={report.estimated_prior.alpha!r} "
                f"beta_hat={report.estimated_prior.beta!r}\n"
            )
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for m in selected:
                row = asdict(report.methods[m])
                writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        with open(json_path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {stem}: {exc}") from exc
    return [csv_path, json_path]


def load_report(path) -> ScoreReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))


def write_portfolio_csv(portfolio: Portfolio, path, header_comment: str | None = None) -> None:
    """One row per policy; ``claims``/``exposure_years`` make it a valid exposure CSV."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["policy_id", "true_lambda", "claims", "exposure_years", "yearly_claims",
             "class_trajectory", "holdout_claims"]
        )
        for r in portfolio:
            writer.writerow(
                [r.policy_id, repr(r.true_lambda), r.total_claims, r.tenure_years,
                 " ".join(map(str, r.yearly_claims)), " ".join(map(str, r.class_trajectory)),
                 r.holdout_claims]
            )
