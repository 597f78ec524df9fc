"""Bonus-malus systems as rule tables, and their Poisson transition matrices.

Classes are numbered ``1..n`` with ``1`` the worst (highest premium) class
and ``n`` the best. All public functions take and return 1-based class
indices; probability vectors are plain arrays where position ``j - 1``
holds class ``j``.

The claim count in a year is Poisson(lambda). Claim counts ``k >= K``
(the reset threshold) all lead to the reset class, so each row of the
transition matrix is a finite sum plus one closed-form tail term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import stats

from .errors import ConfigError, ValidationError

PRESETS = ("hungarian", "brazilian", "belgian")

_BMS_KEYS = {
    "name",
    "classes",
    "initial",
    "move_up",
    "per_claim",
    "reset_threshold",
    "reset_class",
    "labels",
}


@dataclass(frozen=True)
class BmsSpec:
    """A bonus-malus system.

    Parameters
    ----------
    name : str
        Label used in reports.
    n_classes : int
        Number of classes; class 1 is the worst, class ``n_classes`` the best.
    initial_index : int
        Entry class of every new driver.
    move_up : int
        Classes gained after a claim-free year.
    per_claim_drop : tuple of int
        ``per_claim_drop[k - 1]`` is the number of classes lost for ``k``
        claims, for ``1 <= k < reset_threshold``.
    reset_threshold : int
        ``k >= reset_threshold`` claims send the driver to ``reset_class``.
    reset_class : int
    labels : tuple of str
        Display names, worst class first. Defaults to ``C1..Cn``.
    """

    name: str
    n_classes: int
    initial_index: int
    move_up: int
    per_claim_drop: tuple[int, ...]
    reset_threshold: int
    reset_class: int
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = self.n_classes
        if n < 1:
            raise ConfigError(f"classes must be positive, got {n}")
        if not 1 <= self.initial_index <= n:
            raise ConfigError(f"initial class {self.initial_index} outside [1, {n}]")
        if not 1 <= self.reset_class <= n:
            raise ConfigError(f"reset class {self.reset_class} outside [1, {n}]")
        if self.move_up < 1:
            raise ConfigError(f"move_up must be positive, got {self.move_up}")
        if self.reset_threshold < 1:
            raise ConfigError(f"reset_threshold must be positive, got {self.reset_threshold}")
        if len(self.per_claim_drop) != self.reset_threshold - 1:
            raise ConfigError(
                f"per_claim must cover claim counts 1..{self.reset_threshold - 1}, "
                f"got {len(self.per_claim_drop)} entries"
            )
        if any(d < 0 for d in self.per_claim_drop):
            raise ConfigError("per_claim drops must be non-negative")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"C{j}" for j in range(1, n + 1)))
        elif len(self.labels) != n:
            raise ConfigError(f"expected {n} labels, got {len(self.labels)}")

    def drop(self, k: int) -> int:
        return self.per_claim_drop[k - 1]

    def label(self, class_index: int) -> str:
        return self.labels[class_index - 1]


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-year (or ``steps``-year) transition matrix M(lambda)."""

    entries: np.ndarray
    lam: float
    steps: int = 1

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValidationError(f"transition matrix must be square, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def entry(self, i: int, j: int) -> float:
        """Probability of moving from class ``i`` to class ``j`` (1-based)."""
        return float(self.entries[i - 1, j - 1])


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, anywhere on a line.

    Keys are lower-cased. Duplicate keys and lines without ``=`` are
    rejected with the offending line number.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _int(fields: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in fields:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(fields[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {fields[key]!r}") from None


def _parse_per_claim(value: str) -> dict[int, int]:
    table: dict[int, int] = {}
    for item in filter(None, (s.strip() for s in value.split(","))):
        try:
            k, d = (int(s) for s in item.split(":"))
        except ValueError:
            raise ConfigError(f"per_claim: expected 'k:drop', got {item!r}") from None
        if k < 1:
            raise ConfigError(f"per_claim: claim count must be >= 1, got {k}")
        if k in table:
            raise ConfigError(f"per_claim: duplicate claim count {k}")
        table[k] = d
    return table


def spec_from_fields(fields: dict[str, str]) -> BmsSpec:
    unknown = set(fields) - _BMS_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    threshold = _int(fields, "reset_threshold")
    table = _parse_per_claim(fields.get("per_claim", ""))
    missing = [k for k in range(1, threshold) if k not in table]
    if missing:
        raise ConfigError(f"per_claim table has no entry for claim counts {missing}")
    extra = [k for k in table if k >= threshold]
    if extra:
        raise ConfigError(f"per_claim entries {extra} are at or above reset_threshold {threshold}")
    labels = tuple(s.strip() for s in fields["labels"].split(",")) if "labels" in fields else ()
    return BmsSpec(
        name=fields.get("name", "custom"),
        n_classes=_int(fields, "classes"),
        initial_index=_int(fields, "initial"),
        move_up=_int(fields, "move_up", 1),
        per_claim_drop=tuple(table[k] for k in range(1, threshold)),
        reset_threshold=threshold,
        reset_class=_int(fields, "reset_class"),
        labels=labels,
    )


def parse_bms_spec(config_text: str) -> BmsSpec:
    """Parse a BMS rule file (see ``README.md`` for the grammar)."""
    return spec_from_fields(parse_kv_text(config_text))


def load_preset(name: str) -> BmsSpec:
    """Load one of the shipped systems listed in :data:`PRESETS`."""
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown system {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("bonuswalk.data").joinpath(f"{key}.bms").read_text()
    return parse_bms_spec(text)


def format_bms_spec(spec: BmsSpec) -> str:
    """Inverse of :func:`parse_bms_spec`."""
    per_claim = ", ".join(f"{k}:{d}" for k, d in enumerate(spec.per_claim_drop, start=1))
    return "\n".join(
        [
            f"name = {spec.name}",
            f"classes = {spec.n_classes}",
            f"initial = {spec.initial_index}",
            f"move_up = {spec.move_up}",
            f"per_claim = {per_claim}",
            f"reset_threshold = {spec.reset_threshold}",
            f"reset_class = {spec.reset_class}",
            f"labels = {', '.join(spec.labels)}",
            "",
        ]
    )


def claim_class_target(spec: BmsSpec, current: int, k: int) -> int:
    """Class reached from ``current`` after a year with ``k`` claims."""
    if k == 0:
        return min(current + spec.move_up, spec.n_classes)
    if k >= spec.reset_threshold:
        return spec.reset_class
    return max(current - spec.drop(k), 1)


def target_table(spec: BmsSpec) -> np.ndarray:
    """0-based targets, shape ``(n, K + 1)``; column ``K`` is the reset tail."""
    K = spec.reset_threshold
    table = np.empty((spec.n_classes, K + 1), dtype=np.intp)
    for i in range(1, spec.n_classes + 1):
        for k in range(K + 1):
            table[i - 1, k] = claim_class_target(spec, i, k) - 1
    return table


def _check_lambdas(lams: np.ndarray) -> None:
    if not np.all(np.isfinite(lams)) or np.any(lams < 0):
        raise ValidationError("lambda must be finite and non-negative")


def transition_matrices(spec: BmsSpec, lams) -> np.ndarray:
    """Stack of M(lambda) for every value in ``lams``, shape ``(m, n, n)``."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    _check_lambdas(lams)
    K = spec.reset_threshold
    ks = np.arange(K)
    # columns 0..K-1: P(k claims); column K: P(k >= K)
    probs = np.empty((lams.size, K + 1))
    probs[:, :K] = stats.poisson.pmf(ks[None, :], lams[:, None])
    probs[:, K] = stats.poisson.sf(K - 1, lams)
    targets = target_table(spec)
    n = spec.n_classes
    out = np.zeros((lams.size, n, n))
    for i in range(n):
        for k in range(K + 1):
            out[:, i, targets[i, k]] += probs[:, k]
    return out


def build_transition_matrix(spec: BmsSpec, lam: float) -> TransitionMatrix:
    """One-year transition matrix M(lambda) of ``spec``."""
    return TransitionMatrix(transition_matrices(spec, [lam])[0], float(lam))


def matrix_power(m: TransitionMatrix, t: int) -> TransitionMatrix:
    """``t``-step transition matrix (binary exponentiation)."""
    if t < 0:
        raise ValidationError(f"t must be non-negative, got {t}")
    return TransitionMatrix(np.linalg.matrix_power(m.entries, t), m.lam, m.steps * t)


def initial_distribution(spec: BmsSpec) -> np.ndarray:
    pi0 = np.zeros(spec.n_classes)
    pi0[spec.initial_index - 1] = 1.0
    return pi0


def class_probability(spec: BmsSpec, lam: float, t: int) -> np.ndarray:
    """Distribution of the class after ``t`` years for a driver with frequency ``lam``."""
    m = matrix_power(build_transition_matrix(spec, lam), t)
    return m.entries[spec.initial_index - 1].copy()


def class_probability_path(spec: BmsSpec, lams, horizon: int) -> np.ndarray:
    """Class distributions for many frequencies and all years ``0..horizon``.

    Returns an array of shape ``(horizon + 1, m, n)`` whose ``[t, j]`` row
    equals ``class_probability(spec, lams[j], t)``. Built by propagating
    the initial vector one year at a time, so the cost is linear in the
    horizon.
    """
    if horizon < 0:
        raise ValidationError(f"horizon must be non-negative, got {horizon}")
    mats = transition_matrices(spec, lams)
    out = np.empty((horizon + 1, mats.shape[0], spec.n_classes))
    out[0] = initial_distribution(spec)
    for t in range(1, horizon + 1):
        out[t] = np.einsum("mi,mij->mj", out[t - 1], mats)
    return out


def simulate_trajectory(spec: BmsSpec, yearly_claims) -> list[int]:
    """Class path starting at the entry class, one step per year of claims."""
    path = [spec.initial_index]
    for k in yearly_claims:
        path.append(claim_class_target(spec, path[-1], int(k)))
    return path
