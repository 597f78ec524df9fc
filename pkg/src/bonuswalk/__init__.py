"""Claim-frequency estimation under bonus-malus systems."""

__version__ = "0.1.0"

from .bms import (  # noqa: E402
    BmsSpec,
    TransitionMatrix,
    build_transition_matrix,
    claim_class_target,
    class_probability,
    load_preset,
    matrix_power,
    parse_bms_spec,
)
from .estimators import (  # noqa: E402
    ClassTenureObservation,
    QuadratureConfig,
    estimate_method1,
    estimate_method1_curve,
    estimate_method2,
    estimate_method3,
)
from .gamma_poisson import ExposureRecord, GammaPrior, estimate_prior_mom  # noqa: E402
from .scoring import PoissonForecast  # noqa: E402
from .simulation import run_comparison, simulate_portfolio  # noqa: E402
