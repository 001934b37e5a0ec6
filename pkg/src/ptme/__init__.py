"""Surrogate evaluation along precision, time, memory and energy axes,
plus a surrogate-assisted particle swarm optimizer."""

from .harness import (
    PtmeStudyReport,
    StudyConfig,
    average_entropy,
    fit_lognormal,
    mann_whitney_u,
    normalize_report,
    run_study,
)
from .metrics import kendall_tau_a, kendall_tau_b, mape, rmse
from .pso import PsoParams, compare_runs, pso_run, sapso_run
from .sampling import (
    Dataset,
    DesignSpace,
    latin_hypercube_sample,
    quantize,
    uniform_random_sample,
)
from .surrogate import (
    MlpModel,
    MlpSpec,
    TrainParams,
    build,
    gradient_check,
    load_model,
    predict,
    predict_batch,
    save_model,
    train,
)
from .telemetry import EnergyProbe, MeasurementRecord, measure
from .traffic import (
    TrafficInstance,
    TrafficObjective,
    build_grid_instance,
    green_red_ratio,
    load_preset,
    objective,
    simulate,
    synthetic_objective,
)

__version__ = "0.1.0"
