"""Closed-loop yaw optimisation of wind farms with Gaussian-process model correction."""
from .adaptation import (CorrectedModel, ObjectiveForm, OptimizerOptions, Scheme, Surrogate,
                         estimate_ambient, filter_step, objective, optimize_yaw, run_iteration)
from .campaign import (CampaignState, compare_schemes, export_row_slice, plant_optimum,
                       run_campaign)
from .config import CampaignConfig, ConfigError
from .farm import (Ambient, DomainError, FarmLayout, FarmModel, Turbine, WakeParams, farm_power,
                   solve_flow, turbine_power, wake_deficit, wake_deflection)
from .gp import GaussianProcess, Hyperparameters, KernelKind
from .plant import Plant, PlantSpec, PowerSeries, extract_measurement, moving_average

__version__ = "0.1.0"
