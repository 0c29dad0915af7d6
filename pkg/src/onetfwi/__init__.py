"""Operator-network seismic inversion toolkit."""

from .fields import (
    AcquisitionGeometry,
    Grid2D,
    PipelineOrderError,
    ShotGatherSet,
    Stage,
    VelocityField,
    make_survey_geometry,
    make_survey_grid,
)
from .deeponet import DeepONet, ModelConfig, paper_model_config, toy_model_config
from .preprocess import CorruptionSpec, NormalizationStats
from .wavesim import (
    NumericalError,
    SimulationConfig,
    StabilityError,
    simulate_first_order,
    simulate_scalar,
)

__all__ = [
    "AcquisitionGeometry",
    "CorruptionSpec",
    "DeepONet",
    "Grid2D",
    "ModelConfig",
    "NormalizationStats",
    "NumericalError",
    "PipelineOrderError",
    "ShotGatherSet",
    "SimulationConfig",
    "StabilityError",
    "Stage",
    "VelocityField",
    "make_survey_geometry",
    "make_survey_grid",
    "paper_model_config",
    "simulate_first_order",
    "simulate_scalar",
    "toy_model_config",
]

__version__ = "0.1.0"
