"""3D U-shaped neural operator for surface ground-motion prediction.

Subpackages cover tensors and autodiff (:mod:`tensorcore`), random geology
(:mod:`geology`), a finite-difference elastic solver (:mod:`wavesim`), the
operator (:mod:`operator`), training (:mod:`training`), metrics
(:mod:`metrics`) and the command line (:mod:`cli`).
"""
from .estimator import UnoRegressor
from .geology import GeologyConfig, GeologyField, generate_geology
from .normalize import NormStats, normalize_inputs
from .operator import UnoModel, UnoSchedule, desk_schedule, full_scale_schedule, uno_forward
from .source import SourceSpec, source_time_function
from .training import TrainingConfig, train
from .wavesim import SimConfig, SurfaceRecord, run_simulation

__version__ = "0.1.0"

__all__ = [
    "UnoRegressor",
    "GeologyConfig",
    "GeologyField",
    "generate_geology",
    "NormStats",
    "normalize_inputs",
    "UnoModel",
    "UnoSchedule",
    "desk_schedule",
    "full_scale_schedule",
    "uno_forward",
    "SourceSpec",
    "source_time_function",
    "TrainingConfig",
    "train",
    "SimConfig",
    "SurfaceRecord",
    "run_simulation",
]
