"""Strong-constraint 4D-Var machinery: cost, methods, cycled experiments."""

from .problem import (
    AnalysisResult,
    GaussianDiagSpec,
    LrSchedule,
    MatrixObsOperator,
    ObservationBatch,
    SelectionOperator,
    WindowProblem,
    cost,
    lr_value,
)
from .methods import backprop_4dvar, gauss_newton_residual, incremental_4dvar
from .cycling import METHODS, CycleConfig, CycledResult, cycle_da

__all__ = [
    "AnalysisResult", "GaussianDiagSpec", "LrSchedule", "MatrixObsOperator",
    "ObservationBatch", "SelectionOperator", "WindowProblem", "cost",
    "lr_value", "backprop_4dvar", "gauss_newton_residual",
    "incremental_4dvar", "METHODS", "CycleConfig", "CycledResult", "cycle_da",
]
