from .logistic import NewtonLogisticRegression
from .cell_mean import CellMeanRegressor, exposure_design

__all__ = [
    'NewtonLogisticRegression',
    'CellMeanRegressor',
    'exposure_design'
]
