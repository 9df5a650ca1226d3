from .geometry import (HeadGeometryReport, centroid_distances,  # NOQA
                       head_geometry)
from .metrics import (PredictionSet, accuracy, aece, aupr, auroc,  # NOQA
                      brier, calibration_error, ece, fpr95, msp, nll,
                      predictive_entropy)
from .report import (EvalReport, evaluate, evaluate_model,  # NOQA
                     predict_dataset)
