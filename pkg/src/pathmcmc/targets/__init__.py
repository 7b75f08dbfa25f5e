"""Target measures on pathspace and their preconditioned gradients."""

from .base import FunctionalTarget, QuadraticTarget, TargetModel, fd_grad_oracle, zero_target
from .functional import EvaluationError, FunctionalSpec, ItoTerm, PointTerm, RiemannTerm
from .models import (
    DriftParams,
    EventData,
    ModelKind,
    ObsErrorParams,
    ObservationData,
    OuBridgeParams,
    StochVolParams,
    SurvivalParams,
    WienerNoiseParams,
    build_model,
    drift_terms,
    gaussian_error,
    stoch_vol_drift,
)
from .wiener import Lamperti, WienerNoiseTarget, wiener_noise_grad

__all__ = [
    "DriftParams",
    "EvaluationError",
    "EventData",
    "FunctionalSpec",
    "FunctionalTarget",
    "ItoTerm",
    "Lamperti",
    "ModelKind",
    "ObsErrorParams",
    "ObservationData",
    "OuBridgeParams",
    "PointTerm",
    "QuadraticTarget",
    "RiemannTerm",
    "StochVolParams",
    "SurvivalParams",
    "TargetModel",
    "WienerNoiseParams",
    "WienerNoiseTarget",
    "build_model",
    "drift_terms",
    "fd_grad_oracle",
    "gaussian_error",
    "stoch_vol_drift",
    "wiener_noise_grad",
    "zero_target",
]
