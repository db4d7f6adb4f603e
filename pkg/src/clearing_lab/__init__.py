"""Average cost and delay of clearing policies for multi-input Brownian systems.

Closed forms (:mod:`~clearing_lab.analytic`), first-passage quadrature
(:mod:`~clearing_lab.fpt`), an exact-where-possible Monte Carlo engine
(:mod:`~clearing_lab.simulate`) and a comparative check suite
(:mod:`~clearing_lab.verify`).
"""

from ._jit import backend_name
from .analytic import PolicyReport, evaluate
from .errors import ClearingError
from .model import IRHP, IRP, QP, QTP, TP, Custom, SystemParams, discriminant, load_params
from .simulate import Estimate, SimConfig, estimate_report, simulate_cycles

__all__ = [
    "IRHP", "IRP", "QP", "QTP", "TP", "Custom", "SystemParams", "ClearingError",
    "PolicyReport", "Estimate", "SimConfig", "backend_name", "discriminant",
    "estimate_report", "evaluate", "load_params", "simulate_cycles",
]

__version__ = "0.1.0"
