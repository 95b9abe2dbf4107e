"""Continuous-time spatial ride-hailing simulator and the studies built on it."""

from .engine import (ConstantRadius, CountZigzag, Exogenous, PickupSamples, SimConfig, SimResult,
                     TwoRadius, exogenous_streams, simulate)
from .experiments import (CalibrationResult, TwoRadiusResult, calibrate_constant_radius,
                          collect_pickup_samples, extend_pricing_by_row, robustness_sweep,
                          tune_two_radius)
