"""Joint dispatching and pricing for two-sided spatial queues with a fixed fleet."""

from .model import (DemandCurve, DispatchPolicy, LinearDemand, ModelConfig, PricingPolicy, RawCosts,
                    ReducedCosts, StructuralError, ValidationError, ZigzagCheck, ZigzagPath,
                    apply_dispatch_closure, greedy_policy, is_zigzag, path_of_policy, policy_of_path,
                    price_of_rate, rate_of_price, reduce_costs)
from .rates import (PowerLawFit, RateTable, StateType, check_assumption2, classify_state,
                    closed_form_zigzag, fit_powerlaw, mc_estimate_rates, mean_trip_time,
                    powerlaw_rate_table)
from .chain import (EvalReport, StationaryDistribution, generator_stationary, metrics, objective,
                    path_stationary, static_objective)
from .solvers import (ConvergenceError, SolveResult, dynamic_price_on_path, m_bound,
                      optimize_static_price, relative_value_iteration, solve_greedy_dynamic,
                      zigzag_dp)
