"""Simulation and numerical ergodicity certification for randomly
switched vector fields on compact sets."""

from .bracket import BracketReport, generate_family, rank_at, scan
from .certify import (CertifyConfig, EquilibriumCertificate, ErgodicityCertificate,
                      ReachabilityResult, SubmersionCertificate, accessible,
                      certify_ergodicity, check_submersion, explore_reachable,
                      find_condition_i, find_submersion, solve_alpha)
from .domain import CompactDomain, DomainError
from .fields import FieldExpr, VectorFieldSet, evaluate_expr, lie_bracket
from .flow import (FlowConfig, SwitchSchedule, TimeSimplex, composite,
                   duration_jacobian, flow, invariance_check)
from .models import AnnulusModel, LVModel, SISModel, TorusModel, build, build_from_json
from .pdmp import (RateMatrixField, SimConfig, Trajectory, carre_du_champ,
                   generator_apply, simulate, simulate_ensemble_states, simulate_hazard)
from .stats import (EmpiricalMeasure, TVDecayReport, boundary_occupation,
                    empirical_measure, invasion_rate_x, invasion_rate_y,
                    stationarity_residual, tv_decay, tv_distance)

__version__ = "0.1.0"
