"""Parallel-in-time multigrid solver for a voltage-driven eddy-current cable model."""

from .materials import (ConstantReluctivity, MaterialMap, ReluctivitySpline,
                        VACUUM_RELUCTIVITY, eval_reluctivity, load_reluctivity_table)
from .mesh import Mesh1D, Region, build_mesh
from .mgrit import (Hierarchy, MgritResult, SpaceTimeFunction, TimeLevel,
                    apply_A, build_hierarchy, build_space_time_rhs, c_relax,
                    coarse_solve, correct_ideal, f_cycle, f_relax, fas_coarse_rhs,
                    fcf_relax, residual_norm, restrict_injection, solve, v_cycle)
from .operators import (AssembledOperators, State, assemble, dae_residual,
                        flux_linkage, stiffness_and_jacobian)
from .problem import CableProblem, build_problem
from .runtime import (Partition, WorkerFailure, build_partition, pack_state,
                      partition, run_parallel, unpack_state)
from .source import PwmSource, eval_pwm, eval_voltage
from .stepper import (BackwardEulerRows, BorderedSystem, NewtonConfig,
                      NewtonConvergenceError, SingularJacobianError,
                      TimeStepError, ZeroSchurComplementError, solve_bordered,
                      step, time_stepping)

__version__ = "0.1.0"
