"""Compliant pre-grasp planning from partial point clouds.

Pipeline: load or sample a point cloud, fit a probabilistic implicit
surface, optimize wrist pose / spring targets / gains over several seeds,
and cross-validate the analytic spring equilibrium in a rigid-body
simulation.
"""

from .errors import (ConfigError, DegenerateGeometryError,
                     DegenerateRotationError, FormatError,
                     IllConditionedError, InsufficientDataError,
                     NumericalError, SpringGraspError, UndefinedMarginError)
from .pointcloud import (BoundingBox, PointCloud, analytic_sdf,
                         load_point_cloud, oriented_bbox, sample_synthetic,
                         save_point_cloud, scaled_aabb, voxel_downsample)
from .gpis import (GaussianProcessImplicitSurface, GpisConfig,
                   GpisTrainingSet, build_training_set)
from .spring import (EquilibriumState, SpringSystem, contact_margin,
                     contact_margins, fingertips_at_equilibrium,
                     margin_energy_term, solve_equilibrium, spring_force,
                     spring_potential, springgrasp_energy)
from .hand import (HandModel, HandPose, forward_kinematics, initial_seeds,
                   load_hand, pregrasp_contact, save_hand_config)
from .objective import (DecisionVars, EnergyBreakdown, EnergyWeights,
                        energy_and_gradient, total_energy)
from .optimizer import (OptimizedGrasp, OptimizerOptions, PlanResult,
                        is_feasible, load_grasp_dict, optimize_seed, plan,
                        plan_with_pose_goal, save_grasp, seed_decision_vars)
from .dynamics import (SimTrajectory, TorqueModel, force_closure_feasible,
                       margin_trace, rotation_pivot_trace, simulate)
from .coverage import CoverageConfig, CoverageReport, run_coverage

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
