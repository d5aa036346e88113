"""Multi-seed adaptive gradient descent and grasp ranking.

Each wrist seed is optimized independently with an RMSProp update over the
flattened decision vector, with separate step sizes for the pose/target
block (meters and radians) and the log-gain block. Finished grasps are
re-checked for feasibility from scratch and ranked by weighted energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NumericalError, SpringGraspError
from .gpis import GaussianProcessImplicitSurface, GpisConfig
from .hand import HandModel, HandPose, forward_kinematics, initial_seeds
from .objective import (DecisionVars, EnergyBreakdown, EnergyWeights,
                        energy_and_gradient, total_energy)
from .pointcloud import PointCloud, oriented_bbox, voxel_downsample

RESULT_SCHEMA_VERSION = 1

DEFAULT_BASE_GAIN = 80.0
DEFAULT_LAST_GAIN = 160.0


@dataclass(frozen=True)
class OptimizerOptions:
    step: float = 1e-3            # pose and target block
    gain_step: float = 1e-2       # log-gain block
    decay: float = 0.99           # squared-gradient averaging
    eps: float = 1e-8
    max_iterations: int = 2000
    grad_tol: float = 1e-6
    trace_stride: int = 1
    downsample_voxel: float = 0.01
    # descend on a widened, upweighted collision barrier so stationary
    # points clear the true (reported) activation bands
    collision_pad: float = 0.002
    collision_boost: float = 10.0
    # post-descent feasibility repair: margins + collision only
    repair_iterations: int = 300

    def __post_init__(self):
        if self.step <= 0 or self.gain_step <= 0:
            raise ValueError("step sizes must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class OptimizedGrasp:
    seed_index: int
    vars: DecisionVars
    breakdown: EnergyBreakdown
    feasible: bool
    diverged: bool
    iterations: int
    energy_trace: np.ndarray

    @property
    def worst_margin(self) -> float:
        return float(min(self.breakdown.margins_t0.min(),
                         self.breakdown.margins_teq.min()))

    @property
    def collision_residual(self) -> float:
        return self.breakdown.term("col")


def is_feasible(breakdown: EnergyBreakdown) -> bool:
    """All margins nonnegative at both states and zero collision energy."""
    return bool(breakdown.margins_t0.min() >= 0.0
                and breakdown.margins_teq.min() >= 0.0
                and breakdown.term("col") == 0.0)


def optimize_seed(seed: DecisionVars, model: GaussianProcessImplicitSurface,
                  hand: HandModel, weights: EnergyWeights,
                  opts: OptimizerOptions = OptimizerOptions(),
                  seed_index: int = 0,
                  q_ref: np.ndarray | None = None,
                  motion_goal: np.ndarray | None = None) -> OptimizedGrasp:
    """RMSProp descent from one seed; deterministic for identical input."""
    if q_ref is None:
        q_ref = seed.q.copy()
    q_dim, m = len(seed.q), len(seed.targets)
    steps = np.concatenate([
        np.full(q_dim + 3 * m, opts.step),
        np.full(m, opts.gain_step),
    ])
    x = seed.flatten()
    v = np.zeros_like(x)
    trace = []
    last_good = x.copy()
    diverged = False
    iterations = 0
    for it in range(opts.max_iterations):
        vars_it = DecisionVars.from_flat(x, q_dim, m)
        try:
            energy, grad = energy_and_gradient(
                vars_it, model, hand, weights, q_ref=q_ref,
                motion_goal=motion_goal,
                collision_pad=opts.collision_pad,
                collision_boost=opts.collision_boost)
        except NumericalError:
            diverged = True
            x = last_good
            break
        if it % opts.trace_stride == 0:
            trace.append(energy)
        last_good = x.copy()
        iterations = it + 1
        gnorm = float(np.linalg.norm(grad))
        if gnorm < opts.grad_tol:
            break
        v = opts.decay * v + (1.0 - opts.decay) * grad ** 2
        x = x - steps * grad / (np.sqrt(v) + opts.eps)
    final = DecisionVars.from_flat(x, q_dim, m)
    breakdown = total_energy(final, model, hand, weights, q_ref=q_ref,
                             motion_goal=motion_goal)
    if not diverged and not is_feasible(breakdown):
        x = _repair_feasibility(x, model, hand, weights, opts, q_dim, m,
                                motion_goal)
        final = DecisionVars.from_flat(x, q_dim, m)
        breakdown = total_energy(final, model, hand, weights, q_ref=q_ref,
                                 motion_goal=motion_goal)
    return OptimizedGrasp(
        seed_index=seed_index,
        vars=final,
        breakdown=breakdown,
        feasible=bool((not diverged) and is_feasible(breakdown)),
        diverged=diverged,
        iterations=iterations,
        energy_trace=np.asarray(trace),
    )


def _repair_feasibility(x, model, hand, weights, opts, q_dim, m,
                        motion_goal):
    """Short descent on margins + collision only.

    Feasibility does not require surface contact, so dropping the
    surface-pull terms lets penetrating links back off by a few
    millimetres without losing the friction-cone margins.
    """
    repair_w = replace(weights, w_dist=0.0, w_uncer=0.0, w_tar=0.0,
                       w_gain=0.0, w_force=0.0, w_reg=1.0)
    steps = np.concatenate([
        np.full(q_dim + 3 * m, opts.step),
        np.full(m, opts.gain_step),
    ])
    q_anchor = x[:q_dim].copy()
    v = np.zeros_like(x)
    for _ in range(opts.repair_iterations):
        vars_it = DecisionVars.from_flat(x, q_dim, m)
        check = total_energy(vars_it, model, hand, weights,
                             motion_goal=motion_goal)
        if is_feasible(check):
            break
        try:
            _, grad = energy_and_gradient(
                vars_it, model, hand, repair_w, q_ref=q_anchor,
                motion_goal=motion_goal,
                collision_pad=opts.collision_pad,
                collision_boost=opts.collision_boost)
        except NumericalError:
            break
        v = opts.decay * v + (1.0 - opts.decay) * grad ** 2
        x = x - steps * grad / (np.sqrt(v) + opts.eps)
    return x


def backoff_pose(pose: HandPose, model: GaussianProcessImplicitSurface,
                 hand: HandModel, clearance: float = 0.004,
                 step: float = 0.005, max_steps: int = 60) -> HandPose:
    """Retreat the wrist along the palm normal until collision-free.

    Seed tables cannot anticipate every object size; a seed that starts
    with links inside the surface leaves gradient descent fighting
    opposing barrier gradients. Translating the wrist along its +z axis
    (away from the palm face) until every collision sphere clears the
    surface and the table gives the optimizer a clean starting point.
    """
    if hand.fixed_wrist or len(hand.spheres) == 0:
        return pose
    from .hand import euler_zyx_to_matrix

    retreat = euler_zyx_to_matrix(pose.wrist_euler) @ np.array([0.0, 0.0, 1.0])
    q = pose.q.copy()
    radii = hand.sphere_radii
    for _ in range(max_steps):
        fk = forward_kinematics(hand, HandPose(hand, q))
        d_surf = model.predict(fk.sphere_centers) - radii
        d_table = fk.sphere_centers[:, 2] - radii
        if min(d_surf.min(), d_table.min()) > clearance:
            break
        q[:3] = q[:3] + step * retreat
    return HandPose(hand, q)


def default_gains(m: int) -> np.ndarray:
    """Initial stiffness: base value everywhere, doubled on the last finger."""
    gains = np.full(m, DEFAULT_BASE_GAIN)
    gains[-1] = DEFAULT_LAST_GAIN
    return gains


def seed_decision_vars(hand: HandModel, pose: HandPose) -> DecisionVars:
    """Targets start halfway from each tip toward the tip centroid."""
    fk = forward_kinematics(hand, pose)
    centroid = fk.fingertips.mean(axis=0)
    targets = 0.5 * (fk.fingertips + centroid)
    return DecisionVars(pose.q.copy(), targets,
                        np.log(default_gains(hand.n_fingers)))


@dataclass
class PlanResult:
    grasps: list                 # all OptimizedGrasp, seed order
    ranked: list                 # feasible only, ascending energy
    model: GaussianProcessImplicitSurface

    @property
    def best(self) -> OptimizedGrasp | None:
        return self.ranked[0] if self.ranked else None

    def diagnostics(self) -> list:
        return [
            {"seed": g.seed_index, "feasible": g.feasible,
             "diverged": g.diverged, "worst_margin": g.worst_margin,
             "collision_residual": g.collision_residual,
             "energy": g.breakdown.total}
            for g in self.grasps
        ]


def plan(cloud: PointCloud, hand: HandModel,
         weights: EnergyWeights = EnergyWeights(),
         opts: OptimizerOptions = OptimizerOptions(),
         gpis_cfg: GpisConfig = GpisConfig(),
         model: GaussianProcessImplicitSurface | None = None,
         n_seeds: int | None = None,
         motion_goal: np.ndarray | None = None,
         stop_after_feasible: int | None = None) -> PlanResult:
    """Full pipeline: fit the surface, optimize every seed, rank results.

    ``stop_after_feasible`` skips the remaining seeds once that many
    feasible grasps are in hand; the ranking then covers only the seeds
    actually optimized.
    """
    if model is None:
        down = voxel_downsample(cloud, opts.downsample_voxel)
        model = GaussianProcessImplicitSurface(gpis_cfg).fit_point_cloud(down)
    bbox = oriented_bbox(cloud)
    poses = initial_seeds(bbox, hand)
    if n_seeds is not None:
        poses = poses[:n_seeds]
    grasps = []
    for idx, pose in enumerate(poses):
        seed = seed_decision_vars(hand, backoff_pose(pose, model, hand))
        grasps.append(optimize_seed(seed, model, hand, weights, opts,
                                    seed_index=idx, motion_goal=motion_goal))
        if stop_after_feasible is not None and \
                sum(g.feasible for g in grasps) >= stop_after_feasible:
            break
    ranked = sorted([g for g in grasps if g.feasible],
                    key=lambda g: (g.breakdown.total, g.seed_index))
    return PlanResult(grasps=grasps, ranked=ranked, model=model)


def plan_with_pose_goal(cloud: PointCloud, hand: HandModel,
                        desired_motion: np.ndarray,
                        weights: EnergyWeights = EnergyWeights(),
                        opts: OptimizerOptions = OptimizerOptions(),
                        **kwargs) -> PlanResult:
    """Plan while steering the equilibrium contacts by a desired motion."""
    desired_motion = np.asarray(desired_motion, dtype=float)
    if not np.isfinite(desired_motion).all():
        raise ValueError("desired motion must be finite")
    return plan(cloud, hand, weights, opts, motion_goal=desired_motion,
                **kwargs)


# -- result files ----------------------------------------------------------

def grasp_to_dict(grasp: OptimizedGrasp, weights: EnergyWeights) -> dict:
    quat = Rotation.from_matrix(
        grasp.breakdown.equilibrium_rotation).as_quat()  # x, y, z, w
    return {
        "schema_version": RESULT_SCHEMA_VERSION,
        "seed_index": grasp.seed_index,
        "feasible": grasp.feasible,
        "diverged": grasp.diverged,
        "iterations": grasp.iterations,
        "q_init": grasp.vars.q.tolist(),
        "targets": grasp.vars.targets.tolist(),
        "gains": grasp.vars.gains.tolist(),
        "contacts_t0": grasp.breakdown.contacts_t0.tolist(),
        "contacts_teq": grasp.breakdown.contacts_teq.tolist(),
        "equilibrium_quat_xyzw": quat.tolist(),
        "equilibrium_translation":
            grasp.breakdown.equilibrium_translation.tolist(),
        "normals_t0": grasp.breakdown.normals_t0.tolist(),
        "margins_t0": grasp.breakdown.margins_t0.tolist(),
        "margins_teq": grasp.breakdown.margins_teq.tolist(),
        "energy_total": grasp.breakdown.total,
        "energy_terms": grasp.breakdown.terms,
        "mu": weights.mu,
        "energy_trace": grasp.energy_trace.tolist(),
    }


def save_grasp(grasp: OptimizedGrasp, weights: EnergyWeights, path: str):
    with open(path, "w") as fh:
        json.dump(grasp_to_dict(grasp, weights), fh, indent=1)


def load_grasp_dict(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "schema_version" not in data:
        raise SpringGraspError(f"{path}: not a grasp result file")
    if data["schema_version"] != RESULT_SCHEMA_VERSION:
        raise SpringGraspError(
            f"{path}: unsupported schema version {data['schema_version']}")
    return data
