"""Forward simulation and force-closure feasibility.

This module is the independent check on the analytical pipeline: it
integrates the rigid body driven by the fingertip spring-dampers with a
semi-implicit Euler scheme and reports the settled pose, per-sample forces
and contact margins. A convex feasibility solve decides whether a contact
set admits a zero-net-wrench force assignment inside the friction cones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMarginError
from .spring import SpringSystem, contact_margins

SETTLE_KE_THRESHOLD = 1e-10   # J
SETTLE_WRENCH_THRESHOLD = 1e-6
DEFAULT_DT = 1e-3
DEFAULT_T_MAX = 20.0


def _skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _rotation_exp(omega_dt):
    angle = np.linalg.norm(omega_dt)
    if angle < 1e-12:
        return np.eye(3) + _skew(omega_dt)
    axis = omega_dt / angle
    k = _skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _orthonormalize(rot):
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def contact_inertia(contacts_object_frame: np.ndarray,
                    floor: float = 1e-5) -> np.ndarray:
    """Point-mass inertia of the contact set, unit total mass."""
    r = np.asarray(contacts_object_frame, dtype=float)
    m = len(r)
    inertia = np.zeros((3, 3))
    for ri in r:
        inertia += (np.dot(ri, ri) * np.eye(3) - np.outer(ri, ri)) / m
    vals, vecs = np.linalg.eigh(inertia)
    vals = np.maximum(vals, floor)
    return vecs @ np.diag(vals) @ vecs.T


@dataclass
class SimTrajectory:
    times: np.ndarray          # (T,)
    rotations: np.ndarray      # (T, 3, 3)
    translations: np.ndarray   # (T, 3)
    fingertips: np.ndarray     # (T, m, 3)
    forces: np.ndarray         # (T, m, 3), damping included
    kinetic: np.ndarray        # (T,)
    potential: np.ndarray      # (T,) spring potential
    settled: bool
    settle_time: float | None

    @property
    def final_rotation(self):
        return self.rotations[-1]

    @property
    def final_translation(self):
        return self.translations[-1]


def simulate(sys: SpringSystem, dt: float = DEFAULT_DT,
             t_max: float = DEFAULT_T_MAX,
             ke_threshold: float = SETTLE_KE_THRESHOLD,
             inertia: np.ndarray | None = None,
             record_stride: int = 1) -> SimTrajectory:
    """Integrate the compliant grasping process until it settles.

    Contacts are rigidly attached to the body; each exerts the impedance
    force k (o - p) - 2 sqrt(k) pdot. Unit mass, gravity off. Settling
    requires both negligible kinetic energy and negligible net wrench so
    the initial rest state does not terminate a loaded system early.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    po = sys.object_frame_contacts()
    k = sys.gains
    damp = 2.0 * np.sqrt(k)
    sum_damp = damp.sum()
    inertia_body = contact_inertia(po) if inertia is None else inertia
    rot = sys.rotation0.copy()
    trans = sys.translation0.copy()
    vel = np.zeros(3)
    omega = np.zeros(3)

    times, rots, transs, tips_rec, forces_rec = [], [], [], [], []
    ke_rec, pe_rec = [], []
    settled = False
    settle_time = None
    n_steps = int(np.ceil(t_max / dt))
    eye3 = np.eye(3)
    for step in range(n_steps + 1):
        arms = po @ rot.T                      # r_i from COM, world frame
        tips = arms + trans
        tip_vel = vel + np.cross(omega, arms)
        spring = k[:, None] * (sys.targets - tips)
        forces = spring - damp[:, None] * tip_vel
        spring_force = spring.sum(axis=0)
        spring_torque = np.cross(arms, spring).sum(axis=0)
        net_force = forces.sum(axis=0)
        net_torque = np.cross(arms, forces).sum(axis=0)
        inertia_world = rot @ inertia_body @ rot.T
        ke = 0.5 * vel @ vel + 0.5 * omega @ inertia_world @ omega
        pe = float(0.5 * np.sum(k * np.sum((tips - sys.targets) ** 2, axis=1)))

        if step % record_stride == 0 or settled:
            times.append(step * dt)
            rots.append(rot.copy())
            transs.append(trans.copy())
            tips_rec.append(tips)
            forces_rec.append(forces)
            ke_rec.append(ke)
            pe_rec.append(pe)

        if (ke < ke_threshold
                and np.linalg.norm(net_force) < SETTLE_WRENCH_THRESHOLD
                and np.linalg.norm(net_torque) < SETTLE_WRENCH_THRESHOLD):
            settled = True
            settle_time = step * dt
            if times[-1] != step * dt:
                times.append(step * dt)
                rots.append(rot.copy())
                transs.append(trans.copy())
                tips_rec.append(tips)
                forces_rec.append(forces)
                ke_rec.append(ke)
                pe_rec.append(pe)
            break

        # damping enters the update implicitly: tip dampers map the twist
        # [v, w] to a wrench through the symmetric PSD matrix d6, and
        # (m6 + dt d6) w_new = m6 w + dt * spring wrench keeps every
        # equilibrium of the continuous system a fixed point while staying
        # stable for weakly coupled rotational modes
        s_rx = _skew(damp @ arms)              # sum_i d_i [r_i]x
        weighted = damp[:, None] * arms
        lower = (damp @ np.einsum("ij,ij->i", arms, arms)) * eye3 \
            - weighted.T @ arms
        d6 = np.block([[sum_damp * eye3, -s_rx], [s_rx, lower]])
        m6 = np.block([[eye3, np.zeros((3, 3))],
                       [np.zeros((3, 3)), inertia_world]])
        gyro = np.cross(omega, inertia_world @ omega)
        rhs = m6 @ np.concatenate([vel, omega]) + dt * np.concatenate(
            [spring_force, spring_torque - gyro])
        twist = np.linalg.solve(m6 + dt * d6, rhs)
        vel = twist[:3]
        omega = twist[3:]
        trans = trans + dt * vel
        rot = _rotation_exp(dt * omega) @ rot
        if step % 100 == 99:
            rot = _orthonormalize(rot)

    return SimTrajectory(
        times=np.asarray(times),
        rotations=np.asarray(rots),
        translations=np.asarray(transs),
        fingertips=np.asarray(tips_rec),
        forces=np.asarray(forces_rec),
        kinetic=np.asarray(ke_rec),
        potential=np.asarray(pe_rec),
        settled=settled,
        settle_time=settle_time,
    )


def margin_trace(traj: SimTrajectory, sys: SpringSystem,
                 normals, mu: float) -> np.ndarray:
    """Per-sample contact margins, (T, m); NaN where the force vanishes.

    ``normals`` is either the (m, 3) outward normals at the initial pose
    (transported rigidly with the body) or a callable mapping fingertip
    positions to outward normals (re-queried per sample, e.g. from a fitted
    surface or an analytic shape).
    """
    T, m = traj.forces.shape[:2]
    out = np.full((T, m), np.nan)
    rel0 = sys.rotation0
    for t in range(T):
        if callable(normals):
            n = np.asarray(normals(traj.fingertips[t]), dtype=float)
        else:
            rel = traj.rotations[t] @ rel0.T
            n = np.asarray(normals, dtype=float) @ rel.T
        forces = traj.forces[t]
        norms = np.linalg.norm(forces, axis=1)
        ok = norms > 1e-12
        if ok.any():
            out[t, ok] = contact_margins(forces[ok], n[ok], mu)
    return out


# -- Force closure ---------------------------------------------------------

def _cone_edges_2d(inward_normal, mu):
    theta = np.arctan(mu)
    c, s = np.cos(theta), np.sin(theta)
    n = inward_normal
    return np.array([
        [c * n[0] - s * n[1], s * n[0] + c * n[1]],
        [c * n[0] + s * n[1], -s * n[0] + c * n[1]],
    ])


def _cone_edges_3d(inward_normal, mu, n_edges=8):
    n = inward_normal / np.linalg.norm(inward_normal)
    # orthonormal tangent pair
    helper = np.array([1.0, 0.0, 0.0])
    if abs(n @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    angles = 2 * np.pi * np.arange(n_edges) / n_edges
    edges = [n + mu * (np.cos(a) * t1 + np.sin(a) * t2) for a in angles]
    return np.array([e / np.linalg.norm(e) for e in edges])


@dataclass(frozen=True)
class TorqueModel:
    """Per-contact manipulator Jacobians with symmetric torque limits."""

    jacobians: tuple     # one (space_dim, n_joints) array per contact
    tau_max: float


def force_closure_feasible(contacts, outward_normals, mu: float,
                           min_force: float = 0.0,
                           torque_model: TorqueModel | None = None,
                           residual_tol: float = 1e-6):
    """Convex feasibility of a zero-net-wrench cone force assignment.

    Works in 2D (n, 2) or 3D (n, 3). Returns (feasible, info) where info
    carries the residual, the solved forces and a status string.
    """
    import cvxpy as cp

    contacts = np.asarray(contacts, dtype=float)
    normals = np.asarray(outward_normals, dtype=float)
    n, dim = contacts.shape
    if dim not in (2, 3):
        raise ValueError("contacts must be 2D or 3D")
    if n < (2 if dim == 2 else 3):
        raise ValueError("too few contacts")
    com = contacts.mean(axis=0)
    coeff_vars = []
    forces = []
    constraints = []
    normal_components = []
    for i in range(n):
        inward = -normals[i] / np.linalg.norm(normals[i])
        edges = (_cone_edges_2d(inward, mu) if dim == 2
                 else _cone_edges_3d(inward, mu))
        c = cp.Variable(len(edges), nonneg=True)
        f = edges.T @ c
        coeff_vars.append(c)
        forces.append(f)
        normal_components.append(inward @ f)
        if min_force > 0:
            constraints.append(inward @ f >= min_force)
        if torque_model is not None:
            jac = np.asarray(torque_model.jacobians[i], dtype=float)
            constraints.append(
                cp.abs(jac.T @ f) <= torque_model.tau_max)
    if min_force <= 0:
        # exclude the trivial all-zero assignment: unit total normal force
        constraints.append(sum(normal_components) == 1.0)
    net_force = sum(forces)
    if dim == 2:
        r = contacts - com
        net_torque = sum(r[i][0] * forces[i][1] - r[i][1] * forces[i][0]
                         for i in range(n))
        residual = cp.sum_squares(net_force) + cp.square(net_torque)
    else:
        torques = []
        for i in range(n):
            r = contacts[i] - com
            rx = np.array([[0, -r[2], r[1]],
                           [r[2], 0, -r[0]],
                           [-r[1], r[0], 0]])
            torques.append(rx @ forces[i])
        residual = cp.sum_squares(net_force) + cp.sum_squares(sum(torques))
    problem = cp.Problem(cp.Minimize(residual), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return False, {"status": "solver_error", "residual": np.inf,
                       "forces": None}
    if problem.status not in ("optimal", "optimal_inaccurate"):
        return False, {"status": problem.status, "residual": np.inf,
                       "forces": None}
    value = float(problem.value)
    solved = np.array([f.value for f in forces])
    return value < residual_tol, {
        "status": problem.status,
        "residual": value,
        "forces": solved,
    }


# -- Constructed rotation scenario ----------------------------------------

def rotation_pivot_trace(r: float = 1.0, target_ratio: float = np.sqrt(2) / 2,
                         initial_angle: float = np.deg2rad(60.0),
                         n_samples: int = 721):
    """Force/normal angle along a pure rotation about the object center.

    One contact sits on an edge at distance ``r`` from the center; the
    spring target lies at ``target_ratio * r`` from the center. The body
    rotates from the initial offset angle until the force aligns with the
    inward normal. Returns (rotation angles, force-normal angles alpha).
    """
    # initial contact placed so the angle contact-center-target equals
    # initial_angle; target fixed in the world frame on the -y axis side
    o = np.array([0.0, -target_ratio * r])

    def alpha_at(theta):
        # contact rotates with the body about the origin
        p = r * np.array([np.sin(initial_angle - theta),
                          -np.cos(initial_angle - theta)])
        inward = -p / np.linalg.norm(p)       # edge normal points away from c
        f = o - p                              # spring force direction
        f = f / np.linalg.norm(f)
        cosang = np.clip(f @ inward, -1.0, 1.0)
        return np.arccos(cosang)

    thetas = np.linspace(0.0, initial_angle, n_samples)
    alphas = np.array([alpha_at(t) for t in thetas])
    return thetas, alphas
