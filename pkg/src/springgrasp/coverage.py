"""2D coverage experiment: compliant grasps versus direct force closure.

Two triangles, three fixed contact configurations each, random object
poses. For every pose, targets and gains are searched by random restarts
(with the contacts held fixed) and the best candidates are verified in
forward simulation; separately, a convex solve decides whether force
closure is achievable at the initial pose without any object motion, under
the same finger torque limits. Direct force closure should always imply a
feasible compliant grasp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .dynamics import TorqueModel, force_closure_feasible, margin_trace, simulate
from .spring import SpringSystem

TRIANGLES = {
    1: np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]]),
    2: np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]),
}

# fingertip contact locations per (triangle, config), local object frame
CONTACT_CONFIGS = {
    (1, 1): np.array([[0.5, 0.0], [0.75, 0.5], [0.25, 0.5]]),
    (1, 2): np.array([[0.4, 0.0], [0.8, 0.4], [0.2, 0.4]]),
    (1, 3): np.array([[0.6, 0.0], [0.7, 0.6], [0.3, 0.6]]),
    (2, 1): np.array([[0.5, 0.0], [1.0, 0.5], [0.5, 0.5]]),
    (2, 2): np.array([[0.4, 0.0], [1.0, 0.4], [0.4, 0.4]]),
    (2, 3): np.array([[0.6, 0.0], [1.0, 0.6], [0.6, 0.6]]),
}


def edge_outward_normals(vertices: np.ndarray,
                         contacts: np.ndarray) -> np.ndarray:
    """Outward normal of the triangle edge each contact lies on."""
    centroid = vertices.mean(axis=0)
    normals = np.zeros_like(contacts)
    for ci, p in enumerate(contacts):
        best = None
        for i in range(3):
            a, b = vertices[i], vertices[(i + 1) % 3]
            ab = b - a
            t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
            dist = np.linalg.norm(p - (a + t * ab))
            if best is None or dist < best[0]:
                n = np.array([ab[1], -ab[0]])
                n /= np.linalg.norm(n)
                if (a + ab / 2 - centroid) @ n < 0:
                    n = -n
                best = (dist, n)
        normals[ci] = best[1]
    return normals


@dataclass(frozen=True)
class PlanarFinger:
    base: np.ndarray        # (2,)
    base_angle: float       # x-axis of the base frame, world angle
    l1: float
    l2: float

    def reachable(self, point, margin=1e-3) -> bool:
        d = np.linalg.norm(np.asarray(point) - self.base)
        return abs(self.l1 - self.l2) + margin <= d <= self.l1 + self.l2 - margin

    def ik(self, point):
        """Both elbow branches of joint angles reaching the point, or []."""
        rel_world = np.asarray(point, dtype=float) - self.base
        c, s = np.cos(self.base_angle), np.sin(self.base_angle)
        rel = np.array([c * rel_world[0] + s * rel_world[1],
                        -s * rel_world[0] + c * rel_world[1]])
        d2 = rel @ rel
        cos_q2 = (d2 - self.l1 ** 2 - self.l2 ** 2) / (2 * self.l1 * self.l2)
        if not -1.0 <= cos_q2 <= 1.0:
            return []
        sols = []
        for sign in (1.0, -1.0):
            q2 = sign * np.arccos(np.clip(cos_q2, -1.0, 1.0))
            q1 = (np.arctan2(rel[1], rel[0])
                  - np.arctan2(self.l2 * np.sin(q2),
                               self.l1 + self.l2 * np.cos(q2)))
            sols.append((q1, q2))
        return sols

    def jacobian_world(self, q):
        """2x2 positional Jacobian of the fingertip, world frame."""
        q1, q2 = q
        s1, c1 = np.sin(q1), np.cos(q1)
        s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
        jac = np.array([
            [-self.l1 * s1 - self.l2 * s12, -self.l2 * s12],
            [self.l1 * c1 + self.l2 * c12, self.l2 * c12],
        ])
        c, s = np.cos(self.base_angle), np.sin(self.base_angle)
        rot = np.array([[c, -s], [s, c]])
        return rot @ jac

    def joint_torques(self, point, force, elbow_from=None):
        """Torques applying the world force at the point; None if unreachable."""
        sols = self.ik(point)
        if not sols:
            return None
        if elbow_from is not None:
            sols = sorted(sols, key=lambda q: abs(q[1] - elbow_from))
        best = None
        for q in sols:
            tau = self.jacobian_world(q).T @ np.asarray(force, dtype=float)
            mag = np.abs(tau).max()
            if best is None or mag < best[1]:
                best = (tau, mag, q)
        return best


@dataclass(frozen=True)
class CoverageConfig:
    n_poses: int = 100
    n_restarts: int = 2000
    mu: float = 0.5
    tau_max: float = 1.0
    min_force: float = 1.0
    gain_range: tuple = (20.0, 300.0)
    spawn_radius: float = 0.3
    base_radius: float = 1.5
    link_lengths: tuple = (0.9, 0.9)
    rng_seed: int = 12345
    sim_dt: float = 1e-3
    sim_candidates: int = 3      # best analytic candidates verified per pose


@dataclass
class CoverageRow:
    triangle: int
    config: int
    poses: int
    compliant: int
    direct_fc: int


@dataclass
class CoverageReport:
    rows: list
    subset_violations: int

    @property
    def total_compliant(self) -> int:
        return sum(r.compliant for r in self.rows)

    @property
    def total_direct(self) -> int:
        return sum(r.direct_fc for r in self.rows)

    @property
    def ratio(self) -> float:
        if self.total_compliant == 0:
            return float("nan")
        return self.total_direct / self.total_compliant


def make_fingers(cfg: CoverageConfig) -> list:
    fingers = []
    for ang in np.deg2rad([90.0, 210.0, 330.0]):
        base = cfg.base_radius * np.array([np.cos(ang), np.sin(ang)])
        fingers.append(PlanarFinger(base=base, base_angle=ang + np.pi,
                                    l1=cfg.link_lengths[0],
                                    l2=cfg.link_lengths[1]))
    return fingers


def _assign_fingers(fingers, contacts):
    """Permutation of contacts minimizing base distance, all reachable."""
    best = None
    for perm in permutations(range(len(contacts))):
        if not all(f.reachable(contacts[j]) for f, j in zip(fingers, perm)):
            continue
        cost = sum(np.linalg.norm(f.base - contacts[j])
                   for f, j in zip(fingers, perm))
        if best is None or cost < best[0]:
            best = (cost, perm)
    return None if best is None else list(best[1])


def _equilibrium_2d(contacts, targets, gains):
    """Batched gain-weighted rigid pose minimizing 2D spring energy.

    contacts: (m, 2); targets: (B, m, 2); gains: (B, m).
    Returns rotation angles (B,), translations (B, 2).
    """
    w = gains / gains.sum(axis=1, keepdims=True)
    cp = np.einsum("bm,mx->bx", w, contacts)
    co = np.einsum("bm,bmx->bx", w, targets)
    a = contacts[None, :, :] - cp[:, None, :]
    b = targets - co[:, None, :]
    dot = np.einsum("bm,bmx,bmx->b", w, np.broadcast_to(a, b.shape), b)
    cross = np.einsum("bm,bm->b", w,
                      a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    theta = np.arctan2(cross, dot)
    ct, st = np.cos(theta), np.sin(theta)
    rot_cp = np.stack([ct * cp[:, 0] - st * cp[:, 1],
                       st * cp[:, 0] + ct * cp[:, 1]], axis=1)
    return theta, co - rot_cp


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _margins_2d(forces, normals, mu):
    norms = np.linalg.norm(forces, axis=-1)
    norms = np.where(norms > 1e-12, norms, np.inf)
    fhat = forces / norms[..., None]
    return -np.sum(fhat * normals, axis=-1) - 1.0 / np.sqrt(1 + mu ** 2)


def _screen_candidates(contacts, normals, targets, gains, fingers, assignment,
                       cfg: CoverageConfig):
    """Vectorized analytic feasibility screen; returns score per candidate.

    Score is the worst margin over both states; -inf marks failures of any
    hard constraint (torque, reach, minimum equilibrium force).
    """
    B = len(targets)
    forces_t0 = gains[..., None] * (targets - contacts[None, :, :])
    eps0 = _margins_2d(forces_t0, normals[None, :, :], cfg.mu)
    theta, trans = _equilibrium_2d(contacts, targets, gains)
    ct, st = np.cos(theta), np.sin(theta)
    px, py = contacts[:, 0], contacts[:, 1]
    peq = np.stack([ct[:, None] * px - st[:, None] * py + trans[:, None, 0],
                    st[:, None] * px + ct[:, None] * py + trans[:, None, 1]],
                   axis=2)
    neq = np.stack([ct[:, None] * normals[:, 0] - st[:, None] * normals[:, 1],
                    st[:, None] * normals[:, 0] + ct[:, None] * normals[:, 1]],
                   axis=2)
    forces_eq = gains[..., None] * (targets - peq)
    epseq = _margins_2d(forces_eq, neq, cfg.mu)
    normal_force_eq = -np.sum(forces_eq * neq, axis=-1)

    score = np.minimum(eps0.min(axis=1), epseq.min(axis=1))
    score[normal_force_eq.min(axis=1) < cfg.min_force] = -np.inf

    # torque and reachability, only for candidates still alive
    alive = np.where(score > 0)[0]
    for b in alive:
        ok = True
        for i, f in enumerate(fingers):
            ci = assignment[i]
            t0 = f.joint_torques(contacts[ci], forces_t0[b, ci])
            if t0 is None or t0[1] > cfg.tau_max:
                ok = False
                break
            if not f.reachable(peq[b, ci]):
                ok = False
                break
            teq = f.joint_torques(peq[b, ci], forces_eq[b, ci],
                                  elbow_from=t0[2][1])
            if teq is None or teq[1] > cfg.tau_max:
                ok = False
                break
        if not ok:
            score[b] = -np.inf
    return score, theta, trans


def _verify_in_sim(contacts, normals, targets, gains, fingers, assignment,
                   cfg: CoverageConfig) -> bool:
    """Forward-simulate one candidate and check margins plus torque."""
    m = len(contacts)
    sys = SpringSystem(
        contacts=np.hstack([contacts, np.zeros((m, 1))]),
        targets=np.hstack([targets, np.zeros((m, 1))]),
        gains=gains,
    )
    traj = simulate(sys, dt=cfg.sim_dt, record_stride=10)
    if not traj.settled:
        return False
    normals3 = np.hstack([normals, np.zeros((m, 1))])
    eps = margin_trace(traj, sys, normals3, cfg.mu)
    if np.nanmin(eps) < -1e-6:
        return False
    # torque limits along the (thinned) trace
    elbow = [None] * m
    for t in range(0, len(traj.times), max(1, len(traj.times) // 20)):
        for i, f in enumerate(fingers):
            ci = assignment[i]
            res = f.joint_torques(traj.fingertips[t, ci, :2],
                                  traj.forces[t, ci, :2],
                                  elbow_from=elbow[ci])
            if res is None or res[1] > cfg.tau_max + 1e-9:
                return False
            elbow[ci] = res[2][1]
    return True


def _sample_in_triangle(rng, vertices, size):
    u = rng.uniform(size=size)
    v = rng.uniform(size=size)
    su = np.sqrt(u)
    return ((1 - su)[..., None] * vertices[0]
            + (su * (1 - v))[..., None] * vertices[1]
            + (su * v)[..., None] * vertices[2])


def run_pose(triangle: int, config: int, pose_rng: np.random.Generator,
             fingers, cfg: CoverageConfig):
    """Evaluate one random object pose; returns (compliant, direct_fc)."""
    verts_local = TRIANGLES[triangle]
    contacts_local = CONTACT_CONFIGS[(triangle, config)]
    normals_local = edge_outward_normals(verts_local, contacts_local)
    centroid = verts_local.mean(axis=0)

    theta = pose_rng.uniform(0, 2 * np.pi)
    shift_angle = pose_rng.uniform(0, 2 * np.pi)
    shift_r = cfg.spawn_radius * np.sqrt(pose_rng.uniform())
    offset = shift_r * np.array([np.cos(shift_angle), np.sin(shift_angle)])
    rot = _rot2(theta)
    verts = (verts_local - centroid) @ rot.T + offset
    contacts = (contacts_local - centroid) @ rot.T + offset
    normals = normals_local @ rot.T

    assignment = _assign_fingers(fingers, contacts)
    if assignment is None:
        return False, False

    # direct force closure at the initial pose, under torque limits
    jacobians = []
    for i, f in enumerate(fingers):
        sols = f.ik(contacts[assignment[i]])
        # elbow away from the object keeps links clear of the triangle
        q = max(sols, key=lambda s: np.linalg.norm(
            _finger_elbow(f, s) - offset))
        jacobians.append(f.jacobian_world(q))
    inv_assign = np.argsort(assignment)
    jac_by_contact = [jacobians[inv_assign[c]] for c in range(len(contacts))]
    direct, info = force_closure_feasible(
        contacts, normals, cfg.mu, min_force=cfg.min_force,
        torque_model=TorqueModel(tuple(jac_by_contact), cfg.tau_max))

    # compliant search: random restarts plus the force-closure certificate
    B = cfg.n_restarts
    targets = _sample_in_triangle(pose_rng, verts, (B, len(contacts)))
    log_lo, log_hi = np.log(cfg.gain_range[0]), np.log(cfg.gain_range[1])
    gains = np.exp(pose_rng.uniform(log_lo, log_hi, size=(B, len(contacts))))
    if direct and info["forces"] is not None:
        cert_gain = 100.0
        cert_targets = contacts + info["forces"] / cert_gain
        targets = np.concatenate([targets, cert_targets[None]], axis=0)
        gains = np.concatenate([gains, np.full((1, len(contacts)),
                                               cert_gain)], axis=0)
    score, _, _ = _screen_candidates(contacts, normals, targets, gains,
                                     fingers, assignment, cfg)
    order = np.argsort(-score)
    compliant = False
    for b in order[:cfg.sim_candidates]:
        if not np.isfinite(score[b]) or score[b] < 0:
            break
        if _verify_in_sim(contacts, normals, targets[b], gains[b],
                          fingers, assignment, cfg):
            compliant = True
            break
    return compliant, bool(direct)


def _finger_elbow(finger: PlanarFinger, q):
    q1 = q[0] + finger.base_angle
    return finger.base + finger.l1 * np.array([np.cos(q1), np.sin(q1)])


def run_coverage(cfg: CoverageConfig = CoverageConfig(),
                 combos=None) -> CoverageReport:
    """Full experiment over all triangle/config combinations."""
    fingers = make_fingers(cfg)
    rows = []
    violations = 0
    combos = combos or sorted(CONTACT_CONFIGS)
    for triangle, config in combos:
        root = np.random.SeedSequence(
            [cfg.rng_seed, triangle, config])
        children = root.spawn(cfg.n_poses)
        compliant = direct = 0
        for pose_idx in range(cfg.n_poses):
            ok_c, ok_d = run_pose(triangle, config,
                                  np.random.default_rng(children[pose_idx]),
                                  fingers, cfg)
            compliant += ok_c
            direct += ok_d
            if ok_d and not ok_c:
                violations += 1
        rows.append(CoverageRow(triangle, config, cfg.n_poses,
                                compliant, direct))
    return CoverageReport(rows=rows, subset_violations=violations)
