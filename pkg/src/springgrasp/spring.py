"""Spring-driven grasp analytics.

A grasp is a set of fingertip contacts attached to the object by virtual
springs pulling toward per-finger targets. The object relaxes to the rigid
pose minimizing total spring potential; that pose has a closed form via a
gain-weighted Kabsch/Wahba solve. Contact quality is measured by the margin
between the spring force direction and the friction-cone boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotationError, NumericalError, UndefinedMarginError

# switch point (distance above -1) where the log margin energy hands over to
# its linear extension
LOG_BRANCH_DELTA = 1e-4


@dataclass(frozen=True)
class SpringSystem:
    """m fingertip springs acting on one rigid object."""

    contacts: np.ndarray            # (m, 3) p_i at initial time, world frame
    targets: np.ndarray             # (m, 3) o_i, world frame
    gains: np.ndarray               # (m,) stiffness N/m
    rotation0: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        p = np.asarray(self.contacts, dtype=float)
        o = np.asarray(self.targets, dtype=float)
        k = np.asarray(self.gains, dtype=float)
        r0 = np.asarray(self.rotation0, dtype=float)
        t0 = np.asarray(self.translation0, dtype=float)
        for name, val in (("contacts", p), ("targets", o)):
            if val.ndim != 2 or val.shape[1] != 3:
                raise ValueError(f"{name} must be (m, 3)")
        if len(p) < 3:
            raise ValueError("need at least 3 fingers")
        if len(o) != len(p) or len(k) != len(p):
            raise ValueError("contacts, targets and gains must align")
        if np.any(k <= 0):
            raise ValueError("gains must be positive")
        if np.abs(r0 @ r0.T - np.eye(3)).max() > 1e-9 or np.linalg.det(r0) < 0:
            raise ValueError("rotation0 must be orthonormal with det +1")
        for attr, val in (("contacts", p), ("targets", o), ("gains", k),
                          ("rotation0", r0), ("translation0", t0)):
            object.__setattr__(self, attr, val)

    @property
    def m(self) -> int:
        return len(self.contacts)

    def object_frame_contacts(self) -> np.ndarray:
        """Contacts expressed in the object frame (fixed over the process)."""
        return (self.contacts - self.translation0) @ self.rotation0


@dataclass(frozen=True)
class EquilibriumState:
    rotation: np.ndarray      # R_eq, world <- object
    translation: np.ndarray   # t_eq
    fingertips: np.ndarray    # (m, 3) p_i at equilibrium
    energy: float             # residual spring potential, J


def spring_potential(sys: SpringSystem, rotation: np.ndarray,
                     translation: np.ndarray) -> float:
    """Total potential 0.5 sum k_i |R p_o + t - o_i|^2 at a candidate pose."""
    moved = sys.object_frame_contacts() @ np.asarray(rotation).T + translation
    sq = np.sum((moved - sys.targets) ** 2, axis=1)
    return float(0.5 * np.sum(sys.gains * sq))


def solve_equilibrium(sys: SpringSystem) -> EquilibriumState:
    """Gain-weighted Kabsch solve for the minimum-potential rigid pose.

    Weighted centroids are removed, the correlation of the centered point
    sets is decomposed by SVD and a reflection (det < 0) is repaired by
    flipping the last right-singular vector.
    """
    po = sys.object_frame_contacts()
    w = sys.gains / sys.gains.sum()
    cp = w @ po
    co = w @ sys.targets
    a = po - cp
    b = sys.targets - co
    h = a.T @ (w[:, None] * b)
    try:
        u, s, vt = np.linalg.svd(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("SVD of the spring correlation failed") from exc
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateRotationError(
            "contacts/targets are collinear; rotation about the contact "
            "line is unconstrained")
    det = np.linalg.det(vt.T @ u.T)
    flip = np.diag([1.0, 1.0, np.sign(det)])
    rotation = vt.T @ flip @ u.T
    translation = co - rotation @ cp
    tips = po @ rotation.T + translation
    energy = float(0.5 * np.sum(sys.gains *
                                np.sum((tips - sys.targets) ** 2, axis=1)))
    return EquilibriumState(rotation, translation, tips, energy)


def fingertips_at_equilibrium(sys: SpringSystem, rotation: np.ndarray,
                              translation: np.ndarray) -> np.ndarray:
    """Fingertip positions once the object reaches the given pose."""
    rel = np.asarray(rotation) @ sys.rotation0.T
    return sys.contacts @ rel.T + translation - rel @ sys.translation0


def spring_force(target, position, velocity, gain) -> np.ndarray:
    """Impedance force k (o - p) - 2 sqrt(k) pdot."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    target = np.asarray(target, dtype=float)
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    return gain * (target - position) - 2.0 * np.sqrt(gain) * velocity


def contact_margin(force, outward_normal, mu: float) -> float:
    """Cosine gap between the force direction and the friction-cone edge.

    Nonnegative exactly when the force lies inside the inward cone.
    """
    force = np.asarray(force, dtype=float)
    n = np.asarray(outward_normal, dtype=float)
    norm = np.linalg.norm(force)
    if norm <= 0:
        raise UndefinedMarginError("zero contact force has no direction")
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    return float(-(force / norm) @ n - 1.0 / np.sqrt(1.0 + mu ** 2))


def contact_margins(forces: np.ndarray, outward_normals: np.ndarray,
                    mu: float) -> np.ndarray:
    """Vectorized margins for (m, 3) forces and normals."""
    forces = np.asarray(forces, dtype=float)
    normals = np.asarray(outward_normals, dtype=float)
    norms = np.linalg.norm(forces, axis=-1)
    if np.any(norms <= 0):
        raise UndefinedMarginError("zero contact force has no direction")
    fhat = forces / norms[..., None]
    return -np.sum(fhat * normals, axis=-1) - 1.0 / np.sqrt(1.0 + mu ** 2)


def margin_energy_term(eps) -> np.ndarray:
    """-log(eps + 1) with a linear extension below eps = -1 + delta.

    The extension matches value and slope at the switch so the term stays
    finite on the whole margin range (-2, 1] while its gradient keeps
    rewarding larger margins.
    """
    eps = np.asarray(eps, dtype=float)
    d = LOG_BRANCH_DELTA
    log_branch = -np.log(np.maximum(eps + 1.0, d))
    linear_branch = -np.log(d) - (eps + 1.0 - d) / d
    return np.where(eps + 1.0 > d, log_branch, linear_branch)


def springgrasp_energy(margins_t0, margins_teq) -> float:
    """Total margin energy over both evaluated states."""
    return float(np.sum(margin_energy_term(margins_t0)) +
                 np.sum(margin_energy_term(margins_teq)))
