"""Differentiable grasp objective.

All energy terms are evaluated in one torch graph over the decision
variables (hand pose q, per-finger targets, per-finger log-gains), so one
backward pass yields the exact gradient of the weighted total. The numpy
API returns an EnergyBreakdown with per-term values plus the derived
quantities (contacts, equilibrium pose, margins, forces) that callers need
for feasibility checks and ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import NumericalError
from .gpis import GaussianProcessImplicitSurface
from .hand import HandModel, torch_forward_kinematics
from .spring import LOG_BRANCH_DELTA

COLLISION_DENOM_FLOOR = 1e-3

TERM_NAMES = ("sp", "dist", "uncer", "gain", "tar", "col", "reg", "force")


@dataclass(frozen=True)
class EnergyWeights:
    """Weights and shared physical parameters of the objective."""

    w_sp: float = 200.0
    w_dist: float = 10000.0
    w_uncer: float = 20.0
    w_gain: float = 0.5
    w_tar: float = 1000.0
    w_col: float = 1.0
    w_reg: float = 10.0
    w_force: float = 200.0
    f_min: float = 2.0          # N, force saturation in the force reward
    c: float = 0.7              # pregrasp extrapolation coefficient
    mu: float = 0.5             # friction coefficient
    uncertainty_samples: int = 16  # K, p.d.f. samples per contact segment
    equilibrium_normals: str = "requery"   # or "transport"

    def __post_init__(self):
        for name in ("w_sp", "w_dist", "w_uncer", "w_gain", "w_tar", "w_col",
                     "w_reg", "w_force"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.c <= 1.0:
            raise ValueError("c must lie in (0, 1]")
        if self.uncertainty_samples < 2:
            raise ValueError("uncertainty_samples must be >= 2")
        if self.f_min <= 0:
            raise ValueError("f_min must be positive")
        if self.equilibrium_normals not in ("requery", "transport"):
            raise ValueError("equilibrium_normals must be requery|transport")

    def weight_vector(self) -> np.ndarray:
        return np.array([getattr(self, f"w_{n}") for n in TERM_NAMES])


@dataclass
class DecisionVars:
    """Optimization state: hand pose, spring targets, log stiffness."""

    q: np.ndarray            # (6 + J,)
    targets: np.ndarray      # (m, 3)
    log_gains: np.ndarray    # (m,)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.log_gains = np.asarray(self.log_gains, dtype=float)
        if not (np.isfinite(self.q).all() and np.isfinite(self.targets).all()
                and np.isfinite(self.log_gains).all()):
            raise ValueError("decision variables must be finite")

    @property
    def gains(self) -> np.ndarray:
        return np.exp(self.log_gains)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.q, self.targets.ravel(), self.log_gains])

    @classmethod
    def from_flat(cls, vec: np.ndarray, q_dim: int, m: int) -> "DecisionVars":
        vec = np.asarray(vec, dtype=float)
        q = vec[:q_dim]
        targets = vec[q_dim:q_dim + 3 * m].reshape(m, 3)
        return cls(q, targets, vec[q_dim + 3 * m:])

    def copy(self) -> "DecisionVars":
        return DecisionVars(self.q.copy(), self.targets.copy(),
                            self.log_gains.copy())


@dataclass(frozen=True)
class EnergyBreakdown:
    terms: dict               # name -> unweighted value
    total: float              # weighted sum
    contacts_t0: np.ndarray
    fingertips: np.ndarray
    equilibrium_rotation: np.ndarray
    equilibrium_translation: np.ndarray
    contacts_teq: np.ndarray
    margins_t0: np.ndarray
    margins_teq: np.ndarray
    forces_t0: np.ndarray
    forces_teq: np.ndarray
    normals_t0: np.ndarray = None
    diagnostics: tuple = ()

    def term(self, name: str) -> float:
        return self.terms[name]


def _torch_margin_energy(eps):
    d = LOG_BRANCH_DELTA
    log_branch = -torch.log(torch.clamp(eps + 1.0, min=d))
    linear_branch = -np.log(d) - (eps + 1.0 - d) / d
    return torch.where(eps + 1.0 > d, log_branch, linear_branch)


def _torch_margins(forces, normals, mu):
    norms = torch.clamp(torch.linalg.norm(forces, dim=-1, keepdim=True),
                        min=1e-12)
    return -((forces / norms) * normals).sum(dim=-1) - 1.0 / np.sqrt(1 + mu ** 2)


def torch_weighted_kabsch(contacts, targets, gains):
    """Minimum-spring-energy rigid pose, differentiable in all inputs."""
    w = gains / gains.sum()
    cp = w @ contacts
    co = w @ targets
    a = contacts - cp
    b = targets - co
    h = a.T @ (w[:, None] * b)
    u, s, vh = torch.linalg.svd(h)
    v = vh.transpose(-2, -1)
    det = torch.det(v @ u.transpose(-2, -1))
    flip = torch.diag(torch.stack([torch.ones_like(det),
                                   torch.ones_like(det), det.sign()]))
    rot = v @ flip @ u.transpose(-2, -1)
    trans = co - rot @ cp
    return rot, trans


def _torch_surface_score(model, x):
    """Dimensionless surface likelihood exp(-d_mu^2 / (2 d_sigma^2)).

    The uncertainty term uses this standardized form instead of the raw
    density so it is maximized exactly where |d_mu|/d_sigma is minimized
    and stays bounded in [0, 1] regardless of the local variance scale.
    """
    mean, var = model.torch_mean_var(x)
    return torch.exp(-0.5 * mean ** 2 / torch.clamp(var, min=1e-6))


def _inverse_barrier(x, activation, floor=COLLISION_DENOM_FLOOR):
    """1/x when 0 < x <= activation, 0 beyond; linearized below the floor."""
    inv = torch.where(x > floor, 1.0 / torch.clamp(x, min=floor),
                      1.0 / floor - (x - floor) / floor ** 2)
    return torch.where(x <= activation, inv, torch.zeros_like(x))


def _collision_energy(model: GaussianProcessImplicitSurface, hand: HandModel,
                      centers, pad=0.0):
    """Inverse-distance barriers; ``pad`` widens every activation band.

    The reported term always uses pad 0; the optimizer descends on a padded
    copy so its stationary points sit strictly outside the true bands.
    """
    if len(hand.spheres) == 0:
        return torch.zeros(())
    radii = torch.tensor(hand.sphere_radii)
    total = torch.zeros(())
    for i, j in hand.self_collision_pairs:
        dist = torch.linalg.norm(centers[i] - centers[j])
        total = total + _inverse_barrier(dist, radii[i] + radii[j] + pad)
    d_mu, _ = model.torch_mean_var(centers)
    total = total + _inverse_barrier(d_mu, radii + pad).sum()
    total = total + _inverse_barrier(centers[:, 2], radii + pad).sum()
    return total


def _torch_energy(q, targets, log_gains, model, hand, w: EnergyWeights,
                  q_ref, motion_goal=None, collision_pad=0.0,
                  collision_boost=1.0):
    """Build the full energy graph; returns (weighted total, term dict, aux)."""
    gains = torch.exp(log_gains)
    tips, centers = torch_forward_kinematics(hand, q)
    contacts = w.c * (tips - targets) + targets

    forces_t0 = gains[:, None] * (targets - contacts)
    normals_t0 = model.torch_normal(contacts)
    eps_t0 = _torch_margins(forces_t0, normals_t0, w.mu)

    rot, trans = torch_weighted_kabsch(contacts, targets, gains)
    contacts_eq = contacts @ rot.T + trans
    forces_eq = gains[:, None] * (targets - contacts_eq)
    if w.equilibrium_normals == "requery":
        normals_eq = model.torch_normal(contacts_eq)
    else:
        normals_eq = normals_t0 @ rot.T
    eps_eq = _torch_margins(forces_eq, normals_eq, w.mu)

    e_sp = _torch_margin_energy(eps_t0).sum() + _torch_margin_energy(eps_eq).sum()

    d_contacts, _ = model.torch_mean_var(contacts)
    e_dist = d_contacts.abs().sum()

    k_samples = w.uncertainty_samples
    alphas = torch.arange(k_samples, dtype=torch.float64) / k_samples
    # (m, K, 3) line samples from pregrasp tip to target
    segs = tips[:, None, :] + alphas[None, :, None] * (targets - tips)[:, None, :]
    pdf_samples = _torch_surface_score(model, segs.reshape(-1, 3)).reshape(
        len(hand.fingers), k_samples)
    pdf_contact = _torch_surface_score(model, contacts)
    e_uncer = (pdf_samples - pdf_contact[:, None]).sum()

    e_gain = (gains ** 2).sum()

    d_targets, _ = model.torch_mean_var(targets)
    e_tar = d_targets.sum()

    e_col = collision_boost * _collision_energy(model, hand, centers,
                                                pad=collision_pad)

    q_full = q if not hand.fixed_wrist else q[6:]
    ref = torch.tensor(q_ref if not hand.fixed_wrist else q_ref[6:])
    e_reg = ((ref - q_full) ** 2).sum()
    if motion_goal is None:
        e_reg = e_reg + ((contacts - contacts_eq) ** 2).sum()
    else:
        # desired equilibrium contacts are p_i(t0) + goal displacement
        goal = torch.tensor(np.asarray(motion_goal, dtype=float))
        e_reg = e_reg + ((contacts + goal - contacts_eq) ** 2).sum()

    force_mag = torch.linalg.norm(forces_eq, dim=-1)
    e_force = -torch.clamp(force_mag, max=w.f_min).sum()

    terms = {"sp": e_sp, "dist": e_dist, "uncer": e_uncer, "gain": e_gain,
             "tar": e_tar, "col": e_col, "reg": e_reg, "force": e_force}
    total = sum(getattr(w, f"w_{name}") * terms[name] for name in TERM_NAMES)
    aux = {
        "contacts": contacts, "tips": tips, "rot": rot, "trans": trans,
        "contacts_eq": contacts_eq, "eps_t0": eps_t0, "eps_eq": eps_eq,
        "forces_t0": forces_t0, "forces_eq": forces_eq,
        "normals_t0": normals_t0,
    }
    return total, terms, aux


def total_energy(vars: DecisionVars, model: GaussianProcessImplicitSurface,
                 hand: HandModel, w: EnergyWeights,
                 q_ref: np.ndarray | None = None,
                 motion_goal: np.ndarray | None = None) -> EnergyBreakdown:
    """Evaluate every term and the weighted total at the given variables."""
    if q_ref is None:
        q_ref = np.concatenate([vars.q[:6] * 0.0, hand.reference_joints])
    with torch.no_grad():
        total, terms, aux = _torch_energy(
            torch.tensor(vars.q), torch.tensor(vars.targets),
            torch.tensor(vars.log_gains), model, hand, w, q_ref, motion_goal)
    diagnostics = []
    f0 = torch.linalg.norm(aux["forces_t0"], dim=-1)
    if bool((f0 < 1e-9).any()):
        diagnostics.append("zero-force contact at t0; margins ill-defined")
    term_vals = {k: float(v) for k, v in terms.items()}
    return EnergyBreakdown(
        terms=term_vals,
        total=float(total),
        contacts_t0=aux["contacts"].numpy(),
        fingertips=aux["tips"].numpy(),
        equilibrium_rotation=aux["rot"].numpy(),
        equilibrium_translation=aux["trans"].numpy(),
        contacts_teq=aux["contacts_eq"].numpy(),
        margins_t0=aux["eps_t0"].numpy(),
        margins_teq=aux["eps_eq"].numpy(),
        forces_t0=aux["forces_t0"].numpy(),
        forces_teq=aux["forces_eq"].numpy(),
        normals_t0=aux["normals_t0"].numpy(),
        diagnostics=tuple(diagnostics),
    )


def energy_and_gradient(vars: DecisionVars,
                        model: GaussianProcessImplicitSurface,
                        hand: HandModel, w: EnergyWeights,
                        q_ref: np.ndarray | None = None,
                        motion_goal: np.ndarray | None = None,
                        collision_pad: float = 0.0,
                        collision_boost: float = 1.0):
    """Weighted total and its gradient as a flat vector over DecisionVars."""
    if q_ref is None:
        q_ref = np.concatenate([vars.q[:6] * 0.0, hand.reference_joints])
    q = torch.tensor(vars.q, requires_grad=True)
    targets = torch.tensor(vars.targets, requires_grad=True)
    log_gains = torch.tensor(vars.log_gains, requires_grad=True)
    total, _, _ = _torch_energy(q, targets, log_gains, model, hand, w,
                                q_ref, motion_goal, collision_pad,
                                collision_boost)
    total.backward()
    grads = []
    for t in (q, targets, log_gains):
        g = t.grad
        grads.append(np.zeros(t.shape).ravel() if g is None
                     else g.detach().numpy().ravel())
    grad = np.concatenate(grads)
    value = float(total.detach())
    if not np.isfinite(value):
        raise NumericalError("objective evaluated to a non-finite value")
    if not np.isfinite(grad).all():
        bad = np.where(~np.isfinite(grad))[0]
        raise NumericalError(
            f"non-finite gradient in coordinates {bad[:5].tolist()}")
    return value, grad


