"""Kinematic hand chains: configs, forward kinematics, seeds.

A hand is a free-floating wrist plus per-finger revolute chains. Poses are
q = [wrist xyz (m), wrist Euler (rad, intrinsic Z-Y-X in listed order),
joint angles]. Forward kinematics runs in torch so fingertips and collision
sphere centers are differentiable with respect to q; a numpy wrapper is
provided for callers that only need values.

Two built-in configs ship with the package: a four-finger 16-joint hand
with 16 collision spheres (22-dim pose) and a planar three-finger two-link
hand whose wrist stays fixed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import yaml

from .errors import ConfigError
from .pointcloud import BoundingBox

torch.set_default_dtype(torch.float64)


def euler_zyx_to_matrix(angles: np.ndarray) -> np.ndarray:
    """Intrinsic Z-Y-X rotation from listed angles (a, b, c) in radians."""
    a, b, c = angles
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
    return rz @ ry @ rx


def matrix_to_euler_zyx(rot: np.ndarray) -> np.ndarray:
    """Inverse of euler_zyx_to_matrix (gimbal-safe for |b| < pi/2)."""
    b = np.arcsin(np.clip(-rot[2, 0], -1.0, 1.0))
    if np.abs(np.cos(b)) > 1e-9:
        a = np.arctan2(rot[1, 0], rot[0, 0])
        c = np.arctan2(rot[2, 1], rot[2, 2])
    else:
        a = np.arctan2(-rot[0, 1], rot[1, 1])
        c = 0.0
    return np.array([a, b, c])


def _torch_euler_zyx(angles):
    a, b, c = angles[0], angles[1], angles[2]
    one = torch.ones((), dtype=angles.dtype)
    zero = torch.zeros((), dtype=angles.dtype)
    rz = torch.stack([
        torch.stack([torch.cos(a), -torch.sin(a), zero]),
        torch.stack([torch.sin(a), torch.cos(a), zero]),
        torch.stack([zero, zero, one]),
    ])
    ry = torch.stack([
        torch.stack([torch.cos(b), zero, torch.sin(b)]),
        torch.stack([zero, one, zero]),
        torch.stack([-torch.sin(b), zero, torch.cos(b)]),
    ])
    rx = torch.stack([
        torch.stack([one, zero, zero]),
        torch.stack([zero, torch.cos(c), -torch.sin(c)]),
        torch.stack([zero, torch.sin(c), torch.cos(c)]),
    ])
    return rz @ ry @ rx


def _torch_axis_rotation(axis, angle):
    """Rodrigues rotation about a fixed unit axis, differentiable in angle."""
    kx, ky, kz = axis
    k = torch.tensor([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    eye = torch.eye(3)
    return eye + torch.sin(angle) * k + (1.0 - torch.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class Joint:
    offset_rot: np.ndarray   # fixed rotation, parent -> joint frame
    offset_pos: np.ndarray   # fixed translation
    axis: np.ndarray         # unit rotation axis in the joint frame
    limits: tuple            # (lower, upper) rad


@dataclass(frozen=True)
class Finger:
    name: str
    joints: tuple            # of Joint
    tip_offset: np.ndarray   # fingertip position in the last joint frame


@dataclass(frozen=True)
class Sphere:
    finger: str              # finger name or "palm"
    joint_index: int         # sphere rides the frame after this joint (-1: palm)
    offset: np.ndarray
    radius: float


class HandModel:
    """Immutable kinematic description; FK is a pure function of q."""

    def __init__(self, name, fingers, spheres, reference_pose,
                 self_collision_pairs, fixed_wrist=False):
        self.name = name
        self.fingers = tuple(fingers)
        self.spheres = tuple(spheres)
        self.reference_joints = np.asarray(reference_pose, dtype=float)
        self.self_collision_pairs = tuple(tuple(p) for p in self_collision_pairs)
        self.fixed_wrist = fixed_wrist
        self.n_joints = sum(len(f.joints) for f in self.fingers)
        if len(self.reference_joints) != self.n_joints:
            raise ConfigError(
                f"reference pose has {len(self.reference_joints)} entries, "
                f"model has {self.n_joints} joints")
        for i, j in self.self_collision_pairs:
            if not (0 <= i < len(self.spheres) and 0 <= j < len(self.spheres)):
                raise ConfigError(f"collision pair ({i}, {j}) out of range")

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    @property
    def q_dim(self) -> int:
        return 6 + self.n_joints

    @property
    def sphere_radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.spheres])

    def joint_limits(self):
        lo = np.concatenate([[j.limits[0] for j in f.joints]
                             for f in self.fingers])
        hi = np.concatenate([[j.limits[1] for j in f.joints]
                             for f in self.fingers])
        return lo, hi

    def reference_pose(self, wrist=None) -> "HandPose":
        q = np.zeros(self.q_dim)
        if wrist is not None:
            q[:6] = wrist
        q[6:] = self.reference_joints
        return HandPose(self, q)


class HandPose:
    """Pose vector bound to a model; joints clamp to limits on construction."""

    def __init__(self, model: HandModel, q):
        q = np.asarray(q, dtype=float).copy()
        if len(q) != model.q_dim:
            raise ValueError(f"pose dim {len(q)} != model dim {model.q_dim}")
        if not np.isfinite(q).all():
            raise ValueError("pose must be finite")
        lo, hi = model.joint_limits()
        clamped = np.clip(q[6:], lo, hi)
        self.limit_violations = int(np.sum(np.abs(clamped - q[6:]) > 1e-12))
        q[6:] = clamped
        self.model = model
        self.q = q

    @property
    def wrist_position(self):
        return self.q[:3]

    @property
    def wrist_euler(self):
        return self.q[3:6]

    @property
    def joints(self):
        return self.q[6:]


@dataclass(frozen=True)
class FkResult:
    fingertips: np.ndarray      # (m, 3)
    sphere_centers: np.ndarray  # (N, 3)
    sphere_radii: np.ndarray    # (N,)


def torch_forward_kinematics(model: HandModel, q):
    """Differentiable FK; q is a torch vector of length model.q_dim.

    Returns (fingertips (m, 3), sphere_centers (N, 3)) torch tensors.
    """
    wrist_pos = q[:3]
    wrist_rot = _torch_euler_zyx(q[3:6])
    if model.fixed_wrist:
        wrist_pos = wrist_pos.detach()
        wrist_rot = wrist_rot.detach()
    sphere_frames = {}
    tips = []
    qi = 6
    for finger in model.fingers:
        rot = wrist_rot
        pos = wrist_pos
        for idx, joint in enumerate(finger.joints):
            off_r = torch.tensor(joint.offset_rot)
            off_p = torch.tensor(joint.offset_pos)
            pos = pos + rot @ off_p
            rot = rot @ off_r @ _torch_axis_rotation(joint.axis, q[qi])
            sphere_frames[(finger.name, idx)] = (rot, pos)
            qi += 1
        tips.append(pos + rot @ torch.tensor(finger.tip_offset))
    centers = []
    for s in model.spheres:
        if s.finger == "palm":
            rot, pos = wrist_rot, wrist_pos
        else:
            rot, pos = sphere_frames[(s.finger, s.joint_index)]
        centers.append(pos + rot @ torch.tensor(s.offset))
    if not centers:
        return torch.stack(tips), torch.zeros((0, 3), dtype=q.dtype)
    return torch.stack(tips), torch.stack(centers)


def forward_kinematics(model: HandModel, pose: HandPose) -> FkResult:
    """Numpy FK wrapper over the torch implementation."""
    with torch.no_grad():
        tips, centers = torch_forward_kinematics(
            model, torch.tensor(pose.q, dtype=torch.float64))
    return FkResult(tips.numpy(), centers.numpy(), model.sphere_radii)


def pregrasp_contact(fk_tip, target, c: float):
    """Expected first-contact point between pregrasp fingertip and target."""
    if not 0.0 < c <= 1.0:
        raise ValueError("extrapolation coefficient must be in (0, 1]")
    fk_tip = np.asarray(fk_tip, dtype=float)
    target = np.asarray(target, dtype=float)
    return c * (fk_tip - target) + target


# Wrist seed table: position offsets (m) and intrinsic Euler angles (deg)
# in the oriented-bounding-box frame.
SEED_TABLE = [
    ((-0.05, 0.0, 0.06), (0, 0, 0)),
    ((-0.04, 0.03, 0.03), (0, 0, -45)),
    ((-0.04, -0.03, 0.03), (0, 0, 45)),
    ((0.1, 0.06, -0.05), (-90, 90, 0)),
    ((0.0, 0.06, 0.05), (-90, 0, 0)),
    ((0.0, -0.06, 0.03), (0, 0, 90)),
    ((0.02, -0.04, 0.03), (0, 0, 135)),
]


def initial_seeds(bbox: BoundingBox, model: HandModel) -> list:
    """Seven wrist poses around the oriented-box center, relaxed joints."""
    seeds = []
    for pos, euler_deg in SEED_TABLE:
        local_rot = euler_zyx_to_matrix(np.deg2rad(euler_deg))
        world_pos = bbox.center + bbox.rotation @ np.asarray(pos)
        world_rot = bbox.rotation @ local_rot
        q = np.zeros(model.q_dim)
        q[:3] = world_pos
        q[3:6] = matrix_to_euler_zyx(world_rot)
        q[6:] = model.reference_joints
        seeds.append(HandPose(model, q))
    return seeds


# -- config parsing --------------------------------------------------------

def _model_from_dict(cfg: dict) -> HandModel:
    try:
        fingers = []
        for fcfg in cfg["fingers"]:
            joints = []
            for jcfg in fcfg["joints"]:
                axis = np.asarray(jcfg["axis"], dtype=float)
                nrm = np.linalg.norm(axis)
                if nrm == 0:
                    raise ConfigError(
                        f"finger {fcfg['name']}: joint axis is zero")
                joints.append(Joint(
                    offset_rot=euler_zyx_to_matrix(
                        np.asarray(jcfg.get("rpy", [0, 0, 0]), dtype=float)),
                    offset_pos=np.asarray(jcfg["xyz"], dtype=float),
                    axis=axis / nrm,
                    limits=tuple(jcfg.get("limits", (-np.pi, np.pi))),
                ))
                if joints[-1].limits[0] >= joints[-1].limits[1]:
                    raise ConfigError(
                        f"finger {fcfg['name']}: joint limits inverted")
            fingers.append(Finger(
                name=fcfg["name"], joints=tuple(joints),
                tip_offset=np.asarray(fcfg["tip"], dtype=float)))
        finger_names = {f.name: f for f in fingers}
        spheres = []
        for scfg in cfg.get("spheres", []):
            fname = scfg.get("finger", "palm")
            jidx = int(scfg.get("joint", -1))
            if fname != "palm":
                if fname not in finger_names:
                    raise ConfigError(
                        f"sphere references missing finger {fname!r}")
                if not 0 <= jidx < len(finger_names[fname].joints):
                    raise ConfigError(
                        f"sphere on finger {fname!r} references missing "
                        f"joint {jidx}")
            if scfg["radius"] <= 0:
                raise ConfigError("sphere radius must be positive")
            spheres.append(Sphere(fname, jidx,
                                  np.asarray(scfg["xyz"], dtype=float),
                                  float(scfg["radius"])))
        return HandModel(
            name=cfg.get("name", "hand"),
            fingers=fingers,
            spheres=spheres,
            reference_pose=cfg.get("reference_pose",
                                   [0.0] * sum(len(f.joints) for f in fingers)),
            self_collision_pairs=cfg.get("self_collision_pairs", []),
            fixed_wrist=bool(cfg.get("fixed_wrist", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"hand config missing key {exc}") from exc


def _four_finger_config() -> dict:
    """Four-finger 16-joint hand, palm facing -z, thumb opposing.

    Three fingers sit on the +x side of the palm, the thumb on -x; positive
    flexion curls the front fingers toward -x and the thumb toward +x, so
    the hand closes around objects below the palm.
    """
    def finger(name, bx, by, flex_axis):
        seg = [0.05, 0.04, 0.032]
        joints = [
            # abduction about the palm normal
            {"xyz": [bx, by, -0.012], "axis": [0, 0, 1],
             "limits": [-0.47, 0.47]},
            {"xyz": [0, 0, 0], "axis": flex_axis, "limits": [-0.25, 1.7]},
            {"xyz": [0, 0, -seg[0]], "axis": flex_axis, "limits": [-0.25, 1.8]},
            {"xyz": [0, 0, -seg[1]], "axis": flex_axis, "limits": [-0.25, 1.8]},
        ]
        return {"name": name, "joints": joints, "tip": [0, 0, -seg[2]]}

    fingers = [
        finger("index", 0.038, 0.05, [0, 1, 0]),
        finger("middle", 0.038, 0.0, [0, 1, 0]),
        finger("ring", 0.038, -0.05, [0, 1, 0]),
        finger("thumb", -0.045, 0.0, [0, -1, 0]),
    ]
    spheres = []
    for f in fingers:
        for jidx, off in ((1, [0, 0, -0.025]), (2, [0, 0, -0.02]),
                          (3, [0, 0, -0.016])):
            spheres.append({"finger": f["name"], "joint": jidx,
                            "xyz": off, "radius": 0.01})
    for px, py in ((0.03, 0.04), (0.03, -0.04), (-0.03, 0.04), (-0.03, -0.04)):
        spheres.append({"finger": "palm", "xyz": [px, py, 0.0],
                        "radius": 0.02})
    reference = []
    for f in fingers:
        reference += [0.0, 0.35, 0.35, 0.3]
    return {
        "name": "four_finger",
        "fingers": fingers,
        "spheres": spheres,
        "reference_pose": reference,
        # proximal spheres across fingers plus adjacent medial spheres
        "self_collision_pairs": [[0, 3], [0, 6], [0, 9], [3, 6], [3, 9],
                                 [6, 9], [1, 4], [4, 7]],
    }


def _planar_config() -> dict:
    """Three two-link planar fingers in the x-y plane, wrist fixed."""
    base_r = 1.5
    fingers = []
    for i, ang in enumerate(np.deg2rad([90.0, 210.0, 330.0])):
        bx, by = float(base_r * np.cos(ang)), float(base_r * np.sin(ang))
        fingers.append({
            "name": f"finger{i}",
            "joints": [
                {"xyz": [bx, by, 0.0], "rpy": [float(ang + np.pi), 0, 0],
                 "axis": [0, 0, 1], "limits": [-2.8, 2.8]},
                {"xyz": [0.9, 0.0, 0.0], "axis": [0, 0, 1],
                 "limits": [-2.8, 2.8]},
            ],
            "tip": [0.9, 0.0, 0.0],
        })
    return {
        "name": "planar_three_finger",
        "fingers": fingers,
        "spheres": [],
        "reference_pose": [0.0, 0.5] * 3,
        "self_collision_pairs": [],
        "fixed_wrist": True,
    }


BUILTIN_CONFIGS = {
    "four_finger": _four_finger_config,
    "planar": _planar_config,
}


def load_hand(source: str) -> HandModel:
    """Load a hand from a built-in name or a YAML description file."""
    if source in BUILTIN_CONFIGS:
        return _model_from_dict(BUILTIN_CONFIGS[source]())
    with open(source) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{source}: hand config must be a mapping")
    return _model_from_dict(cfg)


def save_hand_config(name: str, path: str):
    """Write a built-in config to a YAML file for customization."""
    cfg = copy.deepcopy(BUILTIN_CONFIGS[name]())
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=False)
