"""Gaussian process implicit surface over signed distance.

The surface is the zero level set of a GP posterior fitted to three point
classes: observed surface samples (target 0), exterior anchors on a scaled
bounding box (positive target) and interior anchors built as convex
combinations of surface points (negative target). Queries return posterior
mean, variance and the mean gradient; a probability density of lying on the
surface is derived from them.

The kernel is the thin-plate form k(r) = 2 r^3 - 3 R r^2 + R^3 with the
length scale R tied to the scaled bounding-box diagonal. Distances are
clamped at R so the kernel vanishes (rather than growing again) far from
the data; beyond that range the posterior falls back to the prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import IllConditionedError
from .pointcloud import BoundingBox, PointCloud, scaled_aabb

VARIANCE_FLOOR = 1e-6  # meters, floor on d_sigma inside surface_pdf

SERIAL_VERSION = 1


@dataclass(frozen=True)
class GpisConfig:
    """Training-set construction parameters."""

    bbox_scale: float = 1.2
    n_interior: int = 50
    surface_noise: float = 0.005
    exterior_noise: float = 0.2
    interior_noise: float = 0.05
    max_points: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class GpisTrainingSet:
    points: np.ndarray     # (n, 3)
    values: np.ndarray     # (n,) target signed distance
    noise_sigma: np.ndarray  # (n,) per-point observation noise
    classes: np.ndarray    # (n,) str tags: surface | exterior | interior
    bbox: BoundingBox      # scaled AABB used for anchors and kernel scale

    def __post_init__(self):
        n = len(self.points)
        if not (len(self.values) == len(self.noise_sigma) == len(self.classes) == n):
            raise ValueError("training arrays must have equal length")
        if np.any(self.noise_sigma <= 0):
            raise ValueError("noise_sigma must be positive")
        surf = self.classes == "surface"
        if not np.allclose(self.values[surf], 0.0):
            raise ValueError("surface targets must be zero")
        if np.any(self.values[self.classes == "exterior"] <= 0):
            raise ValueError("exterior targets must be positive")
        if np.any(self.values[self.classes == "interior"] >= 0):
            raise ValueError("interior targets must be negative")


def build_training_set(cloud: PointCloud,
                       cfg: GpisConfig = GpisConfig()) -> GpisTrainingSet:
    """Assemble surface, exterior and interior training points.

    Exterior anchors sit on the scaled axis-aligned box: its 8 corners plus
    the 6 face centers (14 total). Interior anchors are softmax-weighted
    convex combinations of the surface points.
    """
    box = scaled_aabb(cloud, cfg.bbox_scale)
    surface = cloud.points
    n_s = len(surface)
    exterior = np.vstack([box.corners(), box.face_centers()])
    ext_value = box.longest_edge / 2.0
    int_value = -box.longest_edge / 4.0

    rng = np.random.default_rng(cfg.seed)
    raw = rng.uniform(0.0, 1.0, size=(cfg.n_interior, n_s))
    w = np.exp(raw - raw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    interior = w @ surface

    points = np.vstack([surface, exterior, interior])
    values = np.concatenate([
        np.zeros(n_s),
        np.full(len(exterior), ext_value),
        np.full(cfg.n_interior, int_value),
    ])
    noise = np.concatenate([
        np.full(n_s, cfg.surface_noise),
        np.full(len(exterior), cfg.exterior_noise),
        np.full(cfg.n_interior, cfg.interior_noise),
    ])
    classes = np.concatenate([
        np.full(n_s, "surface"),
        np.full(len(exterior), "exterior"),
        np.full(cfg.n_interior, "interior"),
    ])
    return GpisTrainingSet(points, values, noise, classes, box)


def _kernel_matrix(a: np.ndarray, b: np.ndarray, scale: float) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    r = np.minimum(np.linalg.norm(diff, axis=-1), scale)
    return 2.0 * r ** 3 - 3.0 * scale * r ** 2 + scale ** 3


class GaussianProcessImplicitSurface:
    """Fitted GPIS; immutable after fit, safe for concurrent queries.

    Follows the fit/predict idiom: construct with a config, call ``fit``
    with a training set (or ``fit_point_cloud`` with a raw cloud), then
    query with ``predict`` / ``gradient`` / ``surface_pdf``.
    """

    def __init__(self, cfg: GpisConfig = GpisConfig()):
        self.cfg = cfg
        self.train_: GpisTrainingSet | None = None
        self.scale_: float | None = None
        self.prior_mean_: float = 0.0
        self.alpha_: np.ndarray | None = None
        self._cho = None
        self._torch_cache = None

    def get_params(self):
        return {"cfg": self.cfg}

    @property
    def is_fitted(self) -> bool:
        return self.alpha_ is not None

    def fit(self, train: GpisTrainingSet) -> "GaussianProcessImplicitSurface":
        if len(train.points) > self.cfg.max_points:
            raise ValueError(
                f"{len(train.points)} training points exceed the cap "
                f"{self.cfg.max_points}; downsample the cloud first")
        scale = train.bbox.diagonal
        gram = _kernel_matrix(train.points, train.points, scale)
        gram[np.diag_indices_from(gram)] += train.noise_sigma ** 2
        try:
            cho = cho_factor(gram, lower=True)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError(
                "Gram factorization failed; consider a larger noise floor"
            ) from exc
        # constant prior mean at the exterior target keeps far-field queries
        # positive instead of decaying to zero
        prior_mean = float(train.values[train.classes == "exterior"].mean()) \
            if np.any(train.classes == "exterior") else 0.0
        self.train_ = train
        self.scale_ = scale
        self.prior_mean_ = prior_mean
        self.alpha_ = cho_solve(cho, train.values - prior_mean)
        self._cho = cho
        self._torch_cache = None
        return self

    def fit_point_cloud(self, cloud: PointCloud) -> "GaussianProcessImplicitSurface":
        return self.fit(build_training_set(cloud, self.cfg))

    def _check_fitted(self):
        if not self.is_fitted:
            raise RuntimeError("model is not fitted")

    def predict(self, x: np.ndarray, return_std: bool = False):
        """Posterior mean (and optionally std) of signed distance at x."""
        self._check_fitted()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = _kernel_matrix(x, self.train_.points, self.scale_)
        mean = self.prior_mean_ + k @ self.alpha_
        if not return_std:
            return mean
        v = cho_solve(self._cho, k.T)
        var = self.scale_ ** 3 - np.einsum("ij,ji->i", k, v)
        std = np.sqrt(np.maximum(var, VARIANCE_FLOOR ** 2))
        return mean, std

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient of the posterior mean."""
        self._check_fitted()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x[:, None, :] - self.train_.points[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        # dk/dx = 6 (r - R) (x - xi); zero beyond the clamp radius
        coeff = np.where(r < self.scale_, 6.0 * (r - self.scale_), 0.0)
        return np.einsum("ij,ijk->ik", coeff * self.alpha_[None, :], diff)

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Unit outward normal (normalized mean gradient)."""
        g = self.gradient(x)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        return g / np.where(n > 1e-12, n, 1.0)

    def surface_pdf(self, x: np.ndarray) -> np.ndarray:
        """Gaussian density of the signed distance being zero at x."""
        mean, std = self.predict(x, return_std=True)
        std = np.maximum(std, VARIANCE_FLOOR)
        return np.exp(-0.5 * (mean / std) ** 2) / (np.sqrt(2 * np.pi) * std)

    # -- differentiable queries -------------------------------------------

    def torch_tensors(self):
        """Cached torch copies of the training data for autograd queries."""
        import torch

        if self._torch_cache is None:
            self._check_fitted()
            gram = _kernel_matrix(self.train_.points, self.train_.points,
                                  self.scale_)
            gram[np.diag_indices_from(gram)] += self.train_.noise_sigma ** 2
            chol = np.linalg.cholesky(gram)
            self._torch_cache = {
                "points": torch.tensor(self.train_.points, dtype=torch.float64),
                "alpha": torch.tensor(self.alpha_, dtype=torch.float64),
                "chol": torch.tensor(chol, dtype=torch.float64),
            }
        return self._torch_cache

    def torch_mean_var(self, x):
        """Posterior mean and variance for a (n, 3) torch tensor query."""
        import torch

        cache = self.torch_tensors()
        scale = self.scale_
        diff = x[:, None, :] - cache["points"][None, :, :]
        r = torch.linalg.norm(diff, dim=-1)
        r = torch.clamp(r, max=scale)
        k = 2.0 * r ** 3 - 3.0 * scale * r ** 2 + scale ** 3
        mean = self.prior_mean_ + k @ cache["alpha"]
        sol = torch.cholesky_solve(k.T, cache["chol"])
        var = scale ** 3 - (k * sol.T).sum(dim=-1)
        var = torch.clamp(var, min=VARIANCE_FLOOR ** 2)
        return mean, var

    def torch_surface_pdf(self, x):
        import torch

        mean, var = self.torch_mean_var(x)
        std = torch.sqrt(var)
        return torch.exp(-0.5 * mean ** 2 / var) / (np.sqrt(2 * np.pi) * std)

    def torch_normal(self, x):
        """Differentiable unit outward normal at a (n, 3) query tensor."""
        import torch

        cache = self.torch_tensors()
        diff = x[:, None, :] - cache["points"][None, :, :]
        r = torch.linalg.norm(diff, dim=-1)
        coeff = torch.where(r < self.scale_, 6.0 * (r - self.scale_),
                            torch.zeros_like(r))
        g = torch.einsum("ij,ijk->ik", coeff * cache["alpha"][None, :], diff)
        n = torch.linalg.norm(g, dim=-1, keepdim=True)
        return g / torch.clamp(n, min=1e-12)

    # -- persistence -------------------------------------------------------

    def save(self, path: str):
        self._check_fitted()
        with open(path, "wb") as fh:   # exact path, no implicit .npz suffix
            self._savez(fh)

    def _savez(self, fh):
        np.savez(
            fh,
            version=np.array([SERIAL_VERSION]),
            points=self.train_.points,
            values=self.train_.values,
            noise_sigma=self.train_.noise_sigma,
            classes=self.train_.classes.astype("U16"),
            bbox_center=self.train_.bbox.center,
            bbox_half=self.train_.bbox.half_extents,
            bbox_rot=self.train_.bbox.rotation,
            cfg=np.array([self.cfg.bbox_scale, self.cfg.n_interior,
                          self.cfg.surface_noise, self.cfg.exterior_noise,
                          self.cfg.interior_noise, self.cfg.max_points,
                          self.cfg.seed]),
        )

    @classmethod
    def load(cls, path: str) -> "GaussianProcessImplicitSurface":
        data = np.load(path, allow_pickle=False)
        version = int(data["version"][0])
        if version != SERIAL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        c = data["cfg"]
        cfg = GpisConfig(bbox_scale=float(c[0]), n_interior=int(c[1]),
                         surface_noise=float(c[2]), exterior_noise=float(c[3]),
                         interior_noise=float(c[4]), max_points=int(c[5]),
                         seed=int(c[6]))
        bbox = BoundingBox(data["bbox_center"], data["bbox_half"],
                           data["bbox_rot"])
        train = GpisTrainingSet(data["points"], data["values"],
                                data["noise_sigma"], data["classes"], bbox)
        return cls(cfg).fit(train)
