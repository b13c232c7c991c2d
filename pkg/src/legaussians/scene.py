"""Gaussian cloud data model, cameras and parameter activations."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

SEMANTIC_DIM = 8
# sigmoid(-10) ~ 4.5e-5: closest representable start to "zero uncertainty"
UNCERTAINTY_INIT_RAW = -10.0


def sigmoid(x):
    x = np.asarray(x)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def inverse_sigmoid(y):
    y = np.asarray(y)
    return np.log(y / (1.0 - y))


@dataclass
class GaussianCloud:
    """Structure-of-arrays storage of raw (pre-activation) splat parameters.

    ``labels`` carries the ground-truth object id of synthetic splats and is
    ``-1`` for splats with no known label. It never enters rendering.
    """

    positions: np.ndarray        # (n, 3)
    rotations: np.ndarray        # (n, 4) raw quaternion (w, x, y, z)
    log_scales: np.ndarray       # (n, 3)
    opacity_raw: np.ndarray      # (n,)
    colors: np.ndarray           # (n, 3) RGB in [0, 1]
    semantics: np.ndarray        # (n, d_s)
    uncertainty_raw: np.ndarray  # (n,)
    labels: np.ndarray = field(default=None)  # (n,) int32

    PARAMS = ("positions", "rotations", "log_scales", "opacity_raw",
              "colors", "semantics", "uncertainty_raw")

    def __post_init__(self):
        n = len(self.positions)
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int32)
        for name in self.PARAMS + ("labels",):
            if len(getattr(self, name)) != n:
                raise ValueError(f"GaussianCloud.{name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self):
        return len(self.positions)

    @property
    def semantic_dim(self) -> int:
        return self.semantics.shape[1]

    @property
    def dtype(self):
        return self.positions.dtype

    @classmethod
    def empty(cls, semantic_dim: int = SEMANTIC_DIM, dtype=np.float32) -> "GaussianCloud":
        z = lambda *s: np.zeros(s, dtype=dtype)
        return cls(z(0, 3), z(0, 4), z(0, 3), z(0), z(0, 3), z(0, semantic_dim), z(0),
                   np.zeros(0, dtype=np.int32))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAMS}

    def astype(self, dtype) -> "GaussianCloud":
        kw = {name: np.ascontiguousarray(getattr(self, name), dtype=dtype) for name in self.PARAMS}
        return GaussianCloud(**kw, labels=self.labels.copy())

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(**{f.name: np.ascontiguousarray(getattr(self, f.name)[index])
                                for f in fields(self)})

    @staticmethod
    def concat(clouds: list["GaussianCloud"]) -> "GaussianCloud":
        return GaussianCloud(**{f.name: np.concatenate([getattr(c, f.name) for c in clouds])
                                for f in fields(GaussianCloud)})

    def check_finite(self):
        for name in self.PARAMS:
            arr = getattr(self, name)
            bad = ~np.isfinite(arr).all(axis=tuple(range(1, arr.ndim)))
            if bad.any():
                raise ValueError(f"non-finite {name} on Gaussian id {int(np.flatnonzero(bad)[0])}")


@dataclass
class RenderGaussians:
    """Activated parameters consumed by the rasterizer."""

    positions: np.ndarray    # (n, 3)
    covariances: np.ndarray  # (n, 3, 3)
    opacities: np.ndarray    # (n,)
    colors: np.ndarray       # (n, 3)
    semantics: np.ndarray    # (n, d_s)
    uncertainty: np.ndarray  # (n,)
    # cached for the backward pass
    rotation_matrices: np.ndarray = None
    scales: np.ndarray = None
    unit_quaternions: np.ndarray = None

    def __len__(self):
        return len(self.positions)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions ``(w, x, y, z)``, shape (n, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _matrix_grad_to_quaternion(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = lambda i, j: G[:, i, j]
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
              + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
              - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
              + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
    return np.stack([dw, dx, dy, dz], axis=1)


def materialize(cloud: GaussianCloud) -> RenderGaussians:
    """Activate raw parameters.

    covariance = R diag(exp(log_scale))^2 R^T with R from the normalized
    quaternion; opacity and uncertainty go through a sigmoid.
    """
    cloud.check_finite()
    norm = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError(f"zero quaternion on Gaussian id {int(np.flatnonzero(norm[:, 0] == 0)[0])}")
    q = cloud.rotations / norm
    R = quaternion_to_matrix(q)
    s = np.exp(cloud.log_scales)
    M = R * s[:, None, :]
    cov = M @ M.transpose(0, 2, 1)
    return RenderGaussians(
        positions=cloud.positions,
        covariances=cov,
        opacities=sigmoid(cloud.opacity_raw).astype(cloud.dtype),
        colors=cloud.colors,
        semantics=cloud.semantics,
        uncertainty=sigmoid(cloud.uncertainty_raw).astype(cloud.dtype),
        rotation_matrices=R,
        scales=s,
        unit_quaternions=q,
    )


def materialize_backward(cloud: GaussianCloud, rg: RenderGaussians, d_cov, d_opacity, d_uncertainty):
    """Chain gradients on activated quantities back to raw parameters.

    Returns ``(d_rotations, d_log_scales, d_opacity_raw, d_uncertainty_raw)``.
    """
    G = d_cov + d_cov.transpose(0, 2, 1)
    M = rg.rotation_matrices * rg.scales[:, None, :]
    dM = G @ M
    dR = dM * rg.scales[:, None, :]
    d_scales = np.einsum("nij,nij->nj", dM, rg.rotation_matrices)
    d_log_scales = d_scales * rg.scales

    q = rg.unit_quaternions
    dq = _matrix_grad_to_quaternion(q, dR)
    norm = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    d_rot = (dq - q * np.sum(q * dq, axis=1, keepdims=True)) / norm

    a = rg.opacities
    u = rg.uncertainty
    return d_rot, d_log_scales, d_opacity * a * (1 - a), d_uncertainty * u * (1 - u)


@dataclass
class Camera:
    """Pinhole camera; ``R``, ``t`` map world points into camera space
    (x right, y down, z forward). Pixel centers sit on integer coordinates."""

    R: np.ndarray
    t: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("camera focal lengths must be positive")
        if not self.near < self.far:
            raise ValueError("camera near plane must be in front of far plane")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist(), "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "width": self.width, "height": self.height,
                "near": self.near, "far": self.far}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)

    def scaled(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return replace(self, fx=self.fx * sx, fy=self.fy * sy,
                       cx=(self.cx + 0.5) * sx - 0.5, cy=(self.cy + 0.5) * sy - 0.5,
                       width=width, height=height)


def look_at(eye, target, up=(0.0, 0.0, 1.0), *, width: int, height: int,
            fx: float, fy: float | None = None, near: float = 0.01, far: float = 100.0) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Camera(R=R, t=-R @ eye, fx=fx, fy=fx if fy is None else fy,
                  cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  width=width, height=height, near=near, far=far)
