"""Camera intrinsics, rigid poses, projection and depth-based warping.

Conventions used across the package:
  * right-handed coordinates, camera looks down +z,
  * pixel (0, 0) sits at the top-left corner, x grows right, y grows down,
  * pixel centers lie at integer coordinates,
  * a ``Pose`` maps camera-frame points to world-frame points (cam-to-world),
  * relative transforms map target-camera coordinates to source-camera
    coordinates, so warping a target pixel into a source view is literally
    project(K, P_rel * backproject(K, x, depth)),
  * depth maps store z-depth in the camera frame (not distance along the ray).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

ORTHONORMAL_TOL = 1e-6
DEGENERATE_6D_TOL = 1e-8


class DegenerateRotationError(ValueError):
    """Raised when a 6D rotation input cannot be orthonormalized."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self, dtype=torch.float64) -> torch.Tensor:
        k = torch.zeros(3, 3, dtype=dtype)
        k[0, 0], k[1, 1] = self.fx, self.fy
        k[0, 2], k[1, 2] = self.cx, self.cy
        k[2, 2] = 1.0
        return k

    def pixel_grid(self, dtype=torch.float64) -> torch.Tensor:
        """(H, W, 2) grid of pixel-center coordinates (x, y)."""
        ys = torch.arange(self.height, dtype=dtype)
        xs = torch.arange(self.width, dtype=dtype)
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        return torch.stack([gx, gy], dim=-1)

    def cam_dirs(self, dtype=torch.float64) -> torch.Tensor:
        """(H, W, 3) per-pixel camera-frame ray directions with z = 1."""
        grid = self.pixel_grid(dtype)
        x = (grid[..., 0] - self.cx) / self.fx
        y = (grid[..., 1] - self.cy) / self.fy
        return torch.stack([x, y, torch.ones_like(x)], dim=-1)


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform: rotation (3,3) and translation (3,) tensors."""

    rotation: torch.Tensor
    translation: torch.Tensor
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        r, t = self.rotation, self.translation
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {tuple(r.shape)}, {tuple(t.shape)}")
        if self.validate:
            with torch.no_grad():
                eye = torch.eye(3, dtype=r.dtype)
                if (r.T @ r - eye).abs().max() > 10 * ORTHONORMAL_TOL:
                    raise ValueError("rotation is not orthonormal")
                if abs(float(torch.linalg.det(r)) - 1.0) > 10 * ORTHONORMAL_TOL:
                    raise ValueError("rotation determinant is not +1")

    @staticmethod
    def identity(dtype=torch.float64) -> "Pose":
        return Pose(torch.eye(3, dtype=dtype), torch.zeros(3, dtype=dtype))

    @staticmethod
    def from_matrix(m: torch.Tensor) -> "Pose":
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> torch.Tensor:
        """4x4 homogeneous matrix."""
        m = torch.eye(4, dtype=self.rotation.dtype)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation, validate=False)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        """Transform (..., 3) points."""
        return points @ self.rotation.T + self.translation

    def to(self, dtype) -> "Pose":
        return Pose(self.rotation.to(dtype), self.translation.to(dtype), validate=False)


@dataclass(frozen=True)
class Ray:
    """origin + t * direction with unit direction and depth bounds."""

    origin: torch.Tensor
    direction: torch.Tensor
    t_near: float
    t_far: float

    def __post_init__(self):
        if abs(float(self.direction.norm()) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0 < self.t_near < self.t_far):
            raise ValueError(f"bad depth bounds ({self.t_near}, {self.t_far})")


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Composition a*b: apply b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation,
                validate=False)


def chain_relative_poses(relatives: list) -> list:
    """Accumulate frame-to-frame transforms into absolute ones.

    relatives[k] maps frame-k coordinates to frame-(k+1) coordinates; the
    output is anchored at identity for frame 0 and has length len+1, with
    out[i] = relatives[i-1] * out[i-1].
    """
    dtype = relatives[0].rotation.dtype if relatives else torch.float64
    out = [Pose.identity(dtype)]
    for rel in relatives:
        out.append(pose_compose(rel, out[-1]))
    return out


def apply_residual(delta: Pose, base: Pose) -> Pose:
    """Refined pose delta*base: correction applied on top of a prior."""
    return pose_compose(delta, base)


def rotation_from_6d(v: torch.Tensor) -> torch.Tensor:
    """Gram-Schmidt a (..., 6) continuous rotation representation to (..., 3, 3).

    The first/second triple are the raw first two columns; degenerate inputs
    (zero first vector or parallel vectors) raise DegenerateRotationError.
    """
    a1, a2 = v[..., :3], v[..., 3:6]
    n1 = a1.norm(dim=-1, keepdim=True)
    if bool((n1 < DEGENERATE_6D_TOL).any()):
        raise DegenerateRotationError("first 6D vector is (near) zero")
    r1 = a1 / n1
    proj = (r1 * a2).sum(dim=-1, keepdim=True)
    residual = a2 - proj * r1
    n2 = residual.norm(dim=-1, keepdim=True)
    if bool((n2 < DEGENERATE_6D_TOL).any()):
        raise DegenerateRotationError("6D vectors are (near) parallel")
    r2 = residual / n2
    r3 = torch.cross(r1, r2, dim=-1)
    return torch.stack([r1, r2, r3], dim=-1)


def identity_6d(dtype=torch.float64) -> torch.Tensor:
    """The canonical 6D vector that decodes to the identity rotation."""
    return torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=dtype)


def backproject(k: Intrinsics, pixels: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
    """Lift (..., 2) pixel coordinates with (...,) z-depth to camera points."""
    x = (pixels[..., 0] - k.cx) / k.fx
    y = (pixels[..., 1] - k.cy) / k.fy
    return torch.stack([x * depth, y * depth, depth], dim=-1)


def project(k: Intrinsics, points: torch.Tensor):
    """Project (..., 3) camera points; returns (pixels, z, in_front_mask)."""
    z = points[..., 2]
    in_front = z > 0
    z_safe = torch.where(in_front, z, torch.ones_like(z))
    u = k.fx * points[..., 0] / z_safe + k.cx
    v = k.fy * points[..., 1] / z_safe + k.cy
    return torch.stack([u, v], dim=-1), z, in_front


def warp_pixel(k: Intrinsics, pose_ts: Pose, depth_t: torch.Tensor, x_t: torch.Tensor):
    """Warp target pixels into a source view through their depth.

    Args:
        pose_ts: target-camera -> source-camera transform.
        depth_t: (...,) positive z-depth at the target pixels.
        x_t: (..., 2) pixel coordinates in the target image.

    Returns:
        (x_s, source_depth, valid): continuous source pixel coordinates,
        z-depth of the transformed point in the source camera, and a mask
        that is False where the point lands behind the source camera.
    """
    cam_pts = backproject(k, x_t, depth_t)
    src_pts = pose_ts.apply(cam_pts)
    x_s, z_s, in_front = project(k, src_pts)
    return x_s, z_s, in_front


def bilinear_sample(grid: torch.Tensor, coords: torch.Tensor):
    """Bilinearly sample an (H, W) or (H, W, C) grid at (..., 2) (x, y) coords.

    Coordinates outside [0, W-1] x [0, H-1] get validity False (values are
    clamped-sampled there and should be masked by the caller).
    """
    h, w = grid.shape[0], grid.shape[1]
    x, y = coords[..., 0], coords[..., 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    x = x.clamp(0, w - 1)
    y = y.clamp(0, h - 1)
    x0 = x.floor().clamp(0, w - 2) if w > 1 else x.floor().clamp(0, 0)
    y0 = y.floor().clamp(0, h - 2) if h > 1 else y.floor().clamp(0, 0)
    fx = x - x0
    fy = y - y0
    x0l = x0.long()
    y0l = y0.long()
    x1l = (x0l + 1).clamp(0, w - 1)
    y1l = (y0l + 1).clamp(0, h - 1)

    flat = grid.reshape(h * w, -1)
    def take(yy, xx):
        return flat[yy * w + xx]

    fx = fx[..., None]
    fy = fy[..., None]
    val = (take(y0l, x0l) * (1 - fx) * (1 - fy)
           + take(y0l, x1l) * fx * (1 - fy)
           + take(y1l, x0l) * (1 - fx) * fy
           + take(y1l, x1l) * fx * fy)
    if grid.ndim == 2:
        val = val[..., 0]
    return val, valid


def save_cameras_json(path, k: Intrinsics, poses: list):
    """Write intrinsics plus per-frame poses to the scene JSON document."""
    doc = {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
        "frames": [
            {
                "rotation": [float(x) for x in p.rotation.reshape(-1)],
                "translation": [float(x) for x in p.translation],
            }
            for p in poses
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_cameras_json(path):
    """Inverse of save_cameras_json; returns (Intrinsics, [Pose])."""
    with open(path) as f:
        doc = json.load(f)
    k = Intrinsics(doc["fx"], doc["fy"], doc["cx"], doc["cy"], doc["width"], doc["height"])
    poses = [
        Pose(torch.tensor(fr["rotation"], dtype=torch.float64).reshape(3, 3),
             torch.tensor(fr["translation"], dtype=torch.float64))
        for fr in doc["frames"]
    ]
    return k, poses
