"""Synthetic monocular video generator with analytic ground truth.

Scenes are built from ray-traceable primitives (plane, sphere, box interior)
with procedural textures and Lambertian shading, rendered along smooth
camera trajectories. Every frame comes with exact per-pixel z-depth and an
exact pose, which makes the generator the verification oracle for warping,
rendering and optimization claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
import torch

from . import io as afio
from .geometry import Intrinsics, Pose, save_cameras_json, load_cameras_json

BACKGROUND_COLOR = (0.04, 0.045, 0.06)
LIGHT_DIR = (-0.45, -0.55, -0.704)  # unit direction toward the light
AMBIENT = 0.35

CHECKER_A = (0.87, 0.34, 0.22)
CHECKER_B = (0.16, 0.42, 0.83)
FLAT_ALBEDO = (0.52, 0.55, 0.6)


@dataclass(frozen=True)
class NoiseSpec:
    """Controlled prior corruption: rotation degrees, translation percent of
    the mean adjacent-camera baseline, log-normal depth noise, global scale."""

    pose_rot_deg: float = 0.0
    pose_trans_pct: float = 0.0
    depth_noise_sigma: float = 0.0
    depth_scale: float = 1.0


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "plane"              # plane | sphere | box | plane_sphere
    texture: str = "checker"         # checker | noise | textureless
    texture_freq: float = 2.0
    trajectory: str = "arc"          # arc | semicircle | dolly
    n_frames: int = 12
    width: int = 64
    height: int = 64
    seed: int = 0
    supersample: int = 2
    noise: NoiseSpec = dc_field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if self.width % 16 or self.height % 16:
            raise ValueError("image dims must be divisible by 16")
        if self.kind not in ("plane", "sphere", "box", "plane_sphere"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.texture not in ("checker", "noise", "textureless"):
            raise ValueError(f"unknown texture {self.texture!r}")
        if self.trajectory not in ("arc", "semicircle", "dolly"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")


@dataclass
class SceneData:
    """Generated dataset: images, exact depths/poses, shared intrinsics."""

    images: list          # (H, W, 3) float32 tensors in [0, 1]
    depths: list          # (H, W) float64 z-depth tensors
    valid: list           # (H, W) bool, False where the ray missed everything
    poses: list           # cam-to-world Pose, float64
    k: Intrinsics
    spec: SceneSpec

    def __len__(self):
        return len(self.images)

    def save(self, root) -> None:
        root = Path(root)
        (root / "rgb").mkdir(parents=True, exist_ok=True)
        (root / "depth_gt").mkdir(parents=True, exist_ok=True)
        save_cameras_json(root / "intrinsics_poses.json", self.k, self.poses)
        for i, (img, dep, ok) in enumerate(zip(self.images, self.depths, self.valid)):
            afio.write_png(root / "rgb" / f"{i:04d}.png", img.numpy())
            d = dep.clone()
            d[~ok] = 0.0
            afio.write_pfm(root / "depth_gt" / f"{i:04d}.pfm", d.numpy())

    @staticmethod
    def load(root) -> "SceneData":
        root = Path(root)
        k, poses = load_cameras_json(root / "intrinsics_poses.json")
        images, depths, valid = [], [], []
        for i in range(len(poses)):
            images.append(torch.from_numpy(afio.read_png(root / "rgb" / f"{i:04d}.png")))
            d = torch.from_numpy(afio.read_pfm(root / "depth_gt" / f"{i:04d}.pfm")).double()
            valid.append(d > 0)
            depths.append(d)
        spec = SceneSpec(n_frames=len(poses), width=k.width, height=k.height)
        return SceneData(images, depths, valid, poses, k, spec)


def _hash01(ix, iy, iz, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1) using splitmix-style mixing."""
    u64 = np.uint64
    x = (ix.astype(np.uint64) * u64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * u64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * u64(0x165667B19E3779F9)
         ^ u64(seed & 0xFFFFFFFF) * u64(0x27D4EB2F165667C5))
    x = (x ^ (x >> u64(30))) * u64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> u64(27))) * u64(0x94D049BB133111EB)
    x ^= x >> u64(31)
    return (x >> u64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(p: np.ndarray, seed: int) -> np.ndarray:
    """Trilinearly interpolated lattice noise over (..., 3) points."""
    p0 = np.floor(p)
    f = p - p0
    f = f * f * (3.0 - 2.0 * f)  # smoothstep
    out = np.zeros(p.shape[:-1])
    i0 = p0.astype(np.int64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                h = _hash01(i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz, seed)
                wx = f[..., 0] if dx else 1 - f[..., 0]
                wy = f[..., 1] if dy else 1 - f[..., 1]
                wz = f[..., 2] if dz else 1 - f[..., 2]
                out += h * wx * wy * wz
    return out


def _albedo(points: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """Procedural albedo at (..., 3) surface points."""
    if spec.texture == "textureless":
        return np.broadcast_to(np.array(FLAT_ALBEDO), points.shape).copy()
    if spec.texture == "checker":
        cells = np.floor(points * spec.texture_freq).sum(axis=-1).astype(np.int64)
        a = np.array(CHECKER_A)
        b = np.array(CHECKER_B)
        sel = (cells % 2 == 0)[..., None]
        return np.where(sel, a, b)
    chans = [_value_noise(points * spec.texture_freq, spec.seed * 3 + c) for c in range(3)]
    return 0.15 + 0.75 * np.stack(chans, axis=-1)


class _Geometry:
    """Analytic scene surfaces for a given spec kind."""

    def __init__(self, kind: str):
        self.kind = kind
        self.plane_z = 3.0 if kind == "plane" else 4.0
        self.sphere_c = np.array([0.0, 0.15, 2.6])
        self.sphere_r = 0.8
        self.box_lo = np.array([-2.2, -1.8, -1.5])
        self.box_hi = np.array([2.2, 1.8, 5.0])

    def contains_camera(self, pos: np.ndarray) -> bool:
        if self.kind in ("sphere", "plane_sphere"):
            if np.linalg.norm(pos - self.sphere_c) < self.sphere_r + 0.2:
                return True
        if self.kind in ("plane", "plane_sphere"):
            if pos[2] > self.plane_z - 0.2:
                return True
        if self.kind == "box":
            inside = np.all(pos > self.box_lo + 0.15) and np.all(pos < self.box_hi - 0.15)
            if not inside:
                return True  # a room camera must stay inside the room
        return False

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Nearest hit of (..., 3) rays: returns (t, normal, hit_mask)."""
        big = 1e12
        t_best = np.full(dirs.shape[:-1], big)
        n_best = np.zeros_like(dirs)

        def consider(t, n, mask):
            nonlocal t_best, n_best
            better = mask & (t > 1e-9) & (t < t_best)
            t_best = np.where(better, t, t_best)
            n_best = np.where(better[..., None], n, n_best)

        if self.kind in ("plane", "plane_sphere"):
            dz = dirs[..., 2]
            safe = np.where(np.abs(dz) > 1e-12, dz, 1.0)
            t = (self.plane_z - origins[..., 2]) / safe
            n = np.broadcast_to(np.array([0.0, 0.0, -1.0]), dirs.shape)
            consider(t, n, np.abs(dz) > 1e-12)

        if self.kind in ("sphere", "plane_sphere"):
            oc = origins - self.sphere_c
            b = (oc * dirs).sum(-1)
            c = (oc * oc).sum(-1) - self.sphere_r ** 2
            disc = b * b - c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t = np.where(-b - sq > 1e-9, -b - sq, -b + sq)
            pts = origins + t[..., None] * dirs
            n = (pts - self.sphere_c) / self.sphere_r
            consider(t, n, ok)

        if self.kind == "box":
            for axis in range(3):
                for bound, sign in ((self.box_lo[axis], 1.0), (self.box_hi[axis], -1.0)):
                    d = dirs[..., axis]
                    safe = np.where(np.abs(d) > 1e-12, d, 1.0)
                    t = (bound - origins[..., axis]) / safe
                    pts = origins + t[..., None] * dirs
                    inside = np.ones(t.shape, dtype=bool)
                    for other in range(3):
                        if other == axis:
                            continue
                        inside &= (pts[..., other] >= self.box_lo[other] - 1e-9)
                        inside &= (pts[..., other] <= self.box_hi[other] + 1e-9)
                    n = np.zeros(dirs.shape)
                    n[..., axis] = sign
                    consider(t, n, inside & (np.abs(d) > 1e-12))

        hit = t_best < big
        return np.where(hit, t_best, 0.0), n_best, hit


def _look_at(pos: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotation whose +z looks at target, +y points world-down."""
    z = target - pos
    z = z / np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("degenerate look-at: view direction parallel to down")
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


def _trajectory(spec: SceneSpec, geo: _Geometry):
    n = spec.n_frames
    if spec.kind == "box":
        target = np.array([0.0, 0.0, geo.box_hi[2]])
        amp = 0.55
    elif spec.kind == "sphere":
        target = geo.sphere_c.copy()
        amp = 0.45
    else:
        target = np.array([0.0, 0.0, geo.plane_z])
        amp = 0.4

    poses = []
    for i in range(n):
        s = i / max(n - 1, 1)
        if spec.trajectory == "arc":
            phi = (s - 0.5) * math.pi * 0.5
            pos = np.array([amp * math.sin(phi),
                            0.3 * amp * math.sin(2 * phi),
                            0.15 * amp * (1 - math.cos(phi))])
        elif spec.trajectory == "semicircle":
            radius = float(np.linalg.norm(target)) * 0.95
            theta = math.pi * (0.3 + 0.4 * s)
            center = target.copy()
            pos = center + np.array([radius * math.cos(theta),
                                     -0.1 * radius,
                                     -radius * math.sin(theta)])
        else:  # dolly
            pos = np.array([0.12 * amp * math.sin(3 * s), 0.0, -amp + 1.6 * amp * s])
        if geo.contains_camera(pos):
            raise ValueError(f"degenerate trajectory: camera {i} intersects the scene")
        rot = _look_at(pos, target)
        poses.append(Pose(torch.from_numpy(rot).double(), torch.from_numpy(pos).double()))
    return poses


def _default_intrinsics(spec: SceneSpec) -> Intrinsics:
    fov = math.radians(55.0)
    fx = 0.5 * spec.width / math.tan(fov / 2)
    return Intrinsics(fx=fx, fy=fx, cx=(spec.width - 1) / 2, cy=(spec.height - 1) / 2,
                      width=spec.width, height=spec.height)


def render_frame(spec: SceneSpec, geo: _Geometry, k: Intrinsics, pose: Pose):
    """Ray-trace one frame; returns (image f32, zdepth f64, valid) tensors."""
    ss = max(spec.supersample, 1)
    h, w = k.height * ss, k.width * ss
    ys = (np.arange(h) + 0.5) / ss - 0.5
    xs = (np.arange(w) + 0.5) / ss - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    dirs_cam = np.stack([(gx - k.cx) / k.fx, (gy - k.cy) / k.fy, np.ones_like(gx)], axis=-1)
    norms = np.linalg.norm(dirs_cam, axis=-1, keepdims=True)
    unit_cam = dirs_cam / norms

    rot = pose.rotation.numpy()
    origin = pose.translation.numpy()
    dirs_world = unit_cam @ rot.T
    origins = np.broadcast_to(origin, dirs_world.shape)

    t, normals, hit = geo.intersect(origins, dirs_world)
    pts = origins + t[..., None] * dirs_world
    albedo = _albedo(pts, spec)
    light = np.array(LIGHT_DIR) / np.linalg.norm(LIGHT_DIR)
    lambert = np.clip((normals * light).sum(-1), 0.0, None)
    shade = AMBIENT + (1 - AMBIENT) * lambert
    color = albedo * shade[..., None]
    color = np.where(hit[..., None], color, np.array(BACKGROUND_COLOR))

    zdepth = t * unit_cam[..., 2]          # distance along ray -> camera z

    # box-average the supersampled buffers back to the target resolution;
    # depth keeps the center subsample so it stays exact, not blurred
    color = color.reshape(k.height, ss, k.width, ss, 3).mean(axis=(1, 3))
    center = ss // 2
    zdepth = zdepth.reshape(k.height, ss, k.width, ss)[:, center, :, center]
    hit_c = hit.reshape(k.height, ss, k.width, ss)[:, center, :, center]

    return (torch.from_numpy(np.clip(color, 0.0, 1.0)).float(),
            torch.from_numpy(zdepth).double(),
            torch.from_numpy(hit_c))


def generate(spec: SceneSpec) -> SceneData:
    """Render the full dataset for a spec; deterministic per seed."""
    geo = _Geometry(spec.kind)
    k = _default_intrinsics(spec)
    poses = _trajectory(spec, geo)
    images, depths, valid = [], [], []
    for pose in poses:
        img, dep, ok = render_frame(spec, geo, k, pose)
        images.append(img)
        depths.append(dep)
        valid.append(ok)
    return SceneData(images, depths, valid, poses, k, spec)


def _random_rotation(angle_rad: float, rng: np.random.Generator) -> torch.Tensor:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    kx, ky, kz = axis
    kmat = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    r = np.eye(3) + math.sin(angle_rad) * kmat + (1 - math.cos(angle_rad)) * (kmat @ kmat)
    return torch.from_numpy(r).double()


def perturb_priors(dataset: SceneData, noise: NoiseSpec, seed: int = 0):
    """Build imprecise scene priors from exact ground truth.

    Poses are re-anchored to frame 0 and perturbed in the camera frame by
    half-normal rotation/translation noise with the requested means; depths
    are multiplied by smooth log-normal noise and a global scale. The
    uncertainty maps are computed honestly from the corrupted data.
    """
    from .losses import depth_uncertainty
    from .spm import ScenePriors

    rng = np.random.default_rng(seed)
    anchor = dataset.poses[0].inverse()
    baseline = np.mean([
        float((dataset.poses[i + 1].translation - dataset.poses[i].translation).norm())
        for i in range(len(dataset) - 1)
    ]) if len(dataset) > 1 else 1.0

    half_normal = math.sqrt(math.pi / 2.0)  # scales |N(0,1)| to mean 1
    poses = []
    for i in range(len(dataset)):
        base = Pose(anchor.rotation @ dataset.poses[i].rotation,
                    anchor.rotation @ dataset.poses[i].translation + anchor.translation,
                    validate=False)
        if i == 0 or (noise.pose_rot_deg == 0 and noise.pose_trans_pct == 0):
            poses.append(base)
            continue
        angle = math.radians(noise.pose_rot_deg) * abs(rng.normal()) * half_normal
        rot = base.rotation @ _random_rotation(angle, rng)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        mag = noise.pose_trans_pct / 100.0 * baseline * abs(rng.normal()) * half_normal
        trans = base.translation + torch.from_numpy(mag * direction).double()
        poses.append(Pose(rot, trans, validate=False))

    depths = []
    scale = noise.depth_scale
    for i, d in enumerate(dataset.depths):
        if noise.depth_noise_sigma > 0:
            h, w = d.shape
            coarse = rng.normal(size=(max(h // 8, 2), max(w // 8, 2)))
            grid = torch.from_numpy(coarse)[None, None]
            up = torch.nn.functional.interpolate(grid, size=(h, w), mode="bilinear",
                                                 align_corners=True)[0, 0]
            d = d * torch.exp(noise.depth_noise_sigma * up)
        depths.append(d * scale)

    uncertainties = [
        depth_uncertainty(i, depths, poses, dataset.k, valid_masks=dataset.valid)
        for i in range(len(depths))
    ]
    return ScenePriors(depths=depths, poses=poses, uncertainties=uncertainties,
                       valid=[v.clone() for v in dataset.valid])


def scaled_copy(spec: SceneSpec, **kwargs) -> SceneSpec:
    """Spec with selected fields replaced (convenience for tests/CLI)."""
    return replace(spec, **kwargs)
