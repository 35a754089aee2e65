"""Every training loss and the multi-view depth uncertainty machinery.

Images are (H, W, 3) tensors in [0, 1]; depth maps are (H, W) positive
z-depth tensors. All functions are differentiable torch ops unless a value
is explicitly binary (occluding boundaries) or detached (median scales).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .geometry import Intrinsics, Pose

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    """Mixing weights and tolerances shared by SPM and SRM objectives."""

    alpha: float = 0.85          # SSIM/L1 mix in the photometric loss
    smooth_weight: float = 1e-3
    edge_weight: float = 0.1     # occluding-boundary XOR term
    gc_weight: float = 0.5       # geometry-consistency term
    gamma: float = 0.08          # depth regularization in the field loss
    epsilon: float = 0.05        # tolerance band of the depth regularizer
    huber_delta: float = 0.2
    boundary_tau: float = 0.1    # relative jump marking an occluding boundary

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        for name in ("smooth_weight", "edge_weight", "gc_weight", "gamma",
                     "epsilon", "huber_delta", "boundary_tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _window_mean(x: torch.Tensor, window: int) -> torch.Tensor:
    """Uniform-window local mean of (H, W, C), replicate-padded, same size."""
    pad = window // 2
    t = x.permute(2, 0, 1)[None]
    t = F.pad(t, (pad, pad, pad, pad), mode="replicate")
    t = F.avg_pool2d(t, window, stride=1)
    return t[0].permute(1, 2, 0)


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 7) -> torch.Tensor:
    """Per-pixel structural similarity in [-1, 1], averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    mu_a = _window_mean(a, window)
    mu_b = _window_mean(b, window)
    var_a = _window_mean(a * a, window) - mu_a * mu_a
    var_b = _window_mean(b * b, window) - mu_b * mu_b
    cov = _window_mean(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean(dim=-1)


def photometric_loss(target: torch.Tensor, warped: torch.Tensor,
                     valid: torch.Tensor | None = None, alpha: float = 0.85):
    """SSIM + L1 reprojection discrepancy.

    Returns (per-pixel map, scalar mean over valid pixels).
    """
    if target.shape != warped.shape:
        raise ValueError("image shapes differ")
    if valid is None:
        valid = torch.ones(target.shape[:2], dtype=torch.bool)
    if int(valid.sum()) == 0:
        raise ValueError("no valid pixels in photometric loss")
    sim = ssim(target, warped)
    l1 = (target - warped).abs().mean(dim=-1)
    per_pixel = 0.5 * alpha * (1.0 - sim) + (1.0 - alpha) * l1
    return per_pixel, per_pixel[valid].mean()


def smoothness_loss(depth: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Edge-aware first-order smoothness on mean-normalized depth."""
    if depth.shape != image.shape[:2]:
        raise ValueError("depth/image sizes differ")
    d = depth / depth.mean().clamp(min=1e-12)
    dx = (d[:, 1:] - d[:, :-1]).abs()
    dy = (d[1:, :] - d[:-1, :]).abs()
    ix = (image[:, 1:] - image[:, :-1]).abs().mean(dim=-1)
    iy = (image[1:, :] - image[:-1, :]).abs().mean(dim=-1)
    return (dx * torch.exp(-ix)).mean() + (dy * torch.exp(-iy)).mean()


def occluding_boundary_map(depth: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """Binary map of pixels adjacent to a relative depth jump above tau.

    The jump between neighbors p, q is |D_p - D_q| / ((D_p + D_q) / 2); both
    sides of a discontinuity are marked.
    """
    e = torch.zeros_like(depth, dtype=torch.bool)
    rx = (depth[:, 1:] - depth[:, :-1]).abs() / ((depth[:, 1:] + depth[:, :-1]).abs() / 2).clamp(min=1e-12)
    ry = (depth[1:, :] - depth[:-1, :]).abs() / ((depth[1:, :] + depth[:-1, :]).abs() / 2).clamp(min=1e-12)
    jump_x = rx > tau
    jump_y = ry > tau
    e[:, 1:] |= jump_x
    e[:, :-1] |= jump_x
    e[1:, :] |= jump_y
    e[:-1, :] |= jump_y
    return e


def boundary_mismatch(e_a: torch.Tensor, e_b: torch.Tensor) -> torch.Tensor:
    """Fraction of pixels whose boundary labels disagree (XOR popcount / size)."""
    return (e_a ^ e_b).float().sum() / e_a.numel()


def distill_loss(student: torch.Tensor, reference: torch.Tensor,
                 weights: torch.Tensor | None = None,
                 valid: torch.Tensor | None = None,
                 edge_weight: float = 0.1, boundary_tau: float = 0.1) -> torch.Tensor:
    """Structure distillation: 1 - SSIM of median-normalized depths plus a
    weighted occluding-boundary disagreement term.

    Invalid reference pixels are filled from the student so they contribute
    no discrepancy; a fully invalid reference contributes exactly zero.
    """
    if student.shape != reference.shape:
        raise ValueError("depth shapes differ")
    if valid is None:
        valid = torch.ones_like(student, dtype=torch.bool)
    if int(valid.sum()) == 0:
        return torch.zeros((), dtype=student.dtype)
    with torch.no_grad():
        s_med = student[valid].median().clamp(min=1e-12)
        r_med = reference[valid].median().clamp(min=1e-12)
    s = student / s_med
    r = torch.where(valid, reference / r_med, s.detach())

    sim = 1.0 - ssim(s, r)
    if weights is not None:
        w = weights / weights[valid].mean().clamp(min=1e-12)
        ssim_term = (sim * w)[valid].mean()
    else:
        ssim_term = sim[valid].mean()

    with torch.no_grad():
        e_s = occluding_boundary_map(s, boundary_tau)
        e_r = occluding_boundary_map(r, boundary_tau)
        xor_term = boundary_mismatch(e_r, e_s)
    return ssim_term + edge_weight * xor_term


def geometry_consistency_loss(d_source_warped: torch.Tensor, d_target: torch.Tensor,
                              valid: torch.Tensor | None = None) -> torch.Tensor:
    """Mean normalized depth disagreement |a - b| / (a + b) over valid pixels."""
    if valid is None:
        valid = torch.ones_like(d_target, dtype=torch.bool)
    if int(valid.sum()) == 0:
        raise ValueError("no valid pixels in geometry consistency loss")
    a = d_source_warped[valid]
    b = d_target[valid]
    return ((a - b).abs() / (a + b).clamp(min=1e-12)).mean()


def huber(e: torch.Tensor, delta: float) -> torch.Tensor:
    """Quadratic below delta, linear above; C1 at the knee."""
    quad = 0.5 * e * e
    lin = delta * (e - 0.5 * delta)
    return torch.where(e <= delta, quad, lin)


def error_tolerant_depth_loss(rendered: torch.Tensor, prior: torch.Tensor,
                              weights: torch.Tensor | None = None,
                              eps: float = 0.05, huber_delta: float = 0.2,
                              valid: torch.Tensor | None = None) -> torch.Tensor:
    """Huber penalty on the normalized depth ratio outside a tolerance band.

    The per-pixel error is max(|d_hat - d| / (d_hat + d) - eps, 0), so any
    rendered depth inside the band receives exactly zero loss and gradient.
    """
    if valid is None:
        valid = torch.ones_like(rendered, dtype=torch.bool)
    if int(valid.sum()) == 0:
        raise ValueError("no valid pixels in depth regularization")
    ratio = (rendered - prior).abs() / (rendered + prior).clamp(min=1e-12)
    e = F.relu(ratio - eps)
    h = huber(e, huber_delta)
    if weights is not None:
        w = weights / weights[valid].mean().clamp(min=1e-12)
        h = h * w
    return h[valid].mean()


def reconstruction_loss(rendered: torch.Tensor, true: torch.Tensor) -> torch.Tensor:
    """Mean squared color error over a ray batch."""
    if rendered.shape != true.shape:
        raise ValueError("color batch shapes differ")
    if rendered.numel() == 0:
        raise ValueError("empty ray batch")
    return ((rendered - true) ** 2).mean()


def splat_depth(source_depth: torch.Tensor, pose_st: Pose, k: Intrinsics,
                source_valid: torch.Tensor | None = None) -> torch.Tensor:
    """Forward-splat a source depth map into a target view with z-buffering.

    pose_st maps source-camera coordinates to target-camera coordinates.
    Returns an (H, W) map that is +inf where no source pixel lands.
    """
    dtype = source_depth.dtype
    grid = k.pixel_grid(dtype=dtype)
    z = source_depth
    pts = torch.stack([(grid[..., 0] - k.cx) / k.fx * z,
                       (grid[..., 1] - k.cy) / k.fy * z,
                       z], dim=-1)
    tgt = pose_st.to(dtype).apply(pts.reshape(-1, 3))
    zt = tgt[:, 2]
    ok = zt > 0
    if source_valid is not None:
        ok &= source_valid.reshape(-1)
    u = torch.round(k.fx * tgt[:, 0] / zt.clamp(min=1e-12) + k.cx).long()
    v = torch.round(k.fy * tgt[:, 1] / zt.clamp(min=1e-12) + k.cy).long()
    ok &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)

    out = torch.full((k.height * k.width,), float("inf"), dtype=dtype)
    idx = (v[ok] * k.width + u[ok])
    out.scatter_reduce_(0, idx, zt[ok], reduce="amin", include_self=True)
    return out.reshape(k.height, k.width)


def depth_uncertainty(target_idx: int, depths: list, poses: list, k: Intrinsics,
                      valid_masks: list | None = None, n_best: int = 4) -> torch.Tensor:
    """Per-pixel multi-view consistency uncertainty of one frame's depth.

    Each other frame's depth is forward-splatted into the target view; the
    uncertainty is the mean of the n_best smallest absolute differences.
    Pixels never reached by any source get the map's maximal uncertainty.
    """
    d_t = depths[target_idx]
    dtype = d_t.dtype
    target_pose_inv = poses[target_idx].to(dtype).inverse()
    diffs = []
    for s in range(len(depths)):
        if s == target_idx:
            continue
        pose_st = Pose(target_pose_inv.rotation @ poses[s].rotation.to(dtype),
                       target_pose_inv.rotation @ poses[s].translation.to(dtype)
                       + target_pose_inv.translation, validate=False)
        src_valid = valid_masks[s] if valid_masks is not None else None
        warped = splat_depth(depths[s], pose_st, k, source_valid=src_valid)
        diff = (d_t - warped).abs()
        diff = torch.where(torch.isfinite(warped), diff, torch.full_like(diff, float("inf")))
        diffs.append(diff)
    if not diffs:
        return torch.zeros_like(d_t)

    stack = torch.stack(diffs)                       # (S, H, W)
    finite = torch.isfinite(stack)
    counts = finite.sum(dim=0)
    sorted_diffs, _ = torch.sort(torch.where(finite, stack, torch.full_like(stack, float("inf"))), dim=0)
    take = counts.clamp(max=n_best)
    csum = torch.cumsum(torch.where(torch.isfinite(sorted_diffs), sorted_diffs,
                                    torch.zeros_like(sorted_diffs)), dim=0)
    gather_idx = (take - 1).clamp(min=0)[None]
    summed = torch.gather(csum, 0, gather_idx)[0]
    u = summed / take.clamp(min=1)
    covered = counts > 0
    if bool(covered.any()):
        fill = u[covered].max()
    else:
        fill = torch.tensor(1.0, dtype=dtype)
    return torch.where(covered, u, fill.expand_as(u))


def softmin_weights(u: torch.Tensor, temperature: float | None = None) -> torch.Tensor:
    """Per-pixel weights N * softmin(u); uniform uncertainty maps to all ones.

    Temperature defaults to the median uncertainty, making the weighting
    self-normalizing across scenes.
    """
    if temperature is None:
        temperature = float(u.median())
    temperature = max(temperature, 1e-12)
    z = (u.min() - u) / temperature
    w = torch.exp(z)
    return w * (u.numel() / w.sum().clamp(min=1e-300))


def pretrain_loss(l_p: torch.Tensor, l_r: torch.Tensor, l_s: torch.Tensor,
                  smooth_weight: float = 1e-3) -> torch.Tensor:
    """Photometric + distillation + weighted smoothness."""
    return l_p + l_r + smooth_weight * l_s


def adaptation_loss(l_pt: torch.Tensor, l_g: torch.Tensor,
                    gc_weight: float = 0.5) -> torch.Tensor:
    """Pretraining objective plus weighted geometry consistency."""
    return l_pt + gc_weight * l_g


def srm_loss(l_c: torch.Tensor, l_e: torch.Tensor, gamma: float) -> torch.Tensor:
    """Color reconstruction plus weighted depth regularization."""
    return l_c + gamma * l_e
