"""Radiance field MLP and differentiable volume rendering of color and depth.

Rendering follows the standard quadrature of the transmittance-weighted
integrals: alpha_i = 1 - exp(-sigma_i * delta_i), T_i = prod_{j<i}(1 - alpha_j),
w_i = T_i * alpha_i, with color = sum w_i c_i and depth = sum w_i t_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import io as afio
from .geometry import Intrinsics, Pose, Ray

MIN_ACCUMULATION = 0.01  # rays below this carry no usable depth


def encoding_window(num_freqs: int, anneal: float, dtype=torch.float32) -> torch.Tensor:
    """Coarse-to-fine weights per frequency band.

    Band k is off while anneal*L <= k, fully on from anneal*L >= k+1, and
    ramps with a half-cosine in between.
    """
    k = torch.arange(num_freqs, dtype=dtype)
    alpha = anneal * num_freqs - k
    ramp = 0.5 * (1 - torch.cos(alpha.clamp(0.0, 1.0) * math.pi))
    return ramp


def positional_encode(x: torch.Tensor, num_freqs: int, anneal: float = 1.0) -> torch.Tensor:
    """Encode (..., D) inputs as [x, w_k sin(2^k pi x), w_k cos(2^k pi x), ...]."""
    if num_freqs == 0:
        return x
    window = encoding_window(num_freqs, anneal, dtype=x.dtype)
    parts = [x]
    for k in range(num_freqs):
        arg = (2.0 ** k) * math.pi * x
        w = window[k]
        parts.append(w * torch.sin(arg))
        parts.append(w * torch.cos(arg))
    return torch.cat(parts, dim=-1)


def encoded_dim(d: int, num_freqs: int) -> int:
    return d * (1 + 2 * num_freqs)


class RadianceField(nn.Module):
    """MLP mapping (position, view direction) -> (density, color).

    Eight hidden layers with the encoded position re-injected at layer 5,
    softplus density head, and a single linear color head conditioned on the
    encoded view direction with a sigmoid squashing to [0, 1].
    """

    def __init__(self, width: int = 128, pos_freqs: int = 8, dir_freqs: int = 4,
                 n_layers: int = 8, skip_layer: int = 5, dtype=torch.float32):
        super().__init__()
        self.width = width
        self.pos_freqs = pos_freqs
        self.dir_freqs = dir_freqs
        self.n_layers = n_layers
        self.skip_layer = skip_layer
        self.anneal = 1.0

        pos_dim = encoded_dim(3, pos_freqs)
        dir_dim = encoded_dim(3, dir_freqs)
        layers = []
        for i in range(1, n_layers + 1):
            in_dim = pos_dim if i == 1 else width
            if i == skip_layer:
                in_dim += pos_dim
            layers.append(nn.Linear(in_dim, width))
        self.layers = nn.ModuleList(layers)
        self.density_head = nn.Linear(width, 1)
        self.color_head = nn.Linear(width + dir_dim, 3)
        if dtype is not None:
            self.to(dtype)

    @property
    def dtype(self):
        return self.density_head.weight.dtype

    def forward(self, points: torch.Tensor, dirs: torch.Tensor):
        """points (..., 3), dirs (..., 3) -> (sigma (...,), rgb (..., 3))."""
        shape = points.shape[:-1]
        p = points.reshape(-1, 3)
        d = dirs.reshape(-1, 3)
        enc_p = positional_encode(p, self.pos_freqs, self.anneal)
        enc_d = positional_encode(d, self.dir_freqs, self.anneal)
        h = enc_p
        for i, layer in enumerate(self.layers, start=1):
            if i == self.skip_layer:
                h = torch.cat([h, enc_p], dim=-1)
            h = torch.relu(layer(h))
        sigma = nn.functional.softplus(self.density_head(h)[..., 0])
        rgb = torch.sigmoid(self.color_head(torch.cat([h, enc_d], dim=-1)))
        return sigma.reshape(shape), rgb.reshape(*shape, 3)


@dataclass
class RenderOutput:
    """Per-ray render result: color in [0,1], expected termination distance
    along the ray (unnormalized, as in the depth integral), total weight."""

    color: torch.Tensor
    depth: torch.Tensor
    accumulation: torch.Tensor


def sample_ray(ray: Ray, n_samples: int, stratified: bool = False,
               rng_seed: int = 0) -> torch.Tensor:
    """Strictly increasing sample depths in [t_near, t_far]."""
    gen = torch.Generator().manual_seed(rng_seed)
    t = sample_depths(ray.t_near, ray.t_far, 1, n_samples, stratified, gen,
                      dtype=ray.origin.dtype)
    return t[0]

def sample_depths(t_near: float, t_far: float, n_rays: int, n_samples: int,
                  stratified: bool, generator: torch.Generator,
                  dtype=torch.float32) -> torch.Tensor:
    """(n_rays, n_samples) depths; bin midpoints unless stratified jitter."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples per ray")
    bin_w = (t_far - t_near) / n_samples
    edges = t_near + bin_w * torch.arange(n_samples, dtype=dtype)
    if stratified:
        jitter = torch.rand(n_rays, n_samples, generator=generator, dtype=dtype)
    else:
        jitter = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    return edges + jitter * bin_w


def render_rays(field, origins: torch.Tensor, dirs: torch.Tensor,
                samples: torch.Tensor, t_far: float) -> RenderOutput:
    """Volume-render a batch of rays.

    Args:
        field: callable (points, dirs) -> (sigma, rgb).
        origins, dirs: (B, 3); dirs unit length.
        samples: (B, N) increasing depths.
    """
    points = origins[:, None, :] + samples[..., None] * dirs[:, None, :]
    sigma, rgb = field(points, dirs[:, None, :].expand_as(points))

    deltas = samples[:, 1:] - samples[:, :-1]
    last = (t_far - samples[:, -1:]).clamp(min=0.0)
    deltas = torch.cat([deltas, last], dim=-1)

    alpha = 1.0 - torch.exp(-sigma * deltas)
    trans = torch.cumprod(torch.cat([torch.ones_like(alpha[:, :1]), 1.0 - alpha], dim=-1),
                          dim=-1)[:, :-1]
    weights = trans * alpha
    color = (weights[..., None] * rgb).sum(dim=-2)
    depth = (weights * samples).sum(dim=-1)
    acc = weights.sum(dim=-1)
    return RenderOutput(color=color, depth=depth, accumulation=acc)


def render_ray(field, ray: Ray, samples: torch.Tensor) -> RenderOutput:
    """Single-ray convenience wrapper around render_rays."""
    out = render_rays(field, ray.origin[None], ray.direction[None],
                      samples[None], ray.t_far)
    return RenderOutput(color=out.color[0], depth=out.depth[0],
                        accumulation=out.accumulation[0])


def render_view(field, pose: Pose, k: Intrinsics, t_near: float, t_far: float,
                n_samples: int = 64, stratified: bool = False, rng_seed: int = 0,
                chunk: int = 4096):
    """Render one ray per pixel center.

    Returns (image (H,W,3), depth (H,W) z-depth, valid (H,W)). Depth is the
    accumulation-normalized termination distance converted to camera z-depth;
    rays with accumulation below MIN_ACCUMULATION are flagged invalid.
    """
    dtype = field.dtype if hasattr(field, "dtype") else torch.float32
    cam = k.cam_dirs(dtype=torch.float64)
    norms = cam.norm(dim=-1)
    z_factor = (1.0 / norms).reshape(-1).to(dtype)            # unit-dir z component
    dirs_cam = (cam / norms[..., None]).reshape(-1, 3).to(dtype)
    rot = pose.rotation.to(dtype)
    dirs_world = dirs_cam @ rot.T
    origin = pose.translation.to(dtype)

    gen = torch.Generator().manual_seed(rng_seed)
    n = dirs_world.shape[0]
    colors, depths, accs = [], [], []
    with torch.no_grad():
        for lo in range(0, n, chunk):
            d = dirs_world[lo:lo + chunk]
            o = origin.expand_as(d)
            samples = sample_depths(t_near, t_far, d.shape[0], n_samples,
                                    stratified, gen, dtype=dtype)
            out = render_rays(field, o, d, samples, t_far)
            colors.append(out.color)
            depths.append(out.depth)
            accs.append(out.accumulation)
    color = torch.cat(colors).reshape(k.height, k.width, 3)
    depth_ray = torch.cat(depths)
    acc = torch.cat(accs)
    zdepth = depth_ray / acc.clamp(min=1e-10) * z_factor
    valid = acc >= MIN_ACCUMULATION
    return color, zdepth.reshape(k.height, k.width), valid.reshape(k.height, k.width)


def save_field(path, field: RadianceField) -> None:
    meta = {
        "kind": "radiance_field",
        "width": field.width,
        "pos_freqs": field.pos_freqs,
        "dir_freqs": field.dir_freqs,
        "n_layers": field.n_layers,
        "skip_layer": field.skip_layer,
        "anneal": field.anneal,
        "dtype": str(field.dtype).replace("torch.", ""),
    }
    arrays = {name: p.detach().cpu().numpy() for name, p in field.named_parameters()}
    afio.save_checkpoint(path, meta, arrays)


def load_field(path) -> RadianceField:
    meta, arrays = afio.load_checkpoint(path)
    if meta.get("kind") != "radiance_field":
        raise ValueError("checkpoint does not contain a radiance field")
    field = RadianceField(width=meta["width"], pos_freqs=meta["pos_freqs"],
                          dir_freqs=meta["dir_freqs"], n_layers=meta["n_layers"],
                          skip_layer=meta["skip_layer"],
                          dtype=getattr(torch, meta["dtype"]))
    field.anneal = meta["anneal"]
    state = {name: torch.from_numpy(np.array(arr)) for name, arr in arrays.items()}
    field.load_state_dict(state)
    return field
