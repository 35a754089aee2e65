"""Run configuration: every weight, schedule and loop length in one place."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .losses import LossWeights
from .optim import Schedule


@dataclass
class TrainConfig:
    """All knobs for a full alternating run.

    Defaults follow the reference hyperparameters: photometric mix 0.85,
    smoothness weight 1e-3, geometry-consistency weight 0.5, field LR
    1e-3 -> 1e-4, pose LR 1e-5 -> 2e-3 over 1K iterations then decaying
    back to 1e-5, fine-tune LR 5e-5, and two alternations.
    """

    seed: int = 0

    # losses
    loss: LossWeights = field(default_factory=LossWeights)

    # radiance field
    field_width: int = 128
    pos_freqs: int = 8
    dir_freqs: int = 4
    n_samples: int = 64
    anneal_frac: float = 0.4       # fraction of srm steps to reach full encoding

    # scene representation training
    srm_steps: int = 5000          # S_r
    ray_batch: int = 1024
    field_lr: float = 1e-3
    field_lr_end: float = 1e-4
    pose_lr_start: float = 1e-5
    pose_lr_peak: float = 2e-3
    pose_lr_end: float = 1e-5
    pose_warmup_iters: int = 1000
    pose_grad_clip: float = 10.0
    init_near: float = 0.5         # bootstrap depth range before priors exist
    init_far: float = 8.0

    # scene prior training
    spm_adapt_steps: int = 2000
    spm_finetune_steps: int = 500  # S_p
    spm_adapt_lr: float = 1e-4
    spm_finetune_lr: float = 5e-5
    depth_min: float = 0.1
    depth_max: float = 10.0
    distill_pose: bool = False     # also supervise f_p from refined poses

    # alternation
    num_alternations: int = 2
    train_frac: float = 0.9

    # ablation switches
    pose_prior: bool = True
    depth_prior: bool = True
    warmup: bool = True

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.srm_steps < 0 or self.spm_adapt_steps < 0 or self.spm_finetune_steps < 0:
            raise ValueError("step counts must be nonnegative")
        if self.num_alternations < 0:
            raise ValueError("num_alternations must be nonnegative")
        if not 0 < self.train_frac <= 1:
            raise ValueError("train_frac must be in (0, 1]")
        if self.ray_batch < 1 or self.n_samples < 2:
            raise ValueError("ray batch and sample count too small")
        if not 0 < self.init_near < self.init_far:
            raise ValueError("bad initial depth bounds")

    @property
    def gamma(self) -> float:
        return self.loss.gamma if self.depth_prior else 0.0

    def field_schedule(self) -> Schedule:
        return Schedule.exponential(self.field_lr, self.field_lr_end,
                                    max(self.srm_steps, 1))

    def pose_schedule(self) -> Schedule:
        total = max(self.srm_steps, 1)
        if not self.warmup:
            return Schedule.constant(self.pose_lr_peak, total)
        warmup = min(self.pose_warmup_iters, total)
        return Schedule.warmup_exponential(self.pose_lr_start, self.pose_lr_peak,
                                           warmup, self.pose_lr_end, total)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @staticmethod
    def load(path) -> "TrainConfig":
        with open(path) as f:
            return TrainConfig.from_json(f.read())

    def with_ablation(self, name: str, enabled: bool) -> "TrainConfig":
        if name not in ("pose_prior", "depth_prior", "warmup"):
            raise ValueError(f"unknown ablation flag {name!r}")
        return replace(self, **{name: enabled})
