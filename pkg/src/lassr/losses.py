"""Generator and discriminator objectives.

The generator objective combines a relativistic-average adversarial term, a
feature-space perceptual term, a pixel L1 term, and the artifact-blob mass
penalty, weighted lambda_adv / 1 / eta_l1 / beta_arm. The discriminator uses
the relativistic-average BCE objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
from torch import Tensor, nn

from .arm import ArmConfig, arm_loss

LOG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 5e-3
    eta_l1: float = 1e-2
    beta_arm: float = 5e-3

    def __post_init__(self):
        if self.lambda_adv < 0 or self.eta_l1 < 0 or self.beta_arm < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted loss terms, their weighted total, and the weights used."""

    adv_g: float
    percep: float
    l1: float
    arm: float
    total: float
    adv_d: Optional[float] = None
    weights: Optional[LossWeights] = None

    def as_dict(self) -> dict:
        out = {
            "adv_g": self.adv_g,
            "percep": self.percep,
            "l1": self.l1,
            "arm": self.arm,
            "total": self.total,
        }
        if self.adv_d is not None:
            out["adv_d"] = self.adv_d
        return out


class FeatureExtractor(nn.Module):
    """Deterministic map from an NCHW image batch to a feature tensor."""

    def __init__(self, descriptor: str):
        super().__init__()
        self.descriptor = descriptor

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


class IdentityFeatures(FeatureExtractor):
    def __init__(self):
        super().__init__("identity")

    def forward(self, x: Tensor) -> Tensor:
        return x


class SeededConvFeatures(FeatureExtractor):
    """Small frozen convolutional stack with weights drawn from a fixed seed.

    Serves as the offline substitute for a pre-trained deep extractor; any
    fixed feature map gives a well-defined perceptual distance. Tanh keeps
    the map smooth for finite-difference gradient checks.
    """

    def __init__(
        self,
        seed: int = 0,
        channels: tuple[int, ...] = (8, 16),
        descriptor: Optional[str] = None,
    ):
        super().__init__(descriptor or f"random-conv:{seed}")
        gen = torch.Generator().manual_seed(seed)
        layers: list[nn.Module] = []
        in_ch = 3
        for i, ch in enumerate(channels):
            conv = nn.Conv2d(in_ch, ch, 3, stride=2 if i > 0 else 1, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) / (3.0 * in_ch**0.5)
                )
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.01)
            layers.extend([conv, nn.Tanh()])
            in_ch = ch
        self.net = nn.Sequential(*layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class Vgg19Features(FeatureExtractor):
    """Pre-activation features at the deepest VGG19 conv stage (conv5_4).

    Needs torchvision with downloadable or cached ImageNet weights; offline
    environments should use the seeded substitute instead.
    """

    def __init__(self):
        super().__init__("vgg19-conv5-4")
        try:
            from torchvision import models
        except ImportError as exc:  # pragma: no cover - optional path
            raise RuntimeError(
                "descriptor 'vgg19-conv5-4' needs torchvision; install the "
                "'pretrained' extra or use 'random-conv:<seed>'"
            ) from exc
        try:
            vgg = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:  # pragma: no cover - optional path
            raise RuntimeError(
                "could not load VGG19 weights (offline?); use 'random-conv:<seed>'"
            ) from exc
        # Feature index 34 is the conv5_4 output before its activation.
        self.net = nn.Sequential(*list(vgg.features)[:35]).eval()
        for p in self.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        return self.net((x - self.mean) / self.std)


def make_feature_extractor(descriptor: str) -> FeatureExtractor:
    """Build an extractor from its descriptor string."""
    if descriptor == "identity":
        return IdentityFeatures()
    if descriptor.startswith("random-conv:"):
        return SeededConvFeatures(seed=int(descriptor.split(":", 1)[1]))
    if descriptor.startswith("random-conv-embed:"):
        return SeededConvFeatures(
            seed=int(descriptor.split(":", 1)[1]),
            channels=(16, 32, 64),
            descriptor=descriptor,
        )
    if descriptor == "vgg19-conv5-4":
        return Vgg19Features()
    raise ValueError(f"unknown feature extractor descriptor {descriptor!r}")


def _check_logits(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    if not isinstance(real_logits, Tensor):
        real_logits = torch.as_tensor(real_logits, dtype=torch.float32)
    if not isinstance(fake_logits, Tensor):
        fake_logits = torch.as_tensor(fake_logits, dtype=torch.float32)
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise ValueError("logit vectors must be non-empty")
    return real_logits, fake_logits


def relativistic_pair(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    """sigmoid(real - mean(fake)) and sigmoid(fake - mean(real))."""
    real_logits, fake_logits = _check_logits(real_logits, fake_logits)
    d_ra_real = torch.sigmoid(real_logits - fake_logits.mean())
    d_ra_fake = torch.sigmoid(fake_logits - real_logits.mean())
    return d_ra_real, d_ra_fake


def _clamped_log(x: Tensor) -> Tensor:
    return torch.log(x.clamp_min(LOG_EPS))


def discriminator_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    d_ra_real, d_ra_fake = relativistic_pair(real_logits, fake_logits)
    return -_clamped_log(d_ra_real).mean() - _clamped_log(1.0 - d_ra_fake).mean()


def generator_adv_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    d_ra_real, d_ra_fake = relativistic_pair(real_logits, fake_logits)
    return -_clamped_log(1.0 - d_ra_real).mean() - _clamped_log(d_ra_fake).mean()


def perceptual_loss(sr: Tensor, hr: Tensor, fx: FeatureExtractor) -> Tensor:
    """Mean absolute feature distance."""
    if sr.shape != hr.shape:
        raise ValueError(f"sr shape {tuple(sr.shape)} does not match hr {tuple(hr.shape)}")
    return (fx(sr) - fx(hr)).abs().mean()


def pixel_l1(sr: Tensor, hr: Tensor) -> Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"sr shape {tuple(sr.shape)} does not match hr {tuple(hr.shape)}")
    return (hr - sr).abs().mean()


def batch_arm_loss(
    sr: Tensor, hr: Tensor, arm_cfg: ArmConfig, source_size: Optional[int] = None
) -> Tensor:
    """Mean over the batch of per-image blob-mass penalties."""
    if sr.dim() == 3:
        return arm_loss(sr, hr, arm_cfg, source_size=source_size)
    total = sr.new_zeros((), dtype=torch.float64)
    for i in range(sr.shape[0]):
        total = total + arm_loss(sr[i], hr[i], arm_cfg, source_size=source_size)
    return total / sr.shape[0]


def total_generator_loss(
    sr: Tensor,
    hr: Tensor,
    real_logits: Tensor,
    fake_logits: Tensor,
    w: LossWeights,
    arm_cfg: ArmConfig,
    fx: FeatureExtractor,
    adv_d: Optional[float] = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted generator objective and its per-term breakdown.

    The returned tensor carries the gradient; the breakdown records each
    unweighted term plus a float64 total that satisfies the linear
    combination identity exactly.
    """
    adv = generator_adv_loss(real_logits, fake_logits)
    percep = perceptual_loss(sr, hr, fx)
    l1 = pixel_l1(sr, hr)
    arm = batch_arm_loss(sr, hr, arm_cfg)
    total = (
        w.lambda_adv * adv + percep + w.eta_l1 * l1 + w.beta_arm * arm.to(adv.dtype)
    )
    adv_f, percep_f, l1_f, arm_f = (
        float(adv.detach()),
        float(percep.detach()),
        float(l1.detach()),
        float(arm.detach()),
    )
    breakdown = LossBreakdown(
        adv_g=adv_f,
        percep=percep_f,
        l1=l1_f,
        arm=arm_f,
        total=w.lambda_adv * adv_f + percep_f + w.eta_l1 * l1_f + w.beta_arm * arm_f,
        adv_d=adv_d,
        weights=w,
    )
    return total, breakdown
