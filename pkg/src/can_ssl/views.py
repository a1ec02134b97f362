"""Two-view generation: SimCLR-style augmentation, Gaussian noise injection and masking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torchvision.transforms.v2 import functional as TF

from . import rng as rngmod
from .patches import MaskVector, patchify, sample_mask


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.08, 1.0)
    crop_ratio_range: tuple[float, float] = (3 / 4, 4 / 3)
    jitter_strength: float = 1.0
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    flip_prob: float = 0.5
    output_size: tuple[int, int] = (32, 32)

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {self.crop_scale_range}")
        for name in ("jitter_prob", "grayscale_prob", "blur_prob", "flip_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.jitter_strength < 0:
            raise ValueError("jitter_strength must be non-negative")

    @classmethod
    def disabled(cls, output_size=(32, 32)) -> "AugmentConfig":
        """Identity augmentation (apart from resizing to ``output_size``)."""
        return cls(crop_scale_range=(1.0, 1.0), jitter_strength=0.0, jitter_prob=0.0,
                   grayscale_prob=0.0, blur_prob=0.0, flip_prob=0.0, output_size=output_size)


@dataclass(frozen=True)
class NoisedView:
    pixels: np.ndarray  # clean + sigma * noise
    clean: np.ndarray
    sigma: np.float32
    noise: np.ndarray  # standard normal field e

    @property
    def noise_target(self) -> np.ndarray:
        return self.sigma * self.noise


@dataclass
class ViewBatch:
    """Views of ``n`` images, stacked view-major: arrays have leading dims ``(V, n)``."""

    pixels: np.ndarray  # (V, n, H, W, 3)
    clean: np.ndarray
    noise: np.ndarray
    sigma: np.ndarray  # (V, n)
    masks: np.ndarray  # (V, n, T) bool
    patch_size: int
    labels: np.ndarray | None = None
    indices: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_views(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> int:
        return self.pixels.shape[1]

    @property
    def unmasked_count(self) -> int:
        return int(self.masks.shape[-1] - self.masks[0, 0].sum())

    def view(self, v: int, i: int) -> NoisedView:
        return NoisedView(self.pixels[v, i], self.clean[v, i], self.sigma[v, i], self.noise[v, i])

    def mask(self, v: int, i: int) -> MaskVector:
        return MaskVector(self.masks[v, i], self.unmasked_count)


def _crop_box(h, w, cfg, rng):
    area = h * w
    lo_r, hi_r = (math.log(r) for r in cfg.crop_ratio_range)
    for _ in range(10):
        target = area * rng.uniform(*cfg.crop_scale_range)
        ratio = math.exp(rng.uniform(lo_r, hi_r))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # fall back to the largest centred crop within the ratio bounds
    in_ratio = w / h
    if in_ratio < cfg.crop_ratio_range[0]:
        cw, ch = w, int(round(w / cfg.crop_ratio_range[0]))
    elif in_ratio > cfg.crop_ratio_range[1]:
        ch, cw = h, int(round(h * cfg.crop_ratio_range[1]))
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _blur_kernel_size(side: int) -> int:
    k = math.ceil(0.1 * side)
    return k if k % 2 else k + 1


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One augmented view: crop, flip, colour jitter, grayscale, blur; output clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float32)
    h, w, _ = image.shape
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))

    top, left, ch, cw = _crop_box(h, w, cfg, rng)
    x = x[:, top:top + ch, left:left + cw]
    if (ch, cw) != tuple(cfg.output_size):
        x = TF.resize(x, list(cfg.output_size), antialias=True)

    if rng.random() < cfg.flip_prob:
        x = TF.horizontal_flip(x)

    s = cfg.jitter_strength
    if s > 0 and rng.random() < cfg.jitter_prob:
        b, c, sat, hue = 0.8 * s, 0.8 * s, 0.8 * s, min(0.2 * s, 0.5)
        x = TF.adjust_brightness(x, rng.uniform(max(0.0, 1 - b), 1 + b))
        x = TF.adjust_contrast(x, rng.uniform(max(0.0, 1 - c), 1 + c))
        x = TF.adjust_saturation(x, rng.uniform(max(0.0, 1 - sat), 1 + sat))
        x = TF.adjust_hue(x, rng.uniform(-hue, hue))

    if rng.random() < cfg.grayscale_prob:
        x = TF.rgb_to_grayscale(x, num_output_channels=3)

    if rng.random() < cfg.blur_prob:
        k = _blur_kernel_size(min(cfg.output_size))
        if k > 1:
            sigma = float(rng.uniform(0.1, 2.0))
            x = TF.gaussian_blur(x, [k, k], [sigma, sigma])

    return x.clamp(0.0, 1.0).permute(1, 2, 0).contiguous().numpy()


def two_views(image, cfg: AugmentConfig, rng: np.random.Generator):
    return augment(image, cfg, rng), augment(image, cfg, rng)


def add_noise(view: np.ndarray, sigma_max: float, rng: np.random.Generator) -> NoisedView:
    """Add ``sigma * e`` with ``sigma ~ U[0, sigma_max]`` and ``e`` standard normal."""
    if sigma_max < 0:
        raise ValueError(f"sigma_max must be non-negative, got {sigma_max}")
    clean = np.asarray(view, dtype=np.float32)
    sigma = np.float32(rng.uniform(0.0, sigma_max))
    noise = rng.standard_normal(clean.shape, dtype=np.float32)
    return NoisedView(clean + sigma * noise, clean, sigma, noise)


def build_view_batch(images, cfg: AugmentConfig, mask_rate: float, sigma_max: float,
                     seed: int, epoch: int = 0, indices=None, num_views: int = 2,
                     patch_size: int = 4, labels=None) -> ViewBatch:
    """Augment -> noise -> patchify -> mask, independently per image and view.

    Each (image, view) pair draws from its own stream keyed by
    ``(seed, epoch, index, view)``, so the result depends only on the seed and
    the dataset indices, never on batch composition.
    """
    n = len(images)
    if n < 1:
        raise ValueError("build_view_batch needs at least one image")
    if indices is None:
        indices = np.arange(n)
    H, W = cfg.output_size
    T = (H // patch_size) * (W // patch_size)
    pixels = np.empty((num_views, n, H, W, 3), np.float32)
    clean = np.empty_like(pixels)
    noise = np.empty_like(pixels)
    sigma = np.empty((num_views, n), np.float32)
    masks = np.empty((num_views, n, T), bool)
    for i, (img, idx) in enumerate(zip(images, indices)):
        if np.asarray(img).dtype == np.uint8:
            img = np.asarray(img, np.float32) / 255.0
        for v in range(num_views):
            view = augment(img, cfg, rngmod.stream(seed, epoch, idx, v, rngmod.AUGMENT))
            nv = add_noise(view, sigma_max, rngmod.stream(seed, epoch, idx, v, rngmod.NOISE))
            seq = patchify(nv.pixels, patch_size)
            mask = sample_mask(seq.num_patches, mask_rate, rngmod.stream(seed, epoch, idx, v, rngmod.MASK))
            pixels[v, i], clean[v, i], noise[v, i], sigma[v, i] = nv.pixels, nv.clean, nv.noise, nv.sigma
            masks[v, i] = mask.bits
    return ViewBatch(pixels, clean, noise, sigma, masks, patch_size,
                     labels=None if labels is None else np.asarray(labels),
                     indices=np.asarray(indices))
