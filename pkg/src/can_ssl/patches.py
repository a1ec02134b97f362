"""Patch decomposition, mask sampling and token gather/scatter.

Patch order is row-major over the patch grid: patch ``t`` covers rows
``(t // grid_w) * p`` and columns ``(t % grid_w) * p``.  Checkpoints and the
positional tables depend on this order.

A mask bit of 1 means the patch is hidden from the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class PatchSequence:
    patches: np.ndarray  # (T, p, p, 3)
    grid_h: int
    grid_w: int

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def patch_size(self) -> int:
        return self.patches.shape[1]


@dataclass(frozen=True)
class MaskVector:
    bits: np.ndarray  # (T,) bool, True = masked
    unmasked_count: int

    def __post_init__(self):
        if int(self.bits.size - self.bits.sum()) != self.unmasked_count:
            raise ValueError("mask bits disagree with unmasked_count")


@dataclass(frozen=True)
class TokenGatherPlan:
    """Indices for routing unmasked tokens through the encoder.

    ``inverse_map[t]`` is the row of token ``t`` in the concatenation
    ``[kept tokens; masked tokens]``, so rows ``< len(kept_indices)`` are
    encoder outputs and the rest are mask-token slots.
    """

    kept_indices: np.ndarray  # (T',) strictly increasing
    inverse_map: np.ndarray  # (T,)

    @classmethod
    def from_mask(cls, mask: MaskVector) -> "TokenGatherPlan":
        kept = np.flatnonzero(~mask.bits)
        dropped = np.flatnonzero(mask.bits)
        order = np.concatenate([kept, dropped])
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        return cls(kept_indices=kept, inverse_map=inverse)


def patchify(image: np.ndarray, p: int) -> PatchSequence:
    """Split an ``H x W x 3`` image into row-major ``p x p`` patches."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    h, w, _ = image.shape
    if p < 1 or h % p or w % p:
        raise ValueError(f"patch size {p} does not divide image size {h}x{w}")
    gh, gw = h // p, w // p
    patches = image.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p, p, 3)
    return PatchSequence(np.ascontiguousarray(patches), gh, gw)


def unpatchify(seq: PatchSequence) -> np.ndarray:
    p = seq.patch_size
    x = seq.patches.reshape(seq.grid_h, seq.grid_w, p, p, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(seq.grid_h * p, seq.grid_w * p, 3))


def patchify_batch(images: torch.Tensor, p: int) -> torch.Tensor:
    """``(..., H, W, 3)`` -> ``(..., T, p*p*3)`` with the same ordering as :func:`patchify`."""
    *lead, h, w, c = images.shape
    if h % p or w % p:
        raise ValueError(f"patch size {p} does not divide image size {h}x{w}")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, gh, p, gw, p, c)
    n = len(lead)
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, gh * gw, p * p * c)


def unmasked_count(num_patches: int, mask_rate: float) -> int:
    """``T' = T - round(mask_rate * T)`` with ties rounded away from zero."""
    if not 0.0 <= mask_rate < 1.0:
        raise ValueError(f"mask_rate must lie in [0, 1), got {mask_rate}")
    masked = int(math.floor(mask_rate * num_patches + 0.5))
    kept = num_patches - masked
    if kept < 1:
        raise ValueError(f"mask_rate {mask_rate} leaves no unmasked patch out of {num_patches}")
    return kept


def sample_mask(num_patches: int, mask_rate: float, rng: np.random.Generator) -> MaskVector:
    """Mask exactly ``T - T'`` patches, uniformly over subsets of that size."""
    kept = unmasked_count(num_patches, mask_rate)
    perm = rng.permutation(num_patches)
    bits = np.zeros(num_patches, dtype=bool)
    bits[perm[: num_patches - kept]] = True
    return MaskVector(bits, kept)


def gather_unmasked(tokens, mask: MaskVector):
    """Select the unmasked rows of a ``T x d`` token array, keeping their order."""
    if len(tokens) != mask.bits.size:
        raise ValueError(f"{len(tokens)} tokens but mask has length {mask.bits.size}")
    plan = TokenGatherPlan.from_mask(mask)
    return tokens[plan.kept_indices], plan


def scatter_with_mask_token(encoded, plan: TokenGatherPlan, mask_token):
    """Put encoder rows back at their grid positions and fill the rest with ``mask_token``."""
    kept = len(plan.kept_indices)
    if len(encoded) != kept:
        raise ValueError(f"plan keeps {kept} tokens but {len(encoded)} were given")
    total = plan.inverse_map.size
    if isinstance(encoded, torch.Tensor):
        fill = mask_token.reshape(1, -1).expand(total - kept, -1)
        full = torch.cat([encoded, fill], dim=0)
        return full[torch.as_tensor(plan.inverse_map)]
    fill = np.broadcast_to(np.asarray(mask_token).reshape(1, -1), (total - kept, encoded.shape[1]))
    return np.concatenate([encoded, fill], axis=0)[plan.inverse_map]


def stack_plans(masks) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch the gather plans of equally-sized masks into ``(kept, restore)`` index tensors."""
    plans = [TokenGatherPlan.from_mask(m) for m in masks]
    kept = torch.as_tensor(np.stack([pl.kept_indices for pl in plans]), dtype=torch.long)
    restore = torch.as_tensor(np.stack([pl.inverse_map for pl in plans]), dtype=torch.long)
    return kept, restore


def gather_tokens(x: torch.Tensor, kept: torch.Tensor) -> torch.Tensor:
    """Batched gather: ``x`` (B, T, d), ``kept`` (B, T') -> (B, T', d)."""
    return torch.gather(x, 1, kept.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


def scatter_tokens(z: torch.Tensor, restore: torch.Tensor, mask_token: torch.Tensor) -> torch.Tensor:
    """Batched inverse of :func:`gather_tokens` with mask-token fill."""
    b, kept, d = z.shape
    total = restore.shape[1]
    fill = mask_token.reshape(1, 1, d).expand(b, total - kept, d)
    full = torch.cat([z, fill], dim=1)
    return torch.gather(full, 1, restore.unsqueeze(-1).expand(-1, -1, d))
