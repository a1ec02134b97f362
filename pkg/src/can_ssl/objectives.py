"""Contrastive, reconstruction and noise-prediction losses and their weighting."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .model import NonFiniteError


@dataclass(frozen=True)
class LossWeights:
    """``(lambda_infonce, lambda_)`` parameterisation of the three loss weights.

    The reconstruction pair shares ``1 - lambda_infonce`` in the ratio
    ``lambda_ : 1 - lambda_``, so the three weights always sum to one.
    """

    lambda_infonce: float = 0.03
    lambda_: float = 0.5

    def __post_init__(self):
        for name in ("lambda_infonce", "lambda_"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def infonce(self) -> float:
        return self.lambda_infonce

    @property
    def rec(self) -> float:
        return (1.0 - self.lambda_infonce) * self.lambda_

    @property
    def denoise(self) -> float:
        return (1.0 - self.lambda_infonce) * (1.0 - self.lambda_)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.infonce, self.rec, self.denoise


@dataclass
class LossReport:
    l_infonce: torch.Tensor | None
    l_rec: torch.Tensor | None
    l_denoise: torch.Tensor | None
    l_total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: (None if v is None else float(v.detach())) for k, v in
                (("l_infonce", self.l_infonce), ("l_rec", self.l_rec),
                 ("l_denoise", self.l_denoise), ("l_total", self.l_total))}


def info_nce(u1, u2, tau: float = 0.1) -> torch.Tensor:
    """InfoNCE over ``2n`` anchors with the other ``2n - 2`` in-batch embeddings as negatives.

    Each anchor ``u^v_i`` scores its positive ``u1_i . u2_i`` against
    ``u^v_i . u`` for every embedding ``u`` of the other images; the loss is
    the mean over all ``2n`` anchors.
    """
    u1, u2 = torch.as_tensor(u1), torch.as_tensor(u2)
    if u1.ndim != 2 or u1.shape != u2.shape:
        raise ValueError(f"expected two n x r arrays of equal shape, got {tuple(u1.shape)} and {tuple(u2.shape)}")
    n = u1.shape[0]
    if n < 1:
        raise ValueError("info_nce needs at least one image")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    u = torch.cat([u1, u2], dim=0)
    if ((u.norm(dim=1) - 1).abs() > 1e-5).any():
        raise ValueError("info_nce expects unit-norm rows")
    sim = u @ u.T / tau
    idx = torch.arange(2 * n, device=u.device)
    partner = (idx + n) % (2 * n)
    pos = sim[idx, partner]
    # the anchor itself never appears in its own denominator
    logits = sim.masked_fill(torch.eye(2 * n, dtype=torch.bool, device=u.device), float("-inf"))
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def _masked_mse(target, xhat, weight):
    target, xhat = torch.as_tensor(target), torch.as_tensor(xhat)
    weight = torch.as_tensor(weight)
    if target.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(xhat.shape)}")
    t_dims = weight.ndim
    if tuple(target.shape[:t_dims]) != tuple(weight.shape):
        raise ValueError(f"mask shape {tuple(weight.shape)} does not match patches {tuple(target.shape)}")
    err = (xhat - target).pow(2).flatten(t_dims).sum(-1)  # per patch
    pix = target[(0,) * t_dims].numel() if t_dims else target.numel()
    weight = weight.to(err.dtype)
    count = weight.sum(-1) * pix
    total = (err * weight).sum(-1)
    return torch.where(count > 0, total / count.clamp_min(1), torch.zeros_like(total))


def _bits(mask):
    bits = getattr(mask, "bits", mask)
    return torch.as_tensor(bits).bool()


def recon_loss(clean_patches, xhat, mask) -> torch.Tensor:
    """Per-pixel mean squared error over masked patches only (0 if none are masked).

    Leading dimensions are treated as batch dimensions; ``mask`` is ``(..., T)``
    with True marking masked patches.
    """
    return _masked_mse(clean_patches, xhat, _bits(mask))


def denoise_loss(noise_field, xhat, mask) -> torch.Tensor:
    """Per-pixel mean squared error between prediction and ``sigma * e`` over unmasked patches."""
    return _masked_mse(noise_field, xhat, ~_bits(mask))


def _check(name, value):
    if value is not None and not torch.isfinite(value).all():
        raise NonFiniteError(f"loss term {name} is not finite", name)


def loss_report(batch, outputs, weights: LossWeights, tau: float = 0.1) -> LossReport:
    """Combine the three terms, each averaged over all (view, image) pairs.

    ``batch`` is a :class:`can_ssl.trainer.TensorBatch`; ``outputs`` holds the
    projections ``u`` (V, n, r) and predictions ``xhat`` (V, n, T, P), either
    of which may be None when its branch was not evaluated.  Terms with zero
    weight are reported but left out of ``l_total``.
    """
    u, xhat = outputs.get("u"), outputs.get("xhat")
    l_nce = l_rec = l_den = None
    if u is not None and u.shape[0] == 2:
        l_nce = info_nce(u[0], u[1], tau)
    if xhat is not None:
        l_rec = recon_loss(batch.clean, xhat, batch.masks).mean()
        l_den = denoise_loss(batch.noise, xhat, batch.masks).mean()
    for name, v in (("l_infonce", l_nce), ("l_rec", l_rec), ("l_denoise", l_den)):
        _check(name, v)
    total = None
    for w, term, name in ((weights.infonce, l_nce, "l_infonce"), (weights.rec, l_rec, "l_rec"),
                          (weights.denoise, l_den, "l_denoise")):
        if w == 0:
            continue
        if term is None:
            raise ValueError(f"{name} has weight {w} but its branch produced no output")
        total = w * term if total is None else total + w * term
    if total is None:
        raise ValueError("all loss weights are zero")
    return LossReport(l_nce, l_rec, l_den, total)
