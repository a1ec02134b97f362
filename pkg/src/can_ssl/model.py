"""Vision Transformer encoder/decoder with a contrastive projection head and noise-level conditioning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .patches import gather_tokens, scatter_tokens


class NonFiniteError(FloatingPointError):
    """Raised when activations or losses stop being finite."""

    def __init__(self, msg, where=None):
        super().__init__(msg)
        self.where = where


@dataclass(frozen=True)
class TransformerSpec:
    depth: int
    width: int
    heads: int
    mlp_dim: int

    def __post_init__(self):
        if self.depth < 0 or self.width < 1 or self.heads < 1:
            raise ValueError(f"invalid transformer shape {self}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class HeadSpec:
    hidden_dim: int = 4096
    hidden_layers: int = 2
    out_dim: int = 128


@dataclass(frozen=True)
class ModelSpec:
    encoder: TransformerSpec
    decoder: TransformerSpec = field(default_factory=lambda: TransformerSpec(8, 512, 16, 2048))
    head: HeadSpec = field(default_factory=HeadSpec)
    patch_size: int = 16
    image_size: tuple[int, int] = (224, 224)
    sigma_scale: float = 1000.0
    sigma_hidden: int | None = None  # defaults to encoder width
    bn_momentum: float = 0.9  # running = momentum * running + (1 - momentum) * batch

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(f"patch size {self.patch_size} does not divide image size {self.image_size}")
        if self.head.out_dim >= self.encoder.width:
            raise ValueError("projection dimension must be smaller than the encoder width")

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["encoder"] = TransformerSpec(**d["encoder"])
        d["decoder"] = TransformerSpec(**d["decoder"])
        d["head"] = HeadSpec(**d["head"])
        d["image_size"] = tuple(d["image_size"])
        return cls(**d)


PAPER_DECODER = TransformerSpec(depth=8, width=512, heads=16, mlp_dim=2048)

ENCODERS = {
    "vit-s": TransformerSpec(12, 384, 6, 1536),
    "vit-b": TransformerSpec(12, 768, 12, 3072),
    "vit-l": TransformerSpec(24, 1024, 16, 4096),
    "vit-h": TransformerSpec(32, 1280, 16, 5120),
}


def paper_spec(name: str, patch_size: int | None = None) -> ModelSpec:
    """Paper-scale encoder with the 8 x 512 decoder and 4096-wide head at 224 x 224."""
    if patch_size is None:
        patch_size = 14 if name == "vit-h" else 16
    return ModelSpec(ENCODERS[name], PAPER_DECODER, HeadSpec(), patch_size, (224, 224))


def vit_micro(image_size=(32, 32), patch_size: int = 4) -> ModelSpec:
    """Desk-scale default: d=192, depth 6, 3 heads, decoder 2 x 128."""
    return ModelSpec(
        encoder=TransformerSpec(6, 192, 3, 768),
        decoder=TransformerSpec(2, 128, 4, 512),
        head=HeadSpec(hidden_dim=512, hidden_layers=2, out_dim=128),
        patch_size=patch_size,
        image_size=tuple(image_size),
    )


def sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.einsum("m,d->md", pos.reshape(-1).astype(np.float64), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fixed 2-D sin-cos table (T, dim); half the channels encode rows, half columns."""
    if dim % 4:
        raise ValueError("2-D sin-cos embedding needs a width divisible by 4")
    gy, gx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, gy), sincos_1d(dim // 2, gx)], axis=1)


def sigma_features(sigma: torch.Tensor, dim: int, scale: float) -> torch.Tensor:
    """Interleaved ``sin(sigma * w_k), cos(sigma * w_k)`` with ``w_k = scale * 10000^(-2k/dim)``."""
    k = torch.arange((dim + 1) // 2, dtype=sigma.dtype, device=sigma.device)
    omega = scale * 10000.0 ** (-2.0 * k / dim)
    ang = sigma.reshape(-1, 1) * omega
    out = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(sigma.numel(), -1)
    return out[:, :dim]


class BatchNorm(nn.Module):
    """Batch norm with decay-style momentum and biased running variance.

    ``running = momentum * running + (1 - momentum) * batch``; once the
    running statistics have converged on a fixed batch, eval mode reproduces
    train mode.
    """

    def __init__(self, dim, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x):
        if self.training:
            mean = x.mean(0)
            var = x.var(0, unbiased=False)
            with torch.no_grad():
                self.running_mean.mul_(self.momentum).add_((1 - self.momentum) * mean)
                self.running_var.mul_(self.momentum).add_((1 - self.momentum) * var)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) * torch.rsqrt(var + self.eps) * self.weight + self.bias


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * (C // self.heads) ** -0.5
        x = (attn.softmax(dim=-1) @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(x)


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Transformer(nn.Module):
    def __init__(self, spec: TransformerSpec, name: str):
        super().__init__()
        self.name = name
        self.blocks = nn.ModuleList([Block(spec.width, spec.heads, spec.mlp_dim) for _ in range(spec.depth)])
        self.norm = nn.LayerNorm(spec.width, eps=1e-6)

    def forward(self, x):
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite activations after {self.name} block {i}", (self.name, i))
        return self.norm(x)


class ProjectionHead(nn.Module):
    def __init__(self, in_dim, spec: HeadSpec, momentum):
        super().__init__()
        layers, d = [], in_dim
        for _ in range(spec.hidden_layers):
            layers += [nn.Linear(d, spec.hidden_dim, bias=False), BatchNorm(spec.hidden_dim, momentum), nn.ReLU()]
            d = spec.hidden_dim
        layers.append(nn.Linear(d, spec.out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class CANModel(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        d, dd = spec.encoder.width, spec.decoder.width
        gh, gw = spec.grid
        self.patch_embed = nn.Linear(spec.patch_dim, d)
        self.register_buffer("pos_embed", torch.from_numpy(sincos_2d(d, gh, gw)), persistent=False)
        self.encoder = Transformer(spec.encoder, "encoder")
        self.head = ProjectionHead(d, spec.head, spec.bn_momentum)
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.register_buffer("decoder_pos_embed", torch.from_numpy(sincos_2d(d, gh, gw)), persistent=False)
        hidden = spec.sigma_hidden or d
        self.sigma_mlp = nn.Sequential(nn.Linear(d, hidden), nn.SiLU(), nn.Linear(hidden, d))
        if spec.decoder.depth > 0:
            self.decoder_embed = nn.Linear(d, dd)
            self.decoder = Transformer(spec.decoder, "decoder")
            self.decoder_pred = nn.Linear(dd, spec.patch_dim)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.xavier_uniform_(self.patch_embed.weight)
        nn.init.normal_(self.mask_token, std=0.02)

    @property
    def has_decoder(self) -> bool:
        return self.spec.decoder.depth > 0

    def encode(self, patches: torch.Tensor, kept: torch.Tensor) -> torch.Tensor:
        """Encode unmasked patches ``(B, T', p*p*3)`` located at grid indices ``kept`` (B, T')."""
        if patches.shape[1] < 1:
            raise ValueError("encoder needs at least one unmasked patch")
        x = self.patch_embed(patches)
        pos = self.pos_embed.to(x.dtype)[kept]
        return self.encoder(x + pos)

    def features(self, z: torch.Tensor) -> torch.Tensor:
        return z.mean(dim=1)

    def pool_and_project(self, z: torch.Tensor) -> torch.Tensor:
        h = self.head(self.features(z))
        norm = h.norm(dim=-1, keepdim=True)
        if (norm <= 1e-12).any():
            raise ValueError("projection collapsed to the zero vector")
        return h / norm

    def embed_sigma(self, sigma: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(sigma).all():
            raise NonFiniteError("non-finite noise level", "sigma")
        d = self.spec.encoder.width
        s = sigma_features(sigma.to(self.mask_token.dtype), d, self.spec.sigma_scale)
        return self.sigma_mlp(s)

    def decode(self, z: torch.Tensor, restore: torch.Tensor, sigma_emb: torch.Tensor | None = None) -> torch.Tensor:
        """Predict every patch ``(B, T, p*p*3)`` from encoded tokens and the restore plan."""
        x = scatter_tokens(z, restore, self.mask_token)
        x = x + self.decoder_pos_embed.to(x.dtype)
        if sigma_emb is not None:
            x = x + sigma_emb[:, None, :]
        x = self.decoder(self.decoder_embed(x))
        return self.decoder_pred(x)

    def encode_full(self, patches: torch.Tensor) -> torch.Tensor:
        """Unmasked encoding of all ``T`` patches (evaluation path)."""
        kept = torch.arange(patches.shape[1]).expand(patches.shape[0], -1)
        return self.encode(patches, kept)

    def encode_masked(self, patches: torch.Tensor, kept: torch.Tensor) -> torch.Tensor:
        """Gather the kept patches out of a full ``(B, T, P)`` tensor and encode them."""
        return self.encode(gather_tokens(patches, kept), kept)


def decayed(name: str, param: nn.Parameter) -> bool:
    """Weight decay applies to matrices only: not biases, norm scales or the mask token."""
    return param.ndim >= 2 and name != "mask_token"


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def init_model(spec: ModelSpec, seed: int) -> CANModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CANModel(spec)


def check_finite(model: nn.Module) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteError(f"non-finite parameter {name}", name)


__all__ = [
    "BatchNorm", "CANModel", "HeadSpec", "ModelSpec", "NonFiniteError", "TransformerSpec",
    "decayed", "init_model", "paper_spec", "param_count", "sigma_features", "sincos_2d", "vit_micro",
]
