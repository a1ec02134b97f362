"""Analytic forward-pass FLOPs and parameter counts for the encoder/decoder/head pipeline.

Convention
----------
A multiply-accumulate is 2 FLOPs.  Per transformer block over ``L`` tokens of
width ``d`` with MLP width ``m`` and ``h`` heads::

    attention projections (q, k, v, out)   2 * 4 * L * d^2
    attention scores and weighted values   2 * 2 * L^2 * d
    MLP                                    2 * 2 * L * d * m
    softmax                                SOFTMAX * h * L^2
    bias adds                              L * (4 d + m + d)
    layer norms (2) + residual adds (2)    2 * NORM * L * d + 2 * L * d
    activation                             ACT * L * m

Each stack adds a final layer norm, an input projection ``2 * L * in * d``
(+ bias) and, for the decoder, an output projection.  Terms proportional to
``L^2`` are reported separately as the quadratic part.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

from .model import ModelSpec, TransformerSpec, paper_spec
from .patches import unmasked_count

NORM = 5  # mean, centre, square, scale, shift per element
SOFTMAX = 5  # max, subtract, exp, sum, divide per score
ACT = 1

METHOD_MASK_RATE = {"can": 0.5, "simclr": 0.0, "mae": 0.75}
CSV_COLUMNS = ("method", "model", "mask_rate", "encoder_flops", "decoder_flops", "head_flops", "total")


@dataclass(frozen=True)
class StackCost:
    linear: int
    quadratic: int

    @property
    def total(self) -> int:
        return self.linear + self.quadratic


def block_flops(spec: TransformerSpec, L: int) -> StackCost:
    d, m, h = spec.width, spec.mlp_dim, spec.heads
    linear = (2 * 4 * L * d * d + 2 * 2 * L * d * m + L * (4 * d + m + d)
              + 2 * NORM * L * d + 2 * L * d + ACT * L * m)
    quadratic = 2 * 2 * L * L * d + SOFTMAX * h * L * L
    return StackCost(linear, quadratic)


def vit_flops(spec: TransformerSpec, seq_len: int, in_dim: int = 0, out_dim: int = 0) -> StackCost:
    """FLOPs of one stack over ``seq_len`` tokens, with optional input/output projections."""
    if seq_len < 1:
        raise ValueError("seq_len must be at least 1")
    L, d = seq_len, spec.width
    blk = block_flops(spec, L)
    linear = spec.depth * blk.linear + NORM * L * d
    if in_dim:
        linear += 2 * L * in_dim * d + L * d
    if out_dim:
        linear += 2 * L * d * out_dim + L * out_dim
    return StackCost(linear, spec.depth * blk.quadratic)


def head_flops(spec: ModelSpec, tokens: int) -> int:
    """Mean pool, MLP projection head and L2 normalisation for one view."""
    d, hs = spec.encoder.width, spec.head
    flops, width = tokens * d, d
    for _ in range(hs.hidden_layers):
        flops += 2 * width * hs.hidden_dim + 4 * hs.hidden_dim + hs.hidden_dim  # matmul, batch norm, relu
        width = hs.hidden_dim
    flops += 2 * width * hs.out_dim + hs.out_dim
    return flops + 3 * hs.out_dim


def sigma_mlp_flops(spec: ModelSpec) -> int:
    d = spec.encoder.width
    hid = spec.sigma_hidden or d
    return 3 * d + 2 * d * hid + hid + 4 * hid + 2 * hid * d + d + spec.num_patches * d


def decoder_flops(spec: ModelSpec) -> StackCost:
    """Decoder over all T positions, including mask-token fill and positional adds."""
    if spec.decoder.depth == 0:
        return StackCost(0, 0)
    T, d = spec.num_patches, spec.encoder.width
    core = vit_flops(spec.decoder, T, in_dim=d, out_dim=spec.patch_dim)
    return StackCost(core.linear + T * d, core.quadratic)


def encoder_flops(spec: ModelSpec, seq_len: int) -> StackCost:
    core = vit_flops(spec.encoder, seq_len, in_dim=spec.patch_dim)
    return StackCost(core.linear + seq_len * spec.encoder.width, core.quadratic)  # + positional add


@dataclass(frozen=True)
class CostReport:
    method: str
    model: str
    mask_rate: float
    views: int
    encoder_seq: int
    decoder_seq: int
    encoder_linear: int
    encoder_quadratic: int
    decoder_flops: int
    head_flops: int  # projection head and noise-level MLP
    params: int

    @property
    def encoder_flops(self) -> int:
        return self.encoder_linear + self.encoder_quadratic

    @property
    def total(self) -> int:
        return self.encoder_flops + self.decoder_flops + self.head_flops

    def row(self) -> dict:
        return {"method": self.method, "model": self.model, "mask_rate": self.mask_rate,
                "encoder_flops": self.encoder_flops, "decoder_flops": self.decoder_flops,
                "head_flops": self.head_flops, "total": self.total}


def method_flops(method: str, spec: ModelSpec, mask_rate: float | None = None, model: str = "") -> CostReport:
    """Per-image pretraining forward cost of ``method`` (summed over the views it processes)."""
    if method not in METHOD_MASK_RATE:
        raise ValueError(f"unknown method {method!r}")
    rate = METHOD_MASK_RATE[method] if mask_rate is None else mask_rate
    T = spec.num_patches
    seq = unmasked_count(T, rate)
    enc = encoder_flops(spec, seq)
    views = 1 if method == "mae" else 2
    dec = decoder_flops(spec).total if method in ("can", "mae") else 0
    heads = 0
    if method in ("can", "simclr"):
        heads += head_flops(spec, seq)
    if method == "can" and spec.decoder.depth > 0:
        heads += sigma_mlp_flops(spec)
    params = param_counts(spec)
    used = params["encoder"] + (params["decoder"] if dec else 0)
    used += params["head"] if method != "mae" else 0
    used += params["sigma_mlp"] if method == "can" and dec else 0
    return CostReport(method, model, rate, views, seq, T if dec else 0,
                      views * enc.linear, views * enc.quadratic, views * dec, views * heads, used)


def _stack_params(s: TransformerSpec) -> int:
    d, m = s.width, s.mlp_dim
    per_block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d)
    return s.depth * per_block + 2 * d


def param_counts(spec: ModelSpec) -> dict[str, int]:
    d, P = spec.encoder.width, spec.patch_dim
    enc = P * d + d + _stack_params(spec.encoder)
    dec = 0
    if spec.decoder.depth > 0:
        dd = spec.decoder.width
        dec = d * dd + dd + _stack_params(spec.decoder) + dd * P + P
    hs, width, head = spec.head, d, 0
    for _ in range(hs.hidden_layers):
        head += width * hs.hidden_dim + 2 * hs.hidden_dim
        width = hs.hidden_dim
    head += width * hs.out_dim + hs.out_dim
    hid = spec.sigma_hidden or d
    sig = d * hid + hid + hid * d + d
    return {"encoder": enc, "decoder": dec, "mask_token": d, "head": head, "sigma_mlp": sig,
            "total": enc + dec + d + head + sig}


def compare(models=("vit-s", "vit-b", "vit-l", "vit-h"), mask_rate: float = 0.5,
            decoder: TransformerSpec | None = None) -> list[CostReport]:
    """CAN at ``mask_rate``, SimCLR on full views and MAE at 75% for each paper model."""
    out = []
    for name in models:
        spec = paper_spec(name)
        if decoder is not None:
            spec = replace(spec, decoder=decoder)
        out.append(method_flops("can", spec, mask_rate, name))
        out.append(method_flops("simclr", spec, None, name))
        out.append(method_flops("mae", spec, None, name))
    return out


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def format_table(reports) -> str:
    lines = [f"{'method':<8}{'model':<8}{'mask':>6}{'encoder':>12}{'decoder':>12}{'heads':>10}{'total':>12}  (GFLOPs)"]
    for r in reports:
        lines.append(f"{r.method:<8}{r.model:<8}{r.mask_rate:>6.2f}{r.encoder_flops / 1e9:>12.2f}"
                     f"{r.decoder_flops / 1e9:>12.2f}{r.head_flops / 1e9:>10.3f}{r.total / 1e9:>12.2f}")
    return "\n".join(lines)
