"""Pretraining loop shared by CAN, SimCLR-style and MAE-style configurations."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import rng as rngmod
from .data import ImageDataset
from .model import CANModel, ModelSpec, NonFiniteError, decayed, init_model, vit_micro
from .objectives import LossReport, LossWeights, loss_report
from .patches import patchify_batch, unmasked_count
from .views import AugmentConfig, ViewBatch, build_view_batch

log = logging.getLogger(__name__)

METHODS = ("can", "simclr", "mae")
METRIC_COLUMNS = ("step", "lr", "l_infonce", "l_rec", "l_denoise", "l_total")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "can"
    base_lr: float = 2.5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    batch_size: int = 256
    warmup_epochs: float = 5
    total_epochs: float = 100
    mask_rate: float = 0.5
    sigma_max: float = 0.05
    lambda_infonce: float = 0.03
    lambda_: float = 0.5
    tau: float = 0.1
    seed: int = 0
    num_views: int = 2
    sigma_conditioning: bool = True

    def __post_init__(self):
        errs = self.problems()
        if errs:
            raise ValueError("; ".join(errs))

    def problems(self) -> list[str]:
        errs = []
        if self.method not in METHODS:
            errs.append(f"method: must be one of {METHODS}, got {self.method!r}")
        for name in ("base_lr", "weight_decay", "warmup_epochs", "total_epochs", "sigma_max"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be non-negative")
        if self.tau <= 0:
            errs.append("tau: must be positive")
        if self.warmup_epochs > self.total_epochs:
            errs.append("warmup_epochs: exceeds total_epochs")
        if self.batch_size < 1:
            errs.append("batch_size: must be positive")
        if not 0 <= self.mask_rate < 1:
            errs.append("mask_rate: must lie in [0, 1)")
        for name in ("lambda_infonce", "lambda_"):
            if not 0 <= getattr(self, name) <= 1:
                errs.append(f"{name.rstrip('_')}: must lie in [0, 1]")
        if self.num_views not in (1, 2):
            errs.append("num_views: must be 1 or 2")
        elif self.num_views == 1 and self.lambda_infonce > 0:
            errs.append("num_views: the contrastive loss needs two views")
        return errs

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_infonce, self.lambda_)

    @property
    def peak_lr(self) -> float:
        return self.base_lr * self.batch_size / 256

    @property
    def uses_sigma_embedding(self) -> bool:
        return self.sigma_conditioning and self.sigma_max > 0


def apply_method(cfg: TrainConfig, method: str | None = None) -> TrainConfig:
    """Pin the loss weights and view count that define each method."""
    method = method or cfg.method
    if method == "simclr":
        return replace(cfg, method=method, lambda_infonce=1.0, sigma_max=0.0, num_views=2)
    if method == "mae":
        return replace(cfg, method=method, lambda_infonce=0.0, lambda_=1.0, sigma_max=0.0, num_views=1)
    return replace(cfg, method=method, num_views=2)


def schedule_steps(cfg: TrainConfig, steps_per_epoch: int) -> tuple[int, int]:
    return int(round(cfg.warmup_epochs * steps_per_epoch)), int(round(cfg.total_epochs * steps_per_epoch))


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup to ``peak_lr`` then half-cosine decay to zero at the last step."""
    warmup, total = schedule_steps(cfg, steps_per_epoch)
    peak = cfg.peak_lr
    if step < warmup:
        return peak * step / warmup
    if step >= total:
        return 0.0
    frac = (step - warmup) / max(total - warmup, 1)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


# --- batches -----------------------------------------------------------------


@dataclass
class TensorBatch:
    noisy: torch.Tensor  # (V, n, T, P) encoder input
    clean: torch.Tensor  # reconstruction targets
    noise: torch.Tensor  # sigma * e, denoising targets
    sigma: torch.Tensor  # (V, n)
    masks: torch.Tensor  # (V, n, T) bool
    kept: torch.Tensor  # (V, n, T')
    restore: torch.Tensor  # (V, n, T)

    @classmethod
    def from_views(cls, vb: ViewBatch, dtype=torch.float32) -> "TensorBatch":
        p = vb.patch_size
        sigma = torch.from_numpy(vb.sigma)
        noise_target = torch.from_numpy(vb.sigma[..., None, None, None] * vb.noise)
        masks = torch.from_numpy(vb.masks)
        order = torch.argsort(masks.to(torch.int8), dim=-1, stable=True)
        kept = order[..., : vb.unmasked_count]
        restore = torch.argsort(order, dim=-1)
        return cls(
            noisy=patchify_batch(torch.from_numpy(vb.pixels), p).to(dtype),
            clean=patchify_batch(torch.from_numpy(vb.clean), p).to(dtype),
            noise=patchify_batch(noise_target, p).to(dtype),
            sigma=sigma.to(dtype), masks=masks, kept=kept, restore=restore,
        )

    @property
    def shape(self):
        return self.noisy.shape[:2]


def forward(model: CANModel, tb: TensorBatch, cfg: TrainConfig, report_all: bool = True) -> dict:
    """Run both views through the shared encoder, head and decoder.

    Branches whose loss weight is zero run without gradient (for reporting) or
    not at all when ``report_all`` is False.
    """
    V, n = tb.shape
    w = cfg.weights
    grad = torch.is_grad_enabled()
    z = model.encode_masked(tb.noisy.flatten(0, 1), tb.kept.flatten(0, 1))
    out = {"z": z}
    need_u, need_x = w.infonce > 0, (w.rec + w.denoise) > 0
    if V == 2 and (need_u or report_all):
        with torch.set_grad_enabled(grad and need_u):
            out["u"] = model.pool_and_project(z).reshape(V, n, -1)
    if model.has_decoder and (need_x or report_all):
        with torch.set_grad_enabled(grad and need_x):
            emb = model.embed_sigma(tb.sigma.flatten()) if cfg.uses_sigma_embedding else None
            xhat = model.decode(z, tb.restore.flatten(0, 1), emb)
            out["xhat"] = xhat.reshape(V, n, *xhat.shape[1:])
    return out


def compute_losses(model: CANModel, tb: TensorBatch, cfg: TrainConfig, report_all: bool = True) -> LossReport:
    return loss_report(tb, forward(model, tb, cfg, report_all), cfg.weights, cfg.tau)


# --- state -------------------------------------------------------------------


def make_optimizer(model: CANModel, cfg: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (decay if decayed(name, p) else no_decay).append(p)
    groups = [{"params": decay, "weight_decay": cfg.weight_decay},
              {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.AdamW(groups, lr=0.0, betas=cfg.betas, eps=1e-8, foreach=False)


@dataclass
class TrainState:
    model: CANModel
    optimizer: torch.optim.AdamW
    cfg: TrainConfig
    steps_per_epoch: int
    step: int = 0
    last_checkpoint: str | None = None

    @classmethod
    def create(cls, spec: ModelSpec, cfg: TrainConfig, steps_per_epoch: int) -> "TrainState":
        model = init_model(spec, cfg.seed)
        return cls(model, make_optimizer(model, cfg), cfg, steps_per_epoch)

    @property
    def epoch(self) -> int:
        return self.step // self.steps_per_epoch

    def rng_state(self) -> dict:
        return {"generator": "philox-keyed", "seed": self.cfg.seed, "epoch": self.epoch,
                "batch_in_epoch": self.step % self.steps_per_epoch}

    # checkpoint arrays: params/, buffers/, adam_m/, adam_v/
    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.model.named_parameters():
            out[f"params/{name}"] = p.detach().cpu().numpy().copy()
            st = self.optimizer.state.get(p)
            if st:
                out[f"adam_m/{name}"] = st["exp_avg"].cpu().numpy().copy()
                out[f"adam_v/{name}"] = st["exp_avg_sq"].cpu().numpy().copy()
                out[f"adam_step/{name}"] = np.array(int(st["step"]), dtype=np.int64)
        persistent = self.model.state_dict(keep_vars=True).keys()
        for name, b in self.model.named_buffers():
            if name in persistent:
                out[f"buffers/{name}"] = b.detach().cpu().numpy().copy()
        return out

    def meta(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["betas"] = list(cfg["betas"])
        return {"model_spec": self.model.spec.to_dict(), "train_config": cfg, "step": self.step,
                "epoch": self.epoch, "steps_per_epoch": self.steps_per_epoch, "rng": self.rng_state()}

    def save(self, path) -> None:
        ckpt.write_container(path, self.meta(), self.arrays())
        self.last_checkpoint = str(path)

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None) -> "TrainState":
        manifest, arrays = ckpt.read_container(path)
        spec = ModelSpec.from_dict(manifest["model_spec"])
        stored = manifest["train_config"]
        stored["betas"] = tuple(stored["betas"])
        cfg = cfg or TrainConfig(**stored)
        model = CANModel(spec)
        params = dict(model.named_parameters())
        with torch.no_grad():
            for name, p in params.items():
                p.copy_(torch.from_numpy(arrays[f"params/{name}"]))
            for name, b in model.named_buffers():
                key = f"buffers/{name}"
                if key in arrays:
                    b.copy_(torch.from_numpy(arrays[key]))
        opt = make_optimizer(model, cfg)
        for name, p in params.items():
            if f"adam_m/{name}" in arrays:
                opt.state[p] = {
                    "step": torch.tensor(float(arrays[f"adam_step/{name}"])),
                    "exp_avg": torch.from_numpy(arrays[f"adam_m/{name}"].copy()),
                    "exp_avg_sq": torch.from_numpy(arrays[f"adam_v/{name}"].copy()),
                }
        state = cls(model, opt, cfg, manifest["steps_per_epoch"], manifest["step"], str(path))
        return state


def load_model(path) -> CANModel:
    """Model weights only, in eval mode."""
    model = TrainState.load(path).model
    return model.eval()


# --- stepping ----------------------------------------------------------------


def train_step(state: TrainState, batch: TensorBatch, cfg: TrainConfig | None = None) -> tuple[TrainState, LossReport]:
    cfg = cfg or state.cfg
    model, opt = state.model, state.optimizer
    model.train()
    lr = lr_at(state.step, cfg, state.steps_per_epoch)
    for g in opt.param_groups:
        g["lr"] = lr
    opt.zero_grad(set_to_none=True)
    try:
        report = compute_losses(model, batch, cfg)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{exc} at step {state.step}; last good checkpoint: {state.last_checkpoint}",
                             exc.where) from exc
    report.l_total.backward()
    opt.step()
    state.step += 1
    return state, report


def batch_indices(num_images: int, batch_size: int, seed: int, step: int, steps_per_epoch: int) -> np.ndarray:
    epoch, b = divmod(step, steps_per_epoch)
    perm = rngmod.stream(seed, epoch, 0, 0, rngmod.SHUFFLE).permutation(num_images)
    return perm[b * batch_size:(b + 1) * batch_size]


def make_batch(dataset: ImageDataset, step: int, cfg: TrainConfig, aug: AugmentConfig,
               patch_size: int, steps_per_epoch: int) -> TensorBatch:
    idx = batch_indices(len(dataset), cfg.batch_size, cfg.seed, step, steps_per_epoch)
    vb = build_view_batch(dataset.images[idx], aug, cfg.mask_rate, cfg.sigma_max, seed=cfg.seed,
                          epoch=step // steps_per_epoch, indices=idx, num_views=cfg.num_views,
                          patch_size=patch_size)
    return TensorBatch.from_views(vb)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class TrainResult:
    state: TrainState
    metrics_path: Path
    checkpoint_path: Path
    history: list[dict] = field(default_factory=list)


def train_loop(cfg: TrainConfig, dataset: ImageDataset, out_dir, spec: ModelSpec | None = None,
               aug: AugmentConfig | None = None, *, resume=None, max_steps: int | None = None,
               checkpoint_every: int = 0, prefetch: int = 2) -> TrainResult:
    """Train, writing ``metrics.csv``, ``timing.csv`` and checkpoints under ``out_dir``.

    ``metrics.csv`` holds only deterministic columns, so two runs with the same
    seed produce identical files; wall-clock times go to ``timing.csv``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    steps_per_epoch = len(dataset) // cfg.batch_size
    if steps_per_epoch < 1:
        raise ValueError(f"dataset of {len(dataset)} images is smaller than one batch of {cfg.batch_size}")
    if spec is None:
        spec = vit_micro(dataset.image_size)
    aug = aug or AugmentConfig(output_size=spec.image_size)
    unmasked_count(spec.num_patches, cfg.mask_rate)  # validates T' >= 1 up front

    if resume is not None:
        state = TrainState.load(resume, cfg)
        if state.steps_per_epoch != steps_per_epoch:
            raise ValueError(f"{resume}: checkpoint was written with {state.steps_per_epoch} steps per epoch")
    else:
        state = TrainState.create(spec, cfg, steps_per_epoch)
    _, total = schedule_steps(cfg, steps_per_epoch)
    end = total if max_steps is None else min(total, max_steps)

    metrics_path, timing_path = out / "metrics.csv", out / "timing.csv"
    _truncate_csv(metrics_path, state.step)
    _truncate_csv(timing_path, state.step)
    new_m, new_t = not metrics_path.exists(), not timing_path.exists()
    history = []
    writer_pool = ThreadPoolExecutor(max_workers=1)
    loader_pool = ThreadPoolExecutor(max_workers=1)
    pending_write = None
    queue: deque = deque()
    t0 = time.perf_counter()
    try:
        with open(metrics_path, "a", newline="") as mf, open(timing_path, "a", newline="") as tf:
            mw, tw = csv.writer(mf), csv.writer(tf)
            if new_m:
                mw.writerow(METRIC_COLUMNS)
            if new_t:
                tw.writerow(("step", "wall_time"))
            nxt = state.step
            while state.step < end:
                while len(queue) <= prefetch and nxt < end:
                    queue.append(loader_pool.submit(make_batch, dataset, nxt, cfg, aug,
                                                    spec.patch_size, steps_per_epoch))
                    nxt += 1
                batch = queue.popleft().result()
                lr = lr_at(state.step, cfg, steps_per_epoch)
                state, report = train_step(state, batch, cfg)
                row = {"step": state.step, "lr": lr, **report.as_floats()}
                history.append(row)
                mw.writerow([state.step, _fmt(lr)] + [_fmt(row[c]) for c in METRIC_COLUMNS[2:]])
                tw.writerow([state.step, f"{time.perf_counter() - t0:.6f}"])
                mf.flush()
                tf.flush()
                if checkpoint_every and state.step % checkpoint_every == 0:
                    pending_write = _save_async(writer_pool, pending_write, state,
                                                out / "checkpoints" / f"step_{state.step:07d}.ckpt")
                if state.step % 50 == 0:
                    log.info("step %d lr %.3g loss %.5f", state.step, lr, row["l_total"])
        if pending_write is not None:
            pending_write.result()
        final = out / "checkpoints" / "last.ckpt"
        state.save(final)
    finally:
        writer_pool.shutdown(wait=True)
        loader_pool.shutdown(wait=False, cancel_futures=True)
    return TrainResult(state, metrics_path, final, history)


def _save_async(pool, pending, state: TrainState, path):
    if pending is not None:
        pending.result()
    meta, arrays = state.meta(), state.arrays()
    state.last_checkpoint = str(path)
    return pool.submit(ckpt.write_container, path, meta, arrays)


def _truncate_csv(path: Path, last_step: int) -> None:
    """Drop rows after ``last_step`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= last_step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else (float(v) if v != "" else None)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
