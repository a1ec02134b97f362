"""Desk-scale experiments: loss complementarity and the denoising ablation.

Both run ViT-Micro on 16 x 16 synthetic images with 4 x 4 patches (T = 16) so
that a full sweep fits a single CPU core.  Results are plain dicts that can be
cached as JSON and plotted with :mod:`can_ssl.plotting`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import synthetic_dataset
from .evaluation import extract_features, linear_probe
from .model import vit_micro
from .trainer import TrainConfig, apply_method, train_loop
from .views import AugmentConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskSetup:
    image_size: int = 16
    patch_size: int = 4
    num_images: int = 2048
    num_test: int = 1024
    num_classes: int = 8
    batch_size: int = 64
    epochs: float = 10
    warmup_epochs: float = 1
    base_lr: float = 4e-3  # peak 1e-3 at batch 64
    mask_rate: float = 0.5
    tail_steps: int = 32  # final losses are averaged over this many last steps

    def spec(self):
        return vit_micro((self.image_size, self.image_size), self.patch_size)

    def augment(self):
        return AugmentConfig(crop_scale_range=(0.2, 1.0), output_size=(self.image_size, self.image_size))

    def train_config(self, seed: int, **kw) -> TrainConfig:
        base = TrainConfig(base_lr=self.base_lr, batch_size=self.batch_size, warmup_epochs=self.warmup_epochs,
                           total_epochs=self.epochs, mask_rate=self.mask_rate, seed=seed)
        method = kw.pop("method", "can")
        return replace(apply_method(base, method), **kw)

    def datasets(self, data_seed: int = 0):
        train = synthetic_dataset(self.num_images, self.num_classes, self.image_size, seed=data_seed)
        test = synthetic_dataset(self.num_test, self.num_classes, self.image_size, seed=data_seed + 1_000_003)
        return train, test


def _tail_mean(history, key, n):
    vals = [r[key] for r in history[-n:] if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def _run(setup: DeskSetup, cfg: TrainConfig, out_dir: Path, train):
    t0 = time.perf_counter()
    res = train_loop(cfg, train, out_dir, setup.spec(), setup.augment())
    log.info("%s seed %d: %d steps in %.0fs", out_dir.name, cfg.seed, res.state.step, time.perf_counter() - t0)
    return res


def complementarity(seed: int, out_dir, setup: DeskSetup = DeskSetup(), lambda_infonce: float = 0.03) -> dict:
    """Final training InfoNCE and reconstruction losses for joint vs single-objective runs.

    All runs mask 50% of patches and share seeds, batches and schedule.  The
    "contrastive" and "reconstruction" runs change only the contrastive weight
    of the joint configuration (to 1 and 0), so noise and the denoising split
    are matched.  The "simclr" and "mae" runs are the plain presets without
    input noise, reported alongside for reference.
    """
    out_dir = Path(out_dir)
    train, _ = setup.datasets()
    joint = setup.train_config(seed, lambda_infonce=lambda_infonce)
    runs = {
        "joint": joint,
        "contrastive": replace(joint, lambda_infonce=1.0),
        "reconstruction": replace(joint, lambda_infonce=0.0),
        "simclr": setup.train_config(seed, method="simclr"),
        "mae": setup.train_config(seed, method="mae", num_views=2),
    }
    out = {"seed": seed, "lambda_infonce": lambda_infonce, "setup": asdict(setup)}
    for name, cfg in runs.items():
        res = _run(setup, cfg, out_dir / f"{name}_s{seed}", train)
        out[name] = {"l_infonce": _tail_mean(res.history, "l_infonce", setup.tail_steps),
                     "l_rec": _tail_mean(res.history, "l_rec", setup.tail_steps),
                     "metrics": str(res.metrics_path)}
    return out


ABLATION = {
    # name: (sigma_max, lambda_, sigma_conditioning)
    "none": (0.0, 1.0, False),
    "noise": (0.05, 1.0, False),
    "noise+loss": (0.05, 0.5, False),
    "full": (0.05, 0.5, True),
}


def denoise_ablation(seed: int, out_dir, setup: DeskSetup = DeskSetup(), lambda_infonce: float = 0.03) -> dict:
    """Linear-probe accuracy (%) of the four denoising configurations for one seed."""
    out_dir = Path(out_dir)
    train, test = setup.datasets()
    out = {"seed": seed, "lambda_infonce": lambda_infonce, "setup": asdict(setup)}
    for name, (sigma_max, lam, cond) in ABLATION.items():
        cfg = setup.train_config(seed, lambda_infonce=lambda_infonce, sigma_max=sigma_max, lambda_=lam,
                                 sigma_conditioning=cond)
        res = _run(setup, cfg, out_dir / f"{name.replace('+', '_')}_s{seed}", train)
        model = res.state.model
        acc = linear_probe(extract_features(model, train), extract_features(model, test))
        out[name] = {"accuracy": 100.0 * acc, "l_total": _tail_mean(res.history, "l_total", setup.tail_steps)}
    return out


# modules whose contents determine training results; editing any of them invalidates cached runs
RESULT_MODULES = ("data", "evaluation", "experiments", "model", "objectives", "patches", "rng", "trainer", "views")


def code_hash() -> str:
    h = hashlib.sha256()
    for name in RESULT_MODULES:
        h.update((Path(__file__).parent / f"{name}.py").read_bytes())
    return h.hexdigest()[:16]


def cached(path, fn, *args, **kwargs) -> dict:
    """Run ``fn`` unless ``path`` already holds a result for the same arguments and code."""
    path = Path(path)
    key = json.dumps({"fn": fn.__name__, "code": code_hash(),
                      "args": [a if not isinstance(a, DeskSetup) else asdict(a) for a in args],
                      "kwargs": {k: (asdict(v) if isinstance(v, DeskSetup) else v) for k, v in kwargs.items()}},
                     sort_keys=True, default=str)
    if path.exists():
        stored = json.loads(path.read_text())
        if stored.get("key") == key:
            return stored["result"]
    path.parent.mkdir(parents=True, exist_ok=True)
    lock = path.with_suffix(".lock")
    try:
        lock.open("x").close()
    except FileExistsError:
        raise RuntimeError(f"{lock} exists: another process is computing this result "
                           "(delete the lock if that process has died)") from None
    try:
        result = fn(*args, **kwargs)
        path.write_text(json.dumps({"key": key, "result": result}, indent=2))
    finally:
        lock.unlink()
    return result


EXPERIMENTS = {"complementarity": complementarity, "denoise_ablation": denoise_ablation}


def run_cached(name: str, seed: int, root, setup: DeskSetup = DeskSetup()) -> dict:
    """One seed of a named experiment, cached as ``root/<name>_s<seed>.json``."""
    root = Path(root)
    return cached(root / f"{name}_s{seed}.json", EXPERIMENTS[name], seed, str(root / name), setup)


def main(argv=None):
    p = argparse.ArgumentParser(description="run (or reuse) the desk-scale experiments")
    p.add_argument("--root", type=Path, default=Path("acceptance_runs"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--only", choices=sorted(EXPERIMENTS))
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    for seed in args.seeds:
        for name in EXPERIMENTS:
            if args.only in (None, name):
                res = run_cached(name, seed, args.root)
                print(json.dumps({k: v for k, v in res.items() if k != "setup"}), flush=True)


if __name__ == "__main__":
    main()
