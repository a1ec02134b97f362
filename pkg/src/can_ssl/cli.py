"""Pretrain, probe, cost out and plot contrastive masked-autoencoder runs.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import costs
from . import rng as rngmod
from .config import KEYS, ConfigError, RunConfig, flag_for
from .evaluation import ProbeConfig, extract_features, k_shot_probe, linear_probe
from .model import TransformerSpec
from .plotting import plot_flops, render
from .trainer import METHODS, train_loop

log = logging.getLogger("can_ssl")


class UsageError(ValueError):
    """Bad input detected before any compute; maps to exit code 2."""


def _add_config_flags(p: argparse.ArgumentParser, sections) -> None:
    p.add_argument("--config", type=Path, help="TOML file with dotted keys, e.g. train.mask_rate = 0.5")
    for key, (section, name, _) in KEYS.items():
        if section in sections:
            choices = METHODS if key == "train.method" else None
            p.add_argument(flag_for(name), dest=key, default=None, metavar="V", choices=choices,
                           help=f"overrides {key}")


def _overrides(args) -> dict:
    return {k: v for k, v in vars(args).items() if k in KEYS and v is not None}


def cmd_pretrain(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.toml")
    train, _ = cfg.datasets()
    log.info("pretraining %s on %d images -> %s", cfg.train.method, len(train), out)
    result = train_loop(cfg.train, train, out, cfg.model_spec(), cfg.augment_config(),
                        resume=args.resume, max_steps=cfg.run.max_steps or None,
                        checkpoint_every=cfg.run.checkpoint_every)
    last = result.history[-1] if result.history else {}
    print(",".join(["step"] + [k for k in ("l_infonce", "l_rec", "l_denoise", "l_total")]))
    print(",".join([str(result.state.step)] + [
        "" if last.get(k) is None else f"{last[k]:.6g}" for k in ("l_infonce", "l_rec", "l_denoise", "l_total")]))
    print(f"checkpoint: {result.checkpoint_path}", file=sys.stderr)
    return 0


def cmd_probe(args) -> int:
    cfg = RunConfig.load(args.config, _overrides(args))
    if args.k is not None and args.k < 1:
        raise UsageError("--k must be at least 1")
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    train, test = cfg.datasets()
    if args.k is not None:
        classes, counts = np.unique(train.labels, return_counts=True)
        if counts.min() < args.k:
            raise UsageError(f"--k {args.k} exceeds the {counts.min()} training examples of class "
                             f"{classes[counts.argmin()]}; use a smaller k or more images")
    probe_cfg = ProbeConfig(C=args.C)
    tr = extract_features(args.checkpoint, train)
    te = extract_features(args.checkpoint, test)
    report = {"checkpoint": str(args.checkpoint), "dataset": cfg.data.dataset,
              "num_train": len(train), "num_test": len(test), "probe": asdict(probe_cfg),
              "data": {k: v for k, v in cfg.values().items() if k.startswith("data.")}}
    if args.k is None:
        report["linear"] = {"accuracy": linear_probe(tr, te, probe_cfg)}
    else:
        res = k_shot_probe(tr, args.k, rngmod.stream(args.probe_seed, rngmod.PROBE), test=te,
                           repeats=args.repeats, cfg=probe_cfg)
        report["k_shot"] = {**res.to_dict(), "probe_seed": args.probe_seed}
    text = json.dumps(report, indent=2, sort_keys=True)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text + "\n")
    print(text)
    return 0


def cmd_flops(args) -> int:
    if not 0 <= args.mask_rate < 1:
        raise UsageError("--mask-rate must lie in [0, 1)")
    decoder = None
    if args.decoder_depth is not None or args.decoder_width is not None:
        width = args.decoder_width or 512
        decoder = TransformerSpec(args.decoder_depth if args.decoder_depth is not None else 8,
                                  width, max(1, width // 32), 4 * width)
    try:
        reports = costs.compare(args.models, args.mask_rate, decoder)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    print(costs.format_table(reports))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    costs.write_csv(reports, args.out)
    svg = args.out.with_suffix(".svg")
    plot_flops([{k: v for k, v in r.row().items()} for r in reports], svg)
    print(f"wrote {args.out} and {svg}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    if labels is not None and len(labels) != len(args.inputs):
        raise UsageError("--labels needs one label per input")
    try:
        written = render(args.inputs, args.out_dir, labels)
    except ValueError as e:  # malformed, empty or mixed-kind inputs
        raise UsageError(str(e)) from None
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="can-ssl", description=__doc__.splitlines()[0],
                                     epilog="exit codes: 0 success, 1 runtime failure, 2 invalid input")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain an encoder (CAN, SimCLR-style or MAE-style preset)")
    _add_config_flags(p, {"data", "model", "augment", "train", "run"})
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear or k-shot probe on frozen encoder features")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_config_flags(p, {"data"})
    p.add_argument("--k", type=int, help="examples per class; omit for a full linear probe")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--C", type=float, default=1.0, help="inverse L2 strength of the logistic regression")
    p.add_argument("--out", type=Path, default=Path("probe.json"))
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("flops", help="analytic per-image FLOPs for CAN, SimCLR and MAE")
    p.add_argument("--models", type=lambda s: tuple(s.split(",")), default=("vit-s", "vit-b", "vit-l", "vit-h"))
    p.add_argument("--mask-rate", type=float, default=0.5)
    p.add_argument("--decoder-depth", type=int)
    p.add_argument("--decoder-width", type=int)
    p.add_argument("--out", type=Path, default=Path("flops.csv"))
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("plot", help="render SVG figures from metrics, sweep or FLOPs CSVs")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--out-dir", type=Path, default=Path("figures"))
    p.add_argument("--labels", help="comma-separated run labels for loss curves")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
