"""Run configuration: flat dotted-key TOML files, ``--kebab-case`` overrides, validation.

Every key lives in one section (``data``, ``model``, ``augment``, ``train``,
``run``) and maps to exactly one flag, e.g. ``train.mask_rate`` is
``--mask-rate`` and ``train.lambda`` is ``--lambda``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

import tomli

from . import data as datamod
from .model import HeadSpec, ModelSpec, TransformerSpec
from .patches import unmasked_count
from .trainer import TrainConfig, apply_method
from .views import AugmentConfig

DATASETS = ("synthetic", "cifar10")


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds one ``key: message`` string per offending key."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class DataSection:
    dataset: str = "synthetic"
    data_dir: str = ""
    num_images: int = 2048  # synthetic train size, or a cap on CIFAR-10 (0 = all)
    num_test: int = 512
    num_classes: int = 4
    image_size: int = 32
    data_seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    patch_size: int = 4
    width: int = 192
    depth: int = 6
    heads: int = 3
    mlp_dim: int = 768
    decoder_width: int = 128
    decoder_depth: int = 2
    decoder_heads: int = 4
    decoder_mlp_dim: int = 512
    head_hidden_dim: int = 512
    head_hidden_layers: int = 2
    head_out_dim: int = 128
    sigma_scale: float = 1000.0


@dataclass(frozen=True)
class AugmentSection:
    crop_scale_min: float = 0.08
    crop_scale_max: float = 1.0
    jitter_strength: float = 1.0
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    flip_prob: float = 0.5


@dataclass(frozen=True)
class RunSection:
    out_dir: str = "runs/default"
    max_steps: int = 0  # 0 = run the full schedule
    checkpoint_every: int = 0


SECTIONS = {"data": DataSection, "model": ModelSection, "augment": AugmentSection,
            "train": TrainConfig, "run": RunSection}


def _key(name: str) -> str:
    return name.rstrip("_")


def flag_for(name: str) -> str:
    return "--" + _key(name).replace("_", "-")


def _index():
    out = {}
    for section, cls in SECTIONS.items():
        hints = get_type_hints(cls)
        for f in fields(cls):
            out[f"{section}.{_key(f.name)}"] = (section, f.name, hints[f.name])
    flags = [flag_for(name) for _, name, _ in out.values()]
    assert len(flags) == len(set(flags)), "flag names must be unique across sections"
    return out


KEYS = _index()
FLAGS = {flag_for(name): key for key, (_, name, _) in KEYS.items()}


def _coerce(value, typ, key):
    """Convert a TOML value or a flag string to the field's type."""
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ValueError(f"{key}: expected true or false, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected an integer, got {value!r}") from None
    if typ is float:
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not math.isfinite(out):
            raise ValueError(f"{key}: expected a finite number, got {value!r}")
        return out
    if typ is str:
        if not isinstance(value, str):
            raise ValueError(f"{key}: expected a string, got {value!r}")
        return value
    # tuple[float, float]
    items = value.split(",") if isinstance(value, str) else value
    if not isinstance(items, (list, tuple)) or len(items) != 2:
        raise ValueError(f"{key}: expected two comma-separated numbers, got {value!r}")
    return tuple(_coerce(v, float, key) for v in items)


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSection = field(default_factory=RunSection)

    # --- construction -----------------------------------------------------

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        """Build from ``{dotted key: value}``; raises ConfigError listing every bad key.

        A ``train.method`` preset is applied last, so its pinned weights win
        over anything set explicitly.
        """
        problems, parts = [], {s: {} for s in SECTIONS}
        for key, value in values.items():
            if key not in KEYS:
                problems.append(f"{key}: unknown key")
                continue
            section, name, typ = KEYS[key]
            try:
                parts[section][name] = _coerce(value, typ, key)
            except ValueError as e:
                problems.append(str(e))
        train_vals = parts.pop("train")
        train = TrainConfig.__new__(TrainConfig)  # validated below rather than in __init__
        for f in fields(TrainConfig):
            object.__setattr__(train, f.name, train_vals.get(f.name, f.default))
        if not train.problems():
            train = apply_method(train)
        problems += [f"train.{p}" for p in train.problems()]
        cfg = cls(train=train, **{s: SECTIONS[s](**v) for s, v in parts.items()})
        problems += cfg.problems()
        if problems:
            raise ConfigError(sorted(set(problems)))
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            with open(path, "rb") as fh:
                try:
                    values = _flatten(tomli.load(fh))
                except tomli.TOMLDecodeError as e:
                    raise ConfigError([f"{path}: {e}"]) from None
        values.update(overrides or {})
        return cls.from_values(values)

    # --- validation -------------------------------------------------------

    def problems(self) -> list[str]:
        errs = []
        d, m, a = self.data, self.model, self.augment
        if d.dataset not in DATASETS:
            errs.append(f"data.dataset: must be one of {DATASETS}, got {d.dataset!r}")
        elif d.dataset == "cifar10":
            path = self.data_dir
            if not path:
                errs.append("data.data_dir: required for cifar10 (or set CAN_CIFAR10_DIR)")
            elif not datamod.cifar10_available(path):
                errs.append(f"data.data_dir: no CIFAR-10 binary batches found under {path!r}")
            if d.image_size != 32:
                errs.append("data.image_size: CIFAR-10 images are 32 x 32")
        if d.num_images < 0 or (d.dataset == "synthetic" and d.num_images < 2):
            errs.append("data.num_images: too small")
        if d.num_test < 1:
            errs.append("data.num_test: must be positive")
        if d.dataset == "synthetic" and not 2 <= d.num_classes <= len(datamod.SHAPES):
            errs.append(f"data.num_classes: must lie in [2, {len(datamod.SHAPES)}]")
        if m.patch_size < 1 or d.image_size < 1 or d.image_size % m.patch_size:
            errs.append(f"model.patch_size: {m.patch_size} does not divide data.image_size {d.image_size}")
        else:
            T = (d.image_size // m.patch_size) ** 2
            try:
                unmasked_count(T, self.train.mask_rate)
            except ValueError as e:
                errs.append(f"train.mask_rate: {e}")
        for w, h, name in ((m.width, m.heads, "model.heads"), (m.decoder_width, m.decoder_heads, "model.decoder_heads")):
            if h < 1 or w % h:
                errs.append(f"{name}: must divide the matching width")
        if m.width % 4:
            errs.append("model.width: must be divisible by 4 for the 2-D sin-cos table")
        if m.decoder_depth > 0 and m.decoder_width % 4:
            errs.append("model.decoder_width: must be divisible by 4")
        for name in ("width", "depth", "mlp_dim", "decoder_width", "decoder_mlp_dim", "head_hidden_dim", "head_out_dim"):
            if getattr(m, name) < (0 if name == "depth" else 1):
                errs.append(f"model.{name}: must be positive")
        if m.decoder_depth < 0 or m.head_hidden_layers < 0:
            errs.append("model.decoder_depth: must be non-negative")
        if m.head_out_dim >= m.width:
            errs.append("model.head_out_dim: must be smaller than model.width")
        if self.train.method != "simclr" and m.decoder_depth == 0:
            errs.append("model.decoder_depth: reconstruction needs a decoder (depth >= 1)")
        if not 0 < a.crop_scale_min <= a.crop_scale_max <= 1:
            errs.append("augment.crop_scale_min: need 0 < crop_scale_min <= crop_scale_max <= 1")
        for name in ("jitter_prob", "grayscale_prob", "blur_prob", "flip_prob"):
            if not 0 <= getattr(a, name) <= 1:
                errs.append(f"augment.{name}: must be a probability")
        if a.jitter_strength < 0:
            errs.append("augment.jitter_strength: must be non-negative")
        if self.run.max_steps < 0 or self.run.checkpoint_every < 0:
            errs.append("run.max_steps: must be non-negative")
        out = Path(self.run.out_dir)
        if out.exists() and not out.is_dir():
            errs.append(f"run.out_dir: {out} exists and is not a directory")
        return errs

    def validate(self) -> "RunConfig":
        errs = self.problems()
        if errs:
            raise ConfigError(errs)
        return self

    # --- derived objects --------------------------------------------------

    @property
    def data_dir(self) -> str:
        return self.data.data_dir or datamod.env_cifar_dir() or ""

    def model_spec(self) -> ModelSpec:
        m, size = self.model, self.data.image_size
        return ModelSpec(
            encoder=TransformerSpec(m.depth, m.width, m.heads, m.mlp_dim),
            decoder=TransformerSpec(m.decoder_depth, m.decoder_width, m.decoder_heads, m.decoder_mlp_dim),
            head=HeadSpec(m.head_hidden_dim, m.head_hidden_layers, m.head_out_dim),
            patch_size=m.patch_size, image_size=(size, size), sigma_scale=m.sigma_scale)

    def augment_config(self) -> AugmentConfig:
        a, size = self.augment, self.data.image_size
        return AugmentConfig(crop_scale_range=(a.crop_scale_min, a.crop_scale_max),
                             jitter_strength=a.jitter_strength, jitter_prob=a.jitter_prob,
                             grayscale_prob=a.grayscale_prob, blur_prob=a.blur_prob,
                             flip_prob=a.flip_prob, output_size=(size, size))

    def datasets(self) -> tuple[datamod.ImageDataset, datamod.ImageDataset]:
        """(train, test) images as configured."""
        d = self.data
        if d.dataset == "cifar10":
            train = datamod.load_cifar10(self.data_dir, "train")
            test = datamod.load_cifar10(self.data_dir, "test")
            if d.num_images:
                train = train.subset(slice(0, d.num_images))
            return train, test.subset(slice(0, d.num_test))
        train = datamod.synthetic_dataset(d.num_images, d.num_classes, d.image_size, seed=d.data_seed)
        test = datamod.synthetic_dataset(d.num_test, d.num_classes, d.image_size, seed=d.data_seed + 1_000_003)
        return train, test

    # --- serialisation ----------------------------------------------------

    def values(self) -> dict:
        out = {}
        for section in SECTIONS:
            for name, value in asdict(getattr(self, section)).items():
                out[f"{section}.{_key(name)}"] = value
        return out

    def to_toml(self) -> str:
        lines = []
        for key, value in self.values().items():
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_toml())


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)  # JSON string escapes are valid TOML basic strings
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_overrides(pairs: list[tuple[str, str]]) -> dict:
    """Map ``[(flag, value)]`` to dotted keys, rejecting unknown flags."""
    out, bad = {}, []
    for flag, value in pairs:
        if flag not in FLAGS:
            bad.append(f"{flag}: unknown flag")
        else:
            out[FLAGS[flag]] = value
    if bad:
        raise ConfigError(bad)
    return out

