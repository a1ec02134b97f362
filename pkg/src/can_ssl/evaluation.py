"""Frozen-encoder evaluation: feature extraction, linear probe and k-shot probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler
from torchvision.transforms.v2 import functional as TF

from . import checkpoint as ckpt
from .data import ImageDataset
from .model import CANModel, ModelSpec
from .patches import patchify_batch

FEATURES_FORMAT = "can-ssl-features"


@dataclass
class FeatureSet:
    features: np.ndarray  # (N, d) float32
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        return FeatureSet(self.features[idx], self.labels[idx])

    def save(self, path) -> None:
        ckpt.write_container(path, {}, {"features": self.features, "labels": self.labels}, fmt=FEATURES_FORMAT)

    @classmethod
    def load(cls, path) -> "FeatureSet":
        _, arrays = ckpt.read_container(path, fmt=FEATURES_FORMAT)
        return cls(arrays["features"], arrays["labels"])


@dataclass(frozen=True)
class ProbeConfig:
    C: float = 1.0
    tol: float = 1e-6
    max_iter: int = 5000
    standardize: bool = True


def _as_model(model_or_path, expect: ModelSpec | None) -> CANModel:
    if isinstance(model_or_path, CANModel):
        model = model_or_path
    else:
        from .trainer import load_model

        model = load_model(model_or_path)
    if expect is not None and model.spec != expect:
        raise ValueError("checkpoint model spec does not match the configured model")
    return model


@torch.no_grad()
def extract_features(model_or_path, dataset: ImageDataset, batch_size: int = 256,
                     expect: ModelSpec | None = None) -> FeatureSet:
    """Mean-pooled final encoder tokens for unmasked, noiseless images (eval mode, no head)."""
    model = _as_model(model_or_path, expect)
    was_training = model.training
    model.eval()
    spec = model.spec
    dtype = model.mask_token.dtype
    feats = []
    try:
        for start in range(0, len(dataset), batch_size):
            imgs = torch.from_numpy(dataset.images[start:start + batch_size]).to(torch.float32) / 255.0
            if tuple(imgs.shape[1:3]) != tuple(spec.image_size):
                imgs = TF.resize(imgs.permute(0, 3, 1, 2), list(spec.image_size), antialias=True).permute(0, 2, 3, 1)
            patches = patchify_batch(imgs.contiguous(), spec.patch_size).to(dtype)
            feats.append(model.features(model.encode_full(patches)).float().numpy())
    finally:
        model.train(was_training)
    return FeatureSet(np.concatenate(feats), np.asarray(dataset.labels, dtype=np.int64))


class LinearProbe:
    """Multinomial logistic regression on (optionally standardised) frozen features."""

    def __init__(self, cfg: ProbeConfig = ProbeConfig()):
        self.cfg = cfg

    def fit(self, train: FeatureSet) -> "LinearProbe":
        if np.unique(train.labels).size < 2:
            raise ValueError("linear probe needs at least two classes in the training set")
        x = train.features.astype(np.float64)
        self.scaler = StandardScaler().fit(x) if self.cfg.standardize else None
        if self.scaler is not None:
            x = self.scaler.transform(x)
        self.clf = LogisticRegression(C=self.cfg.C, tol=self.cfg.tol, max_iter=self.cfg.max_iter)
        self.clf.fit(x, train.labels)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = features.astype(np.float64)
        if self.scaler is not None:
            x = self.scaler.transform(x)
        return self.clf.predict(x)

    def accuracy(self, test: FeatureSet) -> float:
        return float(np.mean(self.predict(test.features) == test.labels))


def linear_probe(train: FeatureSet, test: FeatureSet, cfg: ProbeConfig = ProbeConfig()) -> float:
    missing = set(np.unique(test.labels)) - set(np.unique(train.labels))
    if missing:
        raise ValueError(f"test classes {sorted(missing)} absent from the training set")
    return LinearProbe(cfg).fit(train).accuracy(test)


@dataclass
class KShotResult:
    k: int
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def repeats(self) -> int:
        return len(self.accuracies)

    def to_dict(self) -> dict:
        return {"k": self.k, "mean": self.mean, "std": self.std, "R": self.repeats,
                "accuracies": list(self.accuracies)}


def k_shot_probe(train: FeatureSet, k: int, rng: np.random.Generator, test: FeatureSet | None = None,
                 repeats: int = 5, cfg: ProbeConfig = ProbeConfig()) -> KShotResult:
    """Fit on ``k`` random examples per class, evaluate, repeat ``repeats`` times.

    Without an explicit ``test`` set the examples not drawn are held out.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    classes, counts = np.unique(train.labels, return_counts=True)
    if counts.min() < k:
        c = classes[counts.argmin()]
        raise ValueError(f"class {c} has only {counts.min()} examples, fewer than k={k}")
    accs = []
    for _ in range(repeats):
        chosen = np.sort(np.concatenate([rng.choice(np.flatnonzero(train.labels == c), size=k, replace=False)
                                         for c in classes]))
        held = test
        if held is None:
            rest = np.setdiff1d(np.arange(len(train)), chosen)
            if rest.size == 0:
                raise ValueError("no examples left to evaluate on; pass a test set")
            held = train.subset(rest)
        accs.append(linear_probe(train.subset(chosen), held, cfg))
    return KShotResult(k, accs)
