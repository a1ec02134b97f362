"""Contrastive + masked-autoencoder + noise-prediction pretraining for vision transformers."""

from .costs import CostReport, method_flops, vit_flops
from .evaluation import FeatureSet, extract_features, k_shot_probe, linear_probe
from .model import CANModel, ModelSpec, init_model, paper_spec, vit_micro
from .objectives import LossWeights, denoise_loss, info_nce, loss_report, recon_loss
from .patches import MaskVector, PatchSequence, TokenGatherPlan, gather_unmasked, patchify, sample_mask, unpatchify
from .trainer import TrainConfig, TrainState, train_loop, train_step
from .views import AugmentConfig, ViewBatch, add_noise, augment, build_view_batch

__version__ = "0.1.0"
