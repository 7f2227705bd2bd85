"""
Explicador E_k: red de selección totalmente convolucional + objetivo causal.

Los puntajes del selector son de pertenencia al conjunto que se *conserva* (s̄);
la explicación de k parches es el complemento del top-(d-k).
"""
from __future__ import annotations

import logging
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from blackbox import parameter_hash
from core.config import SamplerConfig, SelectorTrainConfig
from core.errors import ConsistencyError, ContractError, TrainingError
from core.load import LabeledDataset
from features.patching import PatchGrid, SubsetMask, complement
from features.sampler import hard_topm, make_generator, relaxed_mhot, sample_gumbel
from services.guardrails import enforce_image_shape

logger = logging.getLogger(__name__)


class SelectorModel(nn.Module):
    """g_θ: 3 convoluciones 3x3 (C→h→h→1) + promedio espacial por parche → d logits."""

    kind = "selector"

    def __init__(self, grid: PatchGrid, k: int, hidden_channels: int = 16):
        super().__init__()
        self.grid = grid
        self.k = int(k)
        self.hidden_channels = int(hidden_channels)
        self.input_shape = grid.image_shape
        c = grid.image_shape[0]
        h = self.hidden_channels
        self.net = nn.Sequential(
            nn.Conv2d(c, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(h, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(h, 1, 3, padding=1),
        )
        # capa final en cero: logits iguales al inicio
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)
        self.history: list[dict] = []

    @property
    def descriptor(self) -> list[dict]:
        c, h = self.grid.image_shape[0], self.hidden_channels
        return [
            {"type": "conv", "in": c, "out": h, "kernel": 3, "padding": 1},
            {"type": "relu"},
            {"type": "conv", "in": h, "out": h, "kernel": 3, "padding": 1},
            {"type": "relu"},
            {"type": "conv", "in": h, "out": 1, "kernel": 3, "padding": 1},
            {"type": "patch_avgpool", "patch_shape": list(self.grid.patch_shape)},
        ]

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        enforce_image_shape(images, self.grid.image_shape, "selector input")
        x = images if images.dim() == 4 else images.unsqueeze(0)
        pixel_logits = self.net(x.to(torch.float32))
        pooled = F.avg_pool2d(pixel_logits, kernel_size=self.grid.patch_shape, stride=self.grid.patch_shape)
        return pooled.flatten(start_dim=1)


@torch.no_grad()
def importance_scores(selector: SelectorModel, image: torch.Tensor) -> torch.Tensor:
    """(C,H,W) -> (d,); (B,C,H,W) -> (B,d). Determinista."""
    was_training = selector.training
    selector.eval()
    try:
        scores = selector(image)
    finally:
        selector.train(was_training)
    return scores[0] if image.dim() == 3 else scores


def causal_loss(
    blackbox,
    images: torch.Tensor,
    relaxed_masks: SubsetMask | torch.Tensor,
    clamp_eps: float = 1e-8,
    grid: PatchGrid | None = None,
    batch_index: int | None = None,
) -> torch.Tensor:
    """
    media del lote de  Σ_y F(X)_y · log(max(F(Z⊙X)_y, eps)).
    F(X) es constante (sin gradiente); el único camino de gradiente es Z.
    """
    z = relaxed_masks.values if isinstance(relaxed_masks, SubsetMask) else relaxed_masks
    if z.shape[0] != images.shape[0]:
        raise ContractError(f"{z.shape[0]} masks for a batch of {images.shape[0]}")
    with torch.no_grad():
        target = blackbox.proba_under_mask(images, torch.ones_like(z), grid)
    masked = blackbox.proba_under_mask(images, z, grid)
    loss = (target * torch.log(masked.clamp_min(clamp_eps))).sum(dim=-1).mean()
    if not torch.isfinite(loss):
        raise TrainingError(f"causal loss is not finite at batch {batch_index}")
    return loss


def train_selector(
    blackbox,
    train: LabeledDataset,
    grid: PatchGrid,
    k: int,
    cfg: SelectorTrainConfig,
) -> SelectorModel:
    d = grid.d
    if not 1 <= k < d:
        raise ContractError(f"selector training needs 1 <= k < d, got k={k}, d={d}")
    if tuple(blackbox.input_shape) != tuple(train.image_shape) or tuple(grid.image_shape) != tuple(train.image_shape):
        raise ContractError(
            f"shape mismatch: blackbox {tuple(blackbox.input_shape)}, grid {grid.image_shape}, data {train.image_shape}"
        )
    m = d - k

    torch.manual_seed(cfg.seed)
    selector = SelectorModel(grid, k, cfg.hidden_channels)
    frozen_hash = parameter_hash(blackbox)
    grad_flags = [p.requires_grad for p in blackbox.parameters()]
    blackbox.freeze()

    x = torch.from_numpy(np.array(train.images))
    loader = DataLoader(
        TensorDataset(x),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
    )
    noise_gen = make_generator(cfg.seed + 1)
    opt = torch.optim.Adam(selector.parameters(), lr=cfg.learning_rate)

    step = 0
    try:
        for epoch in range(cfg.epochs):
            selector.train()
            total, seen = 0.0, 0
            for (xb,) in loader:
                tau = cfg.temperature_at(step)
                logits = selector(xb)
                noise = sample_gumbel((xb.shape[0], m, d), noise_gen)
                z = relaxed_mhot(logits, noise, SamplerConfig(temperature=tau, m=m))
                loss = causal_loss(blackbox, xb, z, cfg.log_clamp_epsilon, grid, batch_index=step)
                opt.zero_grad()
                loss.backward()
                opt.step()
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"selector loss diverged at step {step}")
                selector.history.append({"epoch": epoch, "step": step, "loss": value, "temperature": tau})
                total += value * xb.shape[0]
                seen += xb.shape[0]
                step += 1
            logger.info("selector k=%d epoch %d/%d loss=%.5f tau=%.3f", k, epoch + 1, cfg.epochs, total / seen, tau)
    finally:
        for p, flag in zip(blackbox.parameters(), grad_flags):
            p.requires_grad_(flag)

    if parameter_hash(blackbox) != frozen_hash:
        raise ConsistencyError("black-box parameters changed during selector training")
    selector.eval()
    return selector


def explanation_from_scores(scores: torch.Tensor, k: int) -> SubsetMask:
    """keep = top-(d-k) de los puntajes; explicación = complemento (k unos)."""
    d = scores.shape[-1]
    if not 1 <= k <= d:
        raise ContractError(f"explanation size k={k} outside [1, {d}]")
    return complement(hard_topm(scores, d - k))


def explain(selector: SelectorModel, image: torch.Tensor, k: int | None = None) -> SubsetMask:
    if image.dim() != 3:
        raise ContractError("explain() takes a single (C,H,W) image; use explain_batch for batches")
    return explanation_from_scores(importance_scores(selector, image), selector.k if k is None else k)


def explain_batch(selector: SelectorModel, images: torch.Tensor, k: int | None = None, batch_size: int = 512) -> SubsetMask:
    k = selector.k if k is None else k
    scores = torch.cat(
        [importance_scores(selector, images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    )
    return explanation_from_scores(scores, k)
