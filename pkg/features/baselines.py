from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from core.errors import CapabilityError, ContractError
from features.patching import PatchGrid, SubsetMask
from features.sampler import hard_topm
from services.guardrails import enforce_image_shape, enforce_m_range


@dataclass(frozen=True)
class BaselineMethod:
    kind: str
    requires_gradients: bool


RANDOM = BaselineMethod("random", requires_gradients=False)
GRADIENT_SALIENCY = BaselineMethod("saliency", requires_gradients=True)
BASELINES = {m.kind: m for m in (RANDOM, GRADIENT_SALIENCY)}


def supports_gradients(model) -> bool:
    return callable(getattr(model, "logits", None))


def random_subset(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fisher–Yates parcial: k índices distintos, uniforme sobre los C(d,k) subconjuntos."""
    enforce_m_range(k, d, "k")
    pool = np.arange(d)
    for i in range(k):
        j = int(rng.integers(i, d))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def random_explanations(d: int, k: int, n: int, rng: np.random.Generator) -> SubsetMask:
    """n máscaras k-hot independientes (forma (n, d))."""
    out = torch.zeros((n, d))
    for row in range(n):
        idx = random_subset(d, k, rng)
        if k:
            out[row, torch.from_numpy(idx)] = 1.0
    return SubsetMask(out, "hard")


def patch_scores_from_gradients(grads: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """|grad| promediado sobre canales y sobre cada parche: (B,C,H,W) -> (B,d)."""
    pix = grads.abs().mean(dim=1, keepdim=True)
    pooled = F.avg_pool2d(pix, kernel_size=grid.patch_shape, stride=grid.patch_shape)
    return pooled.flatten(start_dim=1)


def gradient_saliency_explanations(model, images: torch.Tensor, grid: PatchGrid, k: int) -> SubsetMask:
    """
    Saliencia: |∂ logit(clase predicha) / ∂ píxel|, promedio por parche, top-k directo.
    Requiere un modelo con `logits` diferenciable.
    """
    if not supports_gradients(model):
        raise CapabilityError(f"{type(model).__name__} exposes no differentiable logits; saliency needs input gradients")
    enforce_image_shape(images, grid.image_shape, "saliency input")
    if not 1 <= k <= grid.d:
        raise ContractError(f"k={k} outside [1, {grid.d}]")
    x = (images if images.dim() == 4 else images.unsqueeze(0)).detach().clone().to(torch.float32)
    x.requires_grad_(True)
    logits = model.logits(x)
    pred = logits.detach().argmax(dim=-1)
    picked = logits.gather(1, pred.unsqueeze(1)).sum()
    if picked.requires_grad:
        (grads,) = torch.autograd.grad(picked, x, allow_unused=True)
    else:
        grads = None
    if grads is None:
        # salida constante: gradiente nulo
        grads = torch.zeros_like(x)
    return hard_topm(patch_scores_from_gradients(grads.detach(), grid), k)


def baseline_explanations(
    method: BaselineMethod,
    model,
    images: torch.Tensor,
    grid: PatchGrid,
    k: int,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> SubsetMask:
    """Explicaciones k-hot de una línea base para todo el lote, en trozos de `batch_size`."""
    if method.requires_gradients and not supports_gradients(model):
        raise CapabilityError(
            f"baseline '{method.kind}' needs input gradients; {type(model).__name__} exposes no differentiable logits"
        )
    n = images.shape[0] if images.dim() == 4 else 1
    if not method.requires_gradients:
        return random_explanations(grid.d, k, n, rng)
    x = images if images.dim() == 4 else images.unsqueeze(0)
    parts = [gradient_saliency_explanations(model, x[i:i + batch_size], grid, k) for i in range(0, n, batch_size)]
    return SubsetMask(torch.cat([p.values for p in parts]), "hard")
