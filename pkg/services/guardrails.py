from __future__ import annotations
from typing import Sequence

import torch

from core.errors import ContractError


def enforce_image_shape(images: torch.Tensor, expected: Sequence[int], what: str = "input") -> None:
    """
    Acepta (C,H,W) o (B,C,H,W); las dimensiones de imagen deben coincidir con `expected`.
    """
    expected = tuple(int(s) for s in expected)
    if images.dim() not in (3, 4) or tuple(images.shape[-3:]) != expected:
        raise ContractError(f"{what} shape {tuple(images.shape)} does not match image shape {expected}")


def enforce_mask_length(values: torch.Tensor, d: int) -> None:
    if values.dim() == 0 or values.shape[-1] != d:
        raise ContractError(f"mask length {values.shape[-1] if values.dim() else 0} does not match d={d}")


def enforce_hard(values: torch.Tensor) -> None:
    if not bool(((values == 0) | (values == 1)).all()):
        raise ContractError("hard mask entries must be 0 or 1")


def enforce_relaxed(values: torch.Tensor) -> None:
    v = values.detach()
    if not bool(torch.isfinite(v).all()) or bool((v < 0).any()) or bool((v > 1).any()):
        raise ContractError("relaxed mask entries must lie in [0, 1]")


def enforce_khot(values: torch.Tensor, k: int) -> None:
    """Cada fila (último eje) con exactamente k unos."""
    enforce_hard(values)
    counts = values.sum(dim=-1)
    if not bool((counts == k).all()):
        bad = sorted(set(int(c) for c in counts.flatten().tolist()) - {k})
        raise ContractError(f"explanations must be exactly {k}-hot; found rows with {bad} ones")


def enforce_m_range(m: int, d: int, what: str = "m") -> None:
    if m < 0 or m > d:
        raise ContractError(f"{what}={m} outside [0, {d}]")


def enforce_same_count(n_masks: int, n_samples: int) -> None:
    if n_masks != n_samples:
        raise ContractError(f"{n_masks} masks for {n_samples} samples")
