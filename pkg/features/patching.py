"""
Grilla de parches disjuntos y máscaras por parche.

Convención única: una máscara guarda indicadores de *conservar* (1 = el parche se
mantiene, 0 = se pone en cero). El selector emite la máscara de conservación del
complemento; la explicación es su complemento.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import torch

from core.errors import ConfigurationError, ContractError
from services.guardrails import (
    enforce_hard,
    enforce_image_shape,
    enforce_mask_length,
    enforce_relaxed,
)

MaskKind = Literal["hard", "relaxed"]


@dataclass(frozen=True)
class PatchGrid:
    image_shape: tuple[int, int, int]
    patch_shape: tuple[int, int]
    grid_dims: tuple[int, int]

    @property
    def d(self) -> int:
        return self.grid_dims[0] * self.grid_dims[1]

    @property
    def patch_area(self) -> int:
        return self.patch_shape[0] * self.patch_shape[1]

    def patch_bounds(self, index: int) -> tuple[slice, slice]:
        """Filas/columnas (en píxeles) del parche `index`, orden row-major."""
        if not 0 <= index < self.d:
            raise ContractError(f"patch index {index} outside [0, {self.d})")
        r, c = divmod(index, self.grid_dims[1])
        ph, pw = self.patch_shape
        return slice(r * ph, (r + 1) * ph), slice(c * pw, (c + 1) * pw)

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "patch_shape": list(self.patch_shape),
            "grid_dims": list(self.grid_dims),
            "d": self.d,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PatchGrid":
        return make_grid(tuple(raw["image_shape"]), tuple(raw["patch_shape"]))


def make_grid(image_shape: Sequence[int], patch_shape: Sequence[int]) -> PatchGrid:
    if len(image_shape) != 3 or len(patch_shape) != 2:
        raise ConfigurationError(f"expected (C,H,W) and (ph,pw), got {tuple(image_shape)} and {tuple(patch_shape)}")
    c, h, w = (int(s) for s in image_shape)
    ph, pw = (int(s) for s in patch_shape)
    if min(c, h, w, ph, pw) <= 0:
        raise ConfigurationError(f"dimensions must be positive: image {image_shape}, patch {patch_shape}")
    if h % ph or w % pw:
        raise ConfigurationError(
            f"image {h}x{w} is not divisible into {ph}x{pw} patches"
        )
    return PatchGrid(image_shape=(c, h, w), patch_shape=(ph, pw), grid_dims=(h // ph, w // pw))


@dataclass(frozen=True)
class SubsetMask:
    """values: (..., d). Un lote de máscaras es un SubsetMask con forma (B, d)."""
    values: torch.Tensor
    kind: MaskKind = "hard"

    def __post_init__(self):
        if self.kind not in ("hard", "relaxed"):
            raise ContractError(f"unknown mask kind {self.kind!r}")
        if self.values.dim() == 0:
            raise ContractError("mask must have at least one dimension")
        if self.kind == "hard":
            enforce_hard(self.values)
        else:
            enforce_relaxed(self.values)

    @property
    def d(self) -> int:
        return int(self.values.shape[-1])

    @classmethod
    def from_indices(cls, d: int, indices: Iterable[int]) -> "SubsetMask":
        v = torch.zeros(d)
        idx = list(indices)
        if idx:
            v[torch.tensor(idx, dtype=torch.long)] = 1.0
        return cls(v, "hard")

    @classmethod
    def ones(cls, d: int, batch: int | None = None) -> "SubsetMask":
        shape = (d,) if batch is None else (batch, d)
        return cls(torch.ones(shape), "hard")

    def indices(self) -> tuple[int, ...]:
        if self.kind != "hard" or self.values.dim() != 1:
            raise ContractError("indices() needs a single hard mask")
        return tuple(int(i) for i in torch.nonzero(self.values).flatten().tolist())

    def count(self) -> torch.Tensor:
        return self.values.sum(dim=-1)

    def __len__(self) -> int:
        return 1 if self.values.dim() == 1 else int(self.values.shape[0])

    def __getitem__(self, i) -> "SubsetMask":
        if self.values.dim() == 1:
            raise ContractError("cannot index a single mask")
        return SubsetMask(self.values[i], self.kind)

    def to_list(self) -> list:
        return self.values.detach().cpu().tolist()


def stack_masks(masks: Sequence[SubsetMask]) -> SubsetMask:
    kinds = {m.kind for m in masks}
    if not masks or len(kinds) != 1:
        raise ContractError("need a nonempty list of masks of one kind")
    return SubsetMask(torch.stack([m.values for m in masks]), kinds.pop())


def complement(mask: SubsetMask) -> SubsetMask:
    if mask.kind != "hard":
        raise ContractError("complement() is only defined for hard masks")
    return SubsetMask(1.0 - mask.values, "hard")


def _values(mask: SubsetMask | torch.Tensor) -> torch.Tensor:
    return mask.values if isinstance(mask, SubsetMask) else mask


def mask_to_pixel_map(mask: SubsetMask | torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """(..., d) -> (..., H, W): cada píxel lleva el valor de su parche."""
    v = _values(mask)
    enforce_mask_length(v, grid.d)
    rows, cols = grid.grid_dims
    ph, pw = grid.patch_shape
    blocks = v.reshape(*v.shape[:-1], rows, cols)
    return blocks.repeat_interleave(ph, dim=-2).repeat_interleave(pw, dim=-1)


def apply_mask(image: torch.Tensor, mask: SubsetMask | torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """
    Parche i de la salida = mask_i * parche i (se difunde sobre canales).
    image (C,H,W) con mask (d,), o lote (B,C,H,W) con mask (B,d) o (d,).
    Diferenciable respecto de la máscara.
    """
    enforce_image_shape(image, grid.image_shape, "image")
    v = _values(mask)
    enforce_mask_length(v, grid.d)
    if image.dim() == 3 and v.dim() != 1:
        raise ContractError(f"single image needs a single mask, got mask shape {tuple(v.shape)}")
    if image.dim() == 4 and v.dim() == 2 and v.shape[0] != image.shape[0]:
        raise ContractError(f"{v.shape[0]} masks for a batch of {image.shape[0]} images")
    pixel_map = mask_to_pixel_map(v.to(image.dtype), grid).unsqueeze(-3)
    return image * pixel_map


def pixel_fraction(grid: PatchGrid, k: int) -> float:
    """Fracción de píxeles cubierta por k parches: k*area/(H*W)."""
    _, h, w = grid.image_shape
    return k * grid.patch_area / (h * w)


def k_from_pixel_fraction(grid: PatchGrid, fraction: float) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"pixel fraction must lie in (0, 1], got {fraction}")
    return max(1, min(grid.d, round(fraction * grid.d)))
