"""
Overlays PNG: original a la izquierda, explicación a la derecha.
Parches elegidos en cobre, el resto atenuado en gris.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from core.errors import ContractError
from features.patching import PatchGrid, SubsetMask, mask_to_pixel_map

logger = logging.getLogger(__name__)

COPPER = (0.5, 0.3, 0.2)  # base RGB de un píxel elegido con intensidad 0
COPPER_GAIN = (0.5, 0.45, 0.3)
DIM = 0.35
TINT_THRESHOLD = 128  # R >= 128 sólo en parches elegidos
GAP = 2


def _gray(image: np.ndarray) -> np.ndarray:
    """(C,H,W) en [0,1] -> intensidad (H,W)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3:
        raise ContractError(f"overlay expects a (C,H,W) image, got shape {img.shape}")
    return img.mean(axis=0) if img.shape[0] != 1 else img[0]


def _to_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    rgb = np.repeat(img, 3, axis=0) if img.shape[0] == 1 else img[:3]
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def tint(image: np.ndarray, explanation: SubsetMask, grid: PatchGrid) -> np.ndarray:
    """(H,W,3) uint8: cobre donde la explicación vale 1, gris atenuado donde vale 0."""
    v = _gray(image)
    selected = mask_to_pixel_map(explanation, grid).cpu().numpy().astype(bool)
    out = np.empty(v.shape + (3,), dtype=np.float32)
    for ch in range(3):
        out[..., ch] = np.where(selected, COPPER[ch] + COPPER_GAIN[ch] * v, DIM * v)
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)


def side_by_side(image: np.ndarray, explanation: SubsetMask, grid: PatchGrid, scale: int = 8) -> Image.Image:
    left = _to_rgb(image)
    right = tint(image, explanation, grid)
    h, w, _ = left.shape
    canvas = np.full((h, 2 * w + GAP, 3), 255, dtype=np.uint8)
    canvas[:, :w] = left
    canvas[:, w + GAP:] = right
    panel = Image.fromarray(canvas)
    if scale > 1:
        panel = panel.resize((panel.width * scale, panel.height * scale), Image.Resampling.NEAREST)
    return panel


def write_overlay(
    path: Path, image: np.ndarray, explanation: SubsetMask, grid: PatchGrid, scale: int = 8, metadata: dict | None = None
) -> Path:
    """PNG con el config resuelto en un chunk de texto `causalx`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    info = PngInfo()
    info.add_text("causalx", json.dumps(metadata or {}, sort_keys=True))
    side_by_side(image, explanation, grid, scale).save(path, format="PNG", pnginfo=info)
    logger.debug("overlay written: %s", path)
    return path


def recover_mask_from_overlay(path: Path, grid: PatchGrid, scale: int = 8) -> SubsetMask:
    """Lee el panel derecho y umbraliza la mediana del canal R de cada parche."""
    arr = np.asarray(Image.open(path).convert("RGB"))
    _, h, w = grid.image_shape
    right = arr[:, (w + GAP) * scale:(2 * w + GAP) * scale, 0]
    values = np.zeros(grid.d, dtype=np.float32)
    for i in range(grid.d):
        rows, cols = grid.patch_bounds(i)
        block = right[rows.start * scale:rows.stop * scale, cols.start * scale:cols.stop * scale]
        values[i] = 1.0 if np.median(block) >= TINT_THRESHOLD else 0.0
    return SubsetMask(torch.from_numpy(values), "hard")


def read_overlay_metadata(path: Path) -> dict:
    with Image.open(path) as img:
        return json.loads(img.text.get("causalx", "{}"))
