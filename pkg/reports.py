from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import pandas as pd
import torch

from features.patching import PatchGrid, SubsetMask

LOSS_CURVE_COLS = ["epoch", "step", "loss", "temperature"]


def _append_csv(df: pd.DataFrame, path: Path) -> Path:
    """
    Append seguro que escribe encabezado si el archivo no existe o está vacío.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = True
    mode = "w"
    if path.exists() and os.path.getsize(path) > 0:
        write_header = False
        mode = "a"
    df.to_csv(path, index=False, header=write_header, mode=mode)
    return path


def write_json(path: Path, payload: Any) -> Path:
    # sort_keys: dos corridas con igual config producen bytes iguales (salvo timestamps)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_loss_curve(history: list[dict], path: Path) -> Path:
    df = pd.DataFrame(history)
    for c in LOSS_CURVE_COLS:
        if c not in df.columns:
            df[c] = None
    if path.exists():
        path.unlink()
    return _append_csv(df[LOSS_CURVE_COLS], path)


def write_masks(
    path: Path, masks: SubsetMask, grid: PatchGrid, *, method: str, k: int, seed: int, config: dict | None = None
) -> Path:
    values = masks.values if masks.values.dim() == 2 else masks.values.unsqueeze(0)
    payload = {
        "method": method,
        "k": k,
        "seed": seed,
        "kind": masks.kind,
        "grid": grid.to_dict(),
        "masks": [[float(v) for v in row] for row in values.tolist()],
        "config": config or {},
    }
    return write_json(path, payload)


def read_masks(path: Path) -> tuple[SubsetMask, PatchGrid, dict]:
    raw = read_json(path)
    grid = PatchGrid.from_dict(raw["grid"])
    masks = SubsetMask(torch.tensor(raw["masks"], dtype=torch.float32), raw.get("kind", "hard"))
    return masks, grid, raw
