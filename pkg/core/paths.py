from __future__ import annotations
from pathlib import Path

from core.config import get_settings


def resolve_data_path(raw: str | Path) -> Path:
    """
    Rutas relativas del config: primero tal cual (cwd), luego bajo CAUSALX_DATA_DIR.
    Si ninguna existe se devuelve la primera (el loader reporta el faltante).
    """
    p = Path(raw)
    if p.is_absolute():
        return p
    candidates = [
        Path.cwd() / p,
        Path(get_settings().DATA_DIR) / p,
    ]
    for c in candidates:
        if c.exists():
            return c
    return candidates[0]


def blackbox_checkpoint_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / "blackbox.ckpt"


def blackbox_report_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / "blackbox_report.json"


def cell_dir(out_dir: str | Path, dataset: str, method: str, k: int, seed: int) -> Path:
    # <out>/<dataset>/<method>/k<k>/seed<seed>/
    return Path(out_dir) / dataset / method / f"k{k}" / f"seed{seed}"


def dataset_dir(out_dir: str | Path, dataset: str) -> Path:
    return Path(out_dir) / dataset
