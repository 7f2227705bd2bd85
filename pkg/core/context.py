from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path

from core.config import RunConfig
from core.errors import ConfigurationError
from core.load import LabeledDataset, load_experiment_data
from features.patching import PatchGrid, k_from_pixel_fraction, make_grid


@dataclass
class ExperimentContext:
    cfg: RunConfig
    out_dir: Path
    dataset_name: str
    train: LabeledDataset
    validation: LabeledDataset
    grid: PatchGrid

    @property
    def ks(self) -> list[int]:
        if self.cfg.pixel_fractions:
            return [k_from_pixel_fraction(self.grid, f) for f in self.cfg.pixel_fractions]
        return list(self.cfg.k)

    def check_k(self, k: int) -> None:
        if not 1 <= k < self.grid.d:
            raise ConfigurationError(f"k={k} rejected: need 1 <= k < d={self.grid.d} for grid {self.grid.grid_dims}")


def build_context(cfg: RunConfig) -> ExperimentContext:
    """Carga datos (filtrados y partidos) y arma la grilla de parches del config."""
    train, validation = load_experiment_data(cfg.dataset)
    grid = make_grid(train.image_shape, cfg.patch.shape)
    return ExperimentContext(
        cfg=cfg,
        out_dir=Path(cfg.out_dir),
        dataset_name=cfg.dataset.name,
        train=train,
        validation=validation,
        grid=grid,
    )
