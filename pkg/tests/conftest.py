"""Fixtures compartidos: grilla 16x16, dataset bars y cajas negras de juguete."""
from __future__ import annotations

import numpy as np
import pytest
import torch

from blackbox import ClassifierModel
from core.load import LabeledDataset
from features.patching import apply_mask, make_grid
from generate_data import make_bars


class ConstantModel:
    """Caja negra sin gradientes: siempre devuelve la misma distribución."""

    def __init__(self, input_shape=(1, 16, 16), probs=(0.5, 0.5)):
        self.input_shape = tuple(input_shape)
        self.num_classes = len(probs)
        self._probs = torch.tensor(probs, dtype=torch.float32)

    def predict_proba(self, images: torch.Tensor) -> torch.Tensor:
        n = images.shape[0] if images.dim() == 4 else 1
        return self._probs.expand(n, -1).clone()

    def proba_under_mask(self, images, keep_masks, grid):
        return self.predict_proba(apply_mask(images, keep_masks, grid))


class KeptPixelsModel:
    """P(clase 0) = píxeles no nulos / píxeles totales; P(clase 1) = el resto."""

    def __init__(self, input_shape=(1, 16, 16)):
        self.input_shape = tuple(input_shape)
        self.num_classes = 2

    def predict_proba(self, images: torch.Tensor) -> torch.Tensor:
        x = images if images.dim() == 4 else images.unsqueeze(0)
        frac = (x != 0).flatten(start_dim=1).to(torch.float32).mean(dim=1)
        return torch.stack([frac, 1.0 - frac], dim=1)

    def proba_under_mask(self, images, keep_masks, grid):
        return self.predict_proba(apply_mask(images, keep_masks, grid))


def make_patch0_model(grid, bias: float = 0.5) -> ClassifierModel:
    """
    logit_0 = suma de los píxeles del parche 0, logit_1 = bias.
    Predice clase 0 sólo si el parche 0 está encendido.
    """
    model = ClassifierModel([{"type": "flatten"}, {"type": "linear", "out": 2}], 2, grid.image_shape)
    linear = model.net[-1]
    weight = torch.zeros_like(linear.weight)
    rows, cols = grid.patch_bounds(0)
    pix = torch.zeros(grid.image_shape)
    pix[:, rows, cols] = 1.0
    weight[0] = pix.flatten()
    with torch.no_grad():
        linear.weight.copy_(weight)
        linear.bias.copy_(torch.tensor([0.0, bias]))
    return model


def make_patch0_dataset(n: int = 40, size: int = 16, seed: int = 0) -> LabeledDataset:
    """Mitad de las imágenes con el parche 0 en 1 (clase 0), resto con el parche 0 en 0."""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, size=(n, 1, size, size)).astype(np.float32)
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if i % 2 == 0:
            images[i, 0, :4, :4] = 1.0
        else:
            images[i, 0, :4, :4] = 0.0
            labels[i] = 1
    return LabeledDataset(images=images, labels=labels, class_names=("bright", "dark"))


@pytest.fixture
def grid16():
    return make_grid((1, 16, 16), (4, 4))


@pytest.fixture
def grid28():
    return make_grid((1, 28, 28), (4, 4))


@pytest.fixture
def bars():
    return make_bars(64, 16, np.random.default_rng(0))


@pytest.fixture
def patch0_model(grid16):
    return make_patch0_model(grid16)


@pytest.fixture
def patch0_data():
    return make_patch0_dataset()


@pytest.fixture
def constant_model():
    return ConstantModel()


@pytest.fixture
def make_patch0():
    return make_patch0_dataset


@pytest.fixture
def kept_pixels_model():
    return KeptPixelsModel()
