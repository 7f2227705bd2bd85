"""
Caja negra F: CNN de referencia, entrenamiento y contrato de predicción probabilística.
"""
from __future__ import annotations

import hashlib
import logging
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from core.config import TrainConfig
from core.errors import ContractError, TrainingError
from core.load import LabeledDataset
from features.patching import PatchGrid, apply_mask
from services.guardrails import enforce_image_shape

logger = logging.getLogger(__name__)


def reference_descriptor(num_classes: int, conv_channels: Sequence[int] = (16, 32)) -> list[dict]:
    """conv3x3 -> relu -> maxpool2 por cada bloque, luego flatten -> lineal a c logits."""
    layers: list[dict] = []
    for ch in conv_channels:
        layers += [
            {"type": "conv", "out": int(ch), "kernel": 3, "stride": 1, "padding": 1},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
        ]
    layers += [{"type": "flatten"}, {"type": "linear", "out": int(num_classes)}]
    return layers


def build_network(descriptor: Sequence[dict], input_shape: Sequence[int]) -> nn.Sequential:
    c, h, w = (int(s) for s in input_shape)
    modules: list[nn.Module] = []
    flat = None
    for layer in descriptor:
        kind = layer["type"]
        if kind == "conv":
            modules.append(nn.Conv2d(c, layer["out"], layer["kernel"], layer.get("stride", 1), layer.get("padding", 0)))
            k, s, p = layer["kernel"], layer.get("stride", 1), layer.get("padding", 0)
            c, h, w = layer["out"], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        elif kind == "relu":
            modules.append(nn.ReLU())
        elif kind == "maxpool":
            modules.append(nn.MaxPool2d(layer["size"]))
            h, w = h // layer["size"], w // layer["size"]
        elif kind == "flatten":
            modules.append(nn.Flatten())
            flat = c * h * w
        elif kind == "linear":
            if flat is None:
                raise ContractError("linear layer needs a preceding flatten")
            modules.append(nn.Linear(flat, layer["out"]))
            flat = layer["out"]
        else:
            raise ContractError(f"unknown layer type {kind!r} in descriptor")
        if h <= 0 or w <= 0:
            raise ContractError(f"descriptor collapses spatial dims for input {tuple(input_shape)}")
    return nn.Sequential(*modules)


class ClassifierModel(nn.Module):
    """F: imagen -> distribución sobre c clases."""

    kind = "blackbox"

    def __init__(self, descriptor: Sequence[dict], num_classes: int, input_shape: Sequence[int]):
        super().__init__()
        self.descriptor = [dict(l) for l in descriptor]
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.net = build_network(self.descriptor, self.input_shape)

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        enforce_image_shape(images, self.input_shape, "blackbox input")
        x = images if images.dim() == 4 else images.unsqueeze(0)
        return self.net(x.to(torch.float32))

    def forward_proba(self, images: torch.Tensor) -> torch.Tensor:
        # con grafo: la pérdida causal propaga hacia la máscara a través de F
        return F.softmax(self.logits(images), dim=-1)

    @torch.no_grad()
    def predict_proba(self, images: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self.forward_proba(images)
        finally:
            self.train(was_training)

    def proba_under_mask(self, images: torch.Tensor, keep_masks: torch.Tensor, grid: PatchGrid | None) -> torch.Tensor:
        return self.forward_proba(apply_mask(images, keep_masks, grid))

    def freeze(self) -> "ClassifierModel":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def predict_proba(model: ClassifierModel, batch: torch.Tensor) -> torch.Tensor:
    """Contrato de caja negra: también acepta cualquier objeto con `predict_proba` (stubs, oráculo exacto)."""
    return model.predict_proba(batch)


def parameter_hash(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def to_tensor(ds: LabeledDataset) -> tuple[torch.Tensor, torch.Tensor]:
    return torch.from_numpy(np.array(ds.images)), torch.from_numpy(np.array(ds.labels))


@torch.no_grad()
def predict_dataset(model: ClassifierModel, images: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    out = [model.predict_proba(images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    return torch.cat(out)


def evaluate_accuracy(model: ClassifierModel, ds: LabeledDataset, batch_size: int = 512) -> float:
    x, y = to_tensor(ds)
    pred = predict_dataset(model, x, batch_size).argmax(dim=-1)
    return float((pred == y).double().mean())


def train_reference_cnn(train: LabeledDataset, config: TrainConfig) -> ClassifierModel:
    torch.manual_seed(config.seed)
    model = ClassifierModel(
        reference_descriptor(train.num_classes, config.conv_channels), train.num_classes, train.image_shape
    )
    x, y = to_tensor(train)
    loader = DataLoader(
        TensorDataset(x, y),
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
    )
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    model.history = []  # type: ignore[attr-defined]

    step = 0
    for epoch in range(config.epochs):
        model.train()
        total, seen = 0.0, 0
        for xb, yb in loader:
            loss = F.cross_entropy(model.logits(xb), yb)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"black-box loss diverged (value {loss.item()}) at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * xb.shape[0]
            seen += xb.shape[0]
            step += 1
        model.history.append({"epoch": epoch, "loss": total / seen})  # type: ignore[attr-defined]
        logger.info("blackbox epoch %d/%d loss=%.4f", epoch + 1, config.epochs, total / seen)
    model.eval()
    return model
