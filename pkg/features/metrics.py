"""
Métricas de evaluación: post-hoc accuracy, ICE / ACE y el reporte por corrida.
"""
from __future__ import annotations

import math
from datetime import datetime, timezone
from typing import List

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

from blackbox import predict_proba
from core.errors import ContractError
from core.load import LabeledDataset
from features.baselines import random_explanations
from features.patching import PatchGrid, SubsetMask, apply_mask
from services.guardrails import enforce_khot, enforce_same_count


def _images(dataset) -> torch.Tensor:
    if isinstance(dataset, LabeledDataset):
        return torch.from_numpy(np.array(dataset.images))
    return dataset


def _explanation_values(explanations) -> torch.Tensor:
    if isinstance(explanations, SubsetMask):
        if explanations.kind != "hard":
            raise ContractError("explanations must be hard masks")
        v = explanations.values
        return v if v.dim() == 2 else v.unsqueeze(0)
    vals = [m.values if isinstance(m, SubsetMask) else torch.as_tensor(m, dtype=torch.float32) for m in explanations]
    if not vals:
        raise ContractError("no explanations given")
    return torch.stack(vals)


def _argmax_first(probs: torch.Tensor) -> np.ndarray:
    # numpy devuelve el primer máximo: empates -> clase de menor índice
    return np.argmax(probs.detach().cpu().numpy(), axis=-1)


@torch.no_grad()
def _batched_proba(blackbox, images: torch.Tensor, masks: torch.Tensor | None, grid: PatchGrid, batch_size: int) -> torch.Tensor:
    out = []
    for i in range(0, images.shape[0], batch_size):
        xb = images[i:i + batch_size]
        if masks is not None:
            xb = apply_mask(xb, masks[i:i + batch_size], grid)
        out.append(predict_proba(blackbox, xb))
    return torch.cat(out)


def post_hoc_indicators(blackbox, dataset, explanations, grid: PatchGrid, batch_size: int = 256) -> np.ndarray:
    x = _images(dataset)
    masks = _explanation_values(explanations)
    enforce_same_count(masks.shape[0], x.shape[0])
    k = int(masks[0].sum().item())
    enforce_khot(masks, k)
    full = _argmax_first(_batched_proba(blackbox, x, None, grid, batch_size))
    kept = _argmax_first(_batched_proba(blackbox, x, masks, grid, batch_size))
    return (full == kept).astype(np.int64)


def post_hoc_accuracy(blackbox, dataset, explanations, grid: PatchGrid, batch_size: int = 256) -> float:
    """Fracción de muestras con argmax F(x) == argmax F(x_s)."""
    ind = post_hoc_indicators(blackbox, dataset, explanations, grid, batch_size)
    return math.fsum(ind.tolist()) / len(ind)


def ice_values(
    blackbox,
    dataset,
    explanations,
    grid: PatchGrid,
    rng: np.random.Generator,
    repeats: int = 4,
    batch_size: int = 256,
) -> np.ndarray:
    """
    ICE_i = F(x_s)_{y*} - media_r F(x_rand,r)_{y*},  y* = argmax F(x).
    x_rand conserva k parches uniformes distintos; el resto en cero.
    """
    if repeats < 1:
        raise ContractError(f"repeats must be >= 1, got {repeats}")
    x = _images(dataset)
    masks = _explanation_values(explanations)
    enforce_same_count(masks.shape[0], x.shape[0])
    n = x.shape[0]
    if n == 0:
        raise ContractError("empty dataset")
    k = int(masks[0].sum().item())
    enforce_khot(masks, k)

    y_star = torch.from_numpy(_argmax_first(_batched_proba(blackbox, x, None, grid, batch_size)))
    p_expl = _batched_proba(blackbox, x, masks, grid, batch_size).gather(1, y_star.unsqueeze(1)).squeeze(1)

    # sorteos en orden instancia-mayor: instancia i usa las filas i*repeats..(i+1)*repeats-1
    rand = random_explanations(grid.d, k, n * repeats, rng).values
    x_rep = x.repeat_interleave(repeats, dim=0)
    y_rep = y_star.repeat_interleave(repeats)
    p_rand = _batched_proba(blackbox, x_rep, rand, grid, batch_size).gather(1, y_rep.unsqueeze(1)).squeeze(1)
    p_rand = p_rand.reshape(n, repeats).double().mean(dim=1)
    return (p_expl.double() - p_rand).cpu().numpy()


def individual_causal_effect(
    blackbox,
    x: torch.Tensor,
    explanation: SubsetMask,
    grid: PatchGrid,
    rng: np.random.Generator,
    repeats: int = 4,
) -> float:
    image = x.pixels if hasattr(x, "pixels") else x
    image = image if isinstance(image, torch.Tensor) else torch.from_numpy(np.array(image))
    return float(ice_values(blackbox, image.unsqueeze(0), [explanation], grid, rng, repeats)[0])


def average_causal_effect(
    blackbox,
    dataset,
    explanations,
    grid: PatchGrid,
    rng: np.random.Generator,
    repeats: int = 4,
    batch_size: int = 256,
) -> float:
    ice = ice_values(blackbox, dataset, explanations, grid, rng, repeats, batch_size)
    return math.fsum(ice.tolist()) / len(ice)


class EvaluationReport(BaseModel):
    method: str
    dataset: str
    k: int
    seed: int
    d: int
    n: int
    post_hoc_accuracy: float = Field(ge=0.0, le=1.0)
    ace: float = Field(ge=-1.0, le=1.0)
    post_hoc_indicators: List[int]
    ice: List[float]
    repeats: int
    timestamps: dict = Field(default_factory=dict)
    config: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "EvaluationReport":
        if len(self.post_hoc_indicators) != self.n or len(self.ice) != self.n:
            raise ValueError("per-instance lists must have n entries")
        mean = math.fsum(self.post_hoc_indicators) / self.n
        if abs(mean - self.post_hoc_accuracy) > 1e-9:
            raise ValueError("post_hoc_accuracy disagrees with its per-instance indicators")
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def evaluate_explanations(
    blackbox,
    dataset,
    explanations,
    grid: PatchGrid,
    *,
    method: str,
    dataset_name: str,
    k: int,
    seed: int,
    repeats: int = 4,
    batch_size: int = 256,
    config: dict | None = None,
) -> EvaluationReport:
    started = _now()
    indicators = post_hoc_indicators(blackbox, dataset, explanations, grid, batch_size)
    ice = ice_values(blackbox, dataset, explanations, grid, np.random.default_rng(seed), repeats, batch_size)
    return EvaluationReport(
        method=method,
        dataset=dataset_name,
        k=k,
        seed=seed,
        d=grid.d,
        n=len(indicators),
        post_hoc_accuracy=math.fsum(indicators.tolist()) / len(indicators),
        ace=math.fsum(ice.tolist()) / len(ice),
        post_hoc_indicators=[int(v) for v in indicators],
        ice=[float(v) for v in ice],
        repeats=repeats,
        timestamps={"started": started, "finished": _now()},
        config=config or {},
    )
