"""
Muestreo relajado de máscaras m-hot (Gumbel-softmax, max de m concretas) y top-m duro.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from core.config import SamplerConfig
from core.errors import ContractError
from features.patching import SubsetMask
from services.guardrails import enforce_m_range

GUMBEL_EPS = 1e-10


@dataclass(frozen=True)
class GumbelNoise:
    values: torch.Tensor  # (..., m, d)


def sample_gumbel(
    shape: Sequence[int],
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> GumbelNoise:
    """-log(-log(u)), u uniforme recortado a [eps, 1-eps]: nunca +-inf."""
    u = torch.rand(tuple(shape), generator=generator, dtype=torch.float64)
    u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return GumbelNoise((-torch.log(-torch.log(u))).to(dtype))


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def relaxed_mhot(logits: torch.Tensor, noise: GumbelNoise, cfg: SamplerConfig) -> SubsetMask:
    """
    logits (..., d), ruido (..., m, d). Cada fila j: softmax((logits + ruido_j)/tau);
    la máscara es el máximo por entrada sobre las m filas.
    """
    tau = float(cfg.temperature)
    if not tau > 0:
        raise ContractError(f"temperature must be > 0, got {tau}")
    d = logits.shape[-1]
    z = noise.values
    if z.dim() < 2 or z.shape[-1] != d:
        raise ContractError(f"noise shape {tuple(z.shape)} does not match d={d}")
    m = z.shape[-2]
    if m != cfg.m:
        raise ContractError(f"noise carries {m} rows but sampler m={cfg.m}")
    enforce_m_range(m, d)
    if not bool(torch.isfinite(logits).all()):
        raise ContractError("logits must be finite")
    rows = F.softmax((logits.unsqueeze(-2) + z.to(logits.dtype)) / tau, dim=-1)
    return SubsetMask(rows.max(dim=-2).values, "relaxed")


def hard_topm(scores: torch.Tensor, m: int) -> SubsetMask:
    """Exactamente m unos en los m puntajes mayores; empates -> índice menor."""
    d = scores.shape[-1]
    enforce_m_range(m, d)
    order = torch.sort(scores.detach(), dim=-1, descending=True, stable=True).indices
    out = torch.zeros(scores.shape, dtype=torch.float32)
    if m > 0:
        out.scatter_(-1, order[..., :m], 1.0)
    return SubsetMask(out, "hard")
