# services/diagnostics.py
from __future__ import annotations

import logging
import math
from typing import Any, Dict, List

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.config import OracleConfig, SamplerConfig
from core.errors import ConsistencyError
from features.oracle import (
    DiscreteJoint,
    ExactPosteriorModel,
    best_subset_bruteforce,
    copy_joint,
    independent_joint,
    planted_joint,
    random_joint,
    sample_states,
    xor_joint,
)
from features.sampler import make_generator, relaxed_mhot, sample_gumbel
from selector import causal_loss, explanation_from_scores

logger = logging.getLogger(__name__)


class ToySelector(nn.Module):
    """Selector mínimo para conjuntas discretas: lineal sobre one-hot(x) -> d logits."""

    def __init__(self, joint: DiscreteJoint):
        super().__init__()
        self.arities = joint.arities
        self.linear = nn.Linear(sum(self.arities), joint.d)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        coords = np.stack(np.unravel_index(states.cpu().numpy(), self.arities), axis=-1)
        parts = [F.one_hot(torch.from_numpy(coords[:, i]), a) for i, a in enumerate(self.arities)]
        return self.linear(torch.cat(parts, dim=-1).to(torch.float32))


def train_toy_selector(joint: DiscreteJoint, k: int, cfg: OracleConfig, seed: int) -> tuple[int, ...]:
    """
    Entrena el selector contra la caja negra exacta de `joint` y devuelve el subconjunto
    elegido (explicación sobre el promedio de logits de una muestra fresca).
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    noise_gen = make_generator(seed + 1)
    model = ExactPosteriorModel(joint)
    selector = ToySelector(joint)
    opt = torch.optim.Adam(selector.parameters(), lr=cfg.selector_learning_rate)
    d, m = joint.d, joint.d - k
    scfg = SamplerConfig(temperature=cfg.temperature, m=m)

    for step in range(cfg.selector_steps):
        x, _ = sample_states(joint, cfg.selector_batch_size, rng)
        states = torch.from_numpy(x)
        logits = selector(states)
        z = relaxed_mhot(logits, sample_gumbel((states.shape[0], m, d), noise_gen), scfg)
        loss = causal_loss(model, states, z, 1e-8, grid=None, batch_index=step)
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        x, _ = sample_states(joint, 1024, rng)
        mean_scores = selector(torch.from_numpy(x)).mean(dim=0)
    return explanation_from_scores(mean_scores, k).indices()


def check_identity(joint: DiscreteJoint, k: int) -> Dict[str, Any]:
    """Búsqueda exhaustiva por ambos caminos (CMI y log-verosimilitud del complemento)."""
    res = best_subset_bruteforce(joint, k)
    return {
        "best_subset": list(res.subset),
        "cmi_nats": res.cmi,
        "cmi_bits": res.cmi / math.log(2.0),
        "loglik_subset": list(res.loglik_subset),
        "agree": res.paths_agree,
        "tied": res.tied,
        "ties": [list(t) for t in res.ties],
    }


def run_oracle_suite(cfg: OracleConfig) -> Dict[str, Any]:
    """
    Devuelve un reporte con los chequeos; las violaciones se acumulan en `errors`
    junto con la conjunta que las produjo (para reproducir).
    """
    report: Dict[str, Any] = {"checks": {}, "errors": [], "offending_joints": []}
    rng = np.random.default_rng(cfg.seed)

    report["checks"]["xor"] = check_identity(xor_joint(), 2)
    report["checks"]["copy"] = check_identity(copy_joint(3), 1)
    report["checks"]["independent"] = check_identity(independent_joint(3), 2)
    if report["checks"]["xor"]["best_subset"] != [0, 1]:
        report["errors"].append("xor joint: best subset is not (0, 1)")

    identity_rows: List[Dict[str, Any]] = []
    for r in range(cfg.joints):
        joint = random_joint(cfg.d, rng, cfg.arity, cfg.num_classes)
        try:
            row = check_identity(joint, cfg.k)
        except ConsistencyError as e:
            row = {"agree": False, "error": str(e)}
        identity_rows.append(row)
        if not row["agree"]:
            report["errors"].append(f"random joint {r}: CMI and log-likelihood paths disagree")
            report["offending_joints"].append(joint.to_dict())
    report["checks"]["identity"] = {
        "joints": cfg.joints,
        "agree": sum(1 for r in identity_rows if r["agree"]),
        "rows": identity_rows,
    }

    selector_rows = []
    for r in range(cfg.joints):
        joint, parents = planted_joint(cfg.d, cfg.k, rng, cfg.arity)
        best = best_subset_bruteforce(joint, cfg.k).subset
        chosen = train_toy_selector(joint, cfg.k, cfg, seed=cfg.seed + r)
        selector_rows.append({"parents": list(parents), "best": list(best), "chosen": list(chosen), "match": chosen == best})
        logger.info("toy selector %d/%d: best=%s chosen=%s", r + 1, cfg.joints, best, chosen)
    matches = sum(1 for row in selector_rows if row["match"])
    report["checks"]["toy_selector"] = {
        "joints": cfg.joints,
        "matches": matches,
        "rate": matches / max(cfg.joints, 1),
        "rows": selector_rows,
    }
    report["warnings"] = []
    if matches < 0.9 * cfg.joints:
        report["warnings"].append(f"toy selector recovered the best subset on {matches}/{cfg.joints} joints")
    report["ok"] = not report["errors"]
    return report
