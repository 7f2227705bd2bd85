"""
Oráculo exacto sobre distribuciones discretas pequeñas (d <= 8, aridad <= 4).

Fuerza causal de un subconjunto s:  CS_s = I(X_s; Y | X_s̄)  (nats).
Identidad usada para entrenar:  CS_s = -H(Y|X) + H(Y|X_s̄), así que
argmax_s CS_s == argmin_s E[log p(Y|X_s̄)].
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import torch

from core.errors import ConsistencyError, ContractError

MAX_D = 8
MAX_ARITY = 4
TIE_TOL = 1e-12
PATH_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteJoint:
    """table[x_0, ..., x_{d-1}, y] = p(x, y)."""
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim < 2:
            raise ContractError("joint table needs at least one X axis and the Y axis")
        if t.ndim - 1 > MAX_D or max(t.shape[:-1]) > MAX_ARITY:
            raise ContractError(f"joint too large: shape {t.shape} (d <= {MAX_D}, arity <= {MAX_ARITY})")
        if not np.all(np.isfinite(t)) or t.min() < 0:
            raise ContractError("joint table entries must be finite and >= 0")
        if abs(t.sum() - 1.0) > TIE_TOL:
            raise ContractError(f"joint table sums to {t.sum()!r}, not 1")
        object.__setattr__(self, "table", t)

    @property
    def d(self) -> int:
        return self.table.ndim - 1

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(self.table.shape[:-1])

    @property
    def num_classes(self) -> int:
        return self.table.shape[-1]

    def to_dict(self) -> dict:
        return {"shape": list(self.table.shape), "table": self.table.flatten().tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "DiscreteJoint":
        return cls(np.asarray(raw["table"], dtype=np.float64).reshape(raw["shape"]))


def _check_subset(joint: DiscreteJoint, s: Iterable[int]) -> tuple[int, ...]:
    out = tuple(sorted(set(int(i) for i in s)))
    if any(i < 0 or i >= joint.d for i in out):
        raise ContractError(f"subset {out} outside variables 0..{joint.d - 1}")
    return out


def complement_of(joint: DiscreteJoint, s: Iterable[int]) -> tuple[int, ...]:
    s = set(_check_subset(joint, s))
    return tuple(i for i in range(joint.d) if i not in s)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def conditional_mutual_information(joint: DiscreteJoint, targets: Iterable[int], given: Iterable[int]) -> float:
    """I(X_A; Y | X_B) por enumeración completa, convención 0·log(0/q) = 0."""
    a = _check_subset(joint, targets)
    b = _check_subset(joint, given)
    if set(a) & set(b):
        raise ContractError(f"targets {a} and given {b} overlap")
    if not a:
        return 0.0
    others = tuple(i for i in range(joint.d) if i not in a and i not in b)
    q = joint.table.sum(axis=others, keepdims=True) if others else joint.table
    q_ab = q.sum(axis=-1, keepdims=True)
    q_by = q.sum(axis=a, keepdims=True)
    q_b = q_by.sum(axis=-1, keepdims=True)
    ratio = _safe_div(q * q_b, q_ab * q_by)
    terms = np.where(q > 0, q * np.log(np.where(q > 0, ratio, 1.0)), 0.0)
    return float(max(terms.sum(), 0.0))


def exact_conditional_mutual_information(joint: DiscreteJoint, s: Iterable[int]) -> float:
    s = _check_subset(joint, s)
    return conditional_mutual_information(joint, s, complement_of(joint, s))


def conditional_entropy(joint: DiscreteJoint, given: Iterable[int]) -> float:
    """H(Y | X_B) en nats."""
    b = _check_subset(joint, given)
    dropped = tuple(i for i in range(joint.d) if i not in b)
    q = joint.table.sum(axis=dropped, keepdims=True) if dropped else joint.table
    cond = _safe_div(q, q.sum(axis=-1, keepdims=True))
    terms = np.where(q > 0, q * np.log(np.where(q > 0, cond, 1.0)), 0.0)
    return float(-terms.sum())


def expected_log_likelihood_complement(joint: DiscreteJoint, s: Iterable[int]) -> float:
    """E[log p(Y | X_s̄)] = -H(Y | X_s̄)."""
    return -conditional_entropy(joint, complement_of(joint, s))


@dataclass(frozen=True)
class SubsetSearchResult:
    subset: tuple[int, ...]
    cmi: float
    ties: tuple[tuple[int, ...], ...] = field(default=())
    loglik_subset: tuple[int, ...] = field(default=())
    loglik_ties: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def tied(self) -> bool:
        return len(self.ties) > 1

    @property
    def paths_agree(self) -> bool:
        return self.subset == self.loglik_subset


def best_subset_bruteforce(joint: DiscreteJoint, k: int) -> SubsetSearchResult:
    """
    Subconjunto de tamaño k con mayor CMI exacta (empates -> lexicográfico menor).
    Verifica por un segundo camino que el mismo subconjunto minimiza E[log p(Y|X_s̄)].
    """
    if not 0 <= k <= joint.d:
        raise ContractError(f"k={k} outside [0, {joint.d}]")
    subsets = list(itertools.combinations(range(joint.d), k))
    cmi = np.array([exact_conditional_mutual_information(joint, s) for s in subsets])
    ll = np.array([expected_log_likelihood_complement(joint, s) for s in subsets])

    cmi_ties = tuple(s for s, v in zip(subsets, cmi) if cmi.max() - v <= TIE_TOL)
    ll_ties = tuple(s for s, v in zip(subsets, ll) if v - ll.min() <= TIE_TOL)
    winner, ll_winner = cmi_ties[0], ll_ties[0]

    # el ganador por CMI debe ser (casi) óptimo por el otro camino, y viceversa
    w_ll = ll[subsets.index(winner)]
    v_cmi = cmi[subsets.index(ll_winner)]
    if w_ll - ll.min() > PATH_TOL or cmi.max() - v_cmi > PATH_TOL:
        raise ConsistencyError(
            f"argmax-CMI subset {winner} and argmin-E[log p(Y|X_s̄)] subset {ll_winner} disagree"
        )
    return SubsetSearchResult(
        subset=winner,
        cmi=float(cmi.max()),
        ties=cmi_ties,
        loglik_subset=ll_winner,
        loglik_ties=ll_ties,
    )


# ---------- generadores de distribuciones ----------

def random_joint(
    d: int, rng: np.random.Generator, arity: int = 2, num_classes: int = 2, concentration: float = 1.0
) -> DiscreteJoint:
    shape = (arity,) * d + (num_classes,)
    t = rng.dirichlet(np.full(int(np.prod(shape)), concentration)).reshape(shape)
    return DiscreteJoint(t / t.sum())


def xor_joint() -> DiscreteJoint:
    """X0, X1, X2 monedas independientes; Y = X0 XOR X1."""
    t = np.zeros((2, 2, 2, 2))
    for x0, x1, x2 in itertools.product(range(2), repeat=3):
        t[x0, x1, x2, x0 ^ x1] = 1.0 / 8.0
    return DiscreteJoint(t)


def copy_joint(d: int = 3) -> DiscreteJoint:
    """Y = X0, resto independiente."""
    t = np.zeros((2,) * d + (2,))
    for x in itertools.product(range(2), repeat=d):
        t[x + (x[0],)] = 1.0 / 2 ** d
    return DiscreteJoint(t)


def independent_joint(d: int = 3) -> DiscreteJoint:
    return DiscreteJoint(np.full((2,) * d + (2,), 1.0 / 2 ** (d + 1)))


def planted_joint(
    d: int, k: int, rng: np.random.Generator, arity: int = 2
) -> tuple[DiscreteJoint, tuple[int, ...]]:
    """
    X uniforme; Y binaria con logit = Σ_{j∈P} w_j·u(x_j), |P| = k, w_j ~ ±U(1.5, 3).
    Cada padre es informativo por sí solo, así que P es el único mejor subconjunto de tamaño k.
    """
    parents = tuple(sorted(int(i) for i in rng.choice(d, size=k, replace=False)))
    weights = rng.uniform(1.5, 3.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    t = np.zeros((arity,) * d + (2,))
    for x in itertools.product(range(arity), repeat=d):
        logit = sum(w * (2.0 * x[p] / (arity - 1) - 1.0) for w, p in zip(weights, parents))
        p1 = 1.0 / (1.0 + math.exp(-logit))
        px = 1.0 / arity ** d
        t[x + (0,)] = px * (1.0 - p1)
        t[x + (1,)] = px * p1
    return DiscreteJoint(t / t.sum()), parents


def sample_states(joint: DiscreteJoint, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n muestras (índice plano de x, y) de la conjunta."""
    flat = joint.table.reshape(-1)
    draws = rng.choice(flat.size, size=n, p=flat / flat.sum())
    x_flat, y = np.divmod(draws, joint.num_classes)
    return x_flat.astype(np.int64), y.astype(np.int64)


def unravel_states(joint: DiscreteJoint, x_flat: np.ndarray) -> np.ndarray:
    return np.stack(np.unravel_index(x_flat, joint.arities), axis=-1)


class ExactPosteriorModel:
    """
    Caja negra ideal de una conjunta: con máscara dura devuelve p(y | x_keep) exacto
    (las variables quitadas se marginalizan). Para máscaras relajadas usa la extensión
    multilineal Σ_S Π_i z_i^{S_i}(1-z_i)^{1-S_i} p(y | x_S), diferenciable en z.
    Entrada: índices planos de x, forma (B,).
    """

    def __init__(self, joint: DiscreteJoint):
        self.joint = joint
        d = joint.d
        self.input_shape = (d,)
        self.num_classes = joint.num_classes
        subsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.float64)
        posts = []
        for keep in subsets:
            dropped = tuple(i for i in range(d) if keep[i] == 0)
            q = joint.table.sum(axis=dropped, keepdims=True) if dropped else joint.table
            den = q.sum(axis=-1, keepdims=True)
            cond = np.where(den > 0, _safe_div(q, den), 1.0 / joint.num_classes)
            posts.append(np.broadcast_to(cond, joint.table.shape).reshape(-1, joint.num_classes))
        self._subsets = torch.from_numpy(subsets)  # (2^d, d)
        self._posts = torch.from_numpy(np.stack(posts))  # (2^d, n_x, c)

    def proba_under_mask(self, states: torch.Tensor, keep_masks: torch.Tensor, grid=None) -> torch.Tensor:
        z = keep_masks.to(torch.float64)
        if z.dim() == 1:
            z = z.unsqueeze(0).expand(states.shape[0], -1)
        s = self._subsets.unsqueeze(0)  # (1, 2^d, d)
        weights = (s * z.unsqueeze(1) + (1 - s) * (1 - z.unsqueeze(1))).prod(dim=-1)  # (B, 2^d)
        post = self._posts[:, states.long(), :]  # (2^d, B, c)
        return torch.einsum("bs,sbc->bc", weights, post)

    @torch.no_grad()
    def predict_proba(self, states: torch.Tensor) -> torch.Tensor:
        return self.proba_under_mask(states, torch.ones(states.shape[0], self.joint.d, dtype=torch.float64))
