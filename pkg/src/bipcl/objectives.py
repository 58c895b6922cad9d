"""Sampled-softmax recommendation loss and multi-level InfoNCE alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .numerics import Tensor

CL_TERMS = ("seq_fused", "item_fused", "seq_intent", "item_intent")
FINAL_TERMS = ("seq_fused", "item_fused")
INTENT_TERMS = ("seq_intent", "item_intent")


@dataclass(frozen=True)
class LossConfig:
    tau1: float = 1.0
    tau2: float = 0.2
    lam: float = 50.0
    n_negatives: int = 10
    symmetric_nce: bool = False
    rec_reduction: str = "sum"

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("temperatures must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.rec_reduction not in ("sum", "mean"):
            raise ValueError("rec_reduction must be 'sum' or 'mean'")


def rec_loss(h: Tensor, candidates: Tensor, tau1: float, positive: int = 0, reduction: str = "sum") -> Tensor:
    """Sampled softmax cross-entropy.

    ``h`` is (B, d), ``candidates`` is (B, C, d) with the positive item at
    column ``positive`` of every row.
    """
    B, C, d = candidates.shape
    if not 0 <= positive < C:
        raise IndexError(f"positive index {positive} outside candidate set of size {C}")
    logits = nx.reshape(nx.matmul(candidates, nx.reshape(h, (B, d, 1))), (B, C))
    logp = nx.log_softmax(nx.scale(logits, 1.0 / tau1))
    nll = nx.scale(nx.index(logp, (slice(None), positive)), -1.0)
    return nx.mean(nll) if reduction == "mean" else nx.tsum(nll)


def cosine_matrix(a1: Tensor, a2: Tensor) -> Tensor:
    return nx.matmul(nx.l2_normalize(a1), nx.transpose(nx.l2_normalize(a2)))


def nce_from_similarities(sims: Tensor, tau2: float, symmetric: bool = False) -> Tensor:
    """InfoNCE given a (B, B) similarity matrix whose diagonal holds the positives.

    d loss / d sims[a, b] = (p_ab - [a == b]) / (B * tau2) with p the row softmax.
    """
    B = sims.shape[0]
    sims = nx.scale(sims, 1.0 / tau2)
    diag = (np.arange(B), np.arange(B))
    loss = nx.scale(nx.mean(nx.index(nx.log_softmax(sims), diag)), -1.0)
    if symmetric:
        back = nx.scale(nx.mean(nx.index(nx.log_softmax(nx.transpose(sims)), diag)), -1.0)
        loss = nx.scale(nx.add(loss, back), 0.5)
    return loss


def infonce(a1: Tensor, a2: Tensor, tau2: float, symmetric: bool = False) -> Tensor:
    """Mean over anchors of -log softmax_b(cos(a_i^1, a_b^2) / tau2) at b = i."""
    if a1.shape != a2.shape:
        raise nx.DimensionError(f"paired views differ in shape: {a1.shape} vs {a2.shape}")
    return nce_from_similarities(cosine_matrix(a1, a2), tau2, symmetric)


class ViewBundle(NamedTuple):
    """Paired views: each field is a (view1, view2) tuple of same-shaped tensors."""

    seq_fused: tuple[Tensor, Tensor]
    item_fused: tuple[Tensor, Tensor]
    seq_intent: tuple[Tensor, Tensor] | None
    item_intent: tuple[Tensor, Tensor] | None


def multilevel_cl(bundle: ViewBundle, tau2: float, terms=CL_TERMS, symmetric: bool = False) -> Tensor | None:
    """Sum of InfoNCE over the requested semantic levels; None if no term applies."""
    total = None
    for name in terms:
        pair = getattr(bundle, name)
        if pair is None:
            continue
        t = infonce(pair[0], pair[1], tau2, symmetric)
        total = t if total is None else nx.add(total, t)
    return total


def total_loss(rec: Tensor, cl: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if cl is None or lam == 0:
        return rec
    return nx.add(rec, nx.scale(cl, lam))
