"""Joint optimization of the recommendation and contrastive objectives."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import DataError, EvalInstance, TrainBatch, augment_sequence, make_train_batch, pad_left
from .evaluation import evaluate_split
from .graph import CoGraph, CoGraphConfig, perturb_graph_edges, propagate
from .model import BIPCL, ModelConfig, load_checkpoint, perturb_embeddings, save_checkpoint
from .objectives import CL_TERMS, FINAL_TERMS, INTENT_TERMS, LossConfig, ViewBundle, multilevel_cl, rec_loss, total_loss

log = logging.getLogger(__name__)

VARIANTS = (
    "full",
    "no_intent",
    "no_gating",
    "no_pooling",
    "graph_aug",
    "seq_aug",
    "no_cl",
    "no_final_cl",
    "no_intent_cl",
)

# rng stream ids, combined with (seed, epoch, step)
_NEG, _VIEW1, _VIEW2, _AUG, _SHUFFLE, _GRAPH = range(6)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AblationFlags:
    no_intent: bool = False
    no_gating: bool = False
    no_pooling: bool = False
    graph_aug: bool = False
    seq_aug: bool = False
    no_cl: bool = False
    no_final_cl: bool = False
    no_intent_cl: bool = False

    def __post_init__(self):
        if self.graph_aug and self.seq_aug:
            raise ValueError("graph_aug and seq_aug are mutually exclusive")
        if self.no_final_cl and self.no_intent_cl:
            raise ValueError("no_final_cl and no_intent_cl together remove every contrastive term; use no_cl")

    @classmethod
    def variant(cls, name: str) -> "AblationFlags":
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
        return cls() if name == "full" else cls(**{name: True})

    @property
    def gate_mode(self) -> str:
        if self.no_intent:
            return "none"
        return "sum" if self.no_gating else "gated"

    @property
    def use_mean(self) -> bool:
        return not self.no_pooling

    @property
    def cl_terms(self) -> tuple[str, ...]:
        if self.no_final_cl:
            return INTENT_TERMS
        if self.no_intent_cl:
            return FINAL_TERMS
        return CL_TERMS


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    K: int = 256
    T: int = 20
    blocks: int = 1
    heads: int = 4
    bidirectional: bool = False
    epsilon: float = 0.1
    graph: CoGraphConfig = field(default_factory=CoGraphConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    batch_size: int = 256
    epochs_max: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    drop_rate: float = 0.1
    seq_aug_strength: float = 0.2
    all_prefixes: bool = False
    eval_N: int = 20
    emb_std: float = 0.02
    proto_std: float = 0.02
    max_steps: int = 0  # 0 means no cap

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def model_config(self, n_items: int) -> ModelConfig:
        return ModelConfig(n_items, self.d, self.K, self.T, self.graph.depth, self.blocks, self.heads, self.bidirectional)

    @property
    def contrastive(self) -> bool:
        return self.loss.lam > 0 and not self.ablation.no_cl


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


class Adam:
    """Bias-corrected Adam over a dict of named parameters."""

    def __init__(self, params: dict[str, nx.Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, nx.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([float(self.t)])
        return out

    def load(self, tensors: dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()
        self.t = int(tensors["adam.t"][0])


def adam_step(params: dict[str, nx.Tensor], grads: dict[str, np.ndarray], state: Adam) -> None:
    state.step(params, grads)


def _augmented_inputs(batch: TrainBatch, strength: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    T = batch.sequences.shape[1]
    out = []
    for row, n in zip(batch.sequences, batch.valid_lengths):
        mode = ("mask", "crop", "reorder")[int(rng.integers(3))]
        out.append(augment_sequence(row[T - n:], mode, strength, rng, batch.pad))
    return pad_left(out, T, batch.pad)


def compute_losses(model: BIPCL, batch: TrainBatch, graph: CoGraph, cfg: TrainConfig, step_seed: Sequence[int],
                   view_graphs: Sequence[CoGraph] | None = None) -> dict[str, nx.Tensor | None]:
    """Forward pass of one step: rec loss, contrastive loss and their weighted sum."""
    flags = cfg.ablation
    gate_mode, use_mean = flags.gate_mode, flags.use_mean
    r = model.structural(graph)
    B = len(batch)
    cand = np.concatenate([batch.positives[:, None], batch.negatives], axis=1)
    rows, inv = np.unique(cand, return_inverse=True)
    items = model.items(r, rows, gate_mode)
    cand_emb = nx.take_rows(items.fused, inv.reshape(cand.shape))
    seq = model.sequences(r, batch.sequences, batch.valid_lengths, gate_mode, use_mean)
    l_rec = rec_loss(seq.fused, cand_emb, cfg.loss.tau1, reduction=cfg.loss.rec_reduction)
    l_cl = None
    if cfg.contrastive:
        if flags.graph_aug:
            if view_graphs is None:
                raise TrainingError("graph_aug needs two perturbed graphs")
            views = [propagate(g, model.params["item_emb"], cfg.graph.depth) for g in view_graphs]
        else:
            views = perturb_embeddings(r, cfg.epsilon, [_rng(*step_seed, _VIEW1), _rng(*step_seed, _VIEW2)])
        item_set = np.unique(batch.positives)
        item_views = [model.items(v, item_set, gate_mode) for v in views]
        if flags.seq_aug:
            aug_rng = _rng(*step_seed, _AUG)
            seq_views = []
            for _ in range(2):
                s, n = _augmented_inputs(batch, cfg.seq_aug_strength, aug_rng)
                seq_views.append(model.sequences(r, s, n, gate_mode, use_mean))
        else:
            seq_views = [model.sequences(v, batch.sequences, batch.valid_lengths, gate_mode, use_mean) for v in views]
        with_intent = not flags.no_intent
        bundle = ViewBundle(
            seq_fused=(seq_views[0].fused, seq_views[1].fused),
            item_fused=(item_views[0].fused, item_views[1].fused),
            seq_intent=(seq_views[0].intent, seq_views[1].intent) if with_intent else None,
            item_intent=(item_views[0].intent, item_views[1].intent) if with_intent else None,
        )
        l_cl = multilevel_cl(bundle, cfg.loss.tau2, flags.cl_terms, cfg.loss.symmetric_nce)
    lam = 0.0 if flags.no_cl else cfg.loss.lam
    return {"rec": l_rec, "cl": l_cl, "total": total_loss(l_rec, l_cl, lam), "batch_size": B}


def train_step(model: BIPCL, opt: Adam, batch: TrainBatch, graph: CoGraph, cfg: TrainConfig,
               step_seed: Sequence[int], view_graphs=None) -> dict[str, float]:
    losses = compute_losses(model, batch, graph, cfg, step_seed, view_graphs)
    total = losses["total"]
    if not np.isfinite(total.data).all():
        raise TrainingError(f"non-finite loss at step seed {tuple(step_seed)}")
    nx.zero_grad(model.params.values())
    nx.backward(total)
    # parameters a variant leaves unused keep a zero gradient
    opt.step(model.params, {k: p.grad for k, p in model.params.items() if p.grad is not None})
    return {
        "rec": float(losses["rec"].data),
        "cl": float(losses["cl"].data) if losses["cl"] is not None else 0.0,
        "total": float(total.data),
    }


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_metric: float
    best_epoch: int
    epochs_run: int
    history: list[dict] = field(default_factory=list)


def fit(model: BIPCL, train_pairs: Sequence[tuple[Sequence[int], int]], val_instances: Sequence[EvalInstance],
        graph: CoGraph, cfg: TrainConfig, run_dir: str | None = None, resume: bool = False,
        progress: bool = False) -> FitResult:
    """Epoch loop with validation Recall@N early stopping.

    Writes ``best.ckpt``, ``last.ckpt`` and ``train_log.tsv`` under ``run_dir``
    when it is given.
    """
    if not train_pairs or not val_instances:
        raise DataError("fit needs nonempty training and validation data")
    opt = Adam(model.params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    n_items = model.cfg.n_items
    start_epoch, step = 1, 0
    best_metric, best_epoch, bad = -1.0, 0, 0
    best_state = {k: v.copy() for k, v in model.state().items()}
    history: list[dict] = []
    log_path = os.path.join(run_dir, "train_log.tsv") if run_dir else None
    last_path = os.path.join(run_dir, "last.ckpt") if run_dir else None
    best_path = os.path.join(run_dir, "best.ckpt") if run_dir else None

    if resume and last_path and os.path.exists(last_path):
        _, tensors = load_checkpoint(last_path)
        for k, p in model.params.items():
            p.data = tensors[k].copy()
        opt.load(tensors)
        start_epoch = int(tensors["meta.epoch"][0]) + 1
        step = int(tensors["meta.step"][0])
        best_metric = float(tensors["meta.best_metric"][0])
        best_epoch = int(tensors["meta.best_epoch"][0])
        bad = int(tensors["meta.bad_epochs"][0])
        if best_path and os.path.exists(best_path):
            best_state = load_checkpoint(best_path)[1]
        log.info("resuming at epoch %d (step %d)", start_epoch, step)
        if bad >= cfg.patience:
            return FitResult(best_state, best_metric, best_epoch, start_epoch - 1, history)
    elif log_path:
        with open(log_path, "w") as fh:
            fh.write("epoch\tstep\tL_rec\tL_CL\tval_recall@%d\telapsed_s\n" % cfg.eval_N)

    t0 = time.perf_counter()
    epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.epochs_max + 1):
        order = _rng(cfg.seed, epoch, 0, _SHUFFLE).permutation(len(train_pairs))
        view_graphs = None
        if cfg.contrastive and cfg.ablation.graph_aug:
            view_graphs = [perturb_graph_edges(graph, cfg.drop_rate, _rng(cfg.seed, epoch, 0, _GRAPH, k)) for k in (1, 2)]
        sums = np.zeros(2)
        n_batches = 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            step += 1
            pairs = [train_pairs[i] for i in order[start:start + cfg.batch_size]]
            step_seed = (cfg.seed, epoch, bi + 1)
            batch = make_train_batch(pairs, cfg.T, cfg.loss.n_negatives, n_items, _rng(*step_seed, _NEG))
            out = train_step(model, opt, batch, graph, cfg, step_seed, view_graphs)
            sums += (out["rec"], out["cl"])
            n_batches += 1
        report = evaluate_split(model, graph, val_instances, (cfg.eval_N,), cfg.ablation.gate_mode, cfg.ablation.use_mean)
        metric = report.get("recall", cfg.eval_N)
        elapsed = time.perf_counter() - t0
        rec_mean, cl_mean = sums / max(n_batches, 1)
        row = {"epoch": epoch, "step": step, "rec": rec_mean, "cl": cl_mean, "val": metric, "elapsed": elapsed}
        history.append(row)
        if progress:
            log.info("epoch %d step %d rec %.4f cl %.4f val R@%d %.4f", epoch, step, rec_mean, cl_mean, cfg.eval_N, metric)
        if log_path:
            with open(log_path, "a") as fh:
                fh.write(f"{epoch}\t{step}\t{float(rec_mean)!r}\t{float(cl_mean)!r}\t{float(metric)!r}\t{elapsed:.3f}\n")
        if metric > best_metric:
            best_metric, best_epoch, bad = metric, epoch, 0
            best_state = {k: v.copy() for k, v in model.state().items()}
            if best_path:
                save_checkpoint(best_path, model.cfg, best_state)
        else:
            bad += 1
        if last_path:
            meta = {
                "meta.epoch": np.array([float(epoch)]),
                "meta.step": np.array([float(step)]),
                "meta.best_metric": np.array([best_metric]),
                "meta.best_epoch": np.array([float(best_epoch)]),
                "meta.bad_epochs": np.array([float(bad)]),
            }
            save_checkpoint(last_path, model.cfg, {**model.state(), **opt.state(), **meta})
        if bad >= cfg.patience or (cfg.max_steps and step >= cfg.max_steps):
            break
    return FitResult(best_state, best_metric, best_epoch, epoch, history)


def with_variant(cfg: TrainConfig, name: str) -> TrainConfig:
    return replace(cfg, ablation=AblationFlags.variant(name))


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
