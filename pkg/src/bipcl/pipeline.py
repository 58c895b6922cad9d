"""End-to-end runs: log + split -> graph -> fit -> evaluate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionLog, Split, make_eval_instances, split_users, training_pairs
from .evaluation import MetricReport, evaluate_split, group_by_activity
from .graph import CoGraph, build_cograph
from .model import BIPCL
from .trainer import FitResult, TrainConfig, fit


@dataclass
class Prepared:
    log: InteractionLog
    split: Split
    train_sequences: list[list[int]]
    graph: CoGraph

    def pairs(self, cfg: TrainConfig):
        return training_pairs(self.train_sequences, cfg.all_prefixes)

    def instances(self, which: str):
        return make_eval_instances(self.log, getattr(self.split, which))


def prepare(log: InteractionLog, cfg: TrainConfig, split: Split | None = None) -> Prepared:
    split = split or split_users(log, cfg.seed)
    index = log.user_index()
    train_seqs = [log.sequences[index[u]] for u in split.train if len(log.sequences[index[u]]) >= 2]
    graph = build_cograph(train_seqs, log.n_items, cfg.graph)
    return Prepared(log, split, train_seqs, graph)


@dataclass
class RunResult:
    model: BIPCL
    fit: FitResult
    test: MetricReport


def run(prep: Prepared, cfg: TrainConfig, run_dir: str | None = None, resume: bool = False,
        Ns=(20, 50), groups: bool = False, progress: bool = False) -> RunResult:
    model = BIPCL(cfg.model_config(prep.log.n_items), seed=cfg.seed, emb_std=cfg.emb_std, proto_std=cfg.proto_std)
    result = fit(model, prep.pairs(cfg), prep.instances("val"), prep.graph, cfg, run_dir, resume, progress)
    for k, p in model.params.items():
        p.data = np.array(result.best_state[k], copy=True)
    test = prep.instances("test")
    group_map = None
    if groups:
        group_map = group_by_activity({i.user: len(prep.log.sequences[i.user]) for i in test})
    report = evaluate_split(model, prep.graph, test, Ns, cfg.ablation.gate_mode, cfg.ablation.use_mean, group_map)
    return RunResult(model, result, report)
