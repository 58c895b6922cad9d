"""Command-line entry point: ``bipcl <prepare|train|eval|ablate|geometry>``."""

from __future__ import annotations

import argparse
import codecs
import configparser
import csv
import enum
import hashlib
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .data import (
    DataError,
    LogFormat,
    filter_min_interactions,
    load_interactions,
    read_manifest,
    split_users,
    write_manifest,
)
from .evaluation import METRICS, EvaluationError, MetricReport, angular_density, evaluate_split, export_embeddings, group_by_activity, write_density, write_report
from .graph import CoGraphConfig, GraphError, dump_graph, load_graph
from .model import BIPCL, CheckpointError, ModelConfig, load_checkpoint
from .numerics import DimensionError
from .objectives import LossConfig
from .pipeline import Prepared, prepare
from .trainer import VARIANTS, AblationFlags, TrainConfig, TrainingError, fit

log = logging.getLogger("bipcl")


class ExitCode(enum.IntEnum):
    OK = 0
    INTERNAL = 1
    USAGE = 2
    CONFIG = 3
    DATA = 4
    TRAINING = 5
    CHECKPOINT = 6


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class UsageError(ValueError):
    pass


_ABLATION_KEYS = [f"ablation.{name}" for name in VARIANTS[1:]]

# key -> (default, help). Types follow the default.
KEYS: dict[str, tuple[object, str]] = {
    "data.input": ("", "interaction log path (user, item, timestamp per line)"),
    "data.delimiter": ("\\t", "field delimiter; escapes like \\t are decoded"),
    "data.user_col": (0, "user column index"),
    "data.item_col": (1, "item column index"),
    "data.time_col": (2, "timestamp column index"),
    "data.skip_header": (False, "skip the first line"),
    "data.min_count": (5, "k-core threshold for users and items"),
    "data.manifest": ("", "existing split manifest to reuse instead of splitting"),
    "run.root": ("runs", "parent directory for new run directories"),
    "seed": (0, "global seed (split, init, sampling)"),
    "model.d": (64, "embedding dimension"),
    "model.K": (256, "intent prototypes per side"),
    "model.T": (20, "maximum sequence length"),
    "model.blocks": (1, "transformer blocks"),
    "model.heads": (4, "attention heads"),
    "model.bidirectional": (False, "non-causal attention"),
    "model.emb_std": (0.02, "item embedding init std"),
    "model.proto_std": (0.02, "prototype init std"),
    "graph.delta": (5, "co-occurrence distance threshold"),
    "graph.depth": (2, "propagation steps"),
    "graph.symmetric": (True, "accumulate co-occurrence in both directions"),
    "graph.drop_rate": (0.1, "edge drop probability for the graph_aug variant"),
    "perturb.epsilon": (0.1, "embedding perturbation magnitude"),
    "loss.tau1": (1.0, "recommendation temperature"),
    "loss.tau2": (0.2, "contrastive temperature"),
    "loss.lambda": (50.0, "contrastive weight"),
    "loss.n_negatives": (10, "sampled negatives per sequence"),
    "loss.symmetric": (False, "average InfoNCE over both anchor directions"),
    "loss.rec_reduction": ("sum", "sum or mean over the batch"),
    "train.batch_size": (256, "sequences per step"),
    "train.epochs_max": (100, "epoch cap"),
    "train.learning_rate": (1e-3, "Adam step size"),
    "train.beta1": (0.9, "Adam beta1"),
    "train.beta2": (0.999, "Adam beta2"),
    "train.adam_eps": (1e-8, "Adam epsilon"),
    "train.patience": (5, "epochs without validation gain before stopping"),
    "train.all_prefixes": (False, "train on every prefix instead of the last item only"),
    "train.max_steps": (0, "stop after this many steps (0 = no cap)"),
    "train.seq_aug_strength": (0.2, "augmentation strength for the seq_aug variant"),
    **{k: (False, f"ablation variant {k.split('.')[1]}") for k in _ABLATION_KEYS},
    "eval.Ns": ("20,50", "comma-separated cutoffs"),
    "eval.val_N": (20, "cutoff for validation recall during training"),
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_value(key: str, raw: str):
    default = KEYS[key][0]
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if key == "eval.Ns":
        Ns = tuple(int(x) for x in raw.split(",") if x.strip())
        if not Ns or min(Ns) < 1:
            raise ValueError("cutoffs must be positive integers")
        return Ns
    return raw.strip()


def defaults() -> dict:
    return {k: parse_value(k, v) if isinstance(v, str) else v for k, (v, _) in KEYS.items()}


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    with open(path) as fh:
        try:
            parser.read_string("[config]\n" + fh.read(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return dict(parser["config"])


def resolve_config(path=None, overrides: dict[str, str] | None = None, seed: int | None = None) -> dict:
    """Defaults, then the file, then ``--key value`` overrides, then ``--seed``. All problems reported together."""
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(read_config_file(path))
    raw.update(overrides or {})
    if seed is not None:
        raw["seed"] = str(seed)
    values = defaults()
    problems = []
    for key, text in raw.items():
        if key not in KEYS:
            problems.append(f"unknown config key {key!r}")
            continue
        try:
            values[key] = parse_value(key, text)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if not problems:
        try:
            train_config(values).model_config(1)
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(sorted(set(problems)))
    return values


def train_config(v: dict) -> TrainConfig:
    flags = AblationFlags(**{k.split(".")[1]: v[k] for k in _ABLATION_KEYS})
    return TrainConfig(
        d=v["model.d"], K=v["model.K"], T=v["model.T"], blocks=v["model.blocks"], heads=v["model.heads"],
        bidirectional=v["model.bidirectional"], epsilon=v["perturb.epsilon"],
        graph=CoGraphConfig(v["graph.delta"], v["graph.depth"], v["graph.symmetric"]),
        loss=LossConfig(v["loss.tau1"], v["loss.tau2"], v["loss.lambda"], v["loss.n_negatives"], v["loss.symmetric"],
                        v["loss.rec_reduction"]),
        ablation=flags, batch_size=v["train.batch_size"], epochs_max=v["train.epochs_max"],
        learning_rate=v["train.learning_rate"], beta1=v["train.beta1"], beta2=v["train.beta2"],
        adam_eps=v["train.adam_eps"], patience=v["train.patience"], seed=v["seed"], drop_rate=v["graph.drop_rate"],
        seq_aug_strength=v["train.seq_aug_strength"], all_prefixes=v["train.all_prefixes"], eval_N=v["eval.val_N"],
        emb_std=v["model.emb_std"], proto_std=v["model.proto_std"], max_steps=v["train.max_steps"],
    )


def format_config(values: dict) -> str:
    lines = []
    for k in KEYS:
        v = values[k]
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    return hashlib.sha256(format_config(values).encode()).hexdigest()[:10]


def new_run_dir(values: dict) -> str:
    base = os.path.join(values["run.root"], f"{config_hash(values)}-{time.strftime('%Y%m%d-%H%M%S')}")
    path, n = base, 1
    while os.path.exists(path):
        n += 1
        path = f"{base}-{n}"
    os.makedirs(path)
    _write_config(values, path)
    return path


def _write_config(values: dict, path: str) -> None:
    with open(os.path.join(path, "config.cfg"), "w") as fh:
        fh.write(format_config(values))


def _run_dir_for(values: dict, args) -> str:
    """Explicit --run-dir (created and given a config.cfg unless resuming) or a fresh one."""
    if not args.run_dir:
        return new_run_dir(values)
    os.makedirs(args.run_dir, exist_ok=True)
    if not getattr(args, "resume", False):
        _write_config(values, args.run_dir)
    return args.run_dir


def _log_format(v: dict) -> LogFormat:
    return LogFormat(codecs.decode(v["data.delimiter"], "unicode_escape"), v["data.user_col"], v["data.item_col"],
                     v["data.time_col"], v["data.skip_header"])


def load_log(v: dict):
    if not v["data.input"]:
        raise ConfigError(["data.input is required for this command"])
    try:
        raw = load_interactions(v["data.input"], _log_format(v))
    except OSError as exc:
        raise DataError(f"cannot read {v['data.input']}: {exc.strerror or exc}") from exc
    return filter_min_interactions(raw, v["data.min_count"])


def _split_for(v: dict, log_, run_dir: str | None):
    """Reuse the run's manifest, else data.manifest, else split fresh and persist."""
    candidates = [os.path.join(run_dir, "split.bin")] if run_dir else []
    if v["data.manifest"]:
        candidates.append(v["data.manifest"])
    for path in candidates:
        if os.path.exists(path):
            split = read_manifest(path)
            known = set(log_.users)
            if not all(u in known for part in (split.train, split.val, split.test) for u in part):
                raise DataError(f"manifest {path} names users absent from the filtered log")
            return split
    split = split_users(log_, v["seed"])
    if run_dir:
        write_manifest(split, os.path.join(run_dir, "split.bin"))
    return split


def _prepared(v: dict, cfg: TrainConfig, run_dir: str | None) -> Prepared:
    log_ = load_log(v)
    return prepare(log_, cfg, _split_for(v, log_, run_dir))


def stats_rows(log_) -> list[tuple[str, str]]:
    return [
        ("users", f"{log_.n_users:,}"),
        ("items", f"{log_.n_items:,}"),
        ("actions", f"{log_.n_actions:,}"),
        ("sparsity", f"{100 * log_.sparsity:.4f}%"),
    ]


# ----------------------------------------------------------------------------
# commands

def cmd_prepare(v: dict, args) -> int:
    log_ = load_log(v)
    run_dir = _run_dir_for(v, args)
    split = _split_for(v, log_, run_dir)
    rows = stats_rows(log_)
    with open(os.path.join(run_dir, "stats.tsv"), "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow([k for k, _ in rows] + ["train_users", "val_users", "test_users"])
        w.writerow([x for _, x in rows] + [len(split.train), len(split.val), len(split.test)])
    print("\t".join(k for k, _ in rows))
    print("\t".join(x for _, x in rows))
    print(f"split\t{len(split.train)}/{len(split.val)}/{len(split.test)}")
    print(f"run_dir\t{run_dir}")
    return ExitCode.OK


def cmd_train(v: dict, args) -> int:
    from .plots import plot_training_log

    cfg = train_config(v)
    run_dir = _run_dir_for(v, args)
    prep = _prepared(v, cfg, run_dir)
    dump_graph(prep.graph, os.path.join(run_dir, "graph.bin"))
    model = BIPCL(cfg.model_config(prep.log.n_items), seed=cfg.seed, emb_std=cfg.emb_std, proto_std=cfg.proto_std)
    res = fit(model, prep.pairs(cfg), prep.instances("val"), prep.graph, cfg, run_dir, args.resume, progress=True)
    if res.history:
        plot_training_log(_read_train_log(os.path.join(run_dir, "train_log.tsv")), os.path.join(run_dir, "train_log.png"), cfg.eval_N)
    print(f"best_epoch\t{res.best_epoch}")
    print(f"val_recall@{cfg.eval_N}\t{res.best_metric!r}")
    print(f"run_dir\t{run_dir}")
    return ExitCode.OK


def _read_train_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return [{"epoch": int(r[0]), "step": int(r[1]), "rec": float(r[2]), "cl": float(r[3]), "val": float(r[4])} for r in rows[1:]]


def _check_model_matches(ckpt_cfg: ModelConfig, cfg: TrainConfig, n_items: int, where: str) -> None:
    want = cfg.model_config(n_items)
    diffs = [f"{f}: checkpoint {getattr(ckpt_cfg, f)} vs config {getattr(want, f)}"
             for f in ("n_items", "d", "K", "T", "L", "blocks", "heads", "bidirectional")
             if getattr(ckpt_cfg, f) != getattr(want, f)]
    if diffs:
        raise CheckpointError(f"{where} does not match the configuration ({'; '.join(diffs)})")


def _load_model(path: str) -> BIPCL:
    mcfg, tensors = load_checkpoint(path)
    params = {k: t for k, t in tensors.items() if not k.startswith(("adam.", "meta."))}
    return BIPCL(mcfg, params=params)


def _print_report(report: MetricReport) -> None:
    print("group\tmetric\tN\tvalue\tn_users")
    for g, m, N, val, n in report.rows():
        print(f"{g}\t{m}\t{N}\t{val:.6f}\t{n}")


def cmd_eval(v: dict, args) -> int:
    from .plots import plot_report

    cfg = train_config(v)
    run_dir = args.run_dir
    ckpt = args.checkpoint or (os.path.join(run_dir, "best.ckpt") if run_dir else None)
    if not ckpt:
        raise UsageError("eval needs --checkpoint or --run-dir")
    prep = _prepared(v, cfg, run_dir)
    model = _load_model(ckpt)
    _check_model_matches(model.cfg, cfg, prep.log.n_items, ckpt)
    instances = prep.instances(args.split)
    groups = None
    if args.groups:
        groups = group_by_activity({i.user: len(prep.log.sequences[i.user]) for i in instances})
    report = evaluate_split(model, prep.graph, instances, v["eval.Ns"], cfg.ablation.gate_mode, cfg.ablation.use_mean, groups)
    out = args.out or run_dir or os.path.dirname(os.path.abspath(ckpt))
    os.makedirs(out, exist_ok=True)
    write_report(report, os.path.join(out, f"report_{args.split}.tsv"))
    plot_report(report, os.path.join(out, f"report_{args.split}.png"))
    _print_report(report)
    return ExitCode.OK


def cmd_ablate(v: dict, args) -> int:
    from .pipeline import run
    from .plots import plot_ablation

    variants = [x.strip() for x in args.variants.split(",") if x.strip()] if args.variants else list(VARIANTS)
    for name in variants:
        if name not in VARIANTS:
            raise ConfigError([f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}"])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [v["seed"]]
    run_dir = _run_dir_for(v, args)
    Ns = v["eval.Ns"]
    log_ = load_log(v)
    per_seed: dict[str, list[MetricReport]] = {name: [] for name in variants}
    long_rows = []
    for seed in seeds:
        sv = {**v, "seed": seed}
        base = replace(train_config(sv), ablation=AblationFlags())
        seed_dir = os.path.join(run_dir, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        prep = prepare(log_, base, _split_for(sv, log_, seed_dir))
        dump_graph(prep.graph, os.path.join(seed_dir, "graph.bin"))
        for name in variants:
            vdir = os.path.join(seed_dir, name)
            os.makedirs(vdir, exist_ok=True)
            cfg = replace(base, ablation=AblationFlags.variant(name))
            t0 = time.perf_counter()
            res = run(prep, cfg, vdir, args.resume, Ns)
            write_report(res.test, os.path.join(vdir, "report_test.tsv"))
            per_seed[name].append(res.test)
            for g, m, N, val, n in res.test.rows():
                long_rows.append((seed, name, m, N, val, n))
            log.info("seed %d %-13s recall@%d %.4f (%.0fs)", seed, name, Ns[0], res.test.get("recall", Ns[0]), time.perf_counter() - t0)
    table = _ablation_table(per_seed, Ns)
    cols = [f"{m}@{N}" for N in Ns for m in METRICS]
    with open(os.path.join(run_dir, "ablation.tsv"), "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["variant", *cols, "n_seeds"])
        for name, rep in table.items():
            w.writerow([name, *(repr(rep.get(m, N)) for N in Ns for m in METRICS), len(seeds)])
    with open(os.path.join(run_dir, "ablation_runs.tsv"), "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["seed", "variant", "metric", "N", "value", "n_users"])
        w.writerows((s, n, m, N, repr(val), k) for s, n, m, N, val, k in long_rows)
    plot_ablation(table, os.path.join(run_dir, "ablation.png"), metrics=[("recall", Ns[0]), ("ndcg", Ns[0])])
    print("variant\t" + "\t".join(cols))
    for name, rep in table.items():
        print(name + "\t" + "\t".join(f"{rep.get(m, N):.4f}" for N in Ns for m in METRICS))
    print(f"run_dir\t{run_dir}")
    return ExitCode.OK


def _ablation_table(per_seed: dict[str, list[MetricReport]], Ns) -> dict[str, MetricReport]:
    """Mean over seeds of the overall ('all') group, one report per variant."""
    out = {}
    for name, reports in per_seed.items():
        rep = MetricReport(tuple(Ns))
        rep.values["all"] = {(m, N): float(np.mean([r.get(m, N) for r in reports])) for N in Ns for m in METRICS}
        rep.counts["all"] = int(np.mean([r.counts["all"] for r in reports]))
        out[name] = rep
    return out


def _find_graph(ckpt: str, explicit: str | None):
    if explicit:
        return load_graph(explicit)
    d = os.path.dirname(os.path.abspath(ckpt))
    for _ in range(3):
        path = os.path.join(d, "graph.bin")
        if os.path.exists(path):
            return load_graph(path)
        d = os.path.dirname(d)
    return None


def item_intents(model: BIPCL, graph) -> np.ndarray:
    """Item intent embeddings Z over the unperturbed structural table."""
    return model.items(model.structural(graph)).intent.data


def cmd_geometry(v: dict, args) -> int:
    from .plots import plot_density

    if not 1 <= len(args.checkpoints) <= 2:
        raise UsageError("geometry takes one or two checkpoints")
    labels = args.labels.split(",") if args.labels else [f"model{i + 1}" for i in range(len(args.checkpoints))]
    if len(labels) != len(args.checkpoints):
        raise UsageError("--labels must name every checkpoint")
    models = [_load_model(p) for p in args.checkpoints]
    if len({m.cfg.d for m in models}) > 1:
        raise CheckpointError("checkpoints disagree on embedding dimension d")
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoints[0]))
    os.makedirs(out, exist_ok=True)
    curves = {}
    print("label\tconcentration\tpeak_density\tdegenerate")
    for label, path, model in zip(labels, args.checkpoints, models):
        graph = _find_graph(path, args.graph)
        if graph is None:
            cfg = train_config(v)
            graph = _prepared(v, cfg, args.run_dir).graph
        if graph.n_items != model.cfg.n_items:
            raise CheckpointError(f"{path}: graph has {graph.n_items} items, checkpoint {model.cfg.n_items}")
        z = item_intents(model, graph)
        dens = angular_density(z, bandwidth=args.bandwidth)
        write_density(dens, os.path.join(out, f"density_{label}.tsv"))
        export_embeddings(z, os.path.join(out, f"intent_{label}.tsv"))
        curves[label] = dens
        print(f"{label}\t{dens.concentration:.6f}\t{dens.peak:.6f}\t{str(dens.degenerate).lower()}")
    plot_density(curves, os.path.join(out, "density.png"))
    return ExitCode.OK


# ----------------------------------------------------------------------------
# argument handling

def _keys_epilog() -> str:
    width = max(map(len, KEYS))
    lines = ["config keys (file lines 'key = value', or '--key value' overrides):"]
    for k, (default, text) in KEYS.items():
        shown = str(default).lower() if isinstance(default, bool) else default
        lines.append(f"  {k:<{width}}  default {shown!s:<8}  {text}")
    lines.append("")
    lines.append("environment: BIPCL_THREADS sets BLAS/OpenMP threads (default 1).")
    lines.append("exit codes: " + ", ".join(f"{c.value}={c.name.lower()}" for c in ExitCode))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="bipcl", description=__doc__, epilog=_keys_epilog(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat dotted-key config file")
        p.add_argument("--seed", type=int, help="overrides the 'seed' key")
        p.add_argument("--run-dir", help="use this run directory instead of creating one")
        p.add_argument("--resume", action="store_true", help="continue from last.ckpt in the run directory")
        p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
        return p

    common(sub.add_parser("prepare", help="load, filter, split; print dataset statistics", epilog=_keys_epilog(), formatter_class=fmt))
    common(sub.add_parser("train", help="fit one model; writes checkpoints and the training log", epilog=_keys_epilog(), formatter_class=fmt))
    p = common(sub.add_parser("eval", help="rank the catalogue for a split and write a metric report", epilog=_keys_epilog(), formatter_class=fmt))
    p.add_argument("--checkpoint", help="defaults to best.ckpt in --run-dir")
    p.add_argument("--split", choices=("test", "val"), default="test")
    p.add_argument("--groups", action="store_true", help="add sparse/normal/popular user-group rows")
    p.add_argument("--out", help="output directory for the report")
    p = common(sub.add_parser("ablate", help="train variants under identical data and seeds", epilog=_keys_epilog(), formatter_class=fmt))
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)} (default all)")
    p.add_argument("--seeds", help="comma-separated seeds (default the configured seed)")
    p = common(sub.add_parser("geometry", help="angular density of item intent embeddings", epilog=_keys_epilog(), formatter_class=fmt))
    p.add_argument("checkpoints", nargs="+", help="one checkpoint, or two for a side-by-side comparison")
    p.add_argument("--labels", help="comma-separated curve labels")
    p.add_argument("--graph", help="graph dump; default looks for graph.bin near the checkpoint")
    p.add_argument("--bandwidth", type=float, default=0.2, help="wrapped-Gaussian kernel bandwidth (radians)")
    p.add_argument("--out", help="output directory")
    return parser


def split_overrides(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"override {tok} needs a value")
            val = extra[i + 1]
            i += 2
        out[key] = val
    return out


_COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "geometry": cmd_geometry}


def _thread_limit():
    # single-threaded unless asked otherwise, so reruns are bitwise identical
    raw = os.environ.get("BIPCL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"BIPCL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"BIPCL_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        overrides = split_overrides(extra)
        config_path = args.config
        if config_path is None and args.run_dir and os.path.exists(os.path.join(args.run_dir, "config.cfg")):
            config_path = os.path.join(args.run_dir, "config.cfg")
        values = resolve_config(config_path, overrides, args.seed)
        limit = _thread_limit()
        try:
            return int(_COMMANDS[args.command](values, args))
        finally:
            if limit is not None:
                limit.restore_original_limits()
    except UsageError as exc:
        print(f"bipcl: usage error: {exc}", file=sys.stderr)
        return ExitCode.USAGE
    except ConfigError as exc:
        print("bipcl: configuration error:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return ExitCode.CONFIG
    except (DataError, GraphError, EvaluationError) as exc:
        print(f"bipcl: data error: {exc}", file=sys.stderr)
        return ExitCode.DATA
    except TrainingError as exc:
        print(f"bipcl: training error: {exc}", file=sys.stderr)
        return ExitCode.TRAINING
    except (CheckpointError, DimensionError) as exc:
        print(f"bipcl: checkpoint error: {exc}", file=sys.stderr)
        return ExitCode.CHECKPOINT
    except OSError as exc:
        print(f"bipcl: i/o error: {exc}", file=sys.stderr)
        return ExitCode.DATA


if __name__ == "__main__":
    sys.exit(main())
