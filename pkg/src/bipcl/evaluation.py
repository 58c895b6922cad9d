"""Ranking metrics, activity groups, intent geometry and embedding export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import EvalInstance, pad_left
from .model import predict_topn

METRICS = ("recall", "ndcg", "hr")
GROUPS = ("sparse", "normal", "popular")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RankedPrediction:
    user: int
    ranked_items: tuple[int, ...]
    targets: frozenset[int]


def metrics_for_user(ranked: Sequence[int], targets: Iterable[int], N: int) -> tuple[float, float, float] | None:
    """(recall, ndcg, hr) at N with binary relevance; None when there are no targets."""
    targets = set(targets)
    if not targets:
        return None
    top = list(ranked)[:N]
    hits = [p for p, item in enumerate(top, start=1) if item in targets]
    recall = len(hits) / len(targets)
    dcg = sum(1.0 / math.log2(p + 1) for p in hits)
    idcg = sum(1.0 / math.log2(p + 1) for p in range(1, min(len(targets), N) + 1))
    return recall, dcg / idcg, 1.0 if hits else 0.0


@dataclass
class MetricReport:
    Ns: tuple[int, ...]
    values: dict[str, dict[tuple[str, int], float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def get(self, metric: str, N: int, group: str = "all") -> float:
        return self.values[group][(metric, N)]

    def rows(self) -> list[tuple[str, str, int, float, int]]:
        out = []
        for group, vals in self.values.items():
            for (metric, N), v in vals.items():
                out.append((group, metric, N, v, self.counts[group]))
        return out


def aggregate(per_user: dict[int, dict[tuple[str, int], float]], Ns, groups: dict[str, Sequence[int]] | None = None) -> MetricReport:
    report = MetricReport(tuple(Ns))
    buckets = {"all": sorted(per_user)}
    if groups:
        for g in GROUPS:
            buckets[g] = [u for u in groups.get(g, ()) if u in per_user]
    for name, users in buckets.items():
        report.counts[name] = len(users)
        vals = {}
        for N in Ns:
            for m in METRICS:
                # fixed reduction order for reproducible means
                xs = [per_user[u][(m, N)] for u in users]
                vals[(m, N)] = float(math.fsum(xs) / len(xs)) if xs else 0.0
        report.values[name] = vals
    return report


def rank_users(user_vectors: np.ndarray, item_table: np.ndarray, instances: Sequence[EvalInstance], N: int) -> list[RankedPrediction]:
    scores = user_vectors @ item_table.T
    return [
        RankedPrediction(inst.user, tuple(predict_topn(s, N, inst.input_items)), frozenset(inst.targets))
        for s, inst in zip(scores, instances)
    ]


def evaluate_predictions(preds: Sequence[RankedPrediction], Ns=(20, 50), groups=None) -> MetricReport:
    per_user = {}
    for p in preds:
        row = {}
        for N in Ns:
            res = metrics_for_user(p.ranked_items, p.targets, N)
            if res is None:
                break
            for m, v in zip(METRICS, res):
                row[(m, N)] = v
        else:
            per_user[p.user] = row
    if not per_user:
        raise EvaluationError("no evaluable users")
    return aggregate(per_user, Ns, groups)


def evaluate_split(model, graph, instances: Sequence[EvalInstance], Ns=(20, 50), gate_mode: str = "gated",
                   use_mean: bool = True, groups=None, batch_size: int = 512) -> MetricReport:
    """Encode each instance's input prefix and rank the whole catalogue once per user."""
    if not instances:
        raise EvaluationError("evaluation split is empty")
    r = model.structural(graph)
    table = model.items(r, gate_mode=gate_mode).fused.data
    T, pad = model.cfg.T, model.cfg.pad
    preds = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        seqs, lengths = pad_left([i.input_items for i in chunk], T, pad)
        users = model.sequences(r, seqs, lengths, gate_mode, use_mean).fused.data
        preds.extend(rank_users(users, table, chunk, max(Ns)))
    return evaluate_predictions(preds, Ns, groups)


def group_by_activity(counts: dict[int, int], boundaries: tuple[float, float] | None = None) -> dict[str, list[int]]:
    """Split users into sparse / normal / popular by interaction count."""
    users = sorted(counts)
    if boundaries is None:
        vals = np.array([counts[u] for u in users], dtype=np.float64)
        t1, t2 = np.percentile(vals, 33), np.percentile(vals, 67)
    else:
        t1, t2 = boundaries
    out = {g: [] for g in GROUPS}
    for u in users:
        c = counts[u]
        out["sparse" if c <= t1 else "normal" if c <= t2 else "popular"].append(u)
    return out


def write_report(report: MetricReport, path, delimiter: str = "\t") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["group", "metric", "N", "value", "n_users"])
        for group, metric, N, v, n in report.rows():
            w.writerow([group, metric, N, repr(v), n])


def read_report(path, delimiter: str = "\t") -> MetricReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter=delimiter))
    Ns = tuple(sorted({int(r["N"]) for r in rows}))
    report = MetricReport(Ns)
    for r in rows:
        report.values.setdefault(r["group"], {})[(r["metric"], int(r["N"]))] = float(r["value"])
        report.counts[r["group"]] = int(r["n_users"])
    return report


# ----------------------------------------------------------------------------
# geometry

@dataclass
class AngularDensity:
    angles: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    concentration: float
    degenerate: bool = False

    @property
    def peak(self) -> float:
        return float(self.density.max())


def mean_pairwise_cosine(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    u = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    n = len(u)
    s = u.sum(axis=0)
    # sum_{i != j} cos = |sum u|^2 - sum |u_i|^2
    off = float(s @ s - (u * u).sum())
    return off / (n * (n - 1))


def project_2d(x: np.ndarray) -> np.ndarray | None:
    xc = x - x.mean(axis=0, keepdims=True)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(x).max()):
        return None
    basis = vt[:2]
    # sign convention: largest-magnitude loading of each axis is positive
    for k in range(len(basis)):
        j = np.argmax(np.abs(basis[k]))
        if basis[k, j] < 0:
            basis[k] = -basis[k]
    out = xc @ basis.T
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((len(out), 1))])
    return out


def wrapped_kde(angles: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    """Wrapped-Gaussian kernel density on the circle, normalized per sample."""
    diff = grid[:, None] - angles[None, :]
    diff = (diff + np.pi) % (2 * np.pi) - np.pi
    dens = np.zeros_like(diff)
    for k in (-2, -1, 0, 1, 2):
        dens += np.exp(-0.5 * ((diff + 2 * np.pi * k) / bandwidth) ** 2)
    return dens.sum(axis=1) / (len(angles) * bandwidth * np.sqrt(2 * np.pi))


def angular_density(embeddings: np.ndarray, bandwidth: float = 0.2, n_grid: int = 360) -> AngularDensity:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2 or x.shape[1] < 2:
        raise ValueError("angular_density needs at least 2 embeddings of dimension >= 2")
    grid = np.linspace(-np.pi, np.pi, n_grid, endpoint=False)
    conc = mean_pairwise_cosine(x)
    xy = project_2d(x)
    if xy is None:
        dens = np.zeros(n_grid)
        dens[n_grid // 2] = n_grid / (2 * np.pi)
        return AngularDensity(np.zeros(len(x)), grid, dens, conc, degenerate=True)
    angles = np.arctan2(xy[:, 1], xy[:, 0])
    return AngularDensity(angles, grid, wrapped_kde(angles, grid, bandwidth), conc)


def write_density(dens: AngularDensity, path, delimiter: str = "\t") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# concentration_index{delimiter}{dens.concentration!r}\n")
        if dens.degenerate:
            fh.write("# degenerate\n")
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["angle_rad", "density"])
        for a, v in zip(dens.grid, dens.density):
            w.writerow([repr(float(a)), repr(float(v))])


def read_density(path, delimiter: str = "\t") -> tuple[np.ndarray, np.ndarray, float]:
    conc = math.nan
    grid, vals = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# concentration_index"):
                conc = float(line.split(delimiter)[1])
            elif line.startswith("#") or line.startswith("angle_rad"):
                continue
            else:
                a, v = line.rstrip("\n").split(delimiter)
                grid.append(float(a))
                vals.append(float(v))
    return np.array(grid), np.array(vals), conc


def export_embeddings(rows: np.ndarray, path, ids: Sequence | None = None, delimiter: str = "\t") -> None:
    rows = np.asarray(rows)
    ids = range(len(rows)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        for i, r in zip(ids, rows):
            w.writerow([i, *(repr(float(v)) for v in r)])


def read_embeddings(path, delimiter: str = "\t") -> tuple[list[str], np.ndarray]:
    ids, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter=delimiter):
            ids.append(row[0])
            vals.append([float(v) for v in row[1:]])
    return ids, np.array(vals)
