"""Interaction logs: parsing, k-core filtering, user splits, batches, augmentation."""

from __future__ import annotations

import io
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    pass


class EmptyLogError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


@dataclass
class InteractionLog:
    """Per-user, time-ordered item sequences with dense id maps.

    ``sequences[u]`` holds dense item indices for user ``users[u]``.
    """

    users: list[str]
    items: list[str]
    sequences: list[list[int]]
    timestamps: list[list[int]] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_actions(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def sparsity(self) -> float:
        # density in the style of dataset tables: actions / (|U| * |V|)
        return self.n_actions / float(self.n_users * self.n_items)

    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    def records(self) -> list[tuple[str, str, int]]:
        out = []
        for u, seq, ts in zip(self.users, self.sequences, self.timestamps):
            out.extend((u, self.items[i], t) for i, t in zip(seq, ts))
        return out


@dataclass(frozen=True)
class LogFormat:
    delimiter: str = "\t"
    user_col: int = 0
    item_col: int = 1
    time_col: int = 2
    skip_header: bool = False


def _build_log(records: Iterable[tuple[str, str, int]]) -> InteractionLog:
    by_user: dict[str, list[tuple[int, int, str]]] = {}
    for order, (u, i, t) in enumerate(records):
        by_user.setdefault(u, []).append((t, order, i))
    if not by_user:
        raise EmptyLogError("interaction log is empty")
    item_ids: dict[str, int] = {}
    users, seqs, stamps = [], [], []
    for u in sorted(by_user):
        rows = sorted(by_user[u])
        users.append(u)
        seq = []
        for _, _, i in rows:
            if i not in item_ids:
                item_ids[i] = len(item_ids)
            seq.append(item_ids[i])
        seqs.append(seq)
        stamps.append([t for t, _, _ in rows])
    return InteractionLog(users, list(item_ids), seqs, stamps)


def load_interactions(source, fmt: LogFormat = LogFormat()) -> InteractionLog:
    """Parse ``user<delim>item<delim>timestamp`` lines.

    ``source`` is a path, a text stream or a byte stream. Records are sorted
    by timestamp within each user (stable on ties) and exact duplicate
    ``(user, item, timestamp)`` rows are dropped.
    """
    if isinstance(source, (str, bytes)) and not hasattr(source, "read"):
        with open(source, "rb") as fh:
            return load_interactions(fh, fmt)
    stream = source
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)) or "b" in getattr(source, "mode", ""):
        stream = io.TextIOWrapper(source, encoding="utf-8")
    seen: set[tuple[str, str, int]] = set()
    records = []
    need = max(fmt.user_col, fmt.item_col, fmt.time_col) + 1
    for lineno, raw in enumerate(stream, start=1):
        if fmt.skip_header and lineno == 1:
            continue
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split(fmt.delimiter)
        if len(parts) < need:
            raise ParseError(lineno, line, f"expected at least {need} fields")
        try:
            ts = int(parts[fmt.time_col])
        except ValueError:
            raise ParseError(lineno, line, "timestamp is not an integer") from None
        rec = (parts[fmt.user_col], parts[fmt.item_col], ts)
        if rec in seen:
            continue
        seen.add(rec)
        records.append(rec)
    return _build_log(records)


def write_interactions(log_or_records, path, delimiter: str = "\t") -> None:
    records = log_or_records.records() if isinstance(log_or_records, InteractionLog) else log_or_records
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, t in records:
            fh.write(f"{u}{delimiter}{i}{delimiter}{t}\n")


def filter_min_interactions(log: InteractionLog, k: int = 5) -> InteractionLog:
    """Drop users and items with fewer than ``k`` interactions, to a fixed point."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seqs = [list(zip(s, t)) for s, t in zip(log.sequences, log.timestamps or [[0] * len(s) for s in log.sequences])]
    alive_users = list(range(log.n_users))
    while True:
        counts = Counter(i for u in alive_users for i, _ in seqs[u])
        bad_items = {i for i, c in counts.items() if c < k}
        changed = False
        if bad_items:
            for u in alive_users:
                seqs[u] = [(i, t) for i, t in seqs[u] if i not in bad_items]
            changed = True
        keep = [u for u in alive_users if len(seqs[u]) >= k]
        if len(keep) != len(alive_users):
            changed = True
        alive_users = keep
        if not changed:
            break
    if not alive_users:
        raise EmptyLogError(f"no users left after {k}-core filtering")
    records = []
    for u in alive_users:
        records.extend((log.users[u], log.items[i], t) for i, t in seqs[u])
    return _build_log(records)


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_users(log: InteractionLog, seed: int, ratios: Sequence[int] = (8, 1, 1)) -> Split:
    n = log.n_users
    if n < 10:
        raise DataError(f"need at least 10 users to split, have {n}")
    total = sum(ratios)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    perm = np.random.default_rng(seed).permutation(n)
    users = [log.users[i] for i in perm]
    test = users[:n_test]
    val = users[n_test:n_test + n_val]
    train = users[n_test + n_val:]
    return Split(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), seed)


_MANIFEST_MAGIC = b"BIPCLSPL"


def write_manifest(split: Split, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MANIFEST_MAGIC)
        fh.write(struct.pack("<q", split.seed))
        for name in ("train", "val", "test"):
            ids = getattr(split, name)
            fh.write(struct.pack("<I", len(ids)))
            for uid in ids:
                raw = uid.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)


def read_manifest(path) -> Split:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MANIFEST_MAGIC:
        raise DataError(f"{path}: not a split manifest")
    (seed,) = struct.unpack_from("<q", blob, 8)
    pos = 16
    parts = []
    for _ in range(3):
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        ids = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            ids.append(blob[pos:pos + ln].decode("utf-8"))
            pos += ln
        parts.append(tuple(ids))
    return Split(*parts, seed=seed)


@dataclass(frozen=True)
class EvalInstance:
    user: int
    input_items: tuple[int, ...]
    targets: tuple[int, ...]


def make_eval_instance(user: int, sequence: Sequence[int], input_fraction: float = 0.8) -> EvalInstance | None:
    """Split a sequence into an input prefix and target suffix; None if too short."""
    n = len(sequence)
    if n < 2:
        return None
    cut = min(max(1, int(math.floor(input_fraction * n))), n - 1)
    return EvalInstance(user, tuple(sequence[:cut]), tuple(sequence[cut:]))


def make_eval_instances(log: InteractionLog, users: Iterable[str], input_fraction: float = 0.8) -> list[EvalInstance]:
    index = log.user_index()
    out = []
    for uid in users:
        u = index[uid]
        inst = make_eval_instance(u, log.sequences[u], input_fraction)
        if inst is not None:
            out.append(inst)
    return out


@dataclass
class TrainBatch:
    sequences: np.ndarray  # B x T, left-padded with pad index
    valid_lengths: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray  # B x n
    pad: int

    def __len__(self) -> int:
        return len(self.positives)


def pad_left(seqs: Sequence[Sequence[int]], T: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    out = np.full((len(seqs), T), pad, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for r, s in enumerate(seqs):
        s = list(s)[-T:]
        if s:
            out[r, T - len(s):] = s
        lengths[r] = len(s)
    return out, lengths


def training_pairs(sequences: Sequence[Sequence[int]], all_prefixes: bool = False) -> list[tuple[list[int], int]]:
    """Next-item (input, positive) pairs; by default one per sequence (final item)."""
    out = []
    for s in sequences:
        if len(s) < 2:
            raise DataError("training sequences need at least 2 items")
        if all_prefixes:
            out.extend((list(s[:p]), s[p]) for p in range(1, len(s)))
        else:
            out.append((list(s[:-1]), s[-1]))
    return out


def sample_negatives(positives: np.ndarray, n: int, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the catalogue; any draw equal to the row's positive is redrawn."""
    pos = np.asarray(positives, dtype=np.int64)
    neg = rng.integers(0, n_items, size=(len(pos), n))
    if n_items < 2 and n > 0:
        raise DataError("cannot sample negatives from a catalogue of one item")
    clash = neg == pos[:, None]
    while clash.any():
        neg[clash] = rng.integers(0, n_items, size=int(clash.sum()))
        clash = neg == pos[:, None]
    return neg


def make_train_batch(
    pairs: Sequence[tuple[Sequence[int], int]], T: int, n: int, n_items: int, rng: np.random.Generator
) -> TrainBatch:
    seqs, lengths = pad_left([p[0] for p in pairs], T, n_items)
    if np.any(lengths < 1):
        raise DataError("every training input needs at least one item")
    positives = np.array([p[1] for p in pairs], dtype=np.int64)
    return TrainBatch(seqs, lengths, positives, sample_negatives(positives, n, n_items, rng), n_items)


def augment_sequence(seq: Sequence[int], mode: str, strength: float, rng: np.random.Generator, pad: int) -> list[int]:
    """Mask, crop or reorder a sequence (contrastive views for the Seq Aug ablation)."""
    if not 0.0 < strength < 1.0:
        raise ValueError("strength must lie in (0, 1)")
    seq = list(seq)
    n = len(seq)
    if n == 0:
        raise DataError("cannot augment an empty sequence")
    if mode == "mask":
        m = min(n, math.ceil(strength * n))
        if m >= n:
            m = n - 1  # keep one real item
        for p in rng.choice(n, size=m, replace=False):
            seq[p] = pad
        return seq
    if mode == "crop":
        w = max(1, math.ceil((1.0 - strength) * n))
        start = int(rng.integers(0, n - w + 1))
        return seq[start:start + w]
    if mode == "reorder":
        w = max(1, math.ceil(strength * n))
        start = int(rng.integers(0, n - w + 1))
        window = seq[start:start + w]
        rng.shuffle(window)
        seq[start:start + w] = window
        return seq
    raise ValueError(f"unknown augmentation mode {mode!r}")
