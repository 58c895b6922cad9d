"""Synthetic interaction generators used by the desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .data import InteractionLog


def _to_log(sequences: list[list[int]], n_items: int) -> InteractionLog:
    users = [f"u{u:05d}" for u in range(len(sequences))]
    items = [f"i{i:05d}" for i in range(n_items)]
    # keep dense ids aligned with generator ids
    stamps = [list(range(len(s))) for s in sequences]
    return InteractionLog(users, items, [list(s) for s in sequences], stamps)


def deterministic_rules(n_users: int = 50, n_items: int = 30, length: int = 8, seed: int = 0) -> InteractionLog:
    """Each user walks the catalogue with a fixed stride: +1 for even users, +3 for odd ones.

    With ``length * 3 <= n_items`` no user revisits an item, so every next
    item is a deterministic function of the two previous ones.
    """
    rng = np.random.default_rng(seed)
    seqs = []
    for u in range(n_users):
        stride = 1 if u % 2 == 0 else 3
        start = int(rng.integers(n_items))
        seqs.append([(start + stride * t) % n_items for t in range(length)])
    return _to_log(seqs, n_items)


def multi_intent(n_users: int = 2000, n_items: int = 500, n_intents: int = 4, min_len: int = 10,
                 max_len: int = 30, intents_per_user: tuple[int, int] = (1, 2), switch_prob: float = 0.3,
                 jump: int | None = 5, zipf: float = 0.0, noise: float = 0.05, local_prob: float = 1.0,
                 seed: int = 0) -> InteractionLog:
    """Users mix a few latent intents; each intent owns a contiguous block of items.

    Within an intent, the next item is a short forward jump from the last item
    visited in that intent (a local transition pattern), taken with probability
    ``local_prob``. Otherwise, or always when ``jump=None``, the next item is
    drawn from a Zipf(``zipf``) popularity law over the intent's block, so only
    the user's intent mixture carries signal for that step.
    """
    rng = np.random.default_rng(seed)
    block = n_items // n_intents
    pop = 1.0 / np.arange(1, block + 1) ** zipf
    pop /= pop.sum()
    ranks = [rng.permutation(block) for _ in range(n_intents)]
    seqs = []
    lo, hi = intents_per_user
    for _ in range(n_users):
        k = int(rng.integers(lo, hi + 1))
        mine = rng.choice(n_intents, size=k, replace=False)
        weights = rng.dirichlet(np.ones(k))
        cursor = {int(c): int(rng.integers(block)) for c in mine}
        n = int(rng.integers(min_len, max_len + 1))
        active = int(rng.choice(mine, p=weights))
        seq = []
        for _ in range(n):
            if rng.random() < switch_prob:
                active = int(rng.choice(mine, p=weights))
            if rng.random() < noise:
                seq.append(int(rng.integers(n_items)))
                continue
            if jump is None or rng.random() >= local_prob:
                seq.append(active * block + int(ranks[active][rng.choice(block, p=pop)]))
                continue
            cursor[active] = (cursor[active] + int(rng.integers(1, jump + 1))) % block
            seq.append(active * block + cursor[active])
        seqs.append(seq)
    return _to_log(seqs, n_items)
