"""Bilateral intent-enhanced encoders, scoring and embedding-level views."""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

GATE_MODES = ("gated", "sum", "none", "zero")


@dataclass(frozen=True)
class ModelConfig:
    n_items: int
    d: int = 64
    K: int = 256
    T: int = 20
    L: int = 2
    blocks: int = 1
    heads: int = 4
    bidirectional: bool = False

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        for name in ("n_items", "d", "K", "T", "L", "blocks", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def pad(self) -> int:
        return self.n_items


def init_params(cfg: ModelConfig, rng: np.random.Generator, emb_std: float = 0.02, proto_std: float = 0.02) -> dict[str, np.ndarray]:
    d, K = cfg.d, cfg.K

    def xavier(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    p = {
        "item_emb": rng.normal(0.0, emb_std, size=(cfg.n_items, d)),
        "item_proto": rng.normal(0.0, proto_std, size=(d, K)),
        "user_proto": rng.normal(0.0, proto_std, size=(d, K)),
        "item_gate": xavier(2 * d, d),
        "user_gate": xavier(2 * d, d),
        "pos_emb": rng.normal(0.0, 0.02, size=(cfg.T, d)),
    }
    for b in range(cfg.blocks):
        for m in "qkvo":
            p[f"block{b}.w{m}"] = xavier(d, d)
        p[f"block{b}.ffn1"] = xavier(d, 4 * d)
        p[f"block{b}.ffn2"] = xavier(4 * d, d)
        p[f"block{b}.ln1.gamma"] = np.ones(d)
        p[f"block{b}.ln1.beta"] = np.zeros(d)
        p[f"block{b}.ln2.gamma"] = np.ones(d)
        p[f"block{b}.ln2.beta"] = np.zeros(d)
    return p


class ItemViews(NamedTuple):
    structural: Tensor
    intent: Tensor
    gate: Tensor
    fused: Tensor


class SeqViews(NamedTuple):
    hidden: Tensor
    pooled: Tensor
    intent: Tensor
    gate: Tensor
    fused: Tensor


def _intent_enhance(base: Tensor, proto: Tensor, gate_w: Tensor, mode: str, freeze_intent: bool = False):
    if base.shape[-1] != proto.shape[0] or gate_w.shape != (2 * proto.shape[0], proto.shape[0]):
        raise DimensionError(f"intent shapes {base.shape}, {proto.shape}, {gate_w.shape} disagree")
    if mode not in GATE_MODES:
        raise ValueError(f"unknown gate mode {mode!r}")
    src = nx.detach(base) if freeze_intent else base
    proto_t = nx.transpose(proto)
    intent = nx.matmul(nx.softmax(nx.matmul(src, proto)), proto_t)
    if freeze_intent:
        intent = nx.detach(intent)
    if mode == "none":
        gate = Tensor(np.zeros(base.shape))
        return intent, gate, base
    if mode == "sum":
        gate = Tensor(np.ones(base.shape))
        return intent, gate, nx.add(base, intent)
    if mode == "zero":
        gate = Tensor(np.zeros(base.shape))
    else:
        gate = nx.sigmoid(nx.matmul(nx.concat([src, intent], axis=-1), gate_w))
        if freeze_intent:
            gate = nx.detach(gate)
    return intent, gate, nx.add(base, nx.mul(gate, intent))


def item_intent_enhance(r: Tensor, proto: Tensor, gate_w: Tensor, mode: str = "gated") -> ItemViews:
    """Z = softmax(R P) P^T, G = sigmoid([R || Z] W), H = R + G * Z."""
    intent, gate, fused = _intent_enhance(r, proto, gate_w, mode)
    return ItemViews(r, intent, gate, fused)


def seq_intent_enhance(e: Tensor, proto: Tensor, gate_w: Tensor, mode: str = "gated", freeze_intent: bool = False):
    """Returns (z, g, h). With ``freeze_intent`` z and g are constants w.r.t. e."""
    return _intent_enhance(e, proto, gate_w, mode, freeze_intent)


def attention_mask(lengths: np.ndarray, T: int, causal: bool = True) -> np.ndarray:
    """Boolean (B, 1, T, T) mask; padded queries may only attend to themselves."""
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("valid_length must be >= 1")
    pos = np.arange(T)
    valid = pos[None, :] >= (T - lengths)[:, None]  # B x T
    allowed = np.broadcast_to(valid[:, None, :], (len(lengths), T, T)).copy()
    if causal:
        allowed &= pos[None, None, :] <= pos[None, :, None]
    empty = ~allowed.any(axis=-1)
    b, q = np.nonzero(empty)
    allowed[b, q, q] = True
    return allowed[:, None, :, :]


def transformer_encode(x: Tensor, lengths: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig, return_attention: bool = False):
    """Post-norm transformer over left-padded (B, T, d) inputs."""
    B, T, d = x.shape
    h, dh = cfg.heads, d // cfg.heads
    mask = attention_mask(lengths, T, causal=not cfg.bidirectional)
    attn_maps = []
    for b in range(cfg.blocks):
        pre = f"block{b}."

        def heads(t):
            return nx.transpose(nx.reshape(t, (B, T, h, dh)), (0, 2, 1, 3))

        q = heads(nx.matmul(x, params[pre + "wq"]))
        k = heads(nx.matmul(x, params[pre + "wk"]))
        v = heads(nx.matmul(x, params[pre + "wv"]))
        scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        att = nx.softmax(scores, mask=mask)
        attn_maps.append(att.data)
        ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (B, T, d))
        x = nx.layer_norm(nx.add(x, nx.matmul(ctx, params[pre + "wo"])), params[pre + "ln1.gamma"], params[pre + "ln1.beta"])
        ff = nx.matmul(nx.gelu(nx.matmul(x, params[pre + "ffn1"])), params[pre + "ffn2"])
        x = nx.layer_norm(nx.add(x, ff), params[pre + "ln2.gamma"], params[pre + "ln2.beta"])
    if return_attention:
        return x, attn_maps
    return x


def pool(hidden: Tensor, lengths: np.ndarray, use_mean: bool = True) -> Tensor:
    """Half last valid state plus half mean over valid states (left padding)."""
    B, T, d = hidden.shape
    last = nx.index(hidden, (slice(None), T - 1, slice(None)))
    if not use_mean:
        return last
    lengths = np.asarray(lengths, dtype=np.float64)
    valid = (np.arange(T)[None, :] >= (T - lengths)[:, None]).astype(np.float64)
    weights = (valid / lengths[:, None])[:, :, None]
    avg = nx.tsum(nx.mul(hidden, Tensor(weights)), axis=1)
    return nx.add(nx.scale(last, 0.5), nx.scale(avg, 0.5))


def gather_inputs(r: Tensor, seqs: np.ndarray, pos_emb: Tensor) -> Tensor:
    """Rows of r for each sequence slot (pad index maps to a zero row) plus positions."""
    padded = nx.concat([r, Tensor(np.zeros((1, r.shape[1])))], axis=0)
    return nx.add(nx.take_rows(padded, seqs), pos_emb)


def encode_sequences(
    r: Tensor,
    seqs: np.ndarray,
    lengths: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    gate_mode: str = "gated",
    use_mean: bool = True,
) -> SeqViews:
    hidden = transformer_encode(gather_inputs(r, seqs, params["pos_emb"]), lengths, params, cfg)
    e = pool(hidden, lengths, use_mean)
    z, g, h = seq_intent_enhance(e, params["user_proto"], params["user_gate"], gate_mode)
    return SeqViews(hidden, e, z, g, h)


def perturb_embeddings(r: Tensor, epsilon: float, rngs: Sequence[np.random.Generator]) -> list[Tensor]:
    """One view per generator: r + eps * sign(r) * rownorm(xi), xi ~ N(0, I)."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        return [r for _ in rngs]
    direction = nx.sign(r).data
    views = []
    for rng in rngs:
        xi = rng.standard_normal(r.shape)
        xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
        views.append(nx.add(r, Tensor(epsilon * direction * xi)))
    return views


def score(h: np.ndarray, item_table: np.ndarray) -> np.ndarray:
    return np.asarray(item_table) @ np.asarray(h)


def predict_topn(scores: np.ndarray, N: int, exclude: Sequence[int] = ()) -> list[int]:
    """Top-N item indices by score, skipping ``exclude``; ties go to the lower index."""
    if N < 1:
        raise ValueError("N must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    allowed = np.ones(len(scores), dtype=bool)
    allowed[list(exclude)] = False
    idx = np.nonzero(allowed)[0]
    if len(idx) > N:
        # partial selection first, then an exact ordering of the survivors
        kth = np.partition(-scores[idx], N - 1)[N - 1]
        idx = idx[-scores[idx] <= kth]
    order = np.lexsort((idx, -scores[idx]))
    return [int(i) for i in idx[order][:N]]


class BIPCL:
    """Parameter container plus the full forward pass."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0,
                 emb_std: float = 0.02, proto_std: float = 0.02):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, np.random.default_rng(seed), emb_std, proto_std)
        raw = params
        self.params = {k: nx.parameter(np.array(v, dtype=np.float64), name=k) for k, v in raw.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def structural(self, graph, item_emb: Tensor | None = None) -> Tensor:
        from .graph import propagate

        return propagate(graph, self.params["item_emb"] if item_emb is None else item_emb, self.cfg.L)

    def items(self, r: Tensor, rows=None, gate_mode: str = "gated") -> ItemViews:
        sub = r if rows is None else nx.take_rows(r, rows)
        return item_intent_enhance(sub, self.params["item_proto"], self.params["item_gate"], gate_mode)

    def sequences(self, r: Tensor, seqs, lengths, gate_mode: str = "gated", use_mean: bool = True) -> SeqViews:
        return encode_sequences(r, seqs, lengths, self.params, self.cfg, gate_mode, use_mean)

    def item_table(self, graph, gate_mode: str = "gated") -> np.ndarray:
        """Cached H for inference (unperturbed)."""
        return self.items(self.structural(graph), gate_mode=gate_mode).fused.data

    def user_vectors(self, graph, seqs, lengths, gate_mode: str = "gated", use_mean: bool = True, r=None) -> np.ndarray:
        r = self.structural(graph) if r is None else r
        return self.sequences(r, seqs, lengths, gate_mode, use_mean).fused.data


# ----------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"BIPCLCKP"
_CFG_FIELDS = ("d", "K", "T", "L", "blocks", "heads", "n_items")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<7I", *(getattr(cfg, f) for f in _CFG_FIELDS)))
        fh.write(struct.pack("<B", int(cfg.bidirectional)))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    vals = struct.unpack_from("<7I", blob, 8)
    pos = 8 + 28
    (bidir,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    cfg = ModelConfig(**dict(zip(_CFG_FIELDS, vals)), bidirectional=bool(bidir))
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(blob, "<f8", n, pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    return cfg, tensors


def model_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
